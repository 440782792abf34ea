"""Experiment runner: sweeps, convergence traces, rate regions, validation.

Every run is fully reproducible from (spec, seeds): channel statistics,
noise ensembles, optimizer restarts and Monte-Carlo draws all derive from
the spec seed through documented spawn keys, rows are sorted
deterministically before writing, and wall times are recorded as 0.0
unless timings are explicitly enabled (so repeated runs are byte-identical).

CSV schema, version 1 (column set and order are fixed):

    snr_db, method, evaluator, wsr_bits, std_err, iterations,
    wall_time_s, seed, status

``method`` is the precoder design (FAP | NP | GP), ``evaluator`` the rate
estimate used (ASY | EXACT_MC); std_err is 0 for the deterministic
asymptotic evaluator.  ``status`` is "ok" or "skipped-cap".
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import (
    WeichselbergerModel,
    derived_rng,
    derived_seed,
    models_from_json,
    random_weichselberger,
    snr_to_power,
)
from .constellation import make_alphabet
from .errors import ResourceCapError, ValidationFailure
from .mi_engine import MonteCarloConfig, exact_conditional_mi_mc
from .optimizer import (
    OptimizerConfig,
    WsrProblem,
    gaussian_waterfilling_baseline,
    no_precoding_baseline,
    optimize,
)
from .replica import FixedPointConfig, asymptotic_wsr, solve_fixed_point

__all__ = [
    "CSV_VERSION",
    "SWEEP_COLUMNS",
    "ExperimentSpec",
    "SweepRow",
    "build_models",
    "run_sweep",
    "run_convergence",
    "run_rate_region",
    "run_validation",
    "write_csv",
]

CSV_VERSION = 1
SWEEP_COLUMNS = (
    "snr_db",
    "method",
    "evaluator",
    "wsr_bits",
    "std_err",
    "iterations",
    "wall_time_s",
    "seed",
    "status",
)

METHODS = ("FAP", "NP", "GP")


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str = "default"
    users: int = 2
    n_t: int = 2
    n_r: int = 2
    modulation: str = "qpsk"
    snr_grid_db: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    weights: tuple | None = None  # descending; all-ones when omitted
    methods: tuple = ("NP", "FAP")
    with_exact: bool = False
    model_file: str | None = None
    seed: int = 0
    noise_count: int = 500
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    fixed_point: FixedPointConfig = field(default_factory=FixedPointConfig)
    mc: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    gap_tol: float = 0.3
    threads: int = 1
    timings: bool = False

    def __post_init__(self) -> None:
        grid = tuple(float(s) for s in self.snr_grid_db)
        object.__setattr__(self, "snr_grid_db", grid)
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("SNR grid must be strictly increasing")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if self.model_file is not None and not Path(self.model_file).exists():
            raise ValueError(f"model file {self.model_file} does not exist")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != self.users:
                raise ValueError("weights length must equal the user count")
            object.__setattr__(self, "weights", w)

    @property
    def mu(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.users)
        return np.asarray(self.weights, dtype=np.float64)


@dataclass(frozen=True)
class SweepRow:
    snr_db: float
    method: str
    evaluator: str
    wsr_bits: float
    std_err: float
    iterations: int
    wall_time_s: float
    seed: int
    status: str = "ok"

    def as_csv(self) -> str:
        return ",".join(
            (
                _fmt(self.snr_db),
                self.method,
                self.evaluator,
                _fmt(self.wsr_bits),
                _fmt(self.std_err),
                str(self.iterations),
                _fmt(self.wall_time_s),
                str(self.seed),
                self.status,
            )
        )


def _fmt(x: float) -> str:
    if isinstance(x, float) and np.isnan(x):
        return "nan"
    return format(float(x), ".12g")


def write_csv(rows: list[SweepRow], path: str | Path | None,
              columns: tuple = SWEEP_COLUMNS, extra_header: str = "") -> str:
    lines = [f"# macprec csv v{CSV_VERSION}{extra_header}", ",".join(columns)]
    lines.extend(r.as_csv() for r in rows)
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def build_models(spec: ExperimentSpec) -> list[WeichselbergerModel]:
    """Load or synthesize the per-user channel statistics."""
    if spec.model_file is not None:
        models = models_from_json(spec.model_file)
        if len(models) != spec.users:
            raise ValueError(
                f"model file holds {len(models)} users, spec wants {spec.users}"
            )
        return models
    return [
        random_weichselberger(spec.n_r, spec.n_t, derived_rng(spec.seed, 0xC4, k))
        for k in range(spec.users)
    ]


def _design_precoders(spec, problem, method, point_index):
    """Return (factors, iterations) for a design method at one sweep point."""
    if method == "NP":
        return no_precoding_baseline(problem), 0
    if method == "GP":
        return gaussian_waterfilling_baseline(problem), 0
    opt_cfg = replace(
        spec.optimizer,
        seed=derived_seed(spec.seed, 0x0F, point_index),
        fixed_point=replace(spec.fixed_point, seed=spec.seed),
    )
    factors, trace = optimize(problem, opt_cfg)
    return factors, len(trace.wsr_values) - 1


def _exact_wsr(spec, models, factors, alphabets, mu, point_index):
    """Exact weighted sum rate: sum_k Delta_k I(d_1..d_k; y | rest), by MC."""
    deltas = mu - np.append(mu[1:], 0.0)
    mats = [f.matrix for f in factors]
    total, var = 0.0, 0.0
    for k in range(1, len(models) + 1):
        if deltas[k - 1] <= 1e-15:
            continue
        cfg = replace(spec.mc, seed=derived_seed(spec.seed, 0xEC, point_index, k))
        est = exact_conditional_mi_mc(models, mats, list(range(k)), alphabets, cfg)
        total += deltas[k - 1] * est.bits
        var += (deltas[k - 1] * est.std_err) ** 2
    return total, float(np.sqrt(var))


def _sweep_point(spec, models, alphabets, point_index, snr_db):
    mu = spec.mu
    powers = np.array([snr_to_power(snr_db, m) for m in models])
    noise_seed = derived_seed(spec.seed, 0x2E, point_index)
    problem = WsrProblem(
        models=models,
        weights_mu=mu,
        powers=powers,
        alphabets=alphabets,
        noise_count=spec.noise_count,
        noise_seed=noise_seed,
    )
    noise = problem.noise_ensemble()
    rows = []
    for method in spec.methods:
        t0 = time.perf_counter()
        factors, iters = _design_precoders(spec, problem, method, point_index)
        ev = asymptotic_wsr(models, [f.matrix for f in factors], mu, alphabets,
                            replace(spec.fixed_point, seed=spec.seed), noise)
        elapsed = time.perf_counter() - t0 if spec.timings else 0.0
        rows.append(SweepRow(snr_db, method, "ASY", ev.value_bits, 0.0, iters,
                             elapsed, spec.seed))
        if spec.with_exact:
            t0 = time.perf_counter()
            try:
                bits, se = _exact_wsr(spec, models, factors, alphabets, mu, point_index)
                elapsed = time.perf_counter() - t0 if spec.timings else 0.0
                rows.append(SweepRow(snr_db, method, "EXACT_MC", bits, se, iters,
                                     elapsed, spec.seed))
            except ResourceCapError:
                rows.append(SweepRow(snr_db, method, "EXACT_MC", float("nan"),
                                     float("nan"), iters, 0.0, spec.seed,
                                     status="skipped-cap"))
    return rows


def run_sweep(spec: ExperimentSpec, out: str | Path | None = None) -> list[SweepRow]:
    """SNR sweep over the requested precoder designs; optionally exact MC."""
    models = build_models(spec)
    alphabets = [make_alphabet(spec.modulation, spec.n_t) for _ in range(spec.users)]
    points = list(enumerate(spec.snr_grid_db))
    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            chunks = list(pool.map(
                lambda p: _sweep_point(spec, models, alphabets, p[0], p[1]), points))
    else:
        chunks = [_sweep_point(spec, models, alphabets, i, s) for i, s in points]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r.snr_db, spec.methods.index(r.method),
                             0 if r.evaluator == "ASY" else 1))
    write_csv(rows, out)
    return rows


@dataclass(frozen=True)
class ConvergenceRow:
    snr_db: float
    iteration: int
    wsr_bits: float
    converged: bool

    def as_csv(self) -> str:
        return ",".join((_fmt(self.snr_db), str(self.iteration),
                         _fmt(self.wsr_bits), "1" if self.converged else "0"))


def run_convergence(spec: ExperimentSpec, snr_list: list[float] | None = None,
                    out: str | Path | None = None) -> list[ConvergenceRow]:
    """Optimizer iteration traces (one per SNR); traces are nondecreasing."""
    snrs = list(snr_list) if snr_list is not None else list(spec.snr_grid_db)
    models = build_models(spec)
    alphabets = [make_alphabet(spec.modulation, spec.n_t) for _ in range(spec.users)]
    rows = []
    for idx, snr_db in enumerate(snrs):
        powers = np.array([snr_to_power(snr_db, m) for m in models])
        noise_seed = derived_seed(spec.seed, 0x2E, idx)
        problem = WsrProblem(models, spec.mu, powers, alphabets,
                             spec.noise_count, noise_seed)
        opt_cfg = replace(spec.optimizer,
                          seed=derived_seed(spec.seed, 0x0F, idx),
                          fixed_point=replace(spec.fixed_point, seed=spec.seed))
        _, trace = optimize(problem, opt_cfg)
        for i, w in enumerate(trace.wsr_values):
            rows.append(ConvergenceRow(snr_db, i, w, trace.converged))
    cols = ("snr_db", "iteration", "wsr_bits", "converged")
    text = ["# macprec csv v1", ",".join(cols)]
    text.extend(r.as_csv() for r in rows)
    if out is not None:
        Path(out).write_text("\n".join(text) + "\n")
    return rows


@dataclass(frozen=True)
class RegionRow:
    mu_1: float
    mu_2: float
    method: str
    r1_bits: float
    r2_bits: float
    wsr_bits: float

    def as_csv(self) -> str:
        return ",".join((_fmt(self.mu_1), _fmt(self.mu_2), self.method,
                         _fmt(self.r1_bits), _fmt(self.r2_bits), _fmt(self.wsr_bits)))


def _rate_split(models, mats, alphabets, fp_cfg, noise):
    """Successive-decoding rate pair: R1 = I(d1; y | d2), R2 = sum - R1."""
    s1 = solve_fixed_point(models[:1], mats[:1], alphabets[:1], fp_cfg, noise)
    s2 = solve_fixed_point(models, mats, alphabets, fp_cfg, noise)
    r1 = s1.rate.value_bits
    return r1, s2.rate.value_bits - r1, s2.rate.value_bits


def run_rate_region(spec: ExperimentSpec, weight_grid: list[tuple],
                    snr_db: float, out: str | Path | None = None) -> list[RegionRow]:
    """Trace the two-user rate-region boundary by WSR optimization.

    Each weight pair is relabeled so mu_1 >= mu_2 (user order swapped and
    swapped back), matching the decode-weakest-first convention by which
    R1 = I(d1; y | d2) and R2 is the remainder of the weighted optimum.
    """
    if spec.users != 2:
        raise ValueError("rate-region tracing is defined for K = 2")
    models = build_models(spec)
    alphabets = [make_alphabet(spec.modulation, spec.n_t) for _ in range(spec.users)]
    rows = []
    for idx, (mu_a, mu_b) in enumerate(weight_grid):
        swap = mu_b > mu_a
        order = [1, 0] if swap else [0, 1]
        mu = np.array([max(mu_a, mu_b), min(mu_a, mu_b)], dtype=np.float64)
        ms = [models[i] for i in order]
        als = [alphabets[i] for i in order]
        powers = np.array([snr_to_power(snr_db, m) for m in ms])
        noise_seed = derived_seed(spec.seed, 0x2E, idx)
        problem = WsrProblem(ms, mu, powers, als, spec.noise_count, noise_seed)
        noise = problem.noise_ensemble()
        fp = replace(spec.fixed_point, seed=spec.seed)
        for method in spec.methods:
            opt_cfg = replace(spec.optimizer,
                              seed=derived_seed(spec.seed, 0x0F, idx),
                              fixed_point=fp)
            if method == "FAP":
                factors, _ = optimize(problem, opt_cfg)
            elif method == "NP":
                factors = no_precoding_baseline(problem)
            else:
                factors = gaussian_waterfilling_baseline(problem)
            r1, r2, total = _rate_split(ms, [f.matrix for f in factors], als, fp, noise)
            if swap:
                r1, r2 = r2, r1
            rows.append(RegionRow(mu_a, mu_b, method, r1, r2, total))
    cols = ("mu_1", "mu_2", "method", "r1_bits", "r2_bits", "wsr_bits")
    text = ["# macprec csv v1", ",".join(cols)]
    text.extend(r.as_csv() for r in rows)
    if out is not None:
        Path(out).write_text("\n".join(text) + "\n")
    return rows


@dataclass(frozen=True)
class ValidationRow:
    snr_db: float
    method: str
    asymptotic_bits: float
    exact_bits: float
    gap_bits: float
    std_err: float

    def as_csv(self) -> str:
        return ",".join((_fmt(self.snr_db), self.method, _fmt(self.asymptotic_bits),
                         _fmt(self.exact_bits), _fmt(self.gap_bits), _fmt(self.std_err)))


@dataclass(frozen=True)
class ValidationReport:
    rows: list
    max_gap: float
    gap_tol: float
    passed: bool


def run_validation(spec: ExperimentSpec, out: str | Path | None = None,
                   raise_on_fail: bool = False) -> ValidationReport:
    """Exact-vs-asymptotic comparison over the SNR grid for each design."""
    rows = run_sweep(replace(spec, with_exact=True))
    by_key = {}
    for r in rows:
        by_key.setdefault((r.snr_db, r.method), {})[r.evaluator] = r
    vrows = []
    for (snr_db, method), pair in sorted(by_key.items(), key=lambda t: (t[0][0], t[0][1])):
        if "EXACT_MC" not in pair or pair["EXACT_MC"].status != "ok":
            raise ResourceCapError(
                f"exact MC unavailable at {snr_db} dB for {method}")
        asy = pair["ASY"].wsr_bits
        exact = pair["EXACT_MC"].wsr_bits
        vrows.append(ValidationRow(snr_db, method, asy, exact, asy - exact,
                                   pair["EXACT_MC"].std_err))
    max_gap = max(abs(r.gap_bits) for r in vrows)
    passed = max_gap <= spec.gap_tol
    if out is not None:
        cols = ("snr_db", "method", "asymptotic_bits", "exact_bits", "gap_bits", "std_err")
        text = ["# macprec csv v1", ",".join(cols)]
        text.extend(r.as_csv() for r in vrows)
        text.append(f"# max_gap={_fmt(max_gap)} tol={_fmt(spec.gap_tol)} "
                    f"result={'pass' if passed else 'fail'}")
        Path(out).write_text("\n".join(text) + "\n")
    report = ValidationReport(rows=vrows, max_gap=max_gap, gap_tol=spec.gap_tol,
                              passed=passed)
    if raise_on_fail and not passed:
        raise ValidationFailure(
            f"max |asymptotic - exact| = {max_gap:.3f} bits exceeds {spec.gap_tol}")
    return report
