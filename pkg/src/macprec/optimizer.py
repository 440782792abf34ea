"""Alternating projected-gradient ascent on the asymptotic weighted sum rate.

Per outer iteration, every user's squared singular values and right
singular matrix are line-searched along their ascent gradients while the
fixed-point parameters stay frozen (under frozen parameters the user
subproblems decouple completely, so only the user's own virtual-channel MI
terms enter a search).  The accepted iterate is then re-scored with
re-solved fixed points; if that re-score ever drops below the previous
value, the whole iteration is retried with a halved initial step, which
keeps the logged trace nondecreasing by construction.

The left singular matrix of every optimized precoder is pinned to the
transmit eigenbasis U_T (the power-minimal choice among all precoders with
the same Gram matrix B^H T B; see ``eigen_aligned_factor``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import WeichselbergerModel, derived_rng, random_unitary
from .constellation import VectorAlphabet
from .errors import StaleStateError
from .mi_engine import LOG2E, NoiseEnsemble, virtual_mi, virtual_stats
from .replica import (
    FixedPointConfig,
    WsrEvaluation,
    asymptotic_wsr,
    precoder_digest,
)

__all__ = [
    "PrecoderFactors",
    "WsrProblem",
    "OptimizerConfig",
    "OptimizerTrace",
    "init_precoders",
    "grad_gamma_sq",
    "grad_v",
    "project_power",
    "project_stiefel",
    "optimize",
    "no_precoding_baseline",
    "gaussian_waterfilling_baseline",
    "water_filling",
    "eigen_aligned_factor",
]

_MIN_STEP = 1e-12
_TAU_FLOOR = 1e-12


@dataclass(frozen=True)
class PrecoderFactors:
    """B = u @ diag(gamma_diag) @ v with v unitary and gamma_diag >= 0."""

    u: np.ndarray
    gamma_diag: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "u", np.asarray(self.u, dtype=np.complex128))
        object.__setattr__(self, "gamma_diag", np.asarray(self.gamma_diag, dtype=np.float64))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.complex128))
        if np.any(self.gamma_diag < -1e-12):
            raise ValueError("singular values must be nonnegative")

    @property
    def matrix(self) -> np.ndarray:
        return (self.u * self.gamma_diag) @ self.v

    @property
    def power(self) -> float:
        return float(np.sum(self.gamma_diag**2))


@dataclass(frozen=True)
class WsrProblem:
    models: list  # K WeichselbergerModel
    weights_mu: np.ndarray  # descending, nonnegative
    powers: np.ndarray  # per-user power limits
    alphabets: list  # K VectorAlphabet
    noise_count: int = 500
    noise_seed: int = 0

    def __post_init__(self) -> None:
        mu = np.asarray(self.weights_mu, dtype=np.float64)
        p = np.asarray(self.powers, dtype=np.float64)
        object.__setattr__(self, "weights_mu", mu)
        object.__setattr__(self, "powers", p)
        k = len(self.models)
        if len(self.alphabets) != k or mu.shape != (k,) or p.shape != (k,):
            raise ValueError("models, weights, powers, alphabets must all have length K")
        if np.any(np.diff(mu) > 1e-12) or np.any(mu < 0):
            raise ValueError("weights must be descending and nonnegative")
        if np.any(p <= 0):
            raise ValueError("powers must be positive")

    @property
    def n_t(self) -> int:
        return self.models[0].n_t

    def noise_ensemble(self) -> NoiseEnsemble:
        return NoiseEnsemble.generate(self.n_t, self.noise_count, self.noise_seed)


@dataclass(frozen=True)
class OptimizerConfig:
    theta: float = 0.1  # Armijo parameter, in (0, 0.5)
    omega: float = 0.5  # backtracking shrink factor, in (0, 1)
    wsr_tol: float = 1e-3  # stop when the WSR gain falls below this (bits)
    max_iters: int = 100
    restarts: int = 4
    seed: int = 0
    fixed_point: FixedPointConfig = field(default_factory=FixedPointConfig)

    def __post_init__(self) -> None:
        if not 0.0 < self.theta < 0.5:
            raise ValueError("theta must lie in (0, 0.5)")
        if not 0.0 < self.omega < 1.0:
            raise ValueError("omega must lie in (0, 1)")


@dataclass
class OptimizerTrace:
    wsr_values: list  # re-scored WSR per iteration, starting at iteration 0
    accepted_steps: list  # (iteration, user, 'gamma'|'v', step size)
    restart_index: int
    converged: bool


def init_precoders(problem: WsrProblem, seed: int, restart: int = 0) -> list[PrecoderFactors]:
    """Restart starting points, all pinned to u = U_T.

    Restart 0 reproduces the no-precoding matrix exactly (v = U_T^H makes
    B = sqrt(P/n_t) I), restart 1 starts from the water-filled eigenbeam
    point, and later restarts draw a random unitary v and a random power
    split.  Together with the monotone ascent this makes the returned WSR
    at least as large as both baselines.
    """
    n_t = problem.n_t
    rng = derived_rng(seed, 0x1B, restart)
    out = []
    for l, model in enumerate(problem.models):
        p_total = float(problem.powers[l])
        if restart == 0:
            gamma_sq = np.full(n_t, p_total / n_t)
            v = model.u_t.conj().T
        elif restart == 1:
            gains = model.g.sum(axis=0)
            gamma_sq = (water_filling(gains, p_total) if np.any(gains > 0)
                        else np.full(n_t, p_total / n_t))
            v = np.eye(n_t, dtype=np.complex128)
        else:
            split = rng.exponential(1.0, size=n_t)
            gamma_sq = p_total * split / split.sum()
            v = random_unitary(n_t, rng)
        out.append(PrecoderFactors(u=model.u_t, gamma_diag=np.sqrt(gamma_sq), v=v))
    return out


def project_power(gamma_sq: np.ndarray, p: float) -> np.ndarray:
    """Clip negatives, then scale so the total power equals p exactly.

    The rate is nondecreasing in transmit power here, so the power
    constraint is always met with equality; an all-zero input falls back
    to the equal split.
    """
    if p <= 0:
        raise ValueError("power budget must be positive")
    x = np.clip(np.asarray(gamma_sq, dtype=np.float64), 0.0, None)
    total = x.sum()
    if total <= 0.0:
        return np.full(x.shape, p / x.size)
    return x * (p / total)


def project_stiefel(v_tilde: np.ndarray) -> np.ndarray:
    """Nearest unitary (polar factor) of a full-rank square matrix."""
    u_f, s, vh_f = np.linalg.svd(np.asarray(v_tilde, dtype=np.complex128))
    if s[-1] <= 1e-12:
        raise np.linalg.LinAlgError(
            f"input is numerically rank-deficient (min singular value {s[-1]:.3e})"
        )
    return u_f @ vh_f


def _check_states(states: WsrEvaluation, precoders: list[PrecoderFactors]) -> None:
    digest = precoder_digest([f.matrix for f in precoders])
    for state in states.states.values():
        if state.precoder_digest != precoder_digest([f.matrix for f in precoders[: state.subset_k]]):
            raise StaleStateError("fixed-point states do not match the current precoders")
    del digest


def _user_gradients(problem, precoders, states, l, noise, want_v):
    """Ensemble-exact ascent gradients of the WSR for user l (bits units).

    With the fixed-point parameters frozen, the WSR depends on B_l only
    through sum_{k>=l} Delta_k I(d_l; sqrt(T_l^(k)) B_l d_l + v).  Writing
    B_l = U_T diag(sqrt(P)) V and s_j = P_j tau_j, the sampled-MI
    derivatives are

      dI/dP_j    = tau_j ([V E2 V^H]_jj - Re([U^H X V^H]_jj)/sqrt(s_j))
      dI/dV^*    = diag(s) V E2 - diag(sqrt(s)) U^H X

    whose Stein terms (X) vanish in ensemble expectation, recovering the
    classical diag(V E V^H diag(tau)) and diag(tau) Gamma^2 V E forms.
    """
    model = problem.models[l]
    factors = precoders[l]
    b = factors.matrix
    p_vec = factors.gamma_diag**2
    n_t = problem.n_t
    grad_p = np.zeros(n_t)
    grad_v_mat = np.zeros((n_t, n_t), dtype=np.complex128)
    frozen_mi = 0.0
    for k, state in states.states.items():
        if k < l + 1:
            continue
        delta = states.deltas[k - 1]
        tau = state.taus[l]
        st = virtual_stats(model.u_t, tau, b, problem.alphabets[l], noise)
        frozen_mi += delta * st.mi_bits
        s_vec = p_vec * tau
        v = factors.v
        quad2 = np.real(np.diag(v @ st.e_two @ v.conj().T))
        y_mat = model.u_t.conj().T @ st.noise_err
        stein = np.real(np.diag(y_mat @ v.conj().T))
        quad1 = np.real(np.diag(v @ st.e_cond @ v.conj().T))
        d_ds = np.where(
            s_vec > _TAU_FLOOR,
            quad2 - stein / np.sqrt(np.maximum(s_vec, _TAU_FLOOR)),
            quad1,
        )
        grad_p += delta * LOG2E * tau * d_ds
        if want_v:
            grad_v_mat += delta * LOG2E * (
                (s_vec[:, None] * (v @ st.e_two)) - np.sqrt(s_vec)[:, None] * y_mat
            )
    return grad_p, grad_v_mat, frozen_mi


def grad_gamma_sq(problem: WsrProblem, precoders: list[PrecoderFactors],
                  states: WsrEvaluation, l: int, noise: NoiseEnsemble) -> np.ndarray:
    """Gradient of the asymptotic WSR w.r.t. user l's squared singular values."""
    _check_states(states, precoders)
    return _user_gradients(problem, precoders, states, l, noise, want_v=False)[0]


def grad_v(problem: WsrProblem, precoders: list[PrecoderFactors],
           states: WsrEvaluation, l: int, noise: NoiseEnsemble) -> np.ndarray:
    """Gradient of the asymptotic WSR w.r.t. user l's right singular matrix."""
    _check_states(states, precoders)
    return _user_gradients(problem, precoders, states, l, noise, want_v=True)[1]


def _frozen_objective(problem, states, l, factors, noise):
    """sum_{k>=l} Delta_k I_l^(k) at frozen fixed-point parameters (bits)."""
    b = factors.matrix
    total = 0.0
    for k, state in states.states.items():
        if k < l + 1:
            continue
        total += states.deltas[k - 1] * virtual_mi(
            problem.models[l].u_t, state.taus[l], b, problem.alphabets[l], noise)
    return total


def _solve_eval(problem, precoders, fp_cfg, noise, warm=None):
    return asymptotic_wsr(
        problem.models,
        [f.matrix for f in precoders],
        problem.weights_mu,
        problem.alphabets,
        fp_cfg,
        noise,
        warm_states=warm,
    )


def _line_search_gamma(problem, states, l, factors, grad, noise, theta, omega, u0, f0=None):
    """Backtracking ascent on Gamma^2 along the projection arc.

    Sufficient-increase test in the projected form f(P(x + u g)) >= f(x) +
    theta <g, P(x + u g) - x>: the power projection removes the radial part
    of the gradient, so measuring progress against the projected step (not
    the raw ||g||^2) is what makes the search accept whenever the point is
    not already stationary on the power simplex.
    """
    if f0 is None:
        f0 = _frozen_objective(problem, states, l, factors, noise)
    if float(grad @ grad) <= 0.0:
        return factors, 0.0
    u = u0
    p_budget = float(problem.powers[l])
    base = factors.gamma_diag**2
    while u >= _MIN_STEP:
        trial_sq = project_power(base + u * grad, p_budget)
        model_gain = float(grad @ (trial_sq - base))
        if model_gain > 0.0:
            trial = replace(factors, gamma_diag=np.sqrt(trial_sq))
            if _frozen_objective(problem, states, l, trial, noise) >= f0 + theta * model_gain:
                return trial, u
        u *= omega
    return factors, 0.0


def _line_search_v(problem, states, l, factors, grad, noise, theta, omega, u0, f0=None):
    """Backtracking ascent on V along the Stiefel projection arc.

    Same projected sufficient-increase test; the first-order gain of a
    complex Wirtinger gradient G over a step dV is 2 Re<G, dV>.
    """
    if f0 is None:
        f0 = _frozen_objective(problem, states, l, factors, noise)
    if float(np.sum(np.abs(grad) ** 2)) <= 0.0:
        return factors, 0.0
    u = u0
    while u >= _MIN_STEP:
        try:
            trial_v = project_stiefel(factors.v + u * grad)
        except np.linalg.LinAlgError:
            u *= omega
            continue
        model_gain = 2.0 * float(np.real(np.sum(grad.conj() * (trial_v - factors.v))))
        if model_gain > 0.0:
            trial = replace(factors, v=trial_v)
            if _frozen_objective(problem, states, l, trial, noise) >= f0 + theta * model_gain:
                return trial, u
        u *= omega
    return factors, 0.0


def optimize(problem: WsrProblem, cfg: OptimizerConfig) -> tuple[list[PrecoderFactors], OptimizerTrace]:
    """Alternating gradient WSR maximization with multi-restart selection.

    Every restart produces a nondecreasing WSR trace; across restarts the
    maximum-WSR solution is returned (restart 0 always starts from the
    identity-V, equal-power precoders, so no-precoding-like performance is
    a lower bound of the result).
    """
    noise = problem.noise_ensemble()
    k_users = len(problem.models)
    best: tuple[float, list, OptimizerTrace] | None = None

    for restart in range(cfg.restarts):
        precoders = init_precoders(problem, cfg.seed, restart)
        current = _solve_eval(problem, precoders, cfg.fixed_point, noise)
        trace = OptimizerTrace(
            wsr_values=[current.value_bits],
            accepted_steps=[],
            restart_index=restart,
            converged=False,
        )
        u_cap = 1.0
        it = 0
        while it < cfg.max_iters:
            candidate = [f for f in precoders]
            steps = []
            for l in range(k_users):
                grad, _, f0 = _user_gradients(problem, candidate, current, l,
                                              noise, want_v=False)
                candidate[l], step = _line_search_gamma(
                    problem, current, l, candidate[l], grad, noise,
                    cfg.theta, cfg.omega, u_cap, f0=f0)
                if step > 0.0:
                    steps.append((it + 1, l, "gamma", step))
            for l in range(k_users):
                _, gv, f0 = _user_gradients(problem, candidate, current, l,
                                            noise, want_v=True)
                candidate[l], step = _line_search_v(
                    problem, current, l, candidate[l], gv, noise,
                    cfg.theta, cfg.omega, u_cap, f0=f0)
                if step > 0.0:
                    steps.append((it + 1, l, "v", step))
            if not steps:
                # no user accepted any step: the point is stationary up to
                # the search resolution, stop without a redundant re-solve
                trace.converged = True
                break
            resolved = _solve_eval(problem, candidate, cfg.fixed_point, noise,
                                   warm=current.states)
            if resolved.value_bits < current.value_bits - 1e-9:
                # frozen-parameter step overshot the re-solved objective:
                # reject, halve the initial step, retry this iteration
                u_cap *= 0.5
                if u_cap < _MIN_STEP:
                    trace.converged = True
                    break
                continue
            gain = resolved.value_bits - current.value_bits
            precoders = candidate
            current = resolved
            trace.wsr_values.append(current.value_bits)
            trace.accepted_steps.extend(steps)
            it += 1
            u_cap = 1.0
            if gain < cfg.wsr_tol:
                trace.converged = True
                break
        final = current.value_bits
        if best is None or final > best[0]:
            best = (final, precoders, trace)

    assert best is not None
    return best[1], best[2]


def no_precoding_baseline(problem: WsrProblem) -> list[PrecoderFactors]:
    """B_l = sqrt(P_l / n_t) I: identity factors, full power, equal split."""
    n_t = problem.n_t
    eye = np.eye(n_t, dtype=np.complex128)
    return [
        PrecoderFactors(u=eye, gamma_diag=np.full(n_t, np.sqrt(p / n_t)), v=eye)
        for p in problem.powers
    ]


def water_filling(gains: np.ndarray, total_power: float) -> np.ndarray:
    """Exact water-filling over parallel channels with the given gains.

    Maximizes sum log(1 + p_i g_i) s.t. sum p_i = total, p >= 0; channels
    with zero gain never receive power.
    """
    g = np.asarray(gains, dtype=np.float64)
    if total_power <= 0:
        raise ValueError("total power must be positive")
    if np.any(g < 0):
        raise ValueError("gains must be nonnegative")
    active = np.where(g > 0)[0]
    if active.size == 0:
        raise ValueError("all channel gains are zero")
    inv = 1.0 / g[active]
    order = np.argsort(inv)
    inv_sorted = inv[order]
    # largest active set whose water level keeps all its powers positive
    n_active = active.size
    while n_active > 1:
        level = (total_power + inv_sorted[:n_active].sum()) / n_active
        if level > inv_sorted[n_active - 1]:
            break
        n_active -= 1
    level = (total_power + inv_sorted[:n_active].sum()) / n_active
    p_sorted = np.clip(level - inv_sorted, 0.0, None)
    p_sorted[n_active:] = 0.0
    p = np.zeros_like(g)
    p[active[order]] = p_sorted
    return p


def gaussian_waterfilling_baseline(problem: WsrProblem) -> list[PrecoderFactors]:
    """Eigenbeamforming along U_T with water-filled power (labeled GP stand-in).

    A simplified Gaussian-input baseline: the transmit-correlation
    eigenvalues (column sums of G) act as parallel-channel gains.  This is
    an approximation of a full Gaussian-input ergodic-rate optimizer, kept
    deliberately simple and clearly labeled as such.
    """
    out = []
    for l, model in enumerate(problem.models):
        gains = model.g.sum(axis=0)
        p_alloc = water_filling(gains, float(problem.powers[l]))
        out.append(
            PrecoderFactors(
                u=model.u_t,
                gamma_diag=np.sqrt(p_alloc),
                v=np.eye(problem.n_t, dtype=np.complex128),
            )
        )
    return out


def eigen_aligned_factor(t_matrix: np.ndarray, gram: np.ndarray) -> np.ndarray:
    """Power-minimal B with B^H T B = gram: left factor aligned with T.

    Writing T = U_T diag(tau) U_T^H and gram = U_q diag(lam) U_q^H (both
    ascending), B = U_T diag(sqrt(lam/tau)) U_q^H pairs the largest lam
    with the largest tau, which minimizes tr(B B^H) = sum lam_i / tau_i
    over all same-Gram factors T^(-1/2) V Gamma_q^(1/2) U_q^H.
    """
    tau, u_t = np.linalg.eigh(np.asarray(t_matrix, dtype=np.complex128))
    if tau.min() <= 1e-12:
        raise ValueError("t_matrix must be positive definite")
    lam, u_q = np.linalg.eigh(np.asarray(gram, dtype=np.complex128))
    lam = np.clip(lam, 0.0, None)
    return (u_t * np.sqrt(lam / tau)) @ u_q.conj().T
