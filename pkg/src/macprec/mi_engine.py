"""Finite-alphabet mutual information and MMSE statistics.

Two estimation regimes live here.

* Deterministic virtual-channel quantities: the per-user mutual information
  I(d; sqrt(T) B d + v), its MSE matrices, and the derivative statistics
  consumed by the fixed-point solver and the precoder gradients.  The noise
  expectation is a Monte-Carlo average over a shared, seeded
  :class:`NoiseEnsemble`, which makes every evaluation a deterministic,
  smooth function of (T, B) -- the property the backtracking line search
  and the finite-difference tests rely on.  Derivatives are computed for
  the ensemble average itself (the sampled objective), so analytic
  gradients and finite differences of the implemented functions agree to
  truncation error; as the ensemble grows these derivative formulas
  converge to the classical MMSE quadratic forms.

* Exact conditional mutual information of the physical channel, estimated
  by nested Monte Carlo: outer sampling over channel realizations,
  transmitted vectors and noise, inner exact sum over the joint alphabet.

All exponent sums are max-subtracted; pairwise symbol distances are
processed in chunks so large alphabets never materialize an m x m x n
tensor beyond the configured memory budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import WeichselbergerModel, derived_rng, sample_channel
from .constellation import VectorAlphabet, symbol_block
from .errors import ResourceCapError

__all__ = [
    "LOG2E",
    "NoiseEnsemble",
    "MseMatrices",
    "VirtualStats",
    "MonteCarloConfig",
    "ExactMiEstimate",
    "sqrt_psd",
    "deterministic_mi",
    "mmse_matrices",
    "virtual_stats",
    "virtual_mi",
    "mi_tau_gradient",
    "mi_gamma_partial",
    "exact_conditional_mi_mc",
]

LOG2E = float(np.log2(np.e))

#: below this tau, the Stein term of the ensemble derivative is dropped
#: (it is a 0/0 limit there) and the classical MSE quadratic form is used
_TAU_FLOOR = 1e-12

#: chunk budget: at most this many (pair, noise) entries per block
_CHUNK_BUDGET = 4_000_000


@dataclass(frozen=True)
class NoiseEnsemble:
    """Frozen i.i.d. standard complex Gaussian samples, shape (count, dim)."""

    samples: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=np.complex128)
        object.__setattr__(self, "samples", s)

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def generate(cls, dim: int, count: int, seed: int) -> "NoiseEnsemble":
        rng = derived_rng(seed, 0xE5)
        s = (rng.standard_normal((count, dim)) + 1j * rng.standard_normal((count, dim))) / np.sqrt(2.0)
        return cls(samples=s, seed=seed)


@dataclass(frozen=True)
class MseMatrices:
    """Signal-domain (e) and precoded-domain (omega) MSE matrices."""

    e: np.ndarray
    omega: np.ndarray


@dataclass(frozen=True)
class VirtualStats:
    """One-pass statistics of the virtual channel z = sqrt(T) B d + v.

    ``e_cond``  - average conditional covariance of d given z (the MSE
                  matrix estimator used for E / Omega);
    ``e_two``   - e_cond plus the average outer product of the actual
                  estimation error, i.e. the average of
                  sum_p w_p (a_p - a_m)(a_p - a_m)^H;
    ``noise_err`` - average of v (dhat - a_m)^H, the noise/error
                  correlation that carries the finite-ensemble Stein term
                  of the derivative formulas.
    """

    mi_bits: float
    mi_bits_raw: float
    e_cond: np.ndarray
    e_two: np.ndarray
    noise_err: np.ndarray


def sqrt_psd(t_matrix: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Hermitian PSD square root; rejects eigenvalues below -tol."""
    t = np.asarray(t_matrix, dtype=np.complex128)
    w, u = np.linalg.eigh((t + t.conj().T) / 2.0)
    if w.min(initial=0.0) < -tol:
        raise ValueError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    return (u * np.sqrt(np.clip(w, 0.0, None))) @ u.conj().T


def _kernel(f_map: np.ndarray, alphabet: VectorAlphabet, noise: NoiseEnsemble,
            want_stats: bool) -> VirtualStats:
    """Shared posterior pass for the map z = F d + v over the whole alphabet.

    Works on m-chunks: for every transmitted index m and noise sample v the
    posterior over candidate indices p uses the exponent
    ||F (a_p - a_m)||^2 - 2 Re((F (a_p - a_m))^H v), which equals
    ||z - F a_p||^2 - ||v||^2 for z = F a_m + v.
    """
    m_total = alphabet.m
    n_t = alphabet.n_t
    n_noise = noise.count
    v = noise.samples  # (N, nt)
    a_full = symbol_block(alphabet, 0, m_total)  # (nt, M); fine for M <= 2**16
    s_full = f_map @ a_full

    chunk = max(1, min(m_total, _CHUNK_BUDGET // max(1, m_total * n_noise)))
    lse_sum = 0.0
    wsum = np.zeros(m_total)
    dh_acc = np.zeros((n_t, n_t), dtype=np.complex128)
    edir = np.zeros((n_t, n_t), dtype=np.complex128)
    xcorr = np.zeros((n_t, n_t), dtype=np.complex128)

    for m0 in range(0, m_total, chunk):
        m1 = min(m_total, m0 + chunk)
        c = m1 - m0
        # pairwise transformed differences, flattened to (M*c, nt)
        dm = (s_full[:, :, None] - s_full[:, None, m0:m1]).reshape(n_t, -1)
        d2 = np.sum(np.abs(dm) ** 2, axis=0)  # (M*c,)
        cross = dm.conj().T @ v.T  # (M*c, N)
        q = d2[:, None] - 2.0 * np.real(cross)
        q = q.reshape(m_total, c * n_noise)
        mx = q.min(axis=0)
        ex = np.exp(mx[None, :] - q)
        ssum = ex.sum(axis=0)
        lse_sum += float(np.sum(np.log(ssum) - mx))
        if not want_stats:
            continue
        w = ex / ssum  # (M, c*N)
        wsum += w.sum(axis=1)
        dhat = a_full @ w  # (nt, c*N)
        dh_acc += dhat @ dhat.conj().T
        err = dhat - np.repeat(a_full[:, m0:m1], n_noise, axis=1)
        edir += err @ err.conj().T
        errsum = err.reshape(n_t, c, n_noise).sum(axis=1)  # (nt, N)
        xcorr += (errsum.conj() @ v).T

    denom = m_total * n_noise
    mi_raw = (np.log(m_total) - lse_sum / denom) * LOG2E
    mi = float(np.clip(mi_raw, 0.0, np.log2(m_total)))
    if not want_stats:
        return VirtualStats(mi, mi_raw, None, None, None)
    s2 = (a_full * wsum) @ a_full.conj().T
    e_cond = (s2 - dh_acc) / denom
    e_cond = (e_cond + e_cond.conj().T) / 2.0
    e_dir = (edir + edir.conj().T) / (2.0 * denom)
    return VirtualStats(
        mi_bits=mi,
        mi_bits_raw=mi_raw,
        e_cond=e_cond,
        e_two=e_cond + e_dir,
        noise_err=xcorr / denom,
    )


def deterministic_mi(t_matrix: np.ndarray, b: np.ndarray, alphabet: VectorAlphabet,
                     noise: NoiseEnsemble) -> float:
    """Per-user virtual-channel mutual information in bits.

    log2 M - (1/M) sum_m E_v[log2 sum_p exp(-(||sqrt(T) B (a_p - a_m) + v||^2
    - ||v||^2))] with the expectation over the shared ensemble; clamped to
    [0, log2 M].
    """
    f_map = sqrt_psd(t_matrix) @ b
    return _kernel(f_map, alphabet, noise, want_stats=False).mi_bits


def mmse_matrices(t_matrix: np.ndarray, b: np.ndarray, alphabet: VectorAlphabet,
                  noise: NoiseEnsemble) -> MseMatrices:
    """MSE matrices E (signal domain) and Omega = B E B^H (precoded domain).

    E is the noise-and-symbol average of the posterior conditional
    covariance sum_p w_p a_p a_p^H - dhat dhat^H, which is Hermitian PSD by
    construction and unbiased for the MSE of the conditional-mean estimate.
    """
    b = np.asarray(b, dtype=np.complex128)
    f_map = sqrt_psd(t_matrix) @ b
    st = _kernel(f_map, alphabet, noise, want_stats=True)
    omega = b @ st.e_cond @ b.conj().T
    return MseMatrices(e=st.e_cond, omega=(omega + omega.conj().T) / 2.0)


def _eig_map(u_t: np.ndarray, tau: np.ndarray, b: np.ndarray) -> np.ndarray:
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < -1e-12):
        raise ValueError("tau must be nonnegative")
    return (u_t * np.sqrt(np.clip(tau, 0.0, None))) @ u_t.conj().T @ np.asarray(b, dtype=np.complex128)


def virtual_stats(u_t: np.ndarray, tau: np.ndarray, b: np.ndarray,
                  alphabet: VectorAlphabet, noise: NoiseEnsemble) -> VirtualStats:
    """Full statistics for T = U diag(tau) U^H given explicitly in eigenform."""
    return _kernel(_eig_map(u_t, tau, b), alphabet, noise, want_stats=True)


def virtual_mi(u_t: np.ndarray, tau: np.ndarray, b: np.ndarray,
               alphabet: VectorAlphabet, noise: NoiseEnsemble) -> float:
    """MI-only evaluation (line-search fast path), in bits."""
    return _kernel(_eig_map(u_t, tau, b), alphabet, noise, want_stats=False).mi_bits


def mi_tau_gradient(u_t: np.ndarray, tau: np.ndarray, b: np.ndarray,
                    alphabet: VectorAlphabet, noise: NoiseEnsemble,
                    stats: VirtualStats | None = None) -> np.ndarray:
    """d(MI in bits)/d(tau_j) of the ensemble-averaged deterministic MI.

    For the sampled objective the derivative along eigendirection j is
    log2(e) * ([U^H B E2 B^H U]_jj - Re([U^H X B^H U]_jj) / sqrt(tau_j))
    with E2 the two-term error statistic and X the noise/error correlation;
    the second (Stein) term averages to zero so the formula converges to
    the classical quadratic form of Omega as the ensemble grows.  Where
    tau_j is numerically zero the classical form is used directly.
    """
    tau = np.asarray(tau, dtype=np.float64)
    if stats is None:
        stats = virtual_stats(u_t, tau, b, alphabet, noise)
    ub = u_t.conj().T @ b
    quad2 = np.real(np.diag(ub @ stats.e_two @ ub.conj().T))
    stein = np.real(np.diag(u_t.conj().T @ stats.noise_err @ b.conj().T @ u_t))
    quad1 = np.real(np.diag(ub @ stats.e_cond @ ub.conj().T))
    grad = np.where(
        tau > _TAU_FLOOR,
        quad2 - stein / np.sqrt(np.maximum(tau, _TAU_FLOOR)),
        quad1,
    )
    return LOG2E * grad


def mi_gamma_partial(u_t: np.ndarray, tau: np.ndarray, b: np.ndarray,
                     alphabet: VectorAlphabet, noise: NoiseEnsemble,
                     g_row: np.ndarray) -> float:
    """d(MI in bits)/d(gamma_n) where tau = G^T gamma and g_row = G[n, :].

    Chain rule through tau: sum_m g_row[m] * dI/dtau_m.
    """
    grad = mi_tau_gradient(u_t, tau, b, alphabet, noise)
    return float(np.asarray(g_row, dtype=np.float64) @ grad)


# ---------------------------------------------------------------------------
# Exact conditional mutual information (physical channel, nested MC)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonteCarloConfig:
    n_channels: int = 200
    n_noise: int = 100  # (transmit vector, noise) draws per channel
    seed: int = 0
    alphabet_cap: int = 2**20
    batches: int = 10


@dataclass(frozen=True)
class ExactMiEstimate:
    bits: float
    std_err: float
    n_channels: int
    n_samples: int


@dataclass
class _JointAlphabet:
    """Mixed-radix enumeration of the joint alphabet of a user subset."""

    alphabets: list
    sizes: list = field(init=False)

    def __post_init__(self) -> None:
        self.sizes = [a.m for a in self.alphabets]

    @property
    def size(self) -> int:
        total = 1
        for s in self.sizes:
            total *= s
        return total

    def user_digits(self, idx: np.ndarray) -> list[np.ndarray]:
        """Per-user symbol indices for joint indices (first user most significant)."""
        out = []
        rem = idx.astype(np.int64)
        for s in reversed(self.sizes):
            out.append(rem % s)
            rem = rem // s
        return list(reversed(out))


def _symbols_at(alphabet: VectorAlphabet, indices: np.ndarray) -> np.ndarray:
    q = alphabet.base.order
    idx = indices.astype(np.int64)
    block = np.empty((alphabet.n_t, idx.size), dtype=np.complex128)
    for pos in range(alphabet.n_t - 1, -1, -1):
        block[pos] = alphabet.base.points[idx % q]
        idx //= q
    return block


def exact_conditional_mi_mc(
    models: list[WeichselbergerModel],
    precoders: list[np.ndarray],
    subset: list[int],
    alphabets: list[VectorAlphabet],
    cfg: MonteCarloConfig,
) -> ExactMiEstimate:
    """I(d_A; y | d_{A^c}) of the physical MAC, by nested Monte Carlo.

    Conditioning removes the known users' contribution, so only the subset
    A enters: per channel realization, -E[log2 E_d exp(-||y - H_A B_A
    d_A||^2)] - N_r log2(e), with the inner expectation an exact sum over
    the joint alphabet (streamed in chunks with an online log-sum-exp).
    The standard error comes from batching the channel realizations.
    """
    if not subset:
        raise ValueError("subset must be nonempty")
    joint = _JointAlphabet([alphabets[k] for k in subset])
    j_size = joint.size
    if j_size > cfg.alphabet_cap:
        raise ResourceCapError(
            f"joint alphabet size {j_size} exceeds cap {cfg.alphabet_cap}"
        )
    n_r = models[subset[0]].n_r
    log_j = np.log(j_size)
    chunk = max(1, min(j_size, _CHUNK_BUDGET // max(1, cfg.n_noise)))

    per_channel = np.empty(cfg.n_channels)
    for c in range(cfg.n_channels):
        rng = derived_rng(cfg.seed, c)
        hb = []
        for k in subset:
            h = sample_channel(models[k], rng).h
            hb.append(h @ precoders[k])
        tx_idx = rng.integers(0, j_size, size=cfg.n_noise)
        vsig = (rng.standard_normal((cfg.n_noise, n_r))
                + 1j * rng.standard_normal((cfg.n_noise, n_r))) / np.sqrt(2.0)
        digits = joint.user_digits(tx_idx)
        y = vsig.copy()
        for u, k in enumerate(subset):
            y += (hb[u] @ _symbols_at(alphabets[k], digits[u])).T
        # streamed logsumexp of -||y - Y0_p||^2 over the joint alphabet
        run_max = np.full(cfg.n_noise, -np.inf)
        run_sum = np.zeros(cfg.n_noise)
        for j0 in range(0, j_size, chunk):
            j1 = min(j_size, j0 + chunk)
            jidx = np.arange(j0, j1)
            jdig = joint.user_digits(jidx)
            y0 = np.zeros((n_r, j1 - j0), dtype=np.complex128)
            for u, k in enumerate(subset):
                y0 += hb[u] @ _symbols_at(alphabets[k], jdig[u])
            d2 = np.sum(np.abs(y[:, :, None] - y0[None, :, :]) ** 2, axis=1)
            neg = -d2  # (n_noise, chunk)
            cmax = neg.max(axis=1)
            new_max = np.maximum(run_max, cmax)
            run_sum = run_sum * np.exp(run_max - new_max) + np.sum(
                np.exp(neg - new_max[:, None]), axis=1
            )
            run_max = new_max
        log_inner = run_max + np.log(run_sum) - log_j
        per_channel[c] = float(np.mean(-log_inner))

    mean_nats = float(np.mean(per_channel))
    bits = mean_nats * LOG2E - n_r * LOG2E
    batches = min(cfg.batches, cfg.n_channels)
    groups = np.array_split(per_channel, batches)
    means = np.array([g.mean() for g in groups]) * LOG2E
    std_err = float(np.std(means, ddof=1) / np.sqrt(batches)) if batches > 1 else float("nan")
    return ExactMiEstimate(
        bits=bits,
        std_err=std_err,
        n_channels=cfg.n_channels,
        n_samples=cfg.n_channels * cfg.n_noise,
    )
