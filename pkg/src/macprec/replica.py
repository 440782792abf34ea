"""Coupled fixed-point equations and the asymptotic conditional rate.

For a user set A_k = {1..k} the auxiliary parameters solve, per user t:

    R_t   = U_R diag(G_t psi_t) U_R^H,        R_A = sum_t R_t
    gamma_t[n] = u_{R_t,n}^H (I + R_A)^{-1} u_{R_t,n}
    T_t   = U_T diag(G_t^T gamma_t) U_T^H
    psi_t[m]   = d/d tau_m  I(d_t; sqrt(T_t) B_t d_t + v)   (in nats)

iterated with damping from several seeded initializations.  Multiple
solutions can coexist; among the converged ones the solution minimizing
the asymptotic conditional MI is returned (phase-coexistence rule).  The
asymptotic conditional MI itself is

    sum_t I_t + log2 det(I + R_A) - log2(e) * sum_t gamma_t^T G_t psi_t.

The psi update uses the exact tau-derivative of the ensemble-averaged MI
(``mi_engine.mi_tau_gradient``), which keeps the whole asymptotic rate
exactly stationary in (gamma, psi) at a solved fixed point -- the property
the precoder gradients and their finite-difference tests depend on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .channel import WeichselbergerModel, derived_rng
from .constellation import VectorAlphabet
from .errors import ConvergenceError
from .mi_engine import LOG2E, NoiseEnsemble, mi_tau_gradient, virtual_mi, virtual_stats

__all__ = [
    "FixedPointConfig",
    "FixedPointState",
    "AsymptoticRate",
    "WsrEvaluation",
    "precoder_digest",
    "solve_fixed_point",
    "asymptotic_conditional_mi",
    "asymptotic_wsr",
]


@dataclass(frozen=True)
class FixedPointConfig:
    tol: float = 1e-6
    max_iter: int = 500
    damping: float = 0.5
    n_starts: int = 4
    seed: int = 0


@dataclass(frozen=True)
class AsymptoticRate:
    value_bits: float
    per_user_mi: list
    logdet_term: float
    correction_term: float


@dataclass
class FixedPointState:
    subset_k: int
    gammas: list  # per user, length n_r, in (0, 1]
    psis: list  # per user, length n_t, >= 0
    taus: list  # per user, diag loading of T in the u_t basis
    t_matrices: list
    r_matrices: list
    residual: float
    iterations: int
    converged: bool
    precoder_digest: str
    rate: AsymptoticRate | None = field(default=None)


def precoder_digest(precoders: list[np.ndarray]) -> str:
    h = hashlib.sha1()
    for b in precoders:
        h.update(np.ascontiguousarray(b, dtype=np.complex128).tobytes())
    return h.hexdigest()


def _resolve(models, precoders, alphabets, psis, noise):
    """Consistent (gamma, tau, R_A) pass from given psis, plus rate terms."""
    k = len(models)
    n_r = models[0].n_r
    r_matrices = []
    r_a = np.zeros((n_r, n_r), dtype=np.complex128)
    for t in range(k):
        r_t = (models[t].u_r * (models[t].g @ psis[t])) @ models[t].u_r.conj().T
        r_matrices.append(r_t)
        r_a += r_t
    m_inv = np.linalg.inv(np.eye(n_r) + r_a)
    gammas, taus = [], []
    for t in range(k):
        u_r = models[t].u_r
        gam = np.real(np.einsum("an,ab,bn->n", u_r.conj(), m_inv, u_r))
        gammas.append(np.clip(gam, 0.0, 1.0))
        taus.append(models[t].g.T @ gammas[t])
    return gammas, taus, r_matrices, r_a


def _rate_terms(models, precoders, alphabets, gammas, psis, taus, r_a, noise):
    per_user = []
    for t in range(len(models)):
        per_user.append(virtual_mi(models[t].u_t, taus[t], precoders[t],
                                   alphabets[t], noise))
    logdet = float(np.linalg.slogdet(np.eye(r_a.shape[0]) + r_a)[1]) * LOG2E
    corr = LOG2E * float(sum(gammas[t] @ models[t].g @ psis[t] for t in range(len(models))))
    value = float(sum(per_user) + logdet - corr)
    return AsymptoticRate(value_bits=value, per_user_mi=per_user, logdet_term=logdet,
                          correction_term=corr)


def _iterate(models, precoders, alphabets, psis0, cfg, noise):
    """Damped Picard iteration from one initialization."""
    k = len(models)
    psis = [np.asarray(p, dtype=np.float64).copy() for p in psis0]
    residual = np.inf
    for it in range(1, cfg.max_iter + 1):
        gammas, taus, _, _ = _resolve(models, precoders, alphabets, psis, noise)
        residual = 0.0
        new_psis = []
        for t in range(k):
            grad_bits = mi_tau_gradient(models[t].u_t, taus[t], precoders[t],
                                        alphabets[t], noise)
            psi_new = np.maximum(grad_bits / LOG2E, 0.0)
            psi_d = (1.0 - cfg.damping) * psi_new + cfg.damping * psis[t]
            residual = max(residual, float(np.max(np.abs(psi_d - psis[t]))))
            new_psis.append(psi_d)
        psis = new_psis
        if residual < cfg.tol:
            return psis, residual, it, True
    return psis, residual, cfg.max_iter, False


def solve_fixed_point(
    models: list[WeichselbergerModel],
    precoders: list[np.ndarray],
    alphabets: list[VectorAlphabet],
    cfg: FixedPointConfig,
    noise: NoiseEnsemble,
    warm_psis: list | None = None,
) -> FixedPointState:
    """Solve the coupled equations for A_k = {1..k}; k = len(models).

    Runs ``cfg.n_starts`` independent initializations (zeros first, then
    seeded uniform draws on [0, tr(B B^H)/n_t]; a warm start, when given,
    is tried additionally) and returns the converged solution minimizing
    the asymptotic conditional MI.
    """
    k = len(models)
    n_t = models[0].n_t
    digest = precoder_digest(precoders)
    starts: list[list[np.ndarray]] = []
    if warm_psis is not None:
        starts.append([np.asarray(p, dtype=np.float64) for p in warm_psis])
    starts.append([np.zeros(n_t) for _ in range(k)])
    rng = derived_rng(cfg.seed, k, 0x5A)
    caps = [max(float(np.real(np.trace(b @ b.conj().T))) / n_t, 1e-6) for b in precoders]
    while len(starts) < max(cfg.n_starts, len(starts)):
        starts.append([rng.uniform(0.0, caps[t], n_t) for t in range(k)])

    best: tuple[float, FixedPointState] | None = None
    best_residual = np.inf
    for psis0 in starts:
        psis, residual, iters, ok = _iterate(models, precoders, alphabets, psis0, cfg, noise)
        best_residual = min(best_residual, residual)
        if not ok:
            continue
        gammas, taus, r_mats, r_a = _resolve(models, precoders, alphabets, psis, noise)
        rate = _rate_terms(models, precoders, alphabets, gammas, psis, taus, r_a, noise)
        t_mats = [
            (models[t].u_t * taus[t]) @ models[t].u_t.conj().T for t in range(k)
        ]
        state = FixedPointState(
            subset_k=k,
            gammas=gammas,
            psis=psis,
            taus=taus,
            t_matrices=t_mats,
            r_matrices=r_mats,
            residual=residual,
            iterations=iters,
            converged=True,
            precoder_digest=digest,
            rate=rate,
        )
        if best is None or rate.value_bits < best[0]:
            best = (rate.value_bits, state)
    if best is None:
        raise ConvergenceError(
            f"no fixed-point start converged for k={k} "
            f"(best residual {best_residual:.3e})",
            residual=float(best_residual),
        )
    return best[1]


def asymptotic_conditional_mi(
    state: FixedPointState,
    models: list[WeichselbergerModel],
    precoders: list[np.ndarray],
    alphabets: list[VectorAlphabet],
    noise: NoiseEnsemble,
) -> AsymptoticRate:
    """Evaluate the asymptotic conditional MI at a converged state."""
    if not state.converged:
        raise ValueError("fixed-point state has not converged")
    if state.precoder_digest != precoder_digest(precoders):
        raise ValueError("state was solved for different precoders")
    r_a = np.sum(state.r_matrices, axis=0)
    return _rate_terms(models, precoders, alphabets, state.gammas, state.psis,
                       state.taus, r_a, noise)


@dataclass(frozen=True)
class WsrEvaluation:
    value_bits: float
    deltas: np.ndarray  # length K, Delta_k = mu_k - mu_{k+1}
    states: dict  # k -> FixedPointState, for every k with Delta_k > 0


def asymptotic_wsr(
    models: list[WeichselbergerModel],
    precoders: list[np.ndarray],
    weights_mu: np.ndarray,
    alphabets: list[VectorAlphabet],
    cfg: FixedPointConfig,
    noise: NoiseEnsemble,
    warm_states: dict | None = None,
) -> WsrEvaluation:
    """Weighted sum rate sum_k Delta_k I(d_1..d_k; y | d_{k+1}..d_K).

    Weights must be pre-sorted descending (users relabeled by the caller);
    only the nested sets A_k with Delta_k > 0 require a fixed-point solve.
    """
    mu = np.asarray(weights_mu, dtype=np.float64)
    k_users = len(models)
    if mu.shape != (k_users,) or np.any(mu < 0):
        raise ValueError("weights must be nonnegative, one per user")
    if np.any(np.diff(mu) > 1e-12):
        raise ValueError("weights must be sorted in descending order")
    deltas = mu - np.append(mu[1:], 0.0)
    states: dict[int, FixedPointState] = {}
    value = 0.0
    for k in range(1, k_users + 1):
        if deltas[k - 1] <= 1e-15:
            continue
        warm = None
        if warm_states is not None and k in warm_states:
            warm = warm_states[k].psis
        state = solve_fixed_point(models[:k], precoders[:k], alphabets[:k], cfg,
                                  noise, warm_psis=warm)
        states[k] = state
        value += float(deltas[k - 1]) * state.rate.value_bits
    return WsrEvaluation(value_bits=value, deltas=deltas, states=states)
