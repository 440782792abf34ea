"""Jointly-correlated (Weichselberger) statistical channel models.

A channel H = U_R (G_tilde o W) U_T^H is described by its transmit/receive
eigenbases and the nonnegative coupling amplitudes G_tilde; W is an i.i.d.
standard complex Gaussian matrix redrawn per realization.  The coupling
matrix G = G_tilde o G_tilde carries the average energy between eigenbeam
pairs.  All randomness is driven by explicit 64-bit seeds; sub-streams are
derived with ``numpy.random.SeedSequence(seed, spawn_key=...)`` so that
(user index, realization index) splits are reproducible and disjoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "WeichselbergerModel",
    "ChannelRealization",
    "SystemDims",
    "derived_rng",
    "derived_seed",
    "random_unitary",
    "sample_channel",
    "correlation_matrices",
    "kronecker_as_weichselberger",
    "normalize_coupling",
    "snr_to_power",
    "random_weichselberger",
    "models_to_json",
    "models_from_json",
]

_UNITARY_TOL = 1e-10


@dataclass(frozen=True)
class WeichselbergerModel:
    """Statistical description (U_T, U_R, G_tilde) of one user's channel."""

    u_t: np.ndarray  # (n_t, n_t) unitary
    u_r: np.ndarray  # (n_r, n_r) unitary
    g_tilde: np.ndarray  # (n_r, n_t) real, >= 0

    def __post_init__(self) -> None:
        u_t = np.asarray(self.u_t, dtype=np.complex128)
        u_r = np.asarray(self.u_r, dtype=np.complex128)
        g_tilde = np.asarray(self.g_tilde, dtype=np.float64)
        object.__setattr__(self, "u_t", u_t)
        object.__setattr__(self, "u_r", u_r)
        object.__setattr__(self, "g_tilde", g_tilde)
        n_r, n_t = g_tilde.shape
        if u_t.shape != (n_t, n_t) or u_r.shape != (n_r, n_r):
            raise ValueError("eigenbasis shapes inconsistent with g_tilde")
        for name, u in (("u_t", u_t), ("u_r", u_r)):
            err = np.linalg.norm(u @ u.conj().T - np.eye(u.shape[0]))
            if err > _UNITARY_TOL:
                raise ValueError(f"{name} is not unitary (defect {err:.2e})")
        if np.any(g_tilde < 0):
            raise ValueError("g_tilde must be elementwise nonnegative")

    @property
    def n_t(self) -> int:
        return self.g_tilde.shape[1]

    @property
    def n_r(self) -> int:
        return self.g_tilde.shape[0]

    @property
    def g(self) -> np.ndarray:
        """Coupling matrix G = G_tilde o G_tilde (average coupling energy)."""
        return self.g_tilde**2


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray  # (n_r, n_t) complex

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=np.complex128)
        object.__setattr__(self, "h", h)
        if not np.all(np.isfinite(h.view(np.float64))):
            raise ValueError("channel realization has non-finite entries")


@dataclass(frozen=True)
class SystemDims:
    k_users: int
    n_t: int
    n_r: int

    @property
    def beta(self) -> float:
        return self.n_t / self.n_r


def derived_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the sub-stream identified by ``key`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def derived_seed(seed: int, *key: int) -> int:
    """Derived 63-bit integer seed for the sub-stream identified by ``key``."""
    state = np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1, np.uint64)
    return int(state[0] & np.uint64(0x7FFF_FFFF_FFFF_FFFF))


def _crandn(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_unitary(n: int, seed: int | np.random.Generator) -> np.ndarray:
    """Haar-distributed n x n unitary (QR of a Gaussian matrix, R-phase fixed)."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a = _crandn(rng, n, n)
    q, r = np.linalg.qr(a)
    d = np.diag(r)
    return q * (d / np.abs(d))


def sample_channel(model: WeichselbergerModel, seed: int | np.random.Generator) -> ChannelRealization:
    """Draw H = U_R (G_tilde o W) U_T^H with W i.i.d. CN(0, 1)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = _crandn(rng, model.n_r, model.n_t)
    h = model.u_r @ (model.g_tilde * w) @ model.u_t.conj().T
    return ChannelRealization(h=h)


def correlation_matrices(model: WeichselbergerModel) -> tuple[np.ndarray, np.ndarray]:
    """Transmit and receive correlation matrices (E[H^H H], E[H H^H])."""
    g = model.g
    r_t = (model.u_t * g.sum(axis=0)) @ model.u_t.conj().T
    r_r = (model.u_r * g.sum(axis=1)) @ model.u_r.conj().T
    return r_t, r_r


def kronecker_as_weichselberger(
    r_t_eigvals: np.ndarray,
    r_r_eigvals: np.ndarray,
    u_t: np.ndarray,
    u_r: np.ndarray,
) -> WeichselbergerModel:
    """Express a separately-correlated (Kronecker) channel as a coupling model.

    A rank-one coupling G = r_r_eigvals * r_t_eigvals^T / sum reproduces the
    requested correlation eigenvalues exactly; the totals of both eigenvalue
    vectors must agree (both equal E[tr(H H^H)]).
    """
    t = np.asarray(r_t_eigvals, dtype=np.float64)
    r = np.asarray(r_r_eigvals, dtype=np.float64)
    if np.any(t < 0) or np.any(r < 0):
        raise ValueError("correlation eigenvalues must be nonnegative")
    total_t, total_r = t.sum(), r.sum()
    if total_t <= 0:
        raise ValueError("total energy must be positive")
    if abs(total_t - total_r) > 1e-9 * max(total_t, total_r):
        raise ValueError(
            f"inconsistent total energy: sum(r_t)={total_t}, sum(r_r)={total_r}"
        )
    g = np.outer(r, t) / total_t
    return WeichselbergerModel(u_t=u_t, u_r=u_r, g_tilde=np.sqrt(g))


def normalize_coupling(model: WeichselbergerModel) -> WeichselbergerModel:
    """Rescale so that sum(G) = n_t * n_r, i.e. E[tr(H H^H)] = n_t * n_r.

    Under this normalization the average-SNR definition reduces to SNR = P.
    """
    total = float(model.g.sum())
    if total <= 0:
        raise ValueError("cannot normalize an all-zero coupling matrix")
    scale = np.sqrt(model.n_t * model.n_r / total)
    return WeichselbergerModel(u_t=model.u_t, u_r=model.u_r, g_tilde=model.g_tilde * scale)


def snr_to_power(snr_db: float, model: WeichselbergerModel) -> float:
    """Per-user transmit power P realizing the given average SNR.

    SNR = E[tr(H H^H)] P / (n_t n_r) with unit noise power, and
    E[tr(H H^H)] = sum(G).
    """
    total = float(model.g.sum())
    if total <= 0:
        raise ValueError("coupling sum must be positive")
    return 10.0 ** (snr_db / 10.0) * model.n_t * model.n_r / total


def random_weichselberger(
    n_r: int,
    n_t: int,
    seed: int | np.random.Generator,
    normalized: bool = True,
) -> WeichselbergerModel:
    """Synthetic model: Haar eigenbases, uniform coupling amplitudes.

    g_tilde entries are drawn uniform on [0.2, 1.0] (bounded away from zero
    so every eigenbeam pair stays weakly coupled), then optionally
    normalized to sum(G) = n_t * n_r.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u_t = random_unitary(n_t, rng)
    u_r = random_unitary(n_r, rng)
    g_tilde = rng.uniform(0.2, 1.0, size=(n_r, n_t))
    model = WeichselbergerModel(u_t=u_t, u_r=u_r, g_tilde=g_tilde)
    return normalize_coupling(model) if normalized else model


# ---------------------------------------------------------------------------
# JSON serialization.  Schema (documented, version 1):
# {
#   "version": 1,
#   "users": [
#     {"n_r": int, "n_t": int,
#      "u_t": [[ [re, im], ... n_t ], ... n_t ],   # row-major
#      "u_r": [[ [re, im], ... n_r ], ... n_r ],
#      "g_tilde": [[ float, ... n_t ], ... n_r ]},
#     ...
#   ]
# }
# ---------------------------------------------------------------------------


def _complex_to_pairs(a: np.ndarray) -> list:
    return [[[float(x.real), float(x.imag)] for x in row] for row in a]


def _pairs_to_complex(rows: list) -> np.ndarray:
    return np.array([[complex(p[0], p[1]) for p in row] for row in rows], dtype=np.complex128)


def models_to_json(models: list[WeichselbergerModel], path: str | Path | None = None) -> str:
    doc = {
        "version": 1,
        "users": [
            {
                "n_r": m.n_r,
                "n_t": m.n_t,
                "u_t": _complex_to_pairs(m.u_t),
                "u_r": _complex_to_pairs(m.u_r),
                "g_tilde": [[float(x) for x in row] for row in m.g_tilde],
            }
            for m in models
        ],
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def models_from_json(source: str | Path) -> list[WeichselbergerModel]:
    p = Path(source)
    text = p.read_text() if p.exists() else str(source)
    doc = json.loads(text)
    if doc.get("version") != 1:
        raise ValueError("unsupported channel file version")
    models = []
    for entry in doc["users"]:
        models.append(
            WeichselbergerModel(
                u_t=_pairs_to_complex(entry["u_t"]),
                u_r=_pairs_to_complex(entry["u_r"]),
                g_tilde=np.asarray(entry["g_tilde"], dtype=np.float64),
            )
        )
    return models
