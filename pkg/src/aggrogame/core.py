"""Game primitives: simplex arithmetic, payoffs, aggregation, best response.

Strategies are plain numpy arrays. A joint profile is an ``(n, m)`` array whose
rows are points of the probability simplex over the ``m`` shared actions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

SIMPLEX_TOL = 1e-9
DRIFT_TOL = 1e-12


@dataclass(frozen=True)
class GameSpec:
    """A latent aggregative game.

    theta: ``(n, m, d)`` stack of linear type maps, one ``m x d`` map per player.
    w: ``(n, n)`` influence matrix with zero diagonal.
    tau: entropy temperature (0 disables the entropy bonus).
    """

    theta: np.ndarray
    w: np.ndarray
    tau: float = 1.0
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if theta.ndim != 3:
            raise ValueError(f"theta must have shape (n, m, d), got {theta.shape}")
        n, m, _ = theta.shape
        if m < 2:
            raise ValueError(f"action count m must be >= 2, got {m}")
        if w.shape != (n, n):
            raise ValueError(f"w must have shape ({n}, {n}), got {w.shape}")
        if np.any(np.diag(w) != 0.0):
            raise ValueError("influence matrix must have a zero diagonal")
        if not self.tau >= 0.0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def m(self) -> int:
        return self.theta.shape[1]

    @property
    def d(self) -> int:
        return self.theta.shape[2]

    def with_params(self, theta=None, w=None, tau=None) -> GameSpec:
        return GameSpec(
            theta=self.theta if theta is None else theta,
            w=self.w if w is None else w,
            tau=self.tau if tau is None else tau,
            meta=dict(self.meta),
        )


def compute_types(spec: GameSpec, context) -> np.ndarray:
    """Types ``z_i = theta_i x`` for every player, shape ``(n, m)``."""
    x = np.asarray(context, dtype=float)
    if x.shape != (spec.d,):
        raise ValueError(f"context must have length {spec.d}, got shape {x.shape}")
    return spec.theta @ x


def softmax(b, axis: int = -1) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    e = np.exp(b - b.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def init_strategy(z) -> np.ndarray:
    """Initial mixed strategy induced by a type vector (softmax)."""
    return softmax(z)


def logistic(t):
    """Numerically stable logistic function for scalars or arrays."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def aggregate(w: np.ndarray | GameSpec, i: int, strategies) -> np.ndarray:
    """Weighted sum of the other players' strategies as seen by player ``i``."""
    w = w.w if isinstance(w, GameSpec) else np.asarray(w, dtype=float)
    s = np.asarray(strategies, dtype=float)
    row = w[i].copy()
    row[i] = 0.0
    return row @ s


def aggregate_all(w: np.ndarray, strategies) -> np.ndarray:
    """All aggregates at once; the diagonal of ``w`` is ignored."""
    w = np.asarray(w, dtype=float)
    off = w - np.diag(np.diag(w))
    return off @ np.asarray(strategies, dtype=float)


def entropy(sigma) -> float:
    p = np.asarray(sigma, dtype=float)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def payoff(spec: GameSpec, i: int, sigma_i, strategies, z_i) -> float:
    """Expected utility of player ``i``; row ``i`` of ``strategies`` is ignored."""
    u = aggregate(spec.w, i, strategies)
    sigma_i = np.asarray(sigma_i, dtype=float)
    value = float(sigma_i @ (u - np.asarray(z_i, dtype=float)))
    if spec.tau > 0:
        value += spec.tau * entropy(sigma_i)
    return value


def best_response(aggregate_u, z, tau: float) -> np.ndarray:
    """Entropy-smoothed best response ``softmax((u - z) / tau)``."""
    if not tau > 0:
        raise ValueError(f"best response needs tau > 0, got {tau}; use projected gradient play for tau = 0")
    return softmax((np.asarray(aggregate_u, dtype=float) - np.asarray(z, dtype=float)) / tau)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the simplex, row-wise for 2-D input.

    Sort-and-threshold: find the largest rho with u_rho > (cumsum_rho - 1) / rho.
    """
    v = np.asarray(v, dtype=float)
    flat = v.reshape(-1, v.shape[-1])
    m = flat.shape[1]
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ks = np.arange(1, m + 1)
    cond = u - css / ks > 0
    rho = m - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(flat.shape[0]), rho] / (rho + 1)
    out = np.maximum(flat - theta[:, None], 0.0)
    # points already on the simplex are returned untouched so projection is exactly idempotent
    inside = (flat.min(axis=1) >= 0.0) & (np.abs(flat.sum(axis=1) - 1.0) <= DRIFT_TOL)
    out[inside] = flat[inside]
    return out.reshape(v.shape)


def clean_strategy(p) -> np.ndarray:
    """Clamp tiny negatives and renormalize when drift exceeds ``DRIFT_TOL``."""
    p = np.asarray(p, dtype=float)
    bad = (p.min(axis=-1, keepdims=True) < 0) | (np.abs(p.sum(axis=-1, keepdims=True) - 1.0) > DRIFT_TOL)
    if not bad.any():
        return p
    q = np.clip(p, 0.0, 1.0)
    q = q / q.sum(axis=-1, keepdims=True)
    return np.where(bad, q, p)


def in_simplex(p, tol: float = SIMPLEX_TOL) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(np.all(p >= -DRIFT_TOL) and np.all(np.abs(p.sum(axis=-1) - 1.0) <= tol))


def is_stochastic(w, tol: float = 1e-8) -> bool:
    w = np.asarray(w, dtype=float)
    return bool(np.all(w >= -tol) and np.allclose(w.sum(axis=1), 1.0, atol=tol, rtol=0))


def is_doubly_stochastic(w, tol: float = 1e-8) -> bool:
    w = np.asarray(w, dtype=float)
    return is_stochastic(w, tol) and bool(np.allclose(w.sum(axis=0), 1.0, atol=tol, rtol=0))


def ne_residual(spec: GameSpec, strategies, types, mode: str) -> float:
    """Sup-norm fixed-point residual of a joint profile (0 exactly at a Nash point).

    FP uses the smoothed best response, GP the projected payoff-gradient step.
    """
    s = np.asarray(strategies, dtype=float)
    z = np.asarray(types, dtype=float)
    agg = aggregate_all(spec.w, s)
    if mode == "FP":
        target = best_response(agg, z, spec.tau)
    elif mode == "GP":
        target = project_simplex(s + agg - z)
    else:
        raise ValueError(f"mode must be 'FP' or 'GP', got {mode!r}")
    return float(np.max(np.abs(target - s)))
