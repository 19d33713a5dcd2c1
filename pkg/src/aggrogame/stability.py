"""Local stability of the mean-field dynamics around Nash points.

Linearizations are expressed in tangent coordinates: each player's frequency
and tracker deviations are written as ``N x`` with ``N`` an orthonormal basis of
the simplex tangent space, giving a ``2 n (m-1)`` square matrix ordered as
``[x_q (players stacked), x_r (players stacked)]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import (
    GameSpec,
    aggregate_all,
    is_doubly_stochastic,
    is_stochastic,
    ne_residual,
    softmax,
)
from .dynamics import VARIANTS, OdeRates, TrajectoryLog

HURWITZ_TOL = 1e-9


class PreconditionError(ValueError):
    """A stability statement was requested outside the assumptions it relies on."""

    def __init__(self, assumption: str, message: str):
        super().__init__(f"[{assumption}] {message}")
        self.assumption = assumption


def tangent_basis(m: int) -> np.ndarray:
    """Normalized Helmert columns: orthonormal and orthogonal to the ones vector."""
    if m < 2:
        raise ValueError(f"tangent basis needs m >= 2, got {m}")
    basis = np.zeros((m, m - 1))
    for k in range(1, m):
        scale = 1.0 / np.sqrt(k * (k + 1))
        basis[:k, k - 1] = scale
        basis[k, k - 1] = -k * scale
    return basis


def softmax_jacobian(b) -> np.ndarray:
    p = softmax(b)
    return np.diag(p) - np.outer(p, p)


@dataclass
class StabilityReport:
    variant: str | None
    dimension: int
    eigenvalues: np.ndarray
    max_real: float
    verdict: str
    preconditions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "dimension": self.dimension,
            "eigenvalues": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
            "max_real": self.max_real,
            "verdict": self.verdict,
            "preconditions": self.preconditions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> StabilityReport:
        eig = np.array([complex(re, im) for re, im in data["eigenvalues"]])
        return cls(
            variant=data["variant"],
            dimension=int(data["dimension"]),
            eigenvalues=eig,
            max_real=float(data["max_real"]),
            verdict=data["verdict"],
            preconditions=dict(data.get("preconditions", {})),
        )


def hurwitz_stable(matrix, tol: float = HURWITZ_TOL, variant: str | None = None, preconditions=None) -> StabilityReport:
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    try:
        eig = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed to converge: {exc}") from exc
    order = np.lexsort((eig.imag, -eig.real))
    eig = eig[order]
    max_real = float(eig.real.max()) if eig.size else -np.inf
    if max_real < -tol:
        verdict = "stable"
    elif max_real > tol:
        verdict = "unstable"
    else:
        verdict = "marginal"
    return StabilityReport(variant, a.shape[0], eig, max_real, verdict, dict(preconditions or {}))


def _d_blocks(spec: GameSpec, types, q_star, tau: float, basis: np.ndarray):
    """Per-player reduced softmax Jacobians ``(1/tau) N^T grad_softmax N`` at the equilibrium."""
    agg = aggregate_all(spec.w, q_star)
    args = (agg - np.asarray(types, dtype=float)) / tau
    return np.stack([basis.T @ softmax_jacobian(b) @ basis / tau for b in args])


def check_preconditions(variant: str, spec: GameSpec, q_star, tau: float, eps: float = 1e-6) -> dict:
    """Raise ``PreconditionError`` naming the violated assumption; otherwise summarize them."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    q_star = np.asarray(q_star, dtype=float)
    info = {
        "w_stochastic": is_stochastic(spec.w),
        "w_doubly_stochastic": is_doubly_stochastic(spec.w),
        "min_equilibrium_entry": float(q_star.min()),
    }
    if variant.startswith("FP") and not tau > 0:
        raise PreconditionError("smoothed-best-response stability", f"{variant} requires tau > 0, got {tau}")
    if variant.startswith("GP") and not q_star.min() > eps:
        raise PreconditionError(
            "gradient-play interior equilibrium",
            f"{variant} linearization requires a completely mixed equilibrium (all entries > {eps}); "
            f"smallest entry is {q_star.min():.3g}",
        )
    if variant.endswith("PA") and not info["w_stochastic"]:
        raise PreconditionError(
            "passive-aggregator stochastic W",
            f"{variant} requires a row-stochastic influence matrix so the tracker stays in the simplex",
        )
    return info


def build_linearization(
    variant: str,
    spec: GameSpec,
    types,
    q_star,
    rates: OdeRates,
    tau: float | None = None,
    *,
    eps: float = 1e-6,
    pa_tracker_coupling: str = "identity",
) -> np.ndarray:
    """Jacobian of the mean-field ODE at ``(q*, r*)`` in tangent coordinates.

    ``pa_tracker_coupling`` only affects GP_PA: ``"identity"`` (default) gives
    the exact Jacobian, whose q-row couples to each player's own tracker via
    ``-gamma*lam*I``; ``"influence"`` reproduces the alternative form with
    ``-gamma*lam*(W kron I)`` in that block.
    """
    tau = spec.tau if tau is None else tau
    check_preconditions(variant, spec, q_star, tau, eps)
    q_star = np.asarray(q_star, dtype=float)
    n, m = q_star.shape
    p = m - 1
    basis = tangent_basis(m)
    w = spec.w - np.diag(np.diag(spec.w))
    g, lam = rates.gamma, rates.lam
    gl = g * lam
    eye = np.eye(n * p)
    wk = np.kron(w, np.eye(p))

    if variant.startswith("FP"):
        c = _d_blocks(spec, types, q_star, tau, basis)
        # D_ik = w_ik * C_i
        d1 = np.einsum("ik,iab->iakb", w, c).reshape(n * p, n * p)
        top_left = -eye + (1 + gl) * d1
        if variant == "FP_AA":
            top_right = -gl * d1
            bottom_left = lam * eye
        else:
            d2 = np.zeros((n * p, n * p))
            for i in range(n):
                d2[i * p : (i + 1) * p, i * p : (i + 1) * p] = c[i]
            top_right = -gl * d2
            bottom_left = lam * wk
    else:
        top_left = (1 + gl) * wk
        if variant == "GP_AA":
            top_right = -gl * wk
            bottom_left = lam * eye
        else:
            if pa_tracker_coupling == "identity":
                top_right = -gl * eye
            elif pa_tracker_coupling == "influence":
                top_right = -gl * wk
            else:
                raise ValueError(f"unknown pa_tracker_coupling {pa_tracker_coupling!r}")
            bottom_left = lam * wk
    return np.block([[top_left, top_right], [bottom_left, -lam * eye]])


def equilibrium_trackers(spec: GameSpec, variant: str, q_star) -> np.ndarray:
    """Tracker values at rest: ``q*`` for AA, ``A(q*)`` for PA."""
    q_star = np.asarray(q_star, dtype=float)
    return q_star.copy() if variant.endswith("AA") else aggregate_all(spec.w, q_star)


def stability_report(
    variant: str, spec: GameSpec, types, q_star, rates: OdeRates, tau: float | None = None, **kwargs
) -> StabilityReport:
    tau = spec.tau if tau is None else tau
    info = check_preconditions(variant, spec, q_star, tau, kwargs.get("eps", 1e-6))
    info["ne_residual"] = ne_residual(spec.with_params(tau=tau), q_star, types, variant[:2])
    mat = build_linearization(variant, spec, types, q_star, rates, tau, **kwargs)
    return hurwitz_stable(mat, variant=variant, preconditions=info)


def classify_equilibrium(spec: GameSpec, types, q, tau: float | None = None, eps: float = 1e-6) -> str:
    """One of ``CMNE``, ``PSNE-candidate``, ``mixed-boundary`` or ``not-NE``."""
    tau = spec.tau if tau is None else tau
    mode = "FP" if tau > 0 else "GP"
    q = np.asarray(q, dtype=float)
    if ne_residual(spec.with_params(tau=tau), q, types, mode) > eps:
        return "not-NE"
    if np.all(q > eps):
        return "CMNE"
    if np.all(q.max(axis=1) >= 1.0 - eps):
        return "PSNE-candidate"
    return "mixed-boundary"


@dataclass
class LyapunovSeries:
    values: np.ndarray
    derivative: np.ndarray
    fraction_nonincreasing: float


def lyapunov_monitor(
    log: TrajectoryLog, spec: GameSpec, q_star, variant: str, rates: OdeRates, tol: float = 1e-12
) -> LyapunovSeries:
    """Evaluate ``V = 1/2 sum(|q - q*|^2 + lam |r - t|^2)`` along an ODE trajectory.

    ``t`` is ``q`` under AA and ``A(q)`` under PA. The derivative is a forward
    difference; steps with derivative <= ``tol`` count as nonincreasing.
    """
    if variant not in ("GP_AA", "GP_PA"):
        raise ValueError(f"Lyapunov monitor covers GP_AA and GP_PA, got {variant!r}")
    if log.variant != variant:
        raise ValueError(f"trajectory was produced by {log.variant!r}, not {variant!r}")
    if variant == "GP_PA" and not is_doubly_stochastic(spec.w):
        raise PreconditionError(
            "passive-aggregator doubly stochastic W", "GP_PA Lyapunov decrease requires a doubly stochastic W"
        )
    q_star = np.asarray(q_star, dtype=float)
    w = spec.w - np.diag(np.diag(spec.w))
    target = log.q if variant == "GP_AA" else np.einsum("ij,tjm->tim", w, log.q)
    values = 0.5 * (
        np.sum((log.q - q_star[None]) ** 2, axis=(1, 2)) + rates.lam * np.sum((log.r - target) ** 2, axis=(1, 2))
    )
    dt = np.diff(log.times)
    deriv = np.diff(values) / dt if dt.size else np.zeros(0)
    frac = float(np.mean(deriv <= tol)) if deriv.size else 1.0
    return LyapunovSeries(values=values, derivative=deriv, fraction_nonincreasing=frac)
