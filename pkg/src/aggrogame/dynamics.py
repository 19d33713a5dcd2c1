"""Repeated-play protocols (smoothed fictitious play and projected gradient play)
under active and passive aggregators, plus their mean-field ODEs.

Variants are named ``{FP,GP}_{AA,PA}``. In every variant the tracker ``r`` is a
leaky integrator: under AA it follows the player's own frequency ``q`` and the
aggregator forwards ``A_i(q + gamma * lam * (q - r))``; under PA it follows the
raw aggregate ``A_i(q)`` and the player adds ``gamma * lam * (A_i(q) - r_i)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    DRIFT_TOL,
    GameSpec,
    aggregate_all,
    best_response,
    compute_types,
    init_strategy,
    is_stochastic,
    project_simplex,
)

VARIANTS = ("FP_AA", "FP_PA", "GP_AA", "GP_PA")
ODE_DRIFT_TOL = 1e-9


@dataclass(frozen=True)
class OdeRates:
    gamma: float
    lam: float

    def __post_init__(self) -> None:
        if not (self.gamma > 0 and self.lam > 0):
            raise ValueError(f"rates must be strictly positive, got gamma={self.gamma}, lam={self.lam}")


@dataclass(frozen=True)
class ProtocolConfig:
    play: str
    aggregator: str
    rates: OdeRates
    tau: float = 0.0
    steps: int = 1000
    seed: int = 0
    convergence_tol: float = 1e-6
    convergence_window: int = 50
    # None selects the 1/k schedule; a float gives a constant tracker step
    tracker_step: float | None = None

    def __post_init__(self) -> None:
        if self.play not in ("FP", "GP"):
            raise ValueError(f"play must be FP or GP, got {self.play!r}")
        if self.aggregator not in ("AA", "PA"):
            raise ValueError(f"aggregator must be AA or PA, got {self.aggregator!r}")
        if self.play == "FP" and not self.tau > 0:
            raise ValueError("fictitious play needs tau > 0")
        if self.play == "GP" and self.tau != 0:
            raise ValueError("gradient play runs with tau = 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be >= 1")

    @property
    def variant(self) -> str:
        return f"{self.play}_{self.aggregator}"


@dataclass
class PlayerState:
    """Joint protocol state; row ``i`` of each array belongs to player ``i``."""

    q: np.ndarray
    r: np.ndarray
    sigma: np.ndarray


@dataclass
class TrajectoryLog:
    variant: str
    sigma: np.ndarray  # (T+1, n, m)
    q: np.ndarray
    r: np.ndarray
    actions: np.ndarray  # (T+1, n); -1 where no action was sampled
    payoffs: np.ndarray  # (T+1, n)
    times: np.ndarray  # (T+1,)
    converged: bool = False
    convergence_step: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.sigma.shape[0] - 1

    def to_csv(self, path) -> None:
        _, n, m = self.sigma.shape
        header = ["step", "player"]
        for name in ("sigma", "q", "r"):
            header += [f"{name}_{a}" for a in range(m)]
        header += ["action", "payoff"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for t in range(self.sigma.shape[0]):
                for i in range(n):
                    row = [t, i]
                    row += [repr(float(v)) for v in self.sigma[t, i]]
                    row += [repr(float(v)) for v in self.q[t, i]]
                    row += [repr(float(v)) for v in self.r[t, i]]
                    row += [int(self.actions[t, i]), repr(float(self.payoffs[t, i]))]
                    wr.writerow(row)

    @classmethod
    def from_csv(cls, path, variant: str = "unknown") -> TrajectoryLog:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        m = sum(1 for h in header if h.startswith("sigma_"))
        steps = max(int(r[0]) for r in body) + 1
        n = max(int(r[1]) for r in body) + 1
        arr = np.array([[float(v) for v in r[2 : 2 + 3 * m]] for r in body]).reshape(steps, n, 3 * m)
        actions = np.array([int(r[2 + 3 * m]) for r in body]).reshape(steps, n)
        payoffs = np.array([float(r[3 + 3 * m]) for r in body]).reshape(steps, n)
        return cls(
            variant=variant,
            sigma=arr[..., :m],
            q=arr[..., m : 2 * m],
            r=arr[..., 2 * m :],
            actions=actions,
            payoffs=payoffs,
            times=np.arange(steps, dtype=float),
        )


def empirical_freq_update(q_prev, action: int, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError(f"step index k must be >= 1, got {k}")
    q_prev = np.asarray(q_prev, dtype=float)
    e = np.zeros_like(q_prev)
    e[action] = 1.0
    return q_prev + (e - q_prev) / k


def aggregator_feedback(spec: GameSpec, config: ProtocolConfig, i: int, state: PlayerState) -> np.ndarray:
    return _feedback(spec.w, config, state.q, state.r)[i]


def strategy_update(config: ProtocolConfig, i: int, feedback, state: PlayerState, z_i) -> np.ndarray:
    fb = np.asarray(feedback, dtype=float)[None]
    return _respond(config, fb, state.q[i : i + 1], state.r[i : i + 1], np.asarray(z_i, dtype=float)[None])[0]


def _feedback(w: np.ndarray, config: ProtocolConfig, q: np.ndarray, r: np.ndarray) -> np.ndarray:
    if config.aggregator == "AA":
        g = config.rates.gamma * config.rates.lam
        return aggregate_all(w, q + g * (q - r))
    return aggregate_all(w, q)


def _respond(config: ProtocolConfig, fb, q, r, z) -> np.ndarray:
    if config.aggregator == "PA":
        fb = fb + config.rates.gamma * config.rates.lam * (fb - r)
    if config.play == "FP":
        return best_response(fb, z, config.tau)
    return project_simplex(q + fb - z)


def _initial_state(w: np.ndarray, aggregator: str, z: np.ndarray) -> PlayerState:
    q0 = init_strategy(z)
    r0 = q0.copy() if aggregator == "AA" else aggregate_all(w, q0)
    return PlayerState(q=q0.copy(), r=r0, sigma=q0.copy())


def _payoffs(w: np.ndarray, sigma: np.ndarray, z: np.ndarray, tau: float) -> np.ndarray:
    """Payoffs for a stack of joint profiles ``(T, n, m)``."""
    off = w - np.diag(np.diag(w))
    agg = np.einsum("ij,tjm->tim", off, sigma)
    val = np.sum(sigma * (agg - z[None]), axis=-1)
    if tau > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = -np.sum(np.where(sigma > 0, sigma * np.log(sigma), 0.0), axis=-1)
        val = val + tau * ent
    return val


def _convergence(sigma: np.ndarray, tol: float, window: int) -> tuple[bool, int | None]:
    if sigma.shape[0] < 2:
        return False, None
    delta = np.abs(np.diff(sigma, axis=0)).max(axis=(1, 2))
    below = delta < tol
    run = 0
    for k, ok in enumerate(below, start=1):
        run = run + 1 if ok else 0
        if run >= window:
            return True, k
    return False, None


def run_dynamics(spec: GameSpec, context, config: ProtocolConfig, types=None) -> TrajectoryLog:
    """Stochastic repeated play; each step samples actions, then updates q, r, sigma."""
    if config.aggregator == "PA" and not is_stochastic(spec.w):
        raise ValueError(
            "passive aggregation requires a row-stochastic influence matrix "
            "(otherwise the tracker leaves the simplex)"
        )
    z = compute_types(spec, context) if types is None else np.asarray(types, dtype=float)
    n, m = z.shape
    w = spec.w - np.diag(np.diag(spec.w))
    T = config.steps
    state = _initial_state(w, config.aggregator, z)
    q, r, sig = state.q, state.r, state.sigma

    sig_log = np.empty((T + 1, n, m))
    q_log = np.empty((T + 1, n, m))
    r_log = np.empty((T + 1, n, m))
    act_log = np.full((T + 1, n), -1, dtype=np.int64)
    sig_log[0], q_log[0], r_log[0] = sig, q, r

    rng = np.random.default_rng(config.seed)
    uniforms = rng.random((T, n, 1))
    eye = np.eye(m)
    gl = config.rates.gamma * config.rates.lam
    aa = config.aggregator == "AA"
    fp = config.play == "FP"
    tau = config.tau
    top = m - 1
    for t in range(T):
        k = t + 1
        a = (np.cumsum(sig, axis=1) < uniforms[t]).sum(axis=1)
        np.minimum(a, top, out=a)
        q = q + (eye[a] - q) / k
        eta = 1.0 / k if config.tracker_step is None else config.tracker_step
        if aa:
            r = r + eta * (q - r)
            fb = w @ (q + gl * (q - r))
        else:
            u = w @ q
            r = r + eta * (u - r)
            fb = u + gl * (u - r)
        if fp:
            b = (fb - z) / tau
            e = np.exp(b - b.max(axis=1, keepdims=True))
            sig = e / e.sum(axis=1, keepdims=True)
        else:
            sig = project_simplex(q + fb - z)
        sig_log[k], q_log[k], r_log[k], act_log[k] = sig, q, r, a

    conv, conv_step = _convergence(sig_log, config.convergence_tol, config.convergence_window)
    return TrajectoryLog(
        variant=config.variant,
        sigma=sig_log,
        q=q_log,
        r=r_log,
        actions=act_log,
        payoffs=_payoffs(w, sig_log, z, tau),
        times=np.arange(T + 1, dtype=float),
        converged=conv,
        convergence_step=conv_step,
    )


def _check_variant(spec: GameSpec, variant: str, tau: float) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if variant.startswith("FP") and not tau > 0:
        raise ValueError(f"{variant} needs tau > 0")
    if variant.startswith("GP") and tau != 0:
        raise ValueError(f"{variant} runs with tau = 0")


def ode_rhs(spec: GameSpec, variant: str, types, q, r, rates: OdeRates, tau: float | None = None):
    """Right-hand side ``(dq/dt, dr/dt)`` of the mean-field ODE.

    The tracker derivative is explicit, so it is computed first and substituted
    into the frequency equation.
    """
    tau = spec.tau if tau is None else tau
    w = spec.w - np.diag(np.diag(spec.w))
    z = np.asarray(types, dtype=float)
    lam, gamma = rates.lam, rates.gamma
    if variant.endswith("AA"):
        rdot = lam * (q - r)
        fb = w @ (q + gamma * rdot)
    else:
        u = w @ q
        rdot = lam * (u - r)
        fb = u + gamma * rdot
    if variant.startswith("FP"):
        target = best_response(fb, z, tau)
    else:
        target = project_simplex(q + fb - z)
    return target - q, rdot


def integrate_ode(
    spec: GameSpec,
    variant: str,
    types,
    q0,
    r0,
    rates: OdeRates,
    horizon: float,
    step: float,
    tau: float | None = None,
) -> TrajectoryLog:
    """Fixed-step RK4 integration; q rows are re-projected when drift exceeds 1e-9."""
    tau = spec.tau if tau is None else tau
    _check_variant(spec, variant, tau)
    if not (step > 0 and horizon > 0):
        raise ValueError(f"step and horizon must be positive, got step={step}, horizon={horizon}")
    if variant.endswith("PA") and not is_stochastic(spec.w):
        raise ValueError("passive aggregation requires a row-stochastic influence matrix")
    z = np.asarray(types, dtype=float)
    n_steps = int(round(horizon / step))
    q = np.array(q0, dtype=float)
    r = np.array(r0, dtype=float)
    n, m = q.shape
    q_log = np.empty((n_steps + 1, n, m))
    r_log = np.empty((n_steps + 1, n, m))
    q_log[0], r_log[0] = q, r

    def f(qq, rr):
        return ode_rhs(spec, variant, z, qq, rr, rates, tau)

    h = step
    for t in range(1, n_steps + 1):
        k1q, k1r = f(q, r)
        k2q, k2r = f(q + 0.5 * h * k1q, r + 0.5 * h * k1r)
        k3q, k3r = f(q + 0.5 * h * k2q, r + 0.5 * h * k2r)
        k4q, k4r = f(q + h * k3q, r + h * k3r)
        q = q + (h / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q)
        r = r + (h / 6.0) * (k1r + 2 * k2r + 2 * k3r + k4r)
        drift = (q.min() < -DRIFT_TOL) or np.abs(q.sum(axis=1) - 1.0).max() > ODE_DRIFT_TOL
        if drift:
            q = project_simplex(q)
        q_log[t], r_log[t] = q, r

    w = spec.w - np.diag(np.diag(spec.w))
    return TrajectoryLog(
        variant=variant,
        sigma=q_log.copy(),
        q=q_log,
        r=r_log,
        actions=np.full((n_steps + 1, n), -1, dtype=np.int64),
        payoffs=_payoffs(w, q_log, z, tau),
        times=np.arange(n_steps + 1) * h,
        meta={"step": h, "horizon": horizon},
    )


def initial_state(spec: GameSpec, aggregator: str, types) -> PlayerState:
    """Protocol starting point: ``q = sigma = softmax(z)``, tracker matched to its target."""
    return _initial_state(spec.w - np.diag(np.diag(spec.w)), aggregator, np.asarray(types, dtype=float))


def write_trajectory_csv(log: TrajectoryLog, path: str | Path) -> None:
    log.to_csv(path)
