"""Signed-support recovery of the influence graph from one-shot binary play.

Every record holds types ``z`` (one logit per player), initial probabilities
``phi = logistic(z)`` and a joint binary action drawn from the one-step response
``sigma_i = logistic(phi_i + alpha * (sum_j w_ij phi_j - z_i))``. Each player's
incoming weights are estimated by L1-regularized logistic loss; the module also
certifies solutions (KKT residuals), computes the design constants the
guarantees depend on, and runs the primal-dual witness construction.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import spearmanr

from .core import logistic

KKT_TOL = 1e-6


class AssumptionError(ValueError):
    """The restricted Hessian is singular, so the design assumptions fail."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (KKT residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class OneShotDataset:
    phi: np.ndarray  # (M, n)
    z: np.ndarray  # (M, n)
    actions: np.ndarray  # (M, n) in {0, 1}
    alpha: float

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi, dtype=float)
        z = np.asarray(self.z, dtype=float)
        a = np.asarray(self.actions, dtype=np.int8)
        if not (phi.shape == z.shape == a.shape and phi.ndim == 2):
            raise ValueError(f"phi, z and actions must share an (M, n) shape, got {phi.shape}, {z.shape}, {a.shape}")
        # logistic saturates to exactly 0 or 1 in floating point for |z| > ~37
        if phi.size and (phi.min() < 0 or phi.max() > 1):
            raise ValueError("phi entries must lie in [0, 1]")
        if a.size and not np.all((a == 0) | (a == 1)):
            raise ValueError("actions must be binary")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def size(self) -> int:
        return self.phi.shape[0]

    @property
    def n(self) -> int:
        return self.phi.shape[1]

    def head(self, count: int) -> OneShotDataset:
        return OneShotDataset(self.phi[:count], self.z[:count], self.actions[:count], self.alpha)

    def to_jsonl(self, path) -> None:
        """First line is a header ``{"alpha", "n"}``; then one record per line."""
        with open(path, "w") as fh:
            fh.write(json.dumps({"alpha": self.alpha, "n": self.n}) + "\n")
            for z, a in zip(self.z, self.actions):
                fh.write(json.dumps({"z": z.tolist(), "actions": a.tolist()}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> OneShotDataset:
        with open(path) as fh:
            header = json.loads(fh.readline())
            zs, acts = [], []
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    zs.append(rec["z"])
                    acts.append(rec["actions"])
        z = np.asarray(zs, dtype=float).reshape(-1, header["n"])
        return cls(logistic(z), z, np.asarray(acts).reshape(-1, header["n"]), header["alpha"])


def one_shot_sample(theta_star, w_star, alpha: float, contexts, seed) -> OneShotDataset:
    """Sample binary one-shot play; ``theta_star`` is ``(n, d)`` so that ``z = X theta^T``."""
    if not alpha >= 0:
        raise ValueError("alpha must be >= 0")
    theta = np.asarray(theta_star, dtype=float)
    w = np.asarray(w_star, dtype=float)
    x = np.asarray(contexts, dtype=float)
    z = x @ theta.T
    phi = logistic(z)
    sigma = response_probabilities(phi, z, w, alpha)
    rng = np.random.default_rng(seed)
    actions = (rng.random(sigma.shape) < sigma).astype(np.int8)
    return OneShotDataset(phi, z, actions, alpha)


def response_probabilities(phi, z, w, alpha: float) -> np.ndarray:
    off = np.asarray(w, dtype=float) * (1 - np.eye(len(w)))
    return logistic(phi + alpha * (phi @ off.T - z))


@dataclass
class _Design:
    """Per-player regression data: logit = offset + alpha * X w."""

    x: np.ndarray  # (M, p) neighbour phis, possibly column-restricted
    offset: np.ndarray  # (M,)
    a: np.ndarray  # (M,)
    alpha: float
    cols: np.ndarray  # indices into the other-player list

    def logits(self, w):
        return self.offset + self.alpha * (self.x @ w)

    def loss(self, w) -> float:
        t = self.logits(w)
        return float(np.mean(np.logaddexp(0.0, t) - self.a * t))

    def grad(self, w) -> np.ndarray:
        s = expit(self.logits(w))
        return self.alpha * (self.x.T @ (s - self.a)) / len(self.a)

    def hessian(self, w) -> np.ndarray:
        s = expit(self.logits(w))
        v = s * (1 - s)
        return self.alpha**2 * (self.x.T @ (self.x * v[:, None])) / len(self.a)


def others(n: int, i: int) -> np.ndarray:
    return np.array([j for j in range(n) if j != i])


def _design(data: OneShotDataset, i: int, cols=None) -> _Design:
    oth = others(data.n, i)
    cols = np.arange(len(oth)) if cols is None else np.asarray(cols, dtype=int)
    x = data.phi[:, oth[cols]]
    return _Design(x, data.phi[:, i] - data.alpha * data.z[:, i], data.actions[:, i].astype(float), data.alpha, cols)


def recovery_loss(data: OneShotDataset, i: int, w_i) -> float:
    return _design(data, i).loss(np.asarray(w_i, dtype=float))


def recovery_grad(data: OneShotDataset, i: int, w_i) -> np.ndarray:
    return _design(data, i).grad(np.asarray(w_i, dtype=float))


def recovery_hessian(data: OneShotDataset, i: int, w_i) -> np.ndarray:
    return _design(data, i).hessian(np.asarray(w_i, dtype=float))


@dataclass
class KktReport:
    kappa: np.ndarray
    support_residual: float
    offsupport_ratio: float
    strict_dual_feasible: bool
    lambda_reg: float

    def passes(self, tol: float = KKT_TOL) -> bool:
        return self.support_residual <= tol and (self.offsupport_ratio - 1.0) * self.lambda_reg <= tol


def kkt_report(grad: np.ndarray, w: np.ndarray, lambda_reg: float) -> KktReport:
    """Stationarity on the support and subgradient bounds off it."""
    on = w != 0
    kappa = -grad / lambda_reg
    sup_res = float(np.max(np.abs(grad[on] + lambda_reg * np.sign(w[on])))) if on.any() else 0.0
    off_ratio = float(np.max(np.abs(grad[~on])) / lambda_reg) if (~on).any() else 0.0
    return KktReport(kappa, sup_res, off_ratio, bool(off_ratio < 1.0), lambda_reg)


def _kkt_residual(g: np.ndarray, w: np.ndarray, lam: float) -> float:
    on = w != 0
    res = np.where(on, np.abs(g + lam * np.sign(w)), np.maximum(np.abs(g) - lam, 0.0))
    return float(res.max()) if res.size else 0.0


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@dataclass
class SolveTrace:
    objective: list[float] = field(default_factory=list)
    iterations: int = 0


def _ista(des: _Design, lam: float, w: np.ndarray, max_iter: int, tol: float, kkt_tol: float, trace: SolveTrace):
    step_inv = 1.0
    f = des.loss(w)
    obj = f + lam * np.abs(w).sum()
    trace.objective.append(obj)
    for it in range(1, max_iter + 1):
        g = des.grad(w)
        while True:
            cand = _soft(w - g / step_inv, lam / step_inv)
            diff = cand - w
            f_c = des.loss(cand)
            if f_c <= f + g @ diff + 0.5 * step_inv * diff @ diff + 1e-15 * max(1.0, abs(f)):
                break
            step_inv *= 2.0
        new_obj = f_c + lam * np.abs(cand).sum()
        decrease = obj - new_obj
        w, f, obj = cand, f_c, new_obj
        trace.objective.append(obj)
        trace.iterations = it
        step_inv *= 0.9
        if decrease <= tol and _kkt_residual(des.grad(w), w, lam) <= kkt_tol:
            return w
    raise ConvergenceError(f"ISTA did not converge in {max_iter} iterations", _kkt_residual(des.grad(w), w, lam))


def _cd_subproblem(g: np.ndarray, h: np.ndarray, w: np.ndarray, lam: float, sweeps: int = 500) -> np.ndarray:
    """Minimize ``g.(u-w) + 0.5 (u-w)^T H (u-w) + lam |u|_1`` by cyclic coordinate descent."""
    u = w.copy()
    hu = np.zeros_like(w)  # H (u - w)
    diag = np.maximum(np.diag(h), 1e-300)
    for _ in range(sweeps):
        biggest = 0.0
        for j in range(len(w)):
            old = u[j]
            new = _soft(old - (g[j] + hu[j]) / diag[j], lam / diag[j])
            if new != old:
                hu += h[:, j] * (new - old)
                u[j] = new
                biggest = max(biggest, abs(new - old))
        if biggest <= 1e-14 * max(1.0, np.abs(u).max()):
            break
    return u


def _prox_newton(des: _Design, lam: float, w: np.ndarray, max_iter: int, tol: float, kkt_tol: float, trace: SolveTrace):
    f = des.loss(w)
    obj = f + lam * np.abs(w).sum()
    trace.objective.append(obj)
    for it in range(1, max_iter + 1):
        g = des.grad(w)
        if _kkt_residual(g, w, lam) <= kkt_tol:
            return w
        h = des.hessian(w)
        u = _cd_subproblem(g, h, w, lam)
        d = u - w
        model_dec = g @ d + lam * (np.abs(u).sum() - np.abs(w).sum())
        t = 1.0
        while True:
            cand = w + t * d
            f_c = des.loss(cand)
            new_obj = f_c + lam * np.abs(cand).sum()
            if new_obj <= obj + 1e-4 * t * model_dec or t < 1e-10:
                break
            t *= 0.5
        if new_obj > obj:
            # numerical floor reached: no descent direction left
            trace.iterations = it
            if _kkt_residual(des.grad(w), w, lam) <= max(kkt_tol, 10 * tol):
                return w
            raise ConvergenceError("proximal Newton stalled", _kkt_residual(des.grad(w), w, lam))
        w, f, obj = cand, f_c, new_obj
        trace.objective.append(obj)
        trace.iterations = it
    raise ConvergenceError(f"proximal Newton did not converge in {max_iter} iterations", _kkt_residual(des.grad(w), w, lam))


def _solve(des: _Design, lam: float, method: str, max_iter: int, tol: float, kkt_tol: float, w0=None):
    w = np.zeros(des.x.shape[1]) if w0 is None else np.array(w0, dtype=float)
    trace = SolveTrace()
    if method == "ista":
        w = _ista(des, lam, w, max_iter, tol, kkt_tol, trace)
    elif method == "newton":
        w = _prox_newton(des, lam, w, min(max_iter, 500), tol, kkt_tol, trace)
    else:
        raise ValueError(f"method must be 'ista' or 'newton', got {method!r}")
    return w, trace


def solve_l1(
    data: OneShotDataset,
    i: int,
    lambda_reg: float,
    *,
    method: str = "ista",
    max_iter: int = 50_000,
    tol: float = 1e-8,
    kkt_tol: float = 1e-8,
    w0=None,
    return_trace: bool = False,
):
    """L1-regularized estimate of player ``i``'s incoming weights.

    ``method="ista"`` is proximal gradient with backtracking; ``"newton"`` is a
    proximal Newton method (exact Hessian, coordinate-descent subproblem,
    backtracking on the composite objective) that reaches the same optimum in
    far fewer passes over the data. Both stop once the objective decrease is
    below ``tol`` and the KKT residual is below ``kkt_tol``.
    """
    if not lambda_reg > 0:
        raise ValueError("lambda_reg must be > 0")
    des = _design(data, i)
    w, trace = _solve(des, lambda_reg, method, max_iter, tol, kkt_tol, w0)
    rep = kkt_report(des.grad(w), w, lambda_reg)
    return (w, rep, trace) if return_trace else (w, rep)


@dataclass
class AssumptionReport:
    c_min: float
    c_max: float
    incoherence: float
    incoherence_gamma: float
    degree: int
    min_eigen_ok: bool
    incoherence_ok: bool

    @property
    def satisfied(self) -> bool:
        return self.min_eigen_ok and self.incoherence_ok


def check_assumptions(data: OneShotDataset, i: int, w_star_i, support) -> AssumptionReport:
    """Design constants at the true weights (``support`` indexes the other-player list)."""
    support = np.asarray(sorted(support), dtype=int)
    if support.size == 0:
        raise ValueError("support must be nonempty")
    des = _design(data, i)
    h = des.hessian(np.asarray(w_star_i, dtype=float))
    comp = np.setdiff1d(np.arange(h.shape[0]), support)
    h_ss = h[np.ix_(support, support)]
    eig = np.linalg.eigvalsh(h_ss)
    if eig[0] <= 1e-14 * max(1.0, eig[-1]):
        raise AssumptionError(f"restricted Hessian is singular for player {i} (min eigenvalue {eig[0]:.3e})")
    c_min = float(eig[0] / data.alpha**2)
    gram = des.x.T @ des.x / data.size
    c_max = float(np.linalg.eigvalsh(gram)[-1])
    if comp.size:
        mix = np.linalg.solve(h_ss.T, h[np.ix_(comp, support)].T).T  # H_{S^c S} H_SS^{-1}
        incoh = float(np.abs(mix).sum(axis=1).max())
    else:
        incoh = 0.0
    gamma = 1.0 - incoh
    return AssumptionReport(c_min, c_max, incoh, gamma, int(support.size), c_min > 0, gamma > 0)


@dataclass
class PdwReport:
    w_restricted: np.ndarray  # full-length vector, zero off the support
    kappa: np.ndarray
    dual_norm_offsupport: float
    strict_dual_feasible: bool
    kkt: KktReport
    support_signs: np.ndarray


def primal_dual_witness(
    data: OneShotDataset, i: int, true_support, lambda_reg: float, method: str = "newton", w0=None
) -> PdwReport:
    """Solve on the true support, then recover the off-support subgradient from stationarity.

    ``w0`` optionally warm-starts the restricted solve (length ``len(true_support)``);
    the result is still certified to a KKT residual of 1e-10.
    """
    support = np.asarray(sorted(true_support), dtype=int)
    full = _design(data, i)
    des = _Design(full.x[:, support], full.offset, full.a, full.alpha, support)
    try:
        w_s, _ = _solve(des, lambda_reg, method, 50_000, 1e-12, 1e-10, w0)
    except ConvergenceError as exc:
        raise RuntimeError(f"restricted solve failed for player {i}: {exc}") from exc
    w = np.zeros(full.x.shape[1])
    w[support] = w_s
    g = full.grad(w)
    kappa = -g / lambda_reg
    kappa[support] = np.sign(w_s)
    comp = np.setdiff1d(np.arange(len(w)), support)
    dual = float(np.abs(kappa[comp]).max()) if comp.size else 0.0
    return PdwReport(w, kappa, dual, dual < 1.0, kkt_report(g, w, lambda_reg), np.sign(w_s))


@dataclass
class Thresholds:
    min_weight: float
    min_samples: float
    min_lambda: float


def thresholds(d: int, lambda_reg: float, alpha: float, c_min: float, n: float, M: float, gamma: float, c_max: float = 1.0) -> Thresholds:
    """Weight, sample-size and regularization levels of the recovery guarantee."""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    for name, val in (("d", d), ("lambda_reg", lambda_reg), ("alpha", alpha), ("c_min", c_min), ("n", n), ("M", M), ("c_max", c_max)):
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")
    ratio = (2.0 - gamma) / gamma
    return Thresholds(
        min_weight=10.0 * math.sqrt(d) * lambda_reg / (alpha**2 * c_min),
        min_samples=80.0**2 * c_max**2 / c_min**4 * ratio**4 * d**2 * math.log(n),
        min_lambda=min_lambda(alpha, n, M, gamma),
    )


def min_lambda(alpha: float, n: float, M: float, gamma: float) -> float:
    """Smallest regularization for which the score at the truth is dominated with high probability."""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return 8.0 * alpha * (2.0 - gamma) / gamma * math.sqrt(math.log(n) / M)


def hoeffding_bound(t, n: int, M: int, alpha: float):
    """Union-bound tail ``2 (n-1) exp(-M t^2 / (2 alpha^2))`` for the score at the truth."""
    t = np.asarray(t, dtype=float)
    return 2.0 * (n - 1) * np.exp(-M * t**2 / (2.0 * alpha**2))


@dataclass
class PlayerRecovery:
    player: int
    w_hat: np.ndarray
    support: list[int]
    signs: list[int]
    true_support: list[int]
    true_signs: list[int]
    false_positives: list[int]
    false_negatives: list[int]
    sign_errors: list[int]
    kkt: KktReport
    pdw: PdwReport | None = None

    @property
    def exact(self) -> bool:
        return not (self.false_positives or self.false_negatives or self.sign_errors)


@dataclass
class RecoveryReport:
    players: list[PlayerRecovery]
    lambda_reg: float

    @property
    def exact(self) -> bool:
        return all(p.exact for p in self.players)

    @property
    def pdw_feasible(self) -> bool:
        return all(p.pdw is not None and p.pdw.strict_dual_feasible for p in self.players)

    def to_dict(self) -> dict:
        out = []
        for p in self.players:
            rec = {
                "player": p.player,
                "w_hat": p.w_hat.tolist(),
                "support": p.support,
                "signs": p.signs,
                "true_support": p.true_support,
                "true_signs": p.true_signs,
                "false_positives": p.false_positives,
                "false_negatives": p.false_negatives,
                "sign_errors": p.sign_errors,
                "kkt": {
                    "support_residual": p.kkt.support_residual,
                    "offsupport_ratio": p.kkt.offsupport_ratio,
                    "strict_dual_feasible": p.kkt.strict_dual_feasible,
                },
            }
            if p.pdw is not None:
                rec["pdw"] = {
                    "dual_norm_offsupport": p.pdw.dual_norm_offsupport,
                    "strict_dual_feasible": p.pdw.strict_dual_feasible,
                }
            out.append(rec)
        return {"lambda_reg": self.lambda_reg, "exact": self.exact, "players": out}


def recover_all(data: OneShotDataset, lambda_reg: float, w_star=None, method: str = "newton", with_pdw: bool = True) -> RecoveryReport:
    """Estimate every player's neighbourhood; compare with ``w_star`` when supplied.

    Indices in the report refer to global player ids.
    """
    players = []
    for i in range(data.n):
        oth = others(data.n, i)
        w_hat, rep = solve_l1(data, i, lambda_reg, method=method)
        est = [int(oth[k]) for k in np.flatnonzero(w_hat)]
        est_signs = [int(np.sign(w_hat[k])) for k in np.flatnonzero(w_hat)]
        true, true_signs, pdw = [], [], None
        fp, fn, se = [], [], []
        if w_star is not None:
            row = np.asarray(w_star, dtype=float)[i, oth]
            nz = np.flatnonzero(row)
            true = [int(oth[k]) for k in nz]
            true_signs = [int(np.sign(row[k])) for k in nz]
            fp = sorted(set(est) - set(true))
            fn = sorted(set(true) - set(est))
            se = [int(oth[k]) for k in nz if w_hat[k] != 0 and np.sign(w_hat[k]) != np.sign(row[k])]
            if with_pdw and nz.size:
                pdw = primal_dual_witness(data, i, nz, lambda_reg, method=method, w0=w_hat[nz])
        players.append(PlayerRecovery(i, w_hat, est, est_signs, true, true_signs, fp, fn, se, rep, pdw))
    return RecoveryReport(players, lambda_reg)


@dataclass(frozen=True)
class RecoveryExperimentConfig:
    n: int = 10
    degree: int = 2
    alpha: float = 0.02
    effective_weight: float = 1.5  # alpha * |w*|
    type_scale: float = 20.0
    weight_margin: float = 1.5  # |w*| / min_weight
    m_grid: tuple = (20_000, 50_000, 100_000, 200_000)
    trials: int = 100
    pilot_records: int = 400_000
    seed: int = 0
    lambda_reg: float | None = None


def planted_game(config: RecoveryExperimentConfig, rng: np.random.Generator):
    """Ground truth: ``degree`` neighbours per player with alternating signs, near-independent types."""
    n, d = config.n, config.degree
    magnitude = config.effective_weight / config.alpha
    w = np.zeros((n, n))
    for i in range(n):
        nbrs = rng.choice(others(n, i), size=d, replace=False)
        signs = np.array([1.0 if k % 2 == 0 else -1.0 for k in range(d)])
        w[i, nbrs] = magnitude * signs
    basis, _ = np.linalg.qr(rng.normal(size=(n, n)))
    theta = config.type_scale * basis
    return theta, w


def calibrate_lambda(config: RecoveryExperimentConfig, theta, w, rng: np.random.Generator) -> tuple[float, float]:
    """Regularization placing ``|w*|`` at ``weight_margin`` times the minimum-weight level.

    The design constant ``C_min`` is estimated on a large pilot sample and the
    smallest value over players is used.
    """
    pilot = one_shot_sample(theta, w, config.alpha, rng.normal(size=(config.pilot_records, config.n)), rng)
    c_mins = []
    for i in range(config.n):
        row = w[i, others(config.n, i)]
        c_mins.append(check_assumptions(pilot, i, row, np.flatnonzero(row)).c_min)
    c_min = float(min(c_mins))
    magnitude = config.effective_weight / config.alpha
    lam = magnitude * config.alpha**2 * c_min / (config.weight_margin * 10.0 * math.sqrt(config.degree))
    return lam, c_min


@dataclass
class TrialOutcome:
    records: int
    exact: bool
    pdw_feasible: bool
    support_violation: bool  # PDW feasible but estimated support escapes the true support
    assumptions_ok: bool
    weights_above_threshold: bool
    kkt_ok: bool
    max_dual: float


@dataclass
class RecoveryCurve:
    rows: list[dict]
    trials: list[TrialOutcome]
    lambda_reg: float
    c_min_pilot: float
    spearman: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["M", "success_rate", "trials", "stderr"])
            for r in self.rows:
                wr.writerow([r["M"], repr(r["success_rate"]), r["trials"], repr(r["stderr"])])


def run_trial(data: OneShotDataset, w, lam: float, method: str = "newton") -> TrialOutcome:
    rep = recover_all(data, lam, w_star=w, method=method)
    n = data.n
    assumptions_ok, above = True, True
    for i in range(n):
        row = w[i, others(n, i)]
        sup = np.flatnonzero(row)
        ar = check_assumptions(data, i, row, sup)
        assumptions_ok &= ar.satisfied
        if ar.satisfied:
            th = thresholds(len(sup), lam, data.alpha, ar.c_min, n, data.size, min(ar.incoherence_gamma, 1.0), ar.c_max)
            above &= bool(np.abs(row[sup]).min() >= th.min_weight)
        else:
            above = False
    violation = any(
        p.pdw is not None and p.pdw.strict_dual_feasible and not set(p.support) <= set(p.true_support) for p in rep.players
    )
    return TrialOutcome(
        records=data.size,
        exact=rep.exact,
        pdw_feasible=rep.pdw_feasible,
        support_violation=violation,
        assumptions_ok=assumptions_ok,
        weights_above_threshold=above,
        kkt_ok=all(p.kkt.passes() for p in rep.players),
        max_dual=max(p.pdw.dual_norm_offsupport for p in rep.players if p.pdw is not None),
    )


def recovery_experiment(config: RecoveryExperimentConfig, method: str = "newton", progress=None) -> RecoveryCurve:
    """Success rate of exact signed-support recovery across sample sizes.

    Each trial draws a fresh dataset of the largest size from a per-trial seed;
    smaller sizes use its leading records.
    """
    master = np.random.default_rng(config.seed)
    theta, w = planted_game(config, master)
    if config.lambda_reg is None:
        lam, c_min = calibrate_lambda(config, theta, w, master)
    else:
        lam, c_min = float(config.lambda_reg), float("nan")
    grid = sorted(int(m) for m in config.m_grid)
    seeds = np.random.SeedSequence(config.seed).spawn(config.trials)
    outcomes: dict[int, list[TrialOutcome]] = {m: [] for m in grid}
    for t, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        big = one_shot_sample(theta, w, config.alpha, rng.normal(size=(grid[-1], config.n)), rng)
        for m in grid:
            outcomes[m].append(run_trial(big.head(m), w, lam, method))
        if progress is not None:
            progress(t)
    rows = []
    for m in grid:
        succ = np.array([o.exact for o in outcomes[m]], dtype=float)
        rate = float(succ.mean())
        rows.append({"M": m, "success_rate": rate, "trials": len(succ), "stderr": float(math.sqrt(rate * (1 - rate) / len(succ)))})
    rates = [r["success_rate"] for r in rows]
    rho = float(spearmanr(grid, rates).statistic) if len(set(rates)) > 1 else float("nan")
    return RecoveryCurve(rows, [o for m in grid for o in outcomes[m]], lam, c_min, rho)


def save_report(path, report: RecoveryReport, extra: dict | None = None) -> None:
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def config_dict(config: RecoveryExperimentConfig) -> dict:
    d = asdict(config)
    d["m_grid"] = list(d["m_grid"])
    return d
