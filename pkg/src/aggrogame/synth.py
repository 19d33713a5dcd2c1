"""Ground-truth generators for every experiment in the package.

Games come from a degree-regular influence pattern (a union of shifted cyclic
permutations, relabelled at random) so that row and column degrees agree and
Sinkhorn scaling has a solution. Contexts are standard normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import GameSpec, aggregate_all
from .dynamics import VARIANTS, OdeRates
from .learn import Dataset, TrainConfig, forward_k_steps
from .recovery import (
    AssumptionReport,
    OneShotDataset,
    RecoveryExperimentConfig,
    calibrate_lambda,
    check_assumptions,
    one_shot_sample,
    others,
    planted_game,
    thresholds,
)
from .stability import build_linearization, hurwitz_stable
from .transfer import GameInstance, PlayerFeatures, TransferParams, transfer_forward

NORMALIZATIONS = ("none", "stochastic", "doubly_stochastic")
SINKHORN_TOL = 1e-8
SINKHORN_MAX_ITER = 10_000


@dataclass(frozen=True)
class SynthConfig:
    n: int = 5
    m: int = 3
    d: int = 4
    degree: int = 2
    weight_range: tuple[float, float] = (0.5, 1.5)
    weight_sign_mix: float = 0.5  # probability that a weight is negative
    w_normalization: str = "none"
    theta_scale: float = 1.0
    tau: float = 1.0
    k: int = 5
    alpha: float = 0.1
    nu: str = "identity"
    records: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.degree < self.n:
            raise ValueError(f"degree must satisfy 0 <= degree < n, got degree={self.degree}, n={self.n}")
        lo, hi = self.weight_range
        if not 0 < lo <= hi:
            raise ValueError(f"weight_range must be positive and ordered, got {self.weight_range}")
        if not 0 <= self.weight_sign_mix <= 1:
            raise ValueError("weight_sign_mix must lie in [0, 1]")
        if self.w_normalization not in NORMALIZATIONS:
            raise ValueError(f"w_normalization must be one of {NORMALIZATIONS}")
        if self.m < 2 or self.d < 1 or self.records < 0:
            raise ValueError("need m >= 2, d >= 1 and records >= 0")

    def train_config(self) -> TrainConfig:
        return TrainConfig(k=self.k, alpha=self.alpha, nu=self.nu, tau=self.tau, seed=self.seed)


def regular_pattern(n: int, degree: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean ``(n, n)`` mask with ``degree`` ones in every row and column and none on the diagonal."""
    shifts = rng.choice(np.arange(1, n), size=degree, replace=False) if degree else []
    mask = np.zeros((n, n), dtype=bool)
    rows = np.arange(n)
    for s in shifts:
        mask[rows, (rows + s) % n] = True
    perm = rng.permutation(n)
    return mask[np.ix_(perm, perm)]


def sinkhorn(w, tol: float = SINKHORN_TOL, max_iter: int = SINKHORN_MAX_ITER) -> np.ndarray:
    """Alternate row and column normalization until both sums are within ``tol`` of 1."""
    w = np.array(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("Sinkhorn scaling requires nonnegative weights")
    for _ in range(max_iter):
        w /= w.sum(axis=1, keepdims=True)
        w /= w.sum(axis=0, keepdims=True)
        if np.abs(w.sum(axis=1) - 1).max() <= tol and np.abs(w.sum(axis=0) - 1).max() <= tol:
            return w
    raise RuntimeError(f"Sinkhorn did not reach tolerance {tol} in {max_iter} iterations")


def generate_game(config: SynthConfig, rng: np.random.Generator | None = None) -> GameSpec:
    """Sparse ground-truth game; ``meta`` carries the support and a ground-truth flag."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    n = config.n
    mask = regular_pattern(n, config.degree, rng)
    lo, hi = config.weight_range
    mags = rng.uniform(lo, hi, size=(n, n))
    signs = np.where(rng.random((n, n)) < config.weight_sign_mix, -1.0, 1.0)
    w = np.where(mask, mags * signs, 0.0)
    if config.w_normalization != "none":
        if np.any(w < 0):
            raise ValueError(f"{config.w_normalization} normalization requires nonnegative weights (set weight_sign_mix=0)")
        if config.degree == 0:
            raise ValueError("cannot normalize an empty influence matrix")
        w = w / w.sum(axis=1, keepdims=True) if config.w_normalization == "stochastic" else sinkhorn(w)
    theta = rng.normal(scale=config.theta_scale, size=(n, config.m, config.d))
    return GameSpec(
        theta=theta,
        w=w,
        tau=config.tau,
        meta={"ground_truth": True, "support": mask.tolist(), "w_normalization": config.w_normalization},
    )


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of the last axis by inverse CDF."""
    u = rng.random(probs.shape[:-1] + (1,))
    return np.minimum((np.cumsum(probs, axis=-1) < u).sum(axis=-1), probs.shape[-1] - 1)


def sample_kstep_dataset(spec: GameSpec, config: SynthConfig, rng: np.random.Generator | None = None) -> Dataset:
    """Contexts ~ N(0, I); each player's action is drawn from its k-step strategy."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    x = rng.normal(size=(config.records, spec.d))
    final = forward_k_steps(spec, x, config.train_config()).final
    return Dataset(x, sample_categorical(final, rng), spec.m)


@dataclass
class RecoveryTruth:
    theta: np.ndarray
    w: np.ndarray
    lambda_reg: float
    c_min_pilot: float
    reports: list[AssumptionReport]
    min_weight: list[float]
    thresholds_satisfied: bool

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "w": self.w.tolist(),
            "lambda_reg": self.lambda_reg,
            "c_min_pilot": self.c_min_pilot,
            "min_weight": self.min_weight,
            "thresholds_satisfied": self.thresholds_satisfied,
            "assumptions": [
                {"c_min": r.c_min, "c_max": r.c_max, "incoherence_gamma": r.incoherence_gamma, "degree": r.degree}
                for r in self.reports
            ],
        }


def sample_recovery_dataset(config: RecoveryExperimentConfig, records: int) -> tuple[OneShotDataset, RecoveryTruth]:
    """Planted game, calibrated lambda and one dataset of ``records`` samples.

    The minimum-weight threshold is re-evaluated with the constants measured on
    the returned sample, so ``thresholds_satisfied`` describes this dataset.
    """
    rng = np.random.default_rng(config.seed)
    theta, w = planted_game(config, rng)
    if config.lambda_reg is None:
        lam, c_min = calibrate_lambda(config, theta, w, rng)
    else:
        lam, c_min = float(config.lambda_reg), float("nan")
    data = one_shot_sample(theta, w, config.alpha, rng.normal(size=(records, config.n)), rng)
    reports, mins, ok = [], [], True
    for i in range(config.n):
        row = w[i, others(config.n, i)]
        sup = np.flatnonzero(row)
        rep = check_assumptions(data, i, row, sup)
        reports.append(rep)
        gamma = min(rep.incoherence_gamma, 1.0)
        if rep.satisfied:
            mw = thresholds(len(sup), lam, config.alpha, rep.c_min, config.n, records, gamma, rep.c_max).min_weight
        else:
            mw = float("inf")
        mins.append(mw)
        ok &= bool(np.abs(row[sup]).min() >= mw)
    return data, RecoveryTruth(theta, w, lam, c_min, reports, mins, ok)


@dataclass
class StabilityInstance:
    variant: str
    spec: GameSpec
    types: np.ndarray
    q_star: np.ndarray
    rates: OdeRates
    abscissa: float
    stable: bool
    spectral_radius: float = field(default=0.0)


def _random_equilibrium(variant: str, rng: np.random.Generator, n: int, m: int, scale: float, tau: float):
    if variant.endswith("PA"):
        raw = rng.random((n, n)) * (1 - np.eye(n))
        w = raw / raw.sum(axis=1, keepdims=True)
    else:
        w = scale * rng.normal(size=(n, n)) * (1 - np.eye(n))
    spec = GameSpec(theta=np.zeros((n, m, 1)), w=w, tau=tau if variant.startswith("FP") else 0.0)
    q = rng.dirichlet(4.0 * np.ones(m), size=n)
    agg = aggregate_all(w, q)
    # types that make q a completely mixed rest point of the chosen dynamics
    z = agg - tau * np.log(q) if variant.startswith("FP") else agg + rng.normal(size=(n, 1))
    return spec, z, q


def cmne_instance(
    variant: str,
    rng: np.random.Generator,
    *,
    stable: bool,
    n: int = 3,
    m: int = 3,
    margin: float = 0.05,
    max_radius: float = 20.0,
    max_tries: int = 5000,
) -> StabilityInstance:
    """Completely mixed rest point whose linearization has abscissa ``<= -margin`` or ``>= margin``.

    Influence scale, temperature and rates are drawn at random and instances
    are rejected until the requested side of the margin is reached.
    ``max_radius`` bounds the spectral radius so fixed-step RK4 stays accurate.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    for _ in range(max_tries):
        scale = float(np.exp(rng.uniform(np.log(0.1), np.log(3.0))))
        tau = float(np.exp(rng.uniform(np.log(0.2), np.log(2.0))))
        rates = OdeRates(float(rng.uniform(0.1, 1.5)), float(rng.uniform(0.2, 2.0)))
        spec, z, q = _random_equilibrium(variant, rng, n, m, scale, tau)
        if q.min() < 0.05:
            continue
        eig = np.linalg.eigvals(build_linearization(variant, spec, z, q, rates))
        absc = float(eig.real.max())
        radius = float(np.abs(eig).max())
        if radius > max_radius:
            continue
        if (stable and absc <= -margin) or (not stable and absc >= margin):
            return StabilityInstance(variant, spec, z, q, rates, absc, stable, radius)
    raise RuntimeError(f"no {'stable' if stable else 'unstable'} {variant} instance found in {max_tries} draws")


def verify_stability_label(inst: StabilityInstance) -> bool:
    verdict = hurwitz_stable(build_linearization(inst.variant, inst.spec, inst.types, inst.q_star, inst.rates)).verdict
    return verdict == ("stable" if inst.stable else "unstable")


def sne_instance(variant: str, rng: np.random.Generator, n: int = 4, m: int = 3, gap: float = 0.5):
    """Strict pure equilibrium: each player's chosen action wins by ``gap``.

    Returns ``(spec, types, q_star)``. GP_PA uses a doubly stochastic W from
    averaging two cyclic shifts; GP_AA uses a random signed W.
    """
    if variant not in ("GP_AA", "GP_PA"):
        raise ValueError("strict pure equilibria are built for gradient play only")
    if variant == "GP_PA":
        shifts = rng.choice(np.arange(1, n), size=2, replace=False)
        eye = np.eye(n)
        w = 0.5 * (np.roll(eye, shifts[0], axis=1) + np.roll(eye, shifts[1], axis=1))
    else:
        w = rng.normal(size=(n, n)) * (1 - np.eye(n))
    spec = GameSpec(theta=np.zeros((n, m, 1)), w=w, tau=0.0)
    q_star = np.eye(m)[rng.integers(0, m, size=n)]
    z = aggregate_all(w, q_star) - gap * q_star
    return spec, z, q_star


@dataclass
class TransferTeacher:
    params: TransferParams
    features: PlayerFeatures
    contexts: np.ndarray
    outcomes: np.ndarray  # (contexts, players) actions of every player in every context
    k: int
    alpha: float


def transfer_teacher(
    rng: np.random.Generator,
    *,
    players: int = 20,
    d_x: int = 4,
    d_b: int = 6,
    m: int = 3,
    d_z: int = 4,
    contexts: int = 800,
    gamma_scale: float = 100.0,
    k: int = 5,
    alpha: float = 0.01,
) -> TransferTeacher:
    """Full-population play from a random transfer model.

    With small ``alpha`` the step logits are ``sigma + alpha * (...)``, so a
    large ``gamma_scale`` is what makes the teacher's strategies informative.
    """
    params = TransferParams.init(d_x, d_b, m, d_z, rng, scale=1.0)
    params.gamma = rng.normal(scale=gamma_scale, size=params.gamma.shape)
    ids = [f"p{j}" for j in range(players)]
    feats = PlayerFeatures(ids, rng.normal(size=(players, d_b)))
    x = rng.normal(size=(contexts, d_x))
    outcomes = np.zeros((contexts, players), dtype=np.int64)
    for c in range(contexts):
        final = transfer_forward(params, feats, GameInstance(x[c], ids, [0] * players), k, alpha)[-1]
        outcomes[c] = sample_categorical(final, rng)
    return TransferTeacher(params, feats, x, outcomes, k, alpha)
