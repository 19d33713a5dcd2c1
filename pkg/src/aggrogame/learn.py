"""Fitting type maps and influence weights by unrolling k strategy updates.

The forward pass starts from ``softmax(theta_i x)`` and applies
``sigma <- softmax(nu(sigma) + alpha * (W sigma - z))`` synchronously ``k``
times; the loss is the player-averaged cross-entropy of the final strategies.
Gradients are computed by hand-written reverse mode over a batch of records.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import GameSpec, softmax

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class Dataset:
    contexts: np.ndarray  # (M, d)
    actions: np.ndarray  # (M, n) ints in [0, m)
    m: int

    def __post_init__(self) -> None:
        x = np.asarray(self.contexts, dtype=float)
        y = np.asarray(self.actions, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ValueError(f"contexts (M, d) and actions (M, n) must align, got {x.shape} and {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= self.m):
            raise ValueError(f"actions must lie in [0, {self.m})")
        object.__setattr__(self, "contexts", x)
        object.__setattr__(self, "actions", y)

    @property
    def size(self) -> int:
        return self.contexts.shape[0]

    @property
    def d(self) -> int:
        return self.contexts.shape[1]

    @property
    def n(self) -> int:
        return self.actions.shape[1]

    def subset(self, idx) -> Dataset:
        return Dataset(self.contexts[idx], self.actions[idx], self.m)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for x, y in zip(self.contexts, self.actions):
                fh.write(json.dumps({"context": x.tolist(), "actions": y.tolist()}) + "\n")

    @classmethod
    def from_jsonl(cls, path, m: int | None = None, one_based: bool = False) -> Dataset:
        xs, ys = [], []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    xs.append(rec["context"])
                    ys.append(rec["actions"])
        if not xs:
            raise ValueError(f"no records in {path}")
        y = np.asarray(ys, dtype=np.int64) - (1 if one_based else 0)
        return cls(np.asarray(xs, dtype=float), y, int(m if m is not None else y.max() + 1))


@dataclass(frozen=True)
class TrainConfig:
    k: int = 5
    alpha: float = 0.1
    nu: str = "identity"
    lambda_reg: float = 0.1
    batch_size: int = 200
    epochs: int = 50
    lr: float = 0.01
    rho: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    init_scale: float = 0.1
    tau: float = 1.0

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.nu not in ("identity", "zero"):
            raise ValueError(f"nu must be 'identity' or 'zero', got {self.nu!r}")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class Gradients:
    d_theta: np.ndarray
    d_w: np.ndarray


@dataclass
class Tape:
    contexts: np.ndarray  # (B, d)
    types: np.ndarray  # (B, n, m)
    sigmas: np.ndarray  # (k+1, B, n, m)
    w: np.ndarray
    alpha: float
    nu: str

    @property
    def final(self) -> np.ndarray:
        return self.sigmas[-1]

    def player_paths(self, record: int = 0) -> np.ndarray:
        """Strategies of one record as ``(n, k+1, m)``."""
        return self.sigmas[:, record].transpose(1, 0, 2)


def forward_k_steps(spec: GameSpec, contexts, config: TrainConfig) -> Tape:
    """Unrolled synchronous updates for one context ``(d,)`` or a batch ``(B, d)``."""
    x = np.atleast_2d(np.asarray(contexts, dtype=float))
    if x.shape[1] != spec.d:
        raise ValueError(f"context length {x.shape[1]} does not match model d={spec.d}")
    w = spec.w
    z = np.einsum("imd,bd->bim", spec.theta, x)
    sig = softmax(z)
    sigmas = np.empty((config.k + 1,) + sig.shape)
    sigmas[0] = sig
    identity = config.nu == "identity"
    for t in range(config.k):
        pre = config.alpha * (np.einsum("ij,bjm->bim", w, sig) - z)
        if identity:
            pre = pre + sig
        sig = softmax(pre)
        sigmas[t + 1] = sig
    return Tape(contexts=x, types=z, sigmas=sigmas, w=w, alpha=config.alpha, nu=config.nu)


def loss(final_strategies, outcome) -> float:
    """Player-averaged cross-entropy of one record (log clamped at 1e-12)."""
    s = np.asarray(final_strategies, dtype=float)
    y = np.asarray(outcome, dtype=np.int64)
    picked = s[np.arange(len(y)), y]
    return float(np.mean(-np.log(np.maximum(picked, LOG_FLOOR))))


def batch_losses(final: np.ndarray, actions: np.ndarray) -> np.ndarray:
    b, n, _ = final.shape
    picked = final[np.arange(b)[:, None], np.arange(n)[None, :], actions]
    return np.mean(-np.log(np.maximum(picked, LOG_FLOOR)), axis=1)


def _softmax_vjp(s: np.ndarray, g: np.ndarray) -> np.ndarray:
    return s * (g - np.sum(g * s, axis=-1, keepdims=True))


def backward(tape: Tape, outcomes) -> Gradients:
    """Gradient of the batch-mean loss with respect to ``theta`` and ``W``."""
    y = np.atleast_2d(np.asarray(outcomes, dtype=np.int64))
    sigmas = tape.sigmas
    k = sigmas.shape[0] - 1
    b, n, _ = sigmas.shape[1:]
    final = sigmas[-1]
    rows, cols = np.arange(b)[:, None], np.arange(n)[None, :]
    picked = final[rows, cols, y]
    g_sig = np.zeros_like(final)
    # clamped entries contribute no gradient
    g_sig[rows, cols, y] = np.where(picked > LOG_FLOOR, -1.0 / (n * b * np.maximum(picked, LOG_FLOOR)), 0.0)
    a = tape.alpha
    g_w = np.zeros_like(tape.w)
    g_z = np.zeros_like(tape.types)
    identity = tape.nu == "identity"
    for t in range(k, 0, -1):
        g_pre = _softmax_vjp(sigmas[t], g_sig)
        prev = sigmas[t - 1]
        g_w += a * np.einsum("bim,bjm->ij", g_pre, prev)
        g_z -= a * g_pre
        g_sig = a * np.einsum("ij,bim->bjm", tape.w, g_pre)
        if identity:
            g_sig = g_sig + g_pre
    g_z += _softmax_vjp(sigmas[0], g_sig)
    np.fill_diagonal(g_w, 0.0)
    return Gradients(d_theta=np.einsum("bim,bd->imd", g_z, tape.contexts), d_w=g_w)


def soft_threshold(x, threshold: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


@dataclass
class OptimizerState:
    s_theta: np.ndarray
    s_w: np.ndarray

    @classmethod
    def zeros_like(cls, spec: GameSpec) -> OptimizerState:
        return cls(np.zeros_like(spec.theta), np.zeros_like(spec.w))


def optimizer_step(spec: GameSpec, grads: Gradients, state: OptimizerState, config: TrainConfig):
    """RMSProp step on theta and W followed by L1 shrinkage of W by ``lr * lambda_reg``."""
    rho, lr, eps = config.rho, config.lr, config.eps
    s_theta = rho * state.s_theta + (1 - rho) * grads.d_theta**2
    s_w = rho * state.s_w + (1 - rho) * grads.d_w**2
    theta = spec.theta - lr * grads.d_theta / (np.sqrt(s_theta) + eps)
    w = spec.w - lr * grads.d_w / (np.sqrt(s_w) + eps)
    if config.lambda_reg > 0:
        w = soft_threshold(w, lr * config.lambda_reg)
    np.fill_diagonal(w, 0.0)
    return spec.with_params(theta=theta, w=w), OptimizerState(s_theta, s_w)


def init_spec(n: int, m: int, d: int, config: TrainConfig, rng: np.random.Generator) -> GameSpec:
    theta = rng.normal(scale=config.init_scale, size=(n, m, d))
    return GameSpec(theta=theta, w=np.zeros((n, n)), tau=config.tau)


def dataset_loss(spec: GameSpec, data: Dataset, config: TrainConfig, chunk: int = 4096) -> float:
    total = 0.0
    for start in range(0, data.size, chunk):
        sl = slice(start, start + chunk)
        tape = forward_k_steps(spec, data.contexts[sl], config)
        total += float(np.sum(batch_losses(tape.final, data.actions[sl])))
    return total / data.size


@dataclass
class TrainResult:
    spec: GameSpec
    loss_history: list[float]
    final_loss: float
    config: TrainConfig = field(default_factory=TrainConfig)


def train(data: Dataset, config: TrainConfig, init: GameSpec | None = None) -> TrainResult:
    """Mini-batch RMSProp; ``loss_history`` holds the per-epoch mean batch loss."""
    if data.size == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    spec = init if init is not None else init_spec(data.n, data.m, data.d, config, rng)
    if (spec.n, spec.m, spec.d) != (data.n, data.m, data.d):
        raise ValueError("initial model shape does not match dataset")
    state = OptimizerState.zeros_like(spec)
    history: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(data.size)
        epoch_total = 0.0
        for start in range(0, data.size, config.batch_size):
            idx = order[start : start + config.batch_size]
            tape = forward_k_steps(spec, data.contexts[idx], config)
            y = data.actions[idx]
            epoch_total += float(np.sum(batch_losses(tape.final, y)))
            spec, state = optimizer_step(spec, backward(tape, y), state, config)
        history.append(epoch_total / data.size)
    return TrainResult(spec=spec, loss_history=history, final_loss=dataset_loss(spec, data, config), config=config)


def train_runs(data: Dataset, config: TrainConfig, runs: int) -> list[TrainResult]:
    """Independent runs with seeds ``seed, seed+1, ...``."""
    return [train(data, _reseed(config, config.seed + r)) for r in range(runs)]


def _reseed(config: TrainConfig, seed: int) -> TrainConfig:
    return TrainConfig(**{**asdict(config), "seed": seed})


def average_runs(specs: list[GameSpec]) -> GameSpec:
    if not specs:
        raise ValueError("need at least one model to average")
    shape = (specs[0].theta.shape, specs[0].w.shape)
    for s in specs[1:]:
        if (s.theta.shape, s.w.shape) != shape:
            raise ValueError("cannot average models with different shapes")
    theta = np.mean([s.theta for s in specs], axis=0)
    w = np.mean([s.w for s in specs], axis=0)
    return specs[0].with_params(theta=theta, w=w)


@dataclass
class InfluenceSummary:
    player: int
    positive: list[tuple[int, float]]
    negative: list[tuple[int, float]]


def extract_influences(spec: GameSpec, top_k: int) -> list[InfluenceSummary]:
    """Largest and most negative incoming weights per player; ties go to the lower index."""
    n = spec.n
    if not 1 <= top_k < n:
        raise ValueError(f"top_k must satisfy 1 <= top_k < n={n}, got {top_k}")
    out = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        vals = spec.w[i, others]
        pos = sorted(zip(others, vals), key=lambda t: (-t[1], t[0]))[:top_k]
        neg = sorted(zip(others, vals), key=lambda t: (t[1], t[0]))[:top_k]
        out.append(InfluenceSummary(i, [(j, float(v)) for j, v in pos], [(j, float(v)) for j, v in neg]))
    return out


def type_similarity(spec: GameSpec) -> np.ndarray:
    flat = spec.theta.reshape(spec.n, -1)
    norms = np.linalg.norm(flat, axis=1)
    for i, nv in enumerate(norms):
        if nv == 0:
            raise ValueError(f"player {i} has a zero type map; cosine similarity undefined")
    unit = flat / norms[:, None]
    sim = unit @ unit.T
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return sim


def model_to_dict(spec: GameSpec, config: TrainConfig | None = None, history=(), final_loss=None) -> dict:
    doc = {
        "n": spec.n,
        "m": spec.m,
        "d": spec.d,
        "theta": spec.theta.tolist(),
        "w": spec.w.tolist(),
        "tau": spec.tau,
        "train_config": asdict(config) if config is not None else None,
        "loss_history": [float(v) for v in history],
    }
    if final_loss is not None:
        doc["final_train_loss"] = float(final_loss)
    return doc


def save_model(path, spec: GameSpec, config: TrainConfig | None = None, history=(), final_loss=None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(spec, config, history, final_loss), indent=1) + "\n")


def load_model(path) -> tuple[GameSpec, dict]:
    doc = json.loads(Path(path).read_text())
    theta = np.asarray(doc["theta"], dtype=float).reshape(doc["n"], doc["m"], doc["d"])
    spec = GameSpec(theta=theta, w=np.asarray(doc["w"], dtype=float), tau=doc.get("tau", 1.0))
    return spec, doc


def config_from_dict(data: dict | None) -> TrainConfig:
    return TrainConfig(**data) if data else TrainConfig()
