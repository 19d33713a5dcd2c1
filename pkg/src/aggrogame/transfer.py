"""Transferable games over varying player subsets.

Each player ``v`` carries a feature vector ``b_v``. Its type is
``z_v = tanh(A [x; b_v] + c)``, pairwise influence is the bilinear form
``z_v^T Q z_u + bias`` and the initial strategy is ``softmax(Gamma z_v)``.
The k-step dynamics are gradient-style (``nu`` = identity) with no entropy term.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import softmax
from .learn import LOG_FLOOR


@dataclass
class PlayerFeatures:
    ids: list[str]
    matrix: np.ndarray  # (P, d_b)

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise ValueError("feature matrix must have one row per player id")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate player ids in features")
        self._index = {pid: k for k, pid in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def lookup(self, players) -> np.ndarray:
        missing = [p for p in players if p not in self._index]
        if missing:
            raise KeyError(f"players without features: {missing}")
        return self.matrix[[self._index[p] for p in players]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["player"] + [f"f{j}" for j in range(self.dim)])
            for pid, row in zip(self.ids, self.matrix):
                wr.writerow([pid] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> PlayerFeatures:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        return cls([r[0] for r in rows[1:]], np.array([[float(v) for v in r[1:]] for r in rows[1:]]))


@dataclass
class GameInstance:
    context: np.ndarray
    players: list[str]
    actions: list[int]

    def __post_init__(self) -> None:
        self.context = np.asarray(self.context, dtype=float)
        if len(self.players) < 2:
            raise ValueError("a game needs at least two players")
        if len(self.actions) != len(self.players):
            raise ValueError("one action per player is required")
        if len(set(self.players)) != len(self.players):
            raise ValueError("duplicate players in a game")


def write_games(path, games: list[GameInstance]) -> None:
    with open(path, "w") as fh:
        for g in games:
            rec = {"context": g.context.tolist(), "players": list(g.players), "actions": [int(a) for a in g.actions]}
            fh.write(json.dumps(rec) + "\n")


def read_games(path, one_based: bool = False) -> list[GameInstance]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                acts = [int(a) - (1 if one_based else 0) for a in rec["actions"]]
                out.append(GameInstance(rec["context"], [str(p) for p in rec["players"]], acts))
    return out


@dataclass
class TransferParams:
    a_z: np.ndarray  # (d_z, d_x + d_b)
    c_z: np.ndarray  # (d_z,)
    q: np.ndarray  # (d_z, d_z)
    bias: float
    gamma: np.ndarray  # (m, d_z)

    @property
    def m(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def init(cls, d_x: int, d_b: int, m: int, d_z: int, rng: np.random.Generator, scale: float = 0.1) -> TransferParams:
        return cls(
            a_z=rng.normal(scale=scale, size=(d_z, d_x + d_b)),
            c_z=np.zeros(d_z),
            q=rng.normal(scale=scale, size=(d_z, d_z)),
            bias=0.0,
            gamma=rng.normal(scale=scale, size=(m, d_z)),
        )

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {"a_z": self.a_z, "c_z": self.c_z, "q": self.q, "bias": np.array(self.bias), "gamma": self.gamma}

    @classmethod
    def from_arrays(cls, arrs: dict) -> TransferParams:
        return cls(arrs["a_z"], arrs["c_z"], arrs["q"], float(arrs["bias"]), arrs["gamma"])

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in self.as_arrays().items()}

    @classmethod
    def from_dict(cls, data: dict) -> TransferParams:
        return cls.from_arrays({k: np.asarray(v, dtype=float) for k, v in data.items()})


@dataclass(frozen=True)
class TransferConfig:
    k: int = 5
    alpha: float = 0.01
    d_z: int = 16
    batch_size: int = 200
    epochs: int = 300
    lr: float = 0.01
    rho: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    init_scale: float = 0.1


def _forward_group(p: TransferParams, x: np.ndarray, b: np.ndarray, k: int, alpha: float) -> dict:
    """Batched forward over ``G`` games that all have ``s`` members."""
    g_count, s, _ = b.shape
    inp = np.concatenate([np.broadcast_to(x[:, None, :], (g_count, s, x.shape[1])), b], axis=2)
    zz = np.tanh(inp @ p.a_z.T + p.c_z)
    mask = 1.0 - np.eye(s)
    w = (np.einsum("gva,ab,gub->gvu", zz, p.q, zz) + p.bias) * mask
    logits = zz @ p.gamma.T
    sig = softmax(logits)
    sigmas = [sig]
    for _ in range(k):
        sig = softmax(sig + alpha * (w @ sig - logits))
        sigmas.append(sig)
    return {"inp": inp, "zz": zz, "w": w, "logits": logits, "sigmas": np.stack(sigmas), "mask": mask}


def _backward_group(p: TransferParams, tape: dict, y: np.ndarray, alpha: float, weight: float) -> dict:
    """Gradients of ``weight * sum of member cross-entropies`` for one group."""
    sigmas = tape["sigmas"]
    k = sigmas.shape[0] - 1
    g_count, s, _ = sigmas.shape[1:]
    rows, cols = np.arange(g_count)[:, None], np.arange(s)[None, :]
    picked = sigmas[-1][rows, cols, y]
    g_sig = np.zeros_like(sigmas[-1])
    g_sig[rows, cols, y] = np.where(picked > LOG_FLOOR, -weight / np.maximum(picked, LOG_FLOOR), 0.0)
    w, zz = tape["w"], tape["zz"]
    g_w = np.zeros_like(w)
    g_logits = np.zeros_like(tape["logits"])
    for t in range(k, 0, -1):
        st = sigmas[t]
        g_pre = st * (g_sig - np.sum(g_sig * st, axis=-1, keepdims=True))
        prev = sigmas[t - 1]
        g_w += alpha * np.einsum("gvm,gum->gvu", g_pre, prev)
        g_logits -= alpha * g_pre
        g_sig = g_pre + alpha * np.einsum("gvu,gvm->gum", w, g_pre)
    s0 = sigmas[0]
    g_logits += s0 * (g_sig - np.sum(g_sig * s0, axis=-1, keepdims=True))
    g_w *= tape["mask"]
    d_gamma = np.einsum("gvm,gva->ma", g_logits, zz)
    g_zz = g_logits @ p.gamma
    g_zz += np.einsum("gvu,ab,gub->gva", g_w, p.q, zz)
    g_zz += np.einsum("gvu,ab,gva->gub", g_w, p.q, zz)
    d_q = np.einsum("gvu,gva,gub->ab", g_w, zz, zz)
    d_bias = np.sum(g_w)
    g_h = g_zz * (1.0 - zz**2)
    return {
        "a_z": np.einsum("gva,gvc->ac", g_h, tape["inp"]),
        "c_z": g_h.sum(axis=(0, 1)),
        "q": d_q,
        "bias": np.array(d_bias),
        "gamma": d_gamma,
    }


def _groups(games: list[GameInstance]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = defaultdict(list)
    for idx, g in enumerate(games):
        groups[len(g.players)].append(idx)
    return dict(sorted(groups.items()))


def _stack(games, idx, features):
    x = np.stack([games[i].context for i in idx])
    b = np.stack([features.lookup(games[i].players) for i in idx])
    y = np.array([games[i].actions for i in idx], dtype=np.int64)
    return x, b, y


def transfer_forward(params: TransferParams, features: PlayerFeatures, instance: GameInstance, k: int, alpha: float) -> np.ndarray:
    """Strategy tape ``(k+1, |I|, m)`` for one game."""
    b = features.lookup(instance.players)[None]
    tape = _forward_group(params, instance.context[None], b, k, alpha)
    return tape["sigmas"][:, 0]


def influence_matrix(params: TransferParams, features: PlayerFeatures, instance: GameInstance) -> np.ndarray:
    b = features.lookup(instance.players)[None]
    return _forward_group(params, instance.context[None], b, 0, 0.0)["w"][0]


def transfer_loss_and_grad(params: TransferParams, features: PlayerFeatures, games: list[GameInstance], k: int, alpha: float):
    """Mean cross-entropy over all (game, member) pairs and its gradient."""
    total_pairs = sum(len(g.players) for g in games)
    weight = 1.0 / total_pairs
    value = 0.0
    grads = {name: np.zeros_like(np.asarray(v, dtype=float)) for name, v in params.as_arrays().items()}
    for _, idx in _groups(games).items():
        x, b, y = _stack(games, idx, features)
        tape = _forward_group(params, x, b, k, alpha)
        final = tape["sigmas"][-1]
        picked = final[np.arange(len(idx))[:, None], np.arange(y.shape[1])[None, :], y]
        value += float(np.sum(-np.log(np.maximum(picked, LOG_FLOOR)))) * weight
        for name, g in _backward_group(params, tape, y, alpha, weight).items():
            grads[name] += g
    return value, grads


def _check_features(games, features):
    missing = sorted({p for g in games for p in g.players} - set(features.ids))
    if missing:
        raise KeyError(f"players without features: {missing}")


def transfer_train(games: list[GameInstance], features: PlayerFeatures, config: TransferConfig, m: int | None = None):
    """RMSProp on the transfer loss (no L1 penalty). Returns ``(params, loss_history)``."""
    if not games:
        raise ValueError("cannot train on an empty game list")
    _check_features(games, features)
    m = m if m is not None else max(max(g.actions) for g in games) + 1
    rng = np.random.default_rng(config.seed)
    params = TransferParams.init(games[0].context.size, features.dim, m, config.d_z, rng, config.init_scale)
    arrs = {k: np.asarray(v, dtype=float).copy() for k, v in params.as_arrays().items()}
    sq = {k: np.zeros_like(v) for k, v in arrs.items()}
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(len(games))
        epoch_total, pairs = 0.0, 0
        for start in range(0, len(games), config.batch_size):
            batch = [games[i] for i in order[start : start + config.batch_size]]
            value, grads = transfer_loss_and_grad(TransferParams.from_arrays(arrs), features, batch, config.k, config.alpha)
            npairs = sum(len(g.players) for g in batch)
            epoch_total += value * npairs
            pairs += npairs
            for name in arrs:
                sq[name] = config.rho * sq[name] + (1 - config.rho) * grads[name] ** 2
                arrs[name] = arrs[name] - config.lr * grads[name] / (np.sqrt(sq[name]) + config.eps)
        history.append(epoch_total / pairs)
    return TransferParams.from_arrays(arrs), history


class EmpiricalBaseline:
    """Add-one smoothed action histogram per player; unseen players get uniform."""

    def __init__(self, counts: dict[str, np.ndarray], m: int):
        self.counts = counts
        self.m = m

    def strategy(self, player: str) -> np.ndarray:
        c = self.counts.get(player)
        if c is None:
            return np.full(self.m, 1.0 / self.m)
        return (c + 1.0) / (c.sum() + self.m)

    def __call__(self, instance: GameInstance) -> np.ndarray:
        return np.stack([self.strategy(p) for p in instance.players])


def train_empirical_baseline(games: list[GameInstance], m: int) -> EmpiricalBaseline:
    counts: dict[str, np.ndarray] = {}
    for g in games:
        for p, a in zip(g.players, g.actions):
            counts.setdefault(p, np.zeros(m))[a] += 1.0
    return EmpiricalBaseline(counts, m)


class LagPredictor:
    def __init__(self, params: TransferParams, features: PlayerFeatures, k: int, alpha: float):
        self.params, self.features, self.k, self.alpha = params, features, k, alpha

    def __call__(self, instance: GameInstance) -> np.ndarray:
        return transfer_forward(self.params, self.features, instance, self.k, self.alpha)[-1]


def evaluate_transfer(predictor, games: list[GameInstance]) -> float:
    """Mean cross-entropy over all (game, member) pairs."""
    total, pairs = 0.0, 0
    for g in games:
        s = np.asarray(predictor(g))
        picked = s[np.arange(len(g.actions)), np.asarray(g.actions)]
        total += float(np.sum(-np.log(np.maximum(picked, LOG_FLOOR))))
        pairs += len(g.actions)
    return total / pairs


@dataclass
class SplitTriplet:
    a: list[GameInstance]
    b: list[GameInstance]
    c: list[GameInstance]


def make_split_triplet(contexts, outcomes, player_ids, rng: np.random.Generator, group: int = 5, holdout: float = 0.25):
    """A/B/C games from full action records.

    Three quarters of the contexts yield A and B: ``group`` players sampled per
    context for A and another disjoint ``group`` from the rest for B. The other
    quarter yields C with ``group`` players per context.
    """
    contexts = np.asarray(contexts, dtype=float)
    outcomes = np.asarray(outcomes)
    n_ctx, n_players = outcomes.shape
    if 2 * group > n_players:
        raise ValueError("need at least 2 * group players to form disjoint A and B subsets")
    order = rng.permutation(n_ctx)
    n_c = int(round(holdout * n_ctx))
    ab_idx, c_idx = order[n_c:], order[:n_c]

    def game(ci, members):
        members = sorted(members)
        return GameInstance(contexts[ci], [player_ids[j] for j in members], [int(outcomes[ci, j]) for j in members])

    a, b, c = [], [], []
    for ci in ab_idx:
        perm = rng.permutation(n_players)
        a.append(game(ci, perm[:group]))
        b.append(game(ci, perm[group : 2 * group]))
    for ci in c_idx:
        c.append(game(ci, rng.permutation(n_players)[:group]))
    return SplitTriplet(a, b, c)


def evaluate_triplet(triplet: SplitTriplet, features: PlayerFeatures, config: TransferConfig, m: int) -> dict:
    params, history = transfer_train(triplet.a, features, config, m=m)
    lag = LagPredictor(params, features, config.k, config.alpha)
    base = train_empirical_baseline(triplet.a, m)
    return {
        "lag_B": evaluate_transfer(lag, triplet.b),
        "base_B": evaluate_transfer(base, triplet.b),
        "lag_C": evaluate_transfer(lag, triplet.c),
        "base_C": evaluate_transfer(base, triplet.c),
        "train_loss": history[-1] if history else float("nan"),
    }


def save_params(path, params: TransferParams, config: TransferConfig) -> None:
    Path(path).write_text(json.dumps({"params": params.to_dict(), "config": asdict(config)}, indent=1) + "\n")


def load_params(path) -> tuple[TransferParams, TransferConfig]:
    doc = json.loads(Path(path).read_text())
    return TransferParams.from_dict(doc["params"]), TransferConfig(**doc["config"])
