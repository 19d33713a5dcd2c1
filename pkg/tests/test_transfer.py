from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggrogame.core import softmax
from aggrogame.transfer import (
    GameInstance,
    LagPredictor,
    PlayerFeatures,
    TransferConfig,
    TransferParams,
    evaluate_transfer,
    influence_matrix,
    load_params,
    make_split_triplet,
    read_games,
    save_params,
    train_empirical_baseline,
    transfer_forward,
    transfer_loss_and_grad,
    transfer_train,
    write_games,
)
from oracles import central_diff, rel_err


def _setup(seed, n_players=6, d_x=3, d_b=2, m=3, d_z=4, n_games=5, scale=0.7):
    rng = np.random.default_rng(seed)
    ids = [f"p{j}" for j in range(n_players)]
    feats = PlayerFeatures(ids, rng.normal(size=(n_players, d_b)))
    params = TransferParams.init(d_x, d_b, m, d_z, rng, scale=scale)
    params.c_z[:] = rng.normal(scale=0.3, size=d_z)
    params.bias = 0.2
    games = []
    for _ in range(n_games):
        size = int(rng.integers(2, 5))
        members = list(rng.choice(ids, size=size, replace=False))
        games.append(GameInstance(rng.normal(size=d_x), members, list(rng.integers(0, m, size=size))))
    return params, feats, games


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("k", [1, 3])
def test_transfer_gradient_matches_finite_differences(seed, k):
    params, feats, games = _setup(seed)
    alpha = 0.5
    _, grads = transfer_loss_and_grad(params, feats, games, k, alpha)
    base = params.as_arrays()
    for name, arr in base.items():
        arr = np.asarray(arr, dtype=float)

        def f(v, name=name):
            arrs = dict(base)
            arrs[name] = v.reshape(arr.shape)
            return transfer_loss_and_grad(TransferParams.from_arrays(arrs), feats, games, k, alpha)[0]

        fd = central_diff(f, arr.ravel().copy(), h=1e-6)
        assert rel_err(np.asarray(grads[name]).ravel(), fd) < 1e-5, name


def test_identical_features_and_symmetric_q_give_symmetric_influence():
    rng = np.random.default_rng(0)
    feats = PlayerFeatures(["a", "b", "c"], np.tile(rng.normal(size=(1, 2)), (3, 1)))
    params = TransferParams.init(2, 2, 3, 4, rng, scale=1.0)
    params.q = params.q + params.q.T
    w = influence_matrix(params, feats, GameInstance(rng.normal(size=2), ["a", "b", "c"], [0, 1, 2]))
    assert np.allclose(w, w.T)


def test_asymmetric_q_gives_asymmetric_influence():
    rng = np.random.default_rng(1)
    feats = PlayerFeatures(["a", "b"], rng.normal(size=(2, 2)))
    params = TransferParams.init(2, 2, 3, 4, rng, scale=1.0)
    params.q = params.q - params.q.T
    w = influence_matrix(params, feats, GameInstance(rng.normal(size=2), ["a", "b"], [0, 1]))
    assert abs(w[0, 1] - w[1, 0]) > 1e-3


def test_zero_influence_reduces_to_isolated_updates():
    params, feats, games = _setup(3, scale=1.0)
    params.q[:] = 0.0
    params.bias = 0.0
    g = games[0]
    tape = transfer_forward(params, feats, g, 4, 0.3)
    # each member evolves alone: sigma <- softmax(sigma - alpha * Gamma z)
    inp = np.concatenate([np.broadcast_to(g.context, (len(g.players), g.context.size)), feats.lookup(g.players)], axis=1)
    logits = np.tanh(inp @ params.a_z.T + params.c_z) @ params.gamma.T
    sig = softmax(logits)
    for t in range(1, 5):
        sig = softmax(sig - 0.3 * logits)
        assert np.allclose(tape[t], sig, atol=1e-14)


def test_forward_tape_length_and_simplex():
    params, feats, games = _setup(5)
    for g in games:
        tape = transfer_forward(params, feats, g, 5, 0.1)
        assert tape.shape == (6, len(g.players), params.m)
        assert np.allclose(tape.sum(axis=-1), 1.0, atol=1e-12)
        assert tape.min() >= 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.permutations(range(4)))
def test_permuting_players_permutes_outputs(seed, perm):
    params, feats, _ = _setup(seed)
    rng = np.random.default_rng(seed)
    members = ["p0", "p2", "p3", "p5"]
    x = rng.normal(size=3)
    g = GameInstance(x, members, [0, 1, 2, 0])
    gp = GameInstance(x, [members[j] for j in perm], [g.actions[j] for j in perm])
    t0, t1 = transfer_forward(params, feats, g, 3, 0.4), transfer_forward(params, feats, gp, 3, 0.4)
    assert np.allclose(t1, t0[:, list(perm)], atol=1e-13)
    w0, w1 = influence_matrix(params, feats, g), influence_matrix(params, feats, gp)
    assert np.allclose(w1, w0[np.ix_(perm, perm)], atol=1e-13)


def test_game_needs_two_players():
    with pytest.raises(ValueError):
        GameInstance([0.0], ["a"], [0])


def test_missing_features_raise():
    params, feats, games = _setup(0)
    bad = games + [GameInstance(games[0].context, ["p0", "ghost"], [0, 1])]
    with pytest.raises(KeyError):
        transfer_train(bad, feats, TransferConfig(epochs=1, d_z=4))


def test_empty_training_set_rejected():
    _, feats, _ = _setup(0)
    with pytest.raises(ValueError):
        transfer_train([], feats, TransferConfig(epochs=1))


def test_single_game_memorization():
    params, feats, games = _setup(2)
    # the update logit is sigma + alpha * (W sigma - Gamma z); a tiny alpha caps how sharp predictions can get
    cfg = TransferConfig(epochs=400, lr=0.05, d_z=4, alpha=0.5)
    params_hat, history = transfer_train(games[:1], feats, cfg, m=3)
    assert history[-1] < history[0]
    assert evaluate_transfer(LagPredictor(params_hat, feats, cfg.k, cfg.alpha), games[:1]) < 0.05


def test_training_is_seed_deterministic():
    _, feats, games = _setup(4, n_games=12)
    cfg = TransferConfig(epochs=5, d_z=4, batch_size=5, seed=3)
    p1, h1 = transfer_train(games, feats, cfg, m=3)
    p2, h2 = transfer_train(games, feats, cfg, m=3)
    assert h1 == h2
    for name, arr in p1.as_arrays().items():
        assert np.array_equal(arr, p2.as_arrays()[name])


def test_baseline_add_one_smoothing():
    g = GameInstance([0.0], ["a", "b"], [2, 0])
    base = train_empirical_baseline([g], 3)
    assert np.allclose(base.strategy("a"), [0.25, 0.25, 0.5])
    assert np.allclose(base.strategy("unseen"), [1 / 3, 1 / 3, 1 / 3])


def test_baseline_matches_counting_oracle():
    _, _, games = _setup(7, n_games=40)
    base = train_empirical_baseline(games, 3)
    for pid in {p for g in games for p in g.players}:
        counts = [0, 0, 0]
        for g in games:
            for p, a in zip(g.players, g.actions):
                if p == pid:
                    counts[a] += 1
        expected = [(c + 1) / (sum(counts) + 3) for c in counts]
        assert np.allclose(base.strategy(pid), expected, atol=0)
        assert base.strategy(pid).sum() == pytest.approx(1.0, abs=4e-16)


def test_evaluate_uniform_and_perfect_predictors():
    _, _, games = _setup(8, n_games=10)
    uniform = lambda g: np.full((len(g.players), 3), 1 / 3)  # noqa: E731
    assert evaluate_transfer(uniform, games) == pytest.approx(math.log(3), abs=1e-12)
    perfect = lambda g: np.eye(3)[g.actions]  # noqa: E731
    assert evaluate_transfer(perfect, games) == pytest.approx(0.0, abs=1e-12)


def test_split_triplet_structure():
    rng = np.random.default_rng(0)
    ids = [f"p{j}" for j in range(12)]
    outcomes = rng.integers(0, 3, size=(40, 12))
    trip = make_split_triplet(rng.normal(size=(40, 2)), outcomes, ids, rng)
    assert len(trip.a) == len(trip.b) == 30 and len(trip.c) == 10
    for ga, gb in zip(trip.a, trip.b):
        assert len(ga.players) == len(gb.players) == 5
        assert not set(ga.players) & set(gb.players)
        assert np.array_equal(ga.context, gb.context)
    contexts_ab = {tuple(g.context) for g in trip.a}
    assert not contexts_ab & {tuple(g.context) for g in trip.c}


def test_games_features_and_params_round_trip(tmp_path):
    params, feats, games = _setup(9)
    write_games(tmp_path / "g.jsonl", games)
    back = read_games(tmp_path / "g.jsonl")
    assert [g.players for g in back] == [g.players for g in games]
    assert all(np.array_equal(a.context, b.context) and list(a.actions) == list(b.actions) for a, b in zip(games, back))
    feats.to_csv(tmp_path / "f.csv")
    fb = PlayerFeatures.from_csv(tmp_path / "f.csv")
    assert fb.ids == feats.ids and np.array_equal(fb.matrix, feats.matrix)
    cfg = TransferConfig(d_z=4)
    save_params(tmp_path / "p.json", params, cfg)
    pb, cb = load_params(tmp_path / "p.json")
    assert cb == cfg
    assert all(np.array_equal(v, pb.as_arrays()[k]) for k, v in params.as_arrays().items())
