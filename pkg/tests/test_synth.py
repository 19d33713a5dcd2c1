from __future__ import annotations

import numpy as np
import pytest

from aggrogame.core import GameSpec, is_doubly_stochastic
from aggrogame.dynamics import OdeRates, ode_rhs
from aggrogame.learn import forward_k_steps
from aggrogame.recovery import RecoveryExperimentConfig, calibrate_lambda, one_shot_sample, planted_game, thresholds
from aggrogame.stability import equilibrium_trackers
from aggrogame.synth import (
    SynthConfig,
    cmne_instance,
    generate_game,
    sample_kstep_dataset,
    sample_recovery_dataset,
    sinkhorn,
    sne_instance,
    transfer_teacher,
    verify_stability_label,
)


def test_zero_degree_gives_zero_influence():
    spec = generate_game(SynthConfig(degree=0))
    assert np.all(spec.w == 0)
    assert spec.meta["ground_truth"] is True


@pytest.mark.parametrize("seed", range(5))
def test_exact_degree_per_row_and_column(seed):
    spec = generate_game(SynthConfig(n=7, degree=3, seed=seed))
    nz = spec.w != 0
    assert np.all(nz.sum(axis=1) == 3) and np.all(nz.sum(axis=0) == 3)
    assert np.array_equal(nz, np.array(spec.meta["support"]))
    assert np.all(np.abs(spec.w[nz]) >= 0.5) and np.all(np.abs(spec.w[nz]) <= 1.5)


def test_stochastic_normalization():
    spec = generate_game(SynthConfig(n=6, degree=2, weight_sign_mix=0.0, w_normalization="stochastic"))
    assert np.all(spec.w >= 0)
    assert np.allclose(spec.w.sum(axis=1), 1.0, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_doubly_stochastic_normalization(seed):
    spec = generate_game(SynthConfig(n=6, degree=3, weight_sign_mix=0.0, w_normalization="doubly_stochastic", seed=seed))
    assert np.abs(spec.w.sum(axis=1) - 1).max() <= 1e-8
    assert np.abs(spec.w.sum(axis=0) - 1).max() <= 1e-8
    assert is_doubly_stochastic(spec.w)


def test_doubly_stochastic_rejects_negative_weights():
    with pytest.raises(ValueError, match="nonnegative"):
        generate_game(SynthConfig(weight_sign_mix=0.5, w_normalization="doubly_stochastic", seed=3))
    with pytest.raises(ValueError):
        sinkhorn(-np.ones((3, 3)))


def test_config_validation_names_constraint():
    with pytest.raises(ValueError, match="degree < n"):
        SynthConfig(n=3, degree=3)
    with pytest.raises(ValueError):
        SynthConfig(weight_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        SynthConfig(w_normalization="row")


def test_deterministic_teacher_outcomes_are_argmax():
    rng = np.random.default_rng(0)
    n, m, d = 3, 3, 2
    spec = GameSpec(theta=rng.normal(scale=1000.0, size=(n, m, d)), w=np.zeros((n, n)))
    cfg = SynthConfig(n=n, m=m, d=d, degree=0, alpha=1.0, nu="zero", records=200, seed=4)
    data = sample_kstep_dataset(spec, cfg)
    final = forward_k_steps(spec, data.contexts, cfg.train_config()).final
    confident = final.max(axis=-1) > 1 - 1e-12
    assert confident.mean() > 0.9
    assert np.array_equal(data.actions[confident], final.argmax(axis=-1)[confident])


def test_kstep_sampling_is_seeded():
    cfg = SynthConfig(records=50, seed=9)
    spec = generate_game(cfg)
    a, b = sample_kstep_dataset(spec, cfg), sample_kstep_dataset(spec, cfg)
    assert np.array_equal(a.contexts, b.contexts) and np.array_equal(a.actions, b.actions)


def test_action_frequencies_match_mean_strategies():
    cfg = SynthConfig(n=3, m=3, d=2, degree=1, records=100_000, seed=2)
    spec = generate_game(cfg)
    data = sample_kstep_dataset(spec, cfg)
    final = forward_k_steps(spec, data.contexts, cfg.train_config()).final
    freq = np.stack([(data.actions == a).mean(axis=0) for a in range(3)], axis=-1)
    mean = final.mean(axis=0)
    # Bernoulli variance of the indicator bounds the per-record variance
    stderr = np.sqrt(mean * (1 - mean) / cfg.records)
    assert np.all(np.abs(freq - mean) < 3 * stderr)


def test_recovery_dataset_passes_through_one_shot_sample():
    cfg = RecoveryExperimentConfig(lambda_reg=1e-4, seed=5)
    data, truth = sample_recovery_dataset(cfg, 500)
    rng = np.random.default_rng(5)
    theta, w = planted_game(cfg, rng)
    ref = one_shot_sample(theta, w, cfg.alpha, rng.normal(size=(500, cfg.n)), rng)
    assert np.array_equal(data.actions, ref.actions) and np.array_equal(data.z, ref.z)
    assert np.array_equal(truth.w, w) and truth.lambda_reg == 1e-4


def test_recovery_weight_placement_and_threshold_flag():
    cfg = RecoveryExperimentConfig(seed=1, pilot_records=100_000)
    data, truth = sample_recovery_dataset(cfg, 150_000)
    rng = np.random.default_rng(1)
    theta, w = planted_game(cfg, rng)
    lam, c_min = calibrate_lambda(cfg, theta, w, rng)
    assert lam == truth.lambda_reg
    mw = thresholds(cfg.degree, lam, cfg.alpha, c_min, cfg.n, 1, 1.0).min_weight
    assert np.abs(w[w != 0]) == pytest.approx(1.5 * mw, rel=1e-12)
    expected = all(
        r.satisfied
        and np.abs(w[i][w[i] != 0]).min()
        >= thresholds(r.degree, lam, cfg.alpha, r.c_min, cfg.n, 150_000, min(r.incoherence_gamma, 1.0), r.c_max).min_weight
        for i, r in enumerate(truth.reports)
    )
    assert truth.thresholds_satisfied == expected
    assert truth.thresholds_satisfied


@pytest.mark.parametrize("variant", ["FP_AA", "FP_PA", "GP_AA", "GP_PA"])
def test_cmne_instances_are_rest_points_with_requested_label(variant):
    rng = np.random.default_rng(0)
    for stable in (True, False) if variant != "GP_PA" else (False,):
        inst = cmne_instance(variant, rng, stable=stable)
        assert verify_stability_label(inst)
        assert abs(inst.abscissa) >= 0.05
        r_star = equilibrium_trackers(inst.spec, variant, inst.q_star)
        dq, dr = ode_rhs(inst.spec, variant, inst.types, inst.q_star, r_star, inst.rates)
        assert np.abs(dq).max() < 1e-12 and np.abs(dr).max() < 1e-12


def test_gp_pa_has_no_stable_cmne_with_stochastic_w():
    with pytest.raises(RuntimeError):
        cmne_instance("GP_PA", np.random.default_rng(0), stable=True, max_tries=200)


@pytest.mark.parametrize("variant", ["GP_AA", "GP_PA"])
def test_sne_instances(variant):
    spec, z, q = sne_instance(variant, np.random.default_rng(2))
    if variant == "GP_PA":
        assert is_doubly_stochastic(spec.w)
    dq, _ = ode_rhs(spec, variant, z, q, equilibrium_trackers(spec, variant, q), OdeRates(0.01, 0.5))
    assert np.abs(dq).max() < 1e-12


def test_transfer_teacher_shapes():
    t = transfer_teacher(np.random.default_rng(0), players=6, contexts=10)
    assert t.outcomes.shape == (10, 6) and t.contexts.shape == (10, 4)
    assert t.outcomes.min() >= 0 and t.outcomes.max() < 3
    assert t.params.gamma.shape == (3, 4)
