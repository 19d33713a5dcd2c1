"""Acceptance criteria: one PASS/FAIL line per criterion, collected in the terminal summary."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from aggrogame.core import GameSpec, project_simplex
from aggrogame.dynamics import OdeRates, ProtocolConfig, integrate_ode, run_dynamics
from aggrogame.learn import TrainConfig, backward, batch_losses, dataset_loss, forward_k_steps, train
from aggrogame.recovery import (
    OneShotDataset,
    RecoveryExperimentConfig,
    min_lambda,
    one_shot_sample,
    others,
    recovery_experiment,
    recovery_grad,
    solve_l1,
    thresholds,
)
from aggrogame.stability import build_linearization, equilibrium_trackers, hurwitz_stable, lyapunov_monitor, tangent_basis
from aggrogame.synth import SynthConfig, cmne_instance, generate_game, sample_kstep_dataset, sne_instance, transfer_teacher
from aggrogame.transfer import (
    GameInstance,
    PlayerFeatures,
    TransferConfig,
    TransferParams,
    evaluate_triplet,
    make_split_triplet,
    transfer_loss_and_grad,
)
from oracles import active_set_projection, central_diff, rel_err
from verdicts import LINES


def verdict(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_01_gradient_fidelity():
    start = time.perf_counter()
    worst, count = 0.0, 0
    rng = np.random.default_rng(100)
    for inst in range(40):
        n, m, k = int(rng.integers(2, 6)), int(rng.integers(2, 5)), int(rng.integers(1, 6))
        d = int(rng.integers(1, 4))
        nu = ("identity", "zero")[inst % 2]
        spec = GameSpec(theta=rng.normal(size=(n, m, d)), w=rng.normal(size=(n, n)) * (1 - np.eye(n)))
        x, y = rng.normal(size=(4, d)), rng.integers(0, m, size=(4, n))
        cfg = TrainConfig(k=k, alpha=float(rng.uniform(0.05, 0.8)), nu=nu)

        def mean_loss(s):
            return float(np.mean(batch_losses(forward_k_steps(s, x, cfg).final, y)))

        grads = backward(forward_k_steps(spec, x, cfg), y)
        fd_t = central_diff(lambda t: mean_loss(spec.with_params(theta=t)), spec.theta, h=1e-5)
        fd_w = central_diff(lambda w: mean_loss(spec.with_params(w=w * (1 - np.eye(n)))), spec.w, h=1e-5)
        worst = max(worst, rel_err(grads.d_theta, fd_t), rel_err(grads.d_w, fd_w))
        count += 1
    for inst in range(12):
        k = int(rng.integers(1, 6))
        m = int(rng.integers(2, 5))
        ids = [f"p{j}" for j in range(5)]
        feats = PlayerFeatures(ids, rng.normal(size=(5, 2)))
        params = TransferParams.init(3, 2, m, 3, rng, scale=0.7)
        params.c_z[:] = rng.normal(scale=0.3, size=3)
        games = []
        for _ in range(3):
            size = int(rng.integers(2, 6))
            members = list(rng.choice(ids, size=size, replace=False))
            games.append(GameInstance(rng.normal(size=3), members, list(rng.integers(0, m, size=size))))
        alpha = float(rng.uniform(0.1, 0.8))
        _, grads = transfer_loss_and_grad(params, feats, games, k, alpha)
        base = params.as_arrays()
        for name, arr in base.items():
            arr = np.asarray(arr, dtype=float)

            def f(v, name=name, shape=arr.shape):
                return transfer_loss_and_grad(TransferParams.from_arrays({**base, name: v.reshape(shape)}), feats, games, k, alpha)[0]

            worst = max(worst, rel_err(np.asarray(grads[name]).ravel(), central_diff(f, arr.ravel().copy(), h=1e-6)))
        count += 1
    elapsed = time.perf_counter() - start
    verdict(1, count >= 50 and worst < 1e-5 and elapsed < 30, f"{count} instances, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_simplex_conservation():
    start = time.perf_counter()
    worst_sum, worst_min, runs = 0.0, 0.0, 0
    rates = OdeRates(1.0, 2.0)
    for g in range(20):
        rng = np.random.default_rng(200 + g)
        n, m = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        w = rng.random((n, n))
        np.fill_diagonal(w, 0)
        spec = GameSpec(theta=rng.normal(size=(n, m, 2)), w=w / w.sum(axis=1, keepdims=True), tau=0.5)
        x = rng.normal(size=2)
        for play in ("FP", "GP"):
            for agg in ("AA", "PA"):
                cfg = ProtocolConfig(play, agg, rates, tau=0.5 if play == "FP" else 0.0, steps=10_000, seed=g)
                log = run_dynamics(spec, x, cfg)
                for arr in (log.sigma, log.q):
                    worst_sum = max(worst_sum, float(np.abs(arr.sum(axis=-1) - 1).max()))
                    worst_min = min(worst_min, float(arr.min()))
                runs += 1
    elapsed = time.perf_counter() - start
    ok = runs == 80 and worst_sum <= 1e-9 and worst_min >= -1e-12 and elapsed < 60
    verdict(2, ok, f"{runs} runs x 1e4 steps, max |sum-1| {worst_sum:.1e}, min entry {worst_min:.1e}, {elapsed:.1f}s")


def test_criterion_03_projection_oracle():
    rng = np.random.default_rng(300)
    worst = 0.0
    for m in (3, 4):
        pts = rng.normal(scale=2.0, size=(500, m))
        proj = project_simplex(pts)
        for v, p in zip(pts, proj):
            worst = max(worst, float(np.abs(p - active_set_projection(v)).max()))
    verdict(3, worst < 1e-8, f"1000 points, max deviation from active-set QP {worst:.1e}")


def _deviation(log, q_star, r_star):
    return np.sqrt(((log.q - q_star) ** 2).sum(axis=(1, 2)) + ((log.r - r_star) ** 2).sum(axis=(1, 2)))


def test_criterion_04_stability_concordance():
    start = time.perf_counter()
    rng = np.random.default_rng(400)
    plan = {"FP_AA": (10, 10), "FP_PA": (10, 10), "GP_AA": (10, 10), "GP_PA": (0, 20)}
    checked, contradictions, notes = 0, 0, []
    for variant, (n_stable, n_unstable) in plan.items():
        for stable in [True] * n_stable + [False] * n_unstable:
            inst = cmne_instance(variant, rng, stable=stable)
            rep = hurwitz_stable(build_linearization(variant, inst.spec, inst.types, inst.q_star, inst.rates))
            n, m = inst.q_star.shape
            basis = tangent_basis(m)
            dq = rng.normal(size=(n, m - 1)) @ basis.T
            dr = rng.normal(size=(n, m - 1)) @ basis.T
            scale = 1e-3 / math.sqrt(float((dq**2).sum() + (dr**2).sum()))
            r_star = equilibrium_trackers(inst.spec, variant, inst.q_star)
            log = integrate_ode(
                inst.spec, variant, inst.types, inst.q_star + scale * dq, r_star + scale * dr, inst.rates, horizon=200.0, step=0.05
            )
            q_dist = np.sqrt(((log.q[-1] - inst.q_star) ** 2).sum())
            dev = _deviation(log, inst.q_star, r_star)
            if rep.verdict == "stable":
                agrees = q_dist < 1e-3
            elif rep.max_real > 1e-3:
                agrees = dev.max() >= 10 * dev[0]
            else:
                agrees = True
            checked += 1
            if not agrees or rep.verdict != ("stable" if stable else "unstable"):
                contradictions += 1
                notes.append(f"{variant} stable={stable} max_real={rep.max_real:.3g}")
    elapsed = time.perf_counter() - start
    ok = contradictions == 0 and elapsed < 300
    detail = f"{checked} instances (>= 20 per variant), {contradictions} contradictions, {elapsed:.1f}s"
    verdict(4, ok, detail + ("; " + "; ".join(notes) if notes else ""))


def test_criterion_05_lyapunov_monitor():
    rates = OdeRates(0.01, 0.5)
    assert rates.gamma * rates.lam <= 0.01
    fractions = []
    for variant in ("GP_AA", "GP_PA"):
        for seed in range(6):
            rng = np.random.default_rng(500 + seed)
            spec, z, q_star = sne_instance(variant, rng)
            n, m = q_star.shape
            q0 = 0.97 * q_star + 0.03 * rng.dirichlet(np.ones(m), size=n)
            r0 = equilibrium_trackers(spec, variant, q0) + 0.01 * rng.normal(size=q0.shape)
            log = integrate_ode(spec, variant, z, q0, r0, rates, horizon=20.0, step=0.05)
            fractions.append(lyapunov_monitor(log, spec, q_star, variant, rates).fraction_nonincreasing)
    ok = len(fractions) >= 10 and min(fractions) >= 0.99
    verdict(5, ok, f"{len(fractions)} instances, min nonincreasing fraction {min(fractions):.4f}")


def test_criterion_06_threshold_formulas():
    mw = thresholds(1, 0.1, 1.0, 1.0, 2, 100, 1.0).min_weight
    ml = min_lambda(1.0, math.e, 100, 1.0)
    via_thresholds = thresholds(1, 0.1, 1.0, 1.0, math.e, 100, 1.0).min_lambda
    ok = math.isclose(mw, 1.0, rel_tol=1e-15) and math.isclose(ml, 0.8, rel_tol=1e-15) and ml == via_thresholds
    verdict(6, ok, f"min_weight {mw!r} (expect 1.0), min_lambda {ml!r} (expect 0.8)")


@pytest.fixture(scope="module")
def recovery_curve():
    config = RecoveryExperimentConfig()
    start = time.perf_counter()
    curve = recovery_experiment(config)
    return config, curve, time.perf_counter() - start


def test_criterion_07_signed_support_recovery(recovery_curve):
    config, curve, elapsed = recovery_curve
    top = max(config.m_grid)
    top_trials = [t for t in curve.trials if t.records == top]
    rate = curve.rows[-1]["success_rate"]
    # planted weights sit at 1.5x the minimum-weight threshold for the pilot C_min
    th = thresholds(config.degree, curve.lambda_reg, config.alpha, curve.c_min_pilot, config.n, top, 1.0)
    weight_ok = math.isclose(config.effective_weight / config.alpha, config.weight_margin * th.min_weight, rel_tol=1e-9)
    assumptions = all(t.assumptions_ok for t in top_trials)
    rho = float(spearmanr([r["M"] for r in curve.rows], [r["success_rate"] for r in curve.rows]).statistic)
    ok = len(top_trials) == 100 and rate >= 0.95 and rho >= 0.8 and weight_ok and assumptions and elapsed < 600
    rates = ", ".join(f"M={r['M']}: {r['success_rate']:.2f}" for r in curve.rows)
    verdict(7, ok, f"success {rates}; spearman {rho:.3f}; assumptions verified {assumptions}; {elapsed:.0f}s")


def test_criterion_08_primal_dual_witness(recovery_curve):
    config, curve, _ = recovery_curve
    top = [t for t in curve.trials if t.records == max(config.m_grid)]
    feasible = float(np.mean([t.pdw_feasible for t in top]))
    violations = sum(t.support_violation for t in curve.trials)
    verdict(8, feasible >= 0.95 and violations == 0, f"strict dual feasibility {feasible:.2f} at top M, {violations} support violations")


def test_criterion_09_kkt_certification(recovery_curve):
    _, curve, _ = recovery_curve
    experiment_ok = all(t.kkt_ok for t in curve.trials)
    rng = np.random.default_rng(900)
    worst, solves = 0.0, 0
    for seed in range(20):
        n = int(rng.integers(3, 8))
        theta = rng.normal(size=(n, n))
        w = rng.normal(scale=1.5, size=(n, n)) * (1 - np.eye(n))
        data = one_shot_sample(theta, w, float(rng.uniform(0.2, 1.0)), rng.normal(size=(300, n)), rng)
        for i in range(n):
            for method in ("ista", "newton"):
                _, rep = solve_l1(data, i, float(10 ** rng.uniform(-3, -1)), method=method)
                worst = max(worst, rep.support_residual, max(rep.offsupport_ratio - 1, 0) * rep.lambda_reg)
                solves += 1
                experiment_ok &= rep.passes(1e-6)
    detail = f"{len(curve.trials) * 10} experiment solves and {solves} random solves, worst random residual {worst:.1e}"
    verdict(9, experiment_ok, detail)


def test_criterion_10_teacher_student():
    start = time.perf_counter()
    results = []
    for seed in range(10):
        cfg = SynthConfig(n=5, m=3, d=4, degree=2, weight_range=(1.5, 4.5), theta_scale=3.0, k=5, alpha=0.1, records=5000, seed=seed)
        teacher = generate_game(cfg)
        rng = np.random.default_rng(1000 + seed)
        tr, te = sample_kstep_dataset(teacher, cfg, rng), sample_kstep_dataset(teacher, cfg, rng)
        tc = TrainConfig(k=5, alpha=0.1, lambda_reg=0.1, epochs=100, seed=seed)
        student = train(tr, tc).spec
        results.append(dataset_loss(student, te, tc) / dataset_loss(teacher, te, tc) - 1)
    elapsed = time.perf_counter() - start
    within = sum(abs(r) <= 0.05 for r in results)
    ok = within >= 8 and elapsed < 300
    verdict(10, ok, f"{within}/10 seeds within 5% (worst {max(map(abs, results)):.3%}), {elapsed:.0f}s")


def test_criterion_11_transfer_vs_baseline():
    start = time.perf_counter()
    rng = np.random.default_rng(1100)
    teacher = transfer_teacher(rng, players=20, contexts=800, gamma_scale=100.0)
    wins = 0
    gaps = []
    for t in range(10):
        trip = make_split_triplet(teacher.contexts, teacher.outcomes, teacher.features.ids, rng, group=5)
        res = evaluate_triplet(trip, teacher.features, TransferConfig(k=5, alpha=0.01, epochs=300, lr=0.1, seed=t), 3)
        wins += res["lag_B"] <= res["base_B"] and res["lag_C"] <= res["base_C"]
        gaps.append(res["base_B"] - res["lag_B"])
    elapsed = time.perf_counter() - start
    verdict(11, wins >= 8, f"transfer <= baseline on B and C in {wins}/10 triplets, mean B gap {np.mean(gaps):.3f} nats, {elapsed:.0f}s")


def test_criterion_12_hoeffding_envelope():
    rng = np.random.default_rng(1200)
    n, M, alpha, draws = 10, 50, 0.5, 10_000
    theta = rng.normal(size=(n, 2))
    w = rng.normal(size=(n, n)) * (1 - np.eye(n))
    big = one_shot_sample(theta, w, alpha, rng.normal(size=(M * draws, 2)), rng)
    w0 = w[0, others(n, 0)]
    norms = np.empty(draws)
    for t in range(draws):
        sl = slice(t * M, (t + 1) * M)
        chunk = OneShotDataset(big.phi[sl], big.z[sl], big.actions[sl], alpha)
        norms[t] = np.abs(recovery_grad(chunk, 0, w0)).max()
    worst = -math.inf
    for t in np.linspace(0.02, 0.4, 39):
        freq = float(np.mean(norms >= t))
        bound = 2 * (n - 1) * math.exp(-M * t**2 / (2 * alpha**2))
        se = math.sqrt(freq * (1 - freq) / draws)
        worst = max(worst, (freq - bound) / se if freq > bound else -math.inf)
    ok = worst <= 3
    verdict(12, ok, f"{draws} draws at M={M}, n={n}; worst excess over bound {'none' if worst == -math.inf else f'{worst:.2f} SE'}")
