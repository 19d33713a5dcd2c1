"""Command-line entry point: ``aggrogame <command> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command writes
a run manifest next to its primary output. ``AGGROGAME_THREADS`` caps the
thread count of the numerical backend.
"""

from __future__ import annotations

import os
import sys

_threads = os.environ.get("AGGROGAME_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import tempfile  # noqa: E402
import time  # noqa: E402
from dataclasses import asdict, dataclass, field  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .core import GameSpec, compute_types, init_strategy  # noqa: E402
from .dynamics import OdeRates, ProtocolConfig, integrate_ode, ode_rhs, run_dynamics  # noqa: E402
from .learn import (  # noqa: E402
    Dataset,
    TrainConfig,
    average_runs,
    batch_losses,
    dataset_loss,
    extract_influences,
    forward_k_steps,
    load_model,
    model_to_dict,
    train_runs,
)
from .recovery import (  # noqa: E402
    OneShotDataset,
    RecoveryExperimentConfig,
    check_assumptions,
    config_dict,
    min_lambda,
    others,
    recover_all,
    recovery_experiment,
)
from .stability import (  # noqa: E402
    PreconditionError,
    build_linearization,
    check_preconditions,
    equilibrium_trackers,
    hurwitz_stable,
    tangent_basis,
)
from .synth import (  # noqa: E402
    SynthConfig,
    cmne_instance,
    generate_game,
    sample_kstep_dataset,
    sample_recovery_dataset,
    transfer_teacher,
)
from .transfer import (  # noqa: E402
    PlayerFeatures,
    TransferConfig,
    evaluate_triplet,
    make_split_triplet,
    read_games,
)

VARIANT_FLAGS = {"fp-aa": "FP_AA", "fp-pa": "FP_PA", "gp-aa": "GP_AA", "gp-pa": "GP_PA"}


class UsageError(Exception):
    """Flag combination is invalid; reported with exit code 2."""


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: list[str]
    outputs: list[str]
    argv: list[str]
    version: str = __version__
    wall_time_s: float = 0.0
    extra: dict = field(default_factory=dict)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(path, manifest: RunManifest) -> None:
    atomic_write_text(path, json.dumps(asdict(manifest), indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _manifest_path(output) -> Path:
    output = Path(output)
    return output / "manifest.json" if output.is_dir() else output.with_name(output.name + ".manifest.json")


def _write_json(path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _load_game(path):
    """Model/game JSON plus optional ``types``, ``q_star`` and ``rates`` entries."""
    spec, doc = load_model(path)
    types = np.asarray(doc["types"], dtype=float) if "types" in doc else None
    q_star = np.asarray(doc["q_star"], dtype=float) if "q_star" in doc else None
    return spec, doc, types, q_star


def _rates(args, doc) -> OdeRates:
    stored = doc.get("rates") or {}
    gamma = args.gamma if args.gamma is not None else stored.get("gamma", 1.0)
    lam = args.lam if args.lam is not None else stored.get("lam", 1.0)
    return OdeRates(float(gamma), float(lam))


def _context(args, spec: GameSpec) -> np.ndarray:
    if args.context is None:
        return np.zeros(spec.d)
    x = np.array([float(v) for v in args.context.split(",")])
    if x.size != spec.d:
        raise UsageError(f"--context has {x.size} entries but the game has d={spec.d}")
    return x


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng_seed = args.seed
    if args.kind == "kstep":
        try:
            cfg = SynthConfig(
                n=args.n,
                m=args.m,
                d=args.d,
                degree=args.degree,
                weight_range=(args.weight_min, args.weight_max),
                weight_sign_mix=args.sign_mix,
                w_normalization=args.normalization,
                theta_scale=args.theta_scale,
                tau=args.tau,
                k=args.k,
                alpha=0.1 if args.alpha is None else args.alpha,
                nu=args.nu,
                records=args.records,
                seed=rng_seed,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        rng = np.random.default_rng(cfg.seed)
        spec = generate_game(cfg, rng)
        data = sample_kstep_dataset(spec, cfg, rng)
        data.to_jsonl(out / "data.jsonl")
        truth = model_to_dict(spec, cfg.train_config())
        truth["support"] = spec.meta["support"]
        _write_json(out / "truth.json", truth)
        config = asdict(cfg)
    elif args.kind == "oneshot":
        rc = RecoveryExperimentConfig(
            n=args.n,
            degree=args.degree,
            alpha=0.02 if args.alpha is None else args.alpha,
            seed=rng_seed,
            pilot_records=args.pilot_records,
        )
        if not 0 < rc.degree < rc.n:
            raise UsageError(f"degree must satisfy 0 < degree < n, got degree={rc.degree}, n={rc.n}")
        data, truth = sample_recovery_dataset(rc, args.records)
        data.to_jsonl(out / "data.jsonl")
        _write_json(out / "truth.json", truth.to_dict())
        config = {**config_dict(rc), "records": args.records}
    else:
        variant = VARIANT_FLAGS[args.variant]
        inst = cmne_instance(variant, np.random.default_rng(rng_seed), stable=not args.unstable, n=args.n, m=args.m)
        doc = model_to_dict(inst.spec)
        doc.update(
            types=inst.types.tolist(),
            q_star=inst.q_star.tolist(),
            rates={"gamma": inst.rates.gamma, "lam": inst.rates.lam},
            variant=variant,
            abscissa=inst.abscissa,
        )
        _write_json(out / "game.json", doc)
        config = {"kind": "cmne", "variant": variant, "stable": not args.unstable, "n": args.n, "m": args.m}
    return {"config": config, "seed": rng_seed, "inputs": [], "outputs": [str(out)], "manifest": out / "manifest.json"}


# ---------------------------------------------------------------- train / predict


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            k=args.k,
            alpha=args.alpha,
            nu=args.nu,
            lambda_reg=args.lambda_reg,
            batch_size=args.batch_size,
            epochs=args.epochs,
            lr=args.lr,
            tau=args.tau,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> dict:
    data = Dataset.from_jsonl(args.data, m=args.m, one_based=args.one_based)
    cfg = _train_config(args)
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    results = train_runs(data, cfg, args.runs)
    if args.average:
        spec = average_runs([r.spec for r in results])
        history = []
    else:
        best = min(results, key=lambda r: r.final_loss)
        spec, history = best.spec, best.loss_history
    final = dataset_loss(spec, data, cfg)
    doc = model_to_dict(spec, cfg, history, final)
    doc["run_final_losses"] = [r.final_loss for r in results]
    doc["averaged"] = bool(args.average)
    _write_json(args.out, doc)
    print(json.dumps({"final_train_loss": final}))
    return {"config": asdict(cfg), "seed": cfg.seed, "inputs": [args.data], "outputs": [args.out], "extra": {"runs": args.runs}}


def cmd_predict(args) -> dict:
    spec, doc = load_model(args.model)
    data = Dataset.from_jsonl(args.data, m=spec.m, one_based=args.one_based)
    if data.d != spec.d or data.n != spec.n:
        raise ValueError(f"model expects n={spec.n}, d={spec.d} but dataset has n={data.n}, d={data.d}")
    cfg = TrainConfig(**doc["train_config"]) if doc.get("train_config") else TrainConfig()
    tape = forward_k_steps(spec, data.contexts, cfg)
    losses = batch_losses(tape.final, data.actions)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["record", "player"] + [f"p{a}" for a in range(spec.m)] + ["record_loss"])
        for rec in range(data.size):
            for i in range(spec.n):
                wr.writerow([rec, i] + [repr(float(v)) for v in tape.final[rec, i]] + [repr(float(losses[rec]))])
    mean = float(np.mean(losses)) if losses.size else float("nan")
    print(json.dumps({"mean_loss": mean, "records": data.size}))
    return {"config": asdict(cfg), "seed": None, "inputs": [args.model, args.data], "outputs": [args.out], "extra": {"mean_loss": mean}}


# ---------------------------------------------------------------- simulate / stability


def _perturbed_start(spec, variant, q_star, size, rng):
    n, m = q_star.shape
    basis = tangent_basis(m)
    dq = rng.normal(size=(n, m - 1)) @ basis.T
    dr = rng.normal(size=(n, m - 1)) @ basis.T
    scale = size / math.sqrt(float(np.sum(dq**2) + np.sum(dr**2)))
    return q_star + scale * dq, equilibrium_trackers(spec, variant, q_star) + scale * dr


def cmd_simulate(args) -> dict:
    spec, doc, types, q_star = _load_game(args.game)
    variant = VARIANT_FLAGS[args.variant]
    play, agg = variant.split("_")
    if types is None:
        types = compute_types(spec, _context(args, spec))
    rates = _rates(args, doc)
    tau = spec.tau if args.tau is None else args.tau
    tau = tau if play == "FP" else 0.0
    summary: dict = {"variant": variant}
    if args.ode:
        rng = np.random.default_rng(args.seed)
        if q_star is not None and args.perturb > 0:
            q0, r0 = _perturbed_start(spec, variant, q_star, args.perturb, rng)
        else:
            q0 = init_strategy(types)
            r0 = equilibrium_trackers(spec, variant, q0)
        log = integrate_ode(spec, variant, types, q0, r0, rates, args.horizon, args.step, tau)
        if q_star is not None:
            dist = np.sqrt(np.sum((log.q - q_star) ** 2, axis=(1, 2)))
            summary.update(initial_distance=float(dist[0]), terminal_distance=float(dist[-1]), max_distance=float(dist.max()))
    else:
        cfg = ProtocolConfig(play, agg, rates, tau=tau, steps=args.steps, seed=args.seed, tracker_step=args.tracker_step)
        log = run_dynamics(spec, None, cfg, types=types)
        summary.update(converged=log.converged, convergence_step=log.convergence_step)
    log.to_csv(args.out)
    print(json.dumps(summary))
    config = {"variant": variant, "gamma": rates.gamma, "lam": rates.lam, "tau": tau, "ode": args.ode}
    return {"config": config, "seed": args.seed, "inputs": [args.game], "outputs": [args.out], "extra": summary}


def _search_fixed_point(spec, variant, types, rates, tau):
    q0 = init_strategy(types)
    r0 = equilibrium_trackers(spec, variant, q0)
    log = integrate_ode(spec, variant, types, q0, r0, rates, horizon=500.0, step=0.05, tau=tau)
    q, r = log.q[-1], log.r[-1]
    dq, dr = ode_rhs(spec, variant, types, q, r, rates, tau)
    if max(np.abs(dq).max(), np.abs(dr).max()) > 1e-8:
        raise RuntimeError("no fixed point found: the ODE from the initial strategies did not settle by t=500")
    return q


def cmd_stability(args) -> dict:
    spec, doc, types, q_star = _load_game(args.game)
    variant = VARIANT_FLAGS[args.variant]
    if types is None:
        types = compute_types(spec, _context(args, spec))
    rates = _rates(args, doc)
    tau = spec.tau if args.tau is None else args.tau
    if q_star is None:
        q_star = _search_fixed_point(spec, variant, types, rates, tau)
    pre = check_preconditions(variant, spec, q_star, tau)
    mat = build_linearization(variant, spec, types, q_star, rates, tau)
    report = hurwitz_stable(mat, variant=variant, preconditions=pre)
    text = report.to_json() + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    print(report.verdict)
    print(" ".join(f"{e.real:+.6g}{e.imag:+.6g}j" for e in report.eigenvalues))
    config = {"variant": variant, "gamma": rates.gamma, "lam": rates.lam, "tau": tau}
    return {"config": config, "seed": None, "inputs": [args.game], "outputs": [args.out] if args.out else []}


# ---------------------------------------------------------------- recover


def cmd_recover(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.experiment:
        grid = tuple(int(v) for v in args.m_grid.split(","))
        cfg = RecoveryExperimentConfig(
            n=args.n,
            degree=args.degree,
            m_grid=grid,
            trials=args.trials,
            seed=args.seed,
            lambda_reg=None if args.lambda_reg in (None, "calibrated") else float(args.lambda_reg),
        )
        curve = recovery_experiment(cfg, method=args.method)
        curve.to_csv(out / "curve.csv")
        doc = {
            "lambda_reg": curve.lambda_reg,
            "c_min_pilot": curve.c_min_pilot,
            "spearman": curve.spearman,
            "rows": curve.rows,
            "trials": [asdict(t) for t in curve.trials],
        }
        _write_json(out / "report.json", doc)
        print(json.dumps({"rows": curve.rows, "spearman": curve.spearman}))
        return {"config": config_dict(cfg), "seed": args.seed, "inputs": [], "outputs": [str(out)], "manifest": out / "manifest.json"}

    if not args.data:
        raise UsageError("recover needs --data (or --experiment)")
    data = OneShotDataset.from_jsonl(args.data)
    w_star = None
    if args.truth:
        w_star = np.asarray(json.loads(Path(args.truth).read_text())["w"], dtype=float)
        if w_star.shape != (data.n, data.n):
            raise ValueError(f"truth W has shape {w_star.shape}, dataset has n={data.n}")
    reports = []
    if w_star is not None:
        for i in range(data.n):
            row = w_star[i, others(data.n, i)]
            if np.any(row):
                reports.append(check_assumptions(data, i, row, np.flatnonzero(row)))
    satisfied = all(r.satisfied for r in reports) if reports else None
    if args.strict and satisfied is not True:
        print("assumptions not satisfied (or no ground truth supplied)", file=sys.stderr)
        return {"exit": 1, "config": {}, "seed": None, "inputs": [args.data], "outputs": []}
    gamma = args.incoherence_gamma
    if gamma is None:
        gammas = [r.incoherence_gamma for r in reports if r.satisfied]
        gamma = min(min(gammas), 1.0) if gammas else 1.0
    if args.lambda_reg in (None, "auto"):
        lam = min_lambda(data.alpha, data.n, data.size, gamma)
    else:
        lam = float(args.lambda_reg)
    rep = recover_all(data, lam, w_star=w_star, method=args.method, with_pdw=w_star is not None)
    doc = rep.to_dict()
    doc.update(
        incoherence_gamma=gamma,
        assumptions_satisfied=satisfied,
        assumptions=[asdict(r) for r in reports],
        records=data.size,
        alpha=data.alpha,
    )
    _write_json(out / "report.json", doc)
    with open(out / "curve.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["M", "success_rate", "trials", "stderr"])
        if w_star is not None:
            wr.writerow([data.size, repr(float(rep.exact)), 1, repr(0.0)])
    print(json.dumps({"lambda_reg": lam, "exact": rep.exact if w_star is not None else None}))
    config = {"lambda_reg": lam, "method": args.method, "incoherence_gamma": gamma}
    return {"config": config, "seed": None, "inputs": [args.data] + ([args.truth] if args.truth else []), "outputs": [str(out)], "manifest": out / "manifest.json"}


# ---------------------------------------------------------------- export-graph


def influence_dot(spec: GameSpec, top_k: int, mode: str, labels=None) -> str:
    """DOT digraph with an edge ``j -> i`` for each selected incoming weight ``w_ij``."""
    if mode not in ("pos", "neg", "both"):
        raise ValueError(f"mode must be pos, neg or both, got {mode!r}")
    summaries = extract_influences(spec, top_k)
    labels = labels or [f"p{i}" for i in range(spec.n)]
    edges = []
    for s in summaries:
        if mode in ("pos", "both"):
            edges += [(j, s.player, v) for j, v in s.positive if v > 0]
        if mode in ("neg", "both"):
            edges += [(j, s.player, v) for j, v in s.negative if v < 0]
    edges = sorted(set(edges), key=lambda e: (e[1], e[0]))
    lines = ["digraph influence {"]
    lines += [f'  "{lab}";' for lab in labels]
    for j, i, v in edges:
        style = "solid" if v > 0 else "dashed"
        lines.append(f'  "{labels[j]}" -> "{labels[i]}" [label="{v:.3f}", style={style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_export_graph(args) -> dict:
    spec, _ = load_model(args.model)
    if not 1 <= args.top_k < spec.n:
        raise ValueError(f"--top-k must satisfy 1 <= top_k < n={spec.n}, got {args.top_k}")
    atomic_write_text(args.out, influence_dot(spec, args.top_k, args.mode))
    return {"config": {"top_k": args.top_k, "mode": args.mode}, "seed": None, "inputs": [args.model], "outputs": [args.out]}


# ---------------------------------------------------------------- eval-transfer


def _full_population(games, features: PlayerFeatures):
    ids = list(games[0].players)
    if any(list(g.players) != ids for g in games):
        raise ValueError("eval-transfer needs every record to list the same full player set in the same order")
    features.lookup(ids)
    return np.stack([g.context for g in games]), np.array([g.actions for g in games]), ids


def cmd_eval_transfer(args) -> dict:
    rng = np.random.default_rng(args.seed)
    if args.synthetic:
        teacher = transfer_teacher(rng, players=args.players, contexts=args.contexts, gamma_scale=args.teacher_gamma_scale)
        features, contexts, outcomes, ids = teacher.features, teacher.contexts, teacher.outcomes, teacher.features.ids
    else:
        if not (args.games and args.features):
            raise UsageError("eval-transfer needs --games and --features (or --synthetic)")
        features = PlayerFeatures.from_csv(args.features)
        contexts, outcomes, ids = _full_population(read_games(args.games), features)
    m = args.m if args.m is not None else int(outcomes.max()) + 1
    cfg = TransferConfig(k=args.k, alpha=args.alpha, d_z=args.d_z, epochs=args.epochs, lr=args.lr, seed=args.seed)
    rows = []
    for t in range(args.triplets):
        trip = make_split_triplet(contexts, outcomes, ids, rng, group=args.group)
        res = evaluate_triplet(trip, features, TransferConfig(**{**asdict(cfg), "seed": args.seed + t}), m)
        rows.append({"triplet": t, **res})
    keys = ["lag_B", "base_B", "lag_C", "base_C", "train_loss"]
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["triplet"] + keys)
        for r in rows:
            wr.writerow([r["triplet"]] + [repr(float(r[k])) for k in keys])
        wr.writerow(["mean"] + [repr(float(np.mean([r[k] for r in rows]))) for k in keys])
    means = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    print(json.dumps(means))
    return {"config": asdict(cfg), "seed": args.seed, "inputs": [p for p in (args.games, args.features) if p], "outputs": [args.out], "extra": means}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aggrogame", description="Latent aggregative games: learn, simulate, analyse.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a ground-truth game and dataset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--kind", choices=("kstep", "oneshot", "cmne"), default="kstep")
    s.add_argument("--n", type=int, required=True, help="number of players")
    s.add_argument("--m", type=int, default=3, help="number of actions")
    s.add_argument("--d", type=int, default=4, help="context dimension")
    s.add_argument("--degree", type=int, default=2, help="influencers per player")
    s.add_argument("--weight-min", type=float, default=0.5)
    s.add_argument("--weight-max", type=float, default=1.5)
    s.add_argument("--sign-mix", type=float, default=0.5, help="probability that a weight is negative")
    s.add_argument("--normalization", choices=("none", "stochastic", "doubly_stochastic"), default="none")
    s.add_argument("--theta-scale", type=float, default=1.0)
    s.add_argument("--tau", type=float, default=1.0)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--alpha", type=float, default=None, help="step size (0.1 for kstep, 0.02 for oneshot)")
    s.add_argument("--nu", choices=("identity", "zero"), default="identity")
    s.add_argument("--records", type=int, default=1000)
    s.add_argument("--pilot-records", type=int, default=400_000, help="oneshot: records used to calibrate lambda")
    s.add_argument("--variant", choices=sorted(VARIANT_FLAGS), default="gp-aa", help="cmne: dynamics variant")
    s.add_argument("--unstable", action="store_true", help="cmne: build an unstable rest point")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="fit a latent aggregative game to a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="model JSON path")
    t.add_argument("--m", type=int, default=None, help="number of actions (default: inferred)")
    t.add_argument("--one-based", action="store_true", help="actions in the file start at 1")
    t.add_argument("--k", type=int, default=5)
    t.add_argument("--alpha", type=float, default=0.1)
    t.add_argument("--lambda-reg", type=float, default=0.1)
    t.add_argument("--batch-size", type=int, default=200)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--nu", choices=("identity", "zero"), default="identity")
    t.add_argument("--tau", type=float, default=1.0)
    t.add_argument("--runs", type=int, default=1)
    t.add_argument("--average", action="store_true", help="average parameters over the runs")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="k-step strategies and per-record loss")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True, help="CSV path")
    pr.add_argument("--one-based", action="store_true")
    pr.set_defaults(func=cmd_predict)

    def dyn_flags(q):
        q.add_argument("--game", required=True, help="model/game JSON (may include types, q_star, rates)")
        q.add_argument("--variant", required=True, choices=sorted(VARIANT_FLAGS))
        q.add_argument("--gamma", type=float, default=None)
        q.add_argument("--lam", type=float, default=None)
        q.add_argument("--tau", type=float, default=None)
        q.add_argument("--context", default=None, help="comma-separated context (default zeros)")

    sm = sub.add_parser("simulate", help="run repeated play or its mean-field ODE")
    dyn_flags(sm)
    sm.add_argument("--out", required=True, help="trajectory CSV")
    sm.add_argument("--steps", type=int, default=1000)
    sm.add_argument("--tracker-step", type=float, default=None)
    sm.add_argument("--ode", action="store_true")
    sm.add_argument("--horizon", type=float, default=200.0)
    sm.add_argument("--step", type=float, default=0.05)
    sm.add_argument("--perturb", type=float, default=1e-3, help="ODE start offset from q_star when the game has one")
    sm.add_argument("--seed", type=int, default=0)
    sm.set_defaults(func=cmd_simulate)

    st = sub.add_parser("stability", help="linearize at a rest point and test Hurwitz stability")
    dyn_flags(st)
    st.add_argument("--out", default=None, help="report JSON path")
    st.set_defaults(func=cmd_stability)

    rc = sub.add_parser("recover", help="estimate the signed influence graph from one-shot play")
    rc.add_argument("--out", required=True, help="output directory")
    rc.add_argument("--data", default=None)
    rc.add_argument("--truth", default=None, help="ground-truth JSON with key w")
    rc.add_argument("--lambda-reg", default=None, help="float, 'auto' (data mode) or 'calibrated' (experiment mode)")
    rc.add_argument("--incoherence-gamma", type=float, default=None)
    rc.add_argument("--method", choices=("ista", "newton"), default="ista")
    rc.add_argument("--strict", action="store_true", help="fail when the design assumptions do not hold")
    rc.add_argument("--experiment", action="store_true", help="run the success-rate experiment instead")
    rc.add_argument("--n", type=int, default=10)
    rc.add_argument("--degree", type=int, default=2)
    rc.add_argument("--m-grid", default="20000,50000,100000,200000")
    rc.add_argument("--trials", type=int, default=100)
    rc.add_argument("--seed", type=int, default=0)
    rc.set_defaults(func=cmd_recover)

    eg = sub.add_parser("export-graph", help="write the top influences of a model as DOT")
    eg.add_argument("--model", required=True)
    eg.add_argument("--out", required=True)
    eg.add_argument("--top-k", type=int, default=2)
    eg.add_argument("--mode", choices=("pos", "neg", "both"), default="both")
    eg.set_defaults(func=cmd_export_graph)

    et = sub.add_parser("eval-transfer", help="transfer model vs per-player empirical baseline")
    et.add_argument("--out", required=True, help="comparison CSV")
    et.add_argument("--games", default=None, help="JSON Lines with the full player set per record")
    et.add_argument("--features", default=None, help="player feature CSV")
    et.add_argument("--synthetic", action="store_true", help="use a random transfer teacher")
    et.add_argument("--players", type=int, default=20)
    et.add_argument("--contexts", type=int, default=800)
    et.add_argument("--teacher-gamma-scale", type=float, default=100.0)
    et.add_argument("--m", type=int, default=None)
    et.add_argument("--triplets", type=int, default=10)
    et.add_argument("--group", type=int, default=5)
    et.add_argument("--k", type=int, default=5)
    et.add_argument("--alpha", type=float, default=0.01)
    et.add_argument("--d-z", type=int, default=16)
    et.add_argument("--epochs", type=int, default=300)
    et.add_argument("--lr", type=float, default=0.1)
    et.add_argument("--seed", type=int, default=0)
    et.set_defaults(func=cmd_eval_transfer)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if _threads is not None and not (_threads.isdigit() and int(_threads) > 0):
        print(f"aggrogame: AGGROGAME_THREADS must be a positive integer, got {_threads!r}", file=sys.stderr)
        return 2
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    start = time.perf_counter()
    try:
        info = args.func(args)
    except UsageError as exc:
        print(f"aggrogame {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except PreconditionError as exc:
        print(f"aggrogame {args.command}: precondition failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, RuntimeError, OSError) as exc:
        print(f"aggrogame {args.command}: error: {exc}", file=sys.stderr)
        return 1
    code = int(info.pop("exit", 0))
    outputs = [str(o) for o in info.get("outputs", [])]
    manifest = RunManifest(
        command=args.command,
        config=info.get("config", {}),
        seed=info.get("seed"),
        inputs=[str(i) for i in info.get("inputs", [])],
        outputs=outputs,
        argv=argv,
        wall_time_s=time.perf_counter() - start,
        extra=info.get("extra", {}),
    )
    target = info.get("manifest") or (_manifest_path(outputs[0]) if outputs else None)
    if target is not None:
        write_manifest(target, manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
