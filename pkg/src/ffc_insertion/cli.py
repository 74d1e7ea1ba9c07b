"""Command line entry point: ``ffc-insertion {run,synth,train,eval-matrix,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .belief import StatusSpace, save_matrix
from .harness import (
    PRESETS,
    RunConfig,
    compute_metrics,
    read_trials,
    run_experiment,
    summarize,
)
from .perception import (
    TrainConfig,
    accuracy,
    estimate_confusion,
    generate_dataset,
    load_dataset,
    load_model,
    position_grid,
    save_dataset,
    save_model,
    stratified_split,
    train_classifier,
)
from .sim import EnvConfig, TrajectoryParams

log = logging.getLogger("ffc_insertion")

SENSOR_FLAGS = {"matrix": "matrix_sampled", "trajectory": "trajectory_classified"}


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then ``--preset``, then ``--config`` file, then explicit flags."""
    doc = RunConfig().to_dict()
    if args.preset:
        doc = _deep_merge(doc, PRESETS[args.preset])
    if args.config:
        with open(args.config) as fh:
            doc = _deep_merge(doc, json.load(fh))
    flags = {
        "mode": args.mode,
        "trials": args.trials,
        "master_seed": args.seed,
        "offset_sampling": args.offset_sampling,
        "out_dir": args.out,
        "model_path": args.model,
        "alpha": args.alpha,
        "workers": args.workers,
    }
    doc = _deep_merge(doc, {k: v for k, v in flags.items() if v is not None})
    ctrl = {"gamma_target": args.gamma_target, "max_iterations": args.max_iters, "on_impossible": args.on_impossible}
    doc["controller"] = _deep_merge(doc["controller"], {k: v for k, v in ctrl.items() if v is not None})
    if args.sensor:
        doc["env"]["sensor_mode"] = SENSOR_FLAGS[args.sensor]
    if args.matrix:
        if args.matrix in ("table2", "estimated"):
            doc["matrix_source"] = args.matrix
        else:
            doc["matrix_source"], doc["matrix_path"] = "file", args.matrix
    return RunConfig.from_dict(doc)


def cmd_run(args) -> int:
    cfg = build_run_config(args)
    results = run_experiment(cfg)
    for arm, res in results.items():
        s = res.summary
        c = s["counts"]
        print(
            f"{arm:>10}: trials={s['trials']} success={c['stopped_success']} "
            f"wrong_stop={c['stopped_failure']} max_iters={c['max_iters_reached']} "
            f"success_rate={s['success_rate']:.4f}"
        )
    if cfg.out_dir:
        print(f"outputs written to {cfg.out_dir}")
    return 0


def _env_and_params(args) -> tuple[EnvConfig, TrajectoryParams]:
    env = EnvConfig(StatusSpace(args.n, args.delta))
    params = TrajectoryParams(
        T=args.T, A_x=args.a_x, c_y=args.c_y, m0_mm=args.m0, c_z=args.c_z, noise_sigma=args.noise
    )
    return env, params


def cmd_synth(args) -> int:
    env, params = _env_and_params(args)
    rng = np.random.default_rng(args.seed)
    data = generate_dataset(env, params, position_grid(env, args.step), args.reps, rng)
    manifest = save_dataset(data, args.out)
    print(f"wrote {len(data)} trajectories, manifest {manifest}")
    return 0


def _split(args, data):
    if args.test_fraction >= 1.0:
        return data, data
    return stratified_split(data, args.test_fraction, np.random.default_rng(args.seed))


def cmd_train(args) -> int:
    data = load_dataset(args.data)
    if len(data) == 0:
        raise ValueError(f"{args.data}: dataset is empty")
    n = max(abs(s) for s in data.labels) if args.n is None else args.n
    train, test = _split(args, data)
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, l2_penalty=args.l2, seed=args.seed)
    model = train_classifier(train, cfg, StatusSpace(n, args.delta))
    save_model(model, args.out)
    msg = f"train accuracy {accuracy(model, train):.4f}"
    if len(test) and test is not train:
        msg += f", held-out accuracy {accuracy(model, test):.4f}"
    print(f"{msg}; model written to {args.out}")
    return 0


def cmd_eval_matrix(args) -> int:
    model = load_model(args.model)
    data = load_dataset(args.data)
    _, heldout = _split(args, data)
    m = estimate_confusion(model, heldout, args.alpha)
    save_matrix(m, args.out)
    labels = m.space.labels
    print("true\\z " + " ".join(f"{lab:>7}" for lab in labels))
    for s, row in zip(labels, m.rows):
        print(f"{s:>6} " + " ".join(f"{p:7.4f}" for p in row))
    print(f"matrix written to {args.out}")
    return 0


def cmd_report(args) -> int:
    path = Path(args.trials)
    if path.is_dir():
        path = path / "trials.jsonl"
    logs = read_trials(path)
    if not logs:
        raise ValueError(f"{path}: no trials")
    arm = logs[0].mode
    metrics = compute_metrics(logs)
    summary = summarize(logs, arm)
    out = Path(args.out) if args.out else path.parent
    out.mkdir(parents=True, exist_ok=True)
    metrics.to_csv(out / "metrics.csv")
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"{arm}: {summary['counts']}; metrics written to {out / 'metrics.csv'}")
    return 0


def _add_geometry(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=3, help="number of error regions per side")
    p.add_argument("--delta", type=float, default=0.5, help="clearance / region width in mm")


def _add_split(p: argparse.ArgumentParser) -> None:
    p.add_argument("--test-fraction", type=float, default=0.3, help="held-out share per region (>=1 uses all data)")
    p.add_argument("--seed", type=int, default=0)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ffc-insertion", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte-Carlo insertion campaign")
    run.add_argument("--preset", choices=sorted(PRESETS))
    run.add_argument("--config", help="RunConfig JSON; flags override it")
    run.add_argument("--mode", choices=["memory", "memoryless", "both"])
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--gamma-target", type=float)
    run.add_argument("--max-iters", type=int)
    run.add_argument("--on-impossible", choices=["reset_uniform", "abort"])
    run.add_argument("--matrix", help="matrix JSON path, or 'table2' / 'estimated'")
    run.add_argument("--model", help="classifier JSON (trajectory sensing, estimated matrix)")
    run.add_argument("--alpha", type=float, help="smoothing for an estimated matrix")
    run.add_argument("--sensor", choices=sorted(SENSOR_FLAGS))
    run.add_argument("--offset-sampling", choices=["uniform", "stratified"])
    run.add_argument("--workers", type=int)
    run.add_argument("--out")
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="generate a labeled trajectory dataset")
    _add_geometry(synth)
    d = TrajectoryParams()
    synth.add_argument("--step", type=float, default=0.05, help="grid spacing of offsets in mm")
    synth.add_argument("--reps", type=int, default=50)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--T", type=int, default=d.T)
    synth.add_argument("--a-x", type=float, default=d.A_x)
    synth.add_argument("--c-y", type=float, default=d.c_y)
    synth.add_argument("--m0", type=float, default=d.m0_mm)
    synth.add_argument("--c-z", type=float, default=d.c_z)
    synth.add_argument("--noise", type=float, default=d.noise_sigma)
    synth.add_argument("--out", required=True, help="output directory")
    synth.set_defaults(func=cmd_synth)

    train = sub.add_parser("train", help="fit the softmax classifier")
    train.add_argument("--data", required=True, help="dataset manifest or directory")
    train.add_argument("--n", type=int, default=None, help="regions per side (default: from labels)")
    train.add_argument("--delta", type=float, default=0.5)
    _add_split(train)
    t = TrainConfig()
    train.add_argument("--lr", type=float, default=t.learning_rate)
    train.add_argument("--epochs", type=int, default=t.epochs)
    train.add_argument("--l2", type=float, default=t.l2_penalty)
    train.add_argument("--out", required=True, help="model JSON path")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval-matrix", help="held-out confusion matrix of a classifier")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    _add_split(ev)
    ev.add_argument("--alpha", type=float, default=1.0)
    ev.add_argument("--out", required=True, help="matrix JSON path")
    ev.set_defaults(func=cmd_eval_matrix)

    rep = sub.add_parser("report", help="recompute metrics from trials.jsonl")
    rep.add_argument("trials", help="trials.jsonl or the directory holding it")
    rep.add_argument("--out", help="output directory (default: next to trials.jsonl)")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
