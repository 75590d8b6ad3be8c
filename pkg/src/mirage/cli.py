"""Command-line entry point: `mirage <subcommand> [--config F] [--seed N] [--out DIR] ...`."""
from __future__ import annotations

import os

_THREADS = os.environ.get("MIRAGE_THREADS")
if _THREADS:
    # cap BLAS pools before numpy loads
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np


def _threads() -> int:
    if not _THREADS:
        return 1
    n = int(_THREADS)
    if n < 1:
        raise ValueError("MIRAGE_THREADS must be a positive integer")
    return n


def _load_trace(args, cfg):
    from .trace import parse_trace
    nodes = args.nodes if args.nodes is not None else cfg.synth.node_count
    return parse_trace(args.trace, nodes)


def _range(args, trace) -> tuple[float, float]:
    lo, hi = trace.span
    t0 = lo if args.start is None else args.start * 3600
    t1 = hi if args.end is None else args.end * 3600
    if t1 <= t0:
        raise ValueError("--end must come after --start")
    return float(t0), float(t1)


# ---------------------------------------------------------------------- subcommands

def cmd_clean(args, cfg, out: Path):
    from .trace import clean_trace, parse_trace, write_trace
    raw = parse_trace(args.input, args.nodes if args.nodes is not None else cfg.synth.node_count)
    cleaned = clean_trace(raw)
    dest = out / "trace.csv"
    write_trace(cleaned, dest)
    print(f"{len(raw)} records in, {len(cleaned)} out -> {dest}")


def cmd_synth(args, cfg, out: Path):
    from .trace import diurnal_trace, steady_trace, synth_trace, write_trace
    if args.kind == "poisson":
        params = replace(cfg.synth, seed=args.seed if args.seed is not None else cfg.synth.seed)
        if args.days is not None:
            params = replace(params, duration=args.days * 86400)
        trace = synth_trace(params)
    elif args.kind == "diurnal":
        trace = diurnal_trace(args.days or 60, node_count=args.nodes or 16, busy_hours=args.busy_hours,
                              waves=args.waves)
    else:
        trace = steady_trace(args.days or 30, node_count=args.nodes or 64)
    dest = out / "trace.csv"
    write_trace(trace, dest)
    print(json.dumps({**trace.summary(), "path": str(dest)}))


def cmd_simulate(args, cfg, out: Path):
    from .simulator import Simulator
    trace = _load_trace(args, cfg)
    t = time.perf_counter()
    sim = Simulator(trace, keep_history=True)
    sim.run_to_completion()
    elapsed = time.perf_counter() - t
    dest = out / "schedule.csv"
    with dest.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("job_id", "submit", "start", "end", "wait_s"))
        for jid, (s, st, e) in sorted(sim.history.items(), key=lambda kv: (kv[1][1], kv[0])):
            w.writerow((jid, int(s), int(st), int(e), int(st - s)))
    waits = np.array(sim.wait_log) / 3600 if sim.wait_log else np.zeros(1)
    print(json.dumps({"jobs": len(sim.history), "mean_wait_h": float(waits.mean()),
                      "max_wait_h": float(waits.max()), "sim_seconds": elapsed, "path": str(dest)}))


def cmd_collect(args, cfg, out: Path):
    from .harness import PairSpec
    from .rl.collect import collect_offline_samples
    trace = _load_trace(args, cfg)
    t0, t1 = _range(args, trace)
    ev = cfg.eval
    exps = collect_offline_samples(trace, t0, t1, ev.pair, args.starts, seed=args.seed or 0, chain=args.chain,
                                   warmup=ev.warmup, cadence=ev.cadence, k=ev.k, reward=cfg.reward)
    if not exps:
        raise ValueError("no samples collected; widen the range")
    dest = out / "samples.npz"
    np.savez(dest, states=np.stack([e.state for e in exps]), rewards=np.array([e.reward for e in exps]),
             times=np.array([e.time for e in exps]), k=ev.k)
    print(f"{len(exps)} samples -> {dest}")


def _load_samples(path):
    from .rl.replay import Experience
    data = np.load(path)
    return [Experience(s, float(s[-1]), float(r), True, time=float(t))
            for s, r, t in zip(data["states"], data["rewards"], data["times"])], int(data["k"])


def _new_or_loaded(args, cfg, norm=None):
    from .rl.network import init_network, load_model
    if getattr(args, "model", None):
        return load_model(args.model)
    return init_network(cfg.network, seed=args.seed or 0, norm=norm)


def cmd_pretrain(args, cfg, out: Path):
    from .encoder import NormStats
    from .rl.network import save_model
    from .rl.train import pretrain_offline
    exps, k = _load_samples(args.samples)
    if k != cfg.network.k:
        raise ValueError(f"samples were collected with k={k} but [network] k={cfg.network.k}")
    norm = NormStats.fit(np.stack([e.state[:-1] for e in exps]).reshape(-1, cfg.network.m))
    net = _new_or_loaded(args, cfg, norm)
    losses = pretrain_offline(net, exps, args.epochs or cfg.train.epochs,
                              replace(cfg.train, seed=args.seed or cfg.train.seed))
    save_model(net, out / "model.bin")
    (out / "pretrain_loss.csv").write_text("epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(losses)))
    print(f"pretrained {len(losses)} epochs, final loss {losses[-1]:.4g} -> {out / 'model.bin'}")


def _env(args, cfg):
    from .rl.collect import ClusterEnv
    trace = _load_trace(args, cfg)
    t0, t1 = _range(args, trace)
    return ClusterEnv(trace, t0, t1, cfg.eval, cfg.reward)


def _write_log(log, path: Path):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("episode", "steps", "reward", "epsilon", "loss", "submitted_at_step"))
        for e in log:
            w.writerow((e.episode, e.steps, repr(e.reward), repr(e.epsilon), repr(e.loss), e.submitted_at_step))


def cmd_train_dqn(args, cfg, out: Path):
    from .rl.network import save_model
    from .rl.train import train_dqn_online
    net = _new_or_loaded(args, cfg)
    tcfg = replace(cfg.train, seed=args.seed or cfg.train.seed)
    log = train_dqn_online(net, _env(args, cfg), args.episodes, tcfg, cfg.reward)
    save_model(net, out / "model.bin")
    _write_log(log, out / "dqn_log.csv")
    print(f"{len(log)} episodes, mean reward {np.mean([e.reward for e in log]):.3f} -> {out / 'model.bin'}")


def cmd_train_pg(args, cfg, out: Path):
    from .rl.network import save_model
    from .rl.train import train_pg_online
    net = _new_or_loaded(args, cfg)
    tcfg = replace(cfg.train, seed=args.seed or cfg.train.seed)
    log = train_pg_online(net, _env(args, cfg), args.updates, tcfg)
    save_model(net, out / "model.bin")
    _write_log(log, out / "pg_log.csv")
    print(f"{len(log)} episodes, mean reward {np.mean([e.reward for e in log]):.3f} -> {out / 'model.bin'}")


def cmd_fit_trees(args, cfg, out: Path):
    from .harness import collect_wait_samples
    from .policies import TreeConfig, fit_tree_ensemble, save_trees
    trace = _load_trace(args, cfg)
    t0, t1 = _range(args, trace)
    X, y = collect_wait_samples(trace, t0, t1, args.samples, cfg.eval.pair, seed=args.seed or 0,
                                warmup=cfg.eval.warmup)
    model = fit_tree_ensemble((X, y), TreeConfig(kind=args.kind, n_trees=args.trees, depth=args.depth,
                                                 learning_rate=args.lr, seed=args.seed or 0))
    save_trees(model, out / "trees.txt")
    print(f"fit {len(model.trees)} {args.kind} trees on {len(y)} samples -> {out / 'trees.txt'}")


def _policy(spec: str):
    from .harness import AvgPolicy, PredictorPolicy, ReactivePolicy
    from .policies import load_trees
    from .rl.collect import DQNPolicy, PGPolicy
    from .rl.network import load_model
    kind, _, path = spec.partition(":")
    if kind == "reactive":
        return "reactive", ReactivePolicy()
    if kind == "avg":
        return "avg", AvgPolicy()
    if kind not in ("dqn", "pg", "trees"):
        raise ValueError(f"unknown policy {kind!r}")
    if not path:
        raise ValueError(f"policy {kind!r} needs a file: {kind}:PATH")
    if kind == "dqn":
        return "dqn", DQNPolicy(load_model(path))
    if kind == "pg":
        return "pg", PGPolicy(load_model(path))
    return "trees", PredictorPolicy(load_trees(path))


def cmd_evaluate(args, cfg, out: Path):
    from .harness import emit_report, evaluate, sample_plans
    trace = _load_trace(args, cfg)
    t0, t1 = _range(args, trace)
    policies = dict(_policy(s) for s in args.policies.split(","))
    seed = args.seed or 0
    plans = sample_plans(trace, t0, t1, args.episodes or cfg.eval.episodes, seed, cfg.eval)
    report = evaluate(policies, plans, seed=seed, workers=_threads())
    paths = emit_report(report, out)
    print(json.dumps({p: {c: v for c, v in d.items()} for p, d in report.aggregates().items()}, indent=1))
    print(f"rows -> {paths['rows']}")


def cmd_report(args, cfg, out: Path):
    from .harness import emit_report, read_rows
    paths = emit_report(read_rows(args.rows), out)
    print(f"summary -> {paths['summary']}, cdf -> {paths['cdf']}")


# ---------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [synth] [reward] [network] [train] [eval] sections")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default=".", help="output directory (created if missing)")

    p = argparse.ArgumentParser(prog="mirage", parents=[common],
                                description="Proactive submission of chained batch jobs.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(fn=fn)
        return sp

    def trace_args(sp, ranged=True):
        sp.add_argument("--trace", required=True, help="job trace CSV")
        sp.add_argument("--nodes", type=int, help="cluster node count (default: [synth] node_count)")
        if ranged:
            sp.add_argument("--start", type=float, help="range start, hours from time 0")
            sp.add_argument("--end", type=float, help="range end, hours from time 0")

    sp = add("clean", cmd_clean, "drop oversize jobs and merge sub-job records")
    sp.add_argument("--input", required=True)
    sp.add_argument("--nodes", type=int)

    sp = add("synth", cmd_synth, "write a synthetic trace")
    sp.add_argument("--kind", choices=("poisson", "diurnal", "steady"), default="poisson")
    sp.add_argument("--days", type=int)
    sp.add_argument("--nodes", type=int)
    sp.add_argument("--busy-hours", type=float, default=20.0)
    sp.add_argument("--waves", type=int, default=20)

    sp = add("simulate", cmd_simulate, "replay a trace and write the schedule")
    trace_args(sp, ranged=False)

    sp = add("collect", cmd_collect, "branch-sample successor submissions for pretraining")
    trace_args(sp)
    sp.add_argument("--starts", type=int, default=50)
    sp.add_argument("--chain", type=int, default=2)

    sp = add("pretrain", cmd_pretrain, "supervised V-head pretraining on collected samples")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--model", help="start from this model file")
    sp.add_argument("--epochs", type=int)

    sp = add("train-dqn", cmd_train_dqn, "online DQN training")
    trace_args(sp)
    sp.add_argument("--model")
    sp.add_argument("--episodes", type=int, default=500)

    sp = add("train-pg", cmd_train_pg, "online policy-gradient training")
    trace_args(sp)
    sp.add_argument("--model")
    sp.add_argument("--updates", type=int, default=100)

    sp = add("fit-trees", cmd_fit_trees, "fit a tree-ensemble wait predictor")
    trace_args(sp)
    sp.add_argument("--samples", type=int, default=500)
    sp.add_argument("--kind", choices=("boosted", "bagged"), default="boosted")
    sp.add_argument("--trees", type=int, default=50)
    sp.add_argument("--depth", type=int, default=4)
    sp.add_argument("--lr", type=float, default=0.1)

    sp = add("evaluate", cmd_evaluate, "paired evaluation of policies")
    trace_args(sp)
    sp.add_argument("--policies", default="reactive,avg",
                    help="comma list: reactive, avg, dqn:MODEL, pg:MODEL, trees:FILE")
    sp.add_argument("--episodes", type=int)

    sp = add("report", cmd_report, "rebuild summary and CDF files from a rows file")
    sp.add_argument("--rows", required=True)
    return p


def main(argv=None) -> int:
    from .config import load_config
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        args.fn(args, cfg, out)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"mirage {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
