"""Command-line front end: ``solve``, ``train``, ``compare``, ``gradcheck``, ``eval``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from fgdqn import gradcheck as gc
from fgdqn import metrics as M
from fgdqn.config import PRESETS, RunConfig
from fgdqn.mdp import policy_iteration, q_value_iteration
from fgdqn.plots import line_plot_svg
from fgdqn.qnet import StateActionEncoder, StateEncoder, argmax_action, load_checkpoint, save_checkpoint
from fgdqn.trainers import train_off_policy, train_on_policy
from fgdqn.validation import ValidationError

HAMMING_STRIDE = 50
MOVING_WINDOW = 100


class CliError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--preset", choices=sorted(PRESETS), default=None,
                        help="built-in configuration used when --config is absent (default: forest)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V",
                        help="override a dotted config key, e.g. trainer.schedule.base=1e-3")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seeds", metavar="a,b,c", help="comma-separated seeds")
    common.add_argument("--parallel", type=int, default=1, metavar="N", help="worker processes (one seed each)")

    parser = argparse.ArgumentParser(prog="fgdqn", description="Full-gradient and semi-gradient DQN experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="exact optimal policy, V and Q* of a finite environment")
    sub.add_parser("train", parents=[common], help="train one algorithm for every seed")
    sub.add_parser("compare", parents=[common], help="train every listed algorithm and aggregate across seeds")
    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    g.add_argument("--probes", type=int, default=50)
    g.add_argument("--activation", default="gelu")
    g.add_argument("--qnet-threshold", type=float, default=1e-5)
    g.add_argument("--fgdqn-threshold", type=float, default=1e-4)
    g.add_argument("--corrupt", type=float, default=0.0, help="scale analytic gradients by 1+C (negative control)")
    e = sub.add_parser("eval", parents=[common], help="evaluate a saved checkpoint")
    e.add_argument("--checkpoint", required=True, metavar="PATH")
    e.add_argument("--episodes", type=int, default=10, help="greedy rollouts for continuous environments")
    return parser


def load_config(args) -> RunConfig:
    if args.config and args.preset:
        raise CliError("--config and --preset are mutually exclusive")
    cfg = RunConfig.load(args.config) if args.config else RunConfig.preset(args.preset or "forest")
    overrides = list(args.overrides)
    if args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise CliError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
        overrides.append("seeds=" + json.dumps(seeds))
    if args.out:
        overrides.append("out=" + json.dumps(args.out))
    return cfg.with_overrides(overrides)


# Workers -------------------------------------------------------------------


def run_seed(config_doc: dict, seed: int, algorithm: str | None = None):
    """Train one seed; returns ``(model, RunMetrics)``. Top level so worker processes can import it."""
    cfg = RunConfig.from_dict(config_doc)
    trainer = cfg.trainer_config(seed=seed, algorithm=algorithm)
    doc = dict(config_doc, trainer=trainer.to_dict())
    env = cfg.build_environment()
    if cfg.discrete:
        return train_off_policy(env, trainer, cfg.budget, cfg.topology(), config_doc=doc)
    return train_on_policy(env, trainer, cfg.budget, topology=cfg.topology(), config_doc=doc)


def _run_all(cfg: RunConfig, jobs, parallel: int):
    doc = cfg.to_dict()
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(run_seed, doc, seed, alg) for seed, alg in jobs]
            return [f.result() for f in futures]
    return [run_seed(doc, seed, alg) for seed, alg in jobs]


def _write_run(out: Path, seed: int, run, model, cfg: RunConfig):
    (out / f"run_{seed}.csv").write_text(run.to_csv(episodic=not cfg.discrete))
    meta = {"seed": seed, "config_hash": run.config_hash, "environment": cfg.environment}
    if isinstance(model, np.ndarray):
        (out / f"checkpoint_{seed}.json").write_text(json.dumps({"q_table": model.tolist(), "meta": meta}))
    else:
        save_checkpoint(model, out / f"checkpoint_{seed}.json", meta)


# Commands ------------------------------------------------------------------


def cmd_solve(cfg: RunConfig, args) -> int:
    if not cfg.discrete:
        raise CliError("solve supports finite environments only; cartpole has a continuous state space")
    mdp = cfg.build_environment()
    policy, v = policy_iteration(mdp)
    q = q_value_iteration(mdp)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"policy": policy.tolist(), "V": v.tolist(), "Q": q.tolist(), "discount": mdp.discount}
    (out / "solution.json").write_text(json.dumps(doc, indent=2))
    print(json.dumps(policy.tolist()))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    results = _run_all(cfg, [(s, None) for s in cfg.seeds], args.parallel)
    summaries = []
    for seed, (model, run) in zip(cfg.seeds, results):
        _write_run(out, seed, run, model, cfg)
        summaries.append(run.summary())
        print(json.dumps(run.summary(), sort_keys=True))
    (out / "summary.json").write_text(M.summary_json(summaries, cfg.to_dict()))
    diverged = [s["seed"] for s in summaries if s["diverged"]]
    if diverged:
        print(f"error: training diverged (non-finite parameters) for seeds {diverged}", file=sys.stderr)
        return 3
    return 0


def _comparison_series(cfg: RunConfig):
    """(metric name, RunMetrics extractor, x stride, y label) tuples for the figures."""
    if cfg.discrete:
        return [
            ("running_bellman_error", lambda r: M.running_mean(r.dqn_bellman_error), 1, "running Bellman error"),
            ("true_bellman_error", lambda r: r.true_bellman_error, 1, "true Bellman error"),
            ("hamming_distance", lambda r: r.hamming_distance, HAMMING_STRIDE, "Hamming distance to optimal"),
        ]
    return [
        ("moving_average_reward", lambda r: M.moving_average(r.episode_reward, MOVING_WINDOW), 1,
         f"reward, {MOVING_WINDOW}-episode moving average"),
        ("episode_reward", lambda r: r.episode_reward, 1, "episode reward"),
        ("bellman_error", lambda r: r.dqn_bellman_error, 1, "sampled Bellman error"),
    ]


def cmd_compare(cfg: RunConfig, args) -> int:
    if len(cfg.seeds) < 2:
        raise CliError("compare needs at least 2 seeds per algorithm")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    jobs = [(s, alg) for alg in cfg.algorithms for s in cfg.seeds]
    results = _run_all(cfg, jobs, args.parallel)
    runs: dict = {}
    for (seed, alg), (model, run) in zip(jobs, results):
        sub = out / alg
        sub.mkdir(exist_ok=True)
        _write_run(sub, seed, run, model, cfg)
        runs.setdefault(alg, []).append(run)
    status = 0
    xlabel = "iteration" if cfg.discrete else "episode"
    summary = {}
    for name, extract, stride, ylabel in _comparison_series(cfg):
        rows = ["iter,alg,mean,ci_low,ci_high"]
        plot = {}
        for alg, alg_runs in runs.items():
            if any(r.diverged for r in alg_runs):
                status = 3
            agg = M.aggregate([extract(r) for r in alg_runs])
            x = np.arange(1, agg.mean.size + 1)[::stride]
            mean, lo, hi = agg.mean[::stride], agg.ci_low[::stride], agg.ci_high[::stride]
            rows += [f"{i},{alg},{m!r},{a!r},{b!r}" for i, m, a, b in
                     zip(x.tolist(), mean.tolist(), lo.tolist(), hi.tolist())]
            plot[alg] = (x, mean, lo, hi)
            if agg.mean.size:
                summary.setdefault(alg, {})[f"final_mean_{name}"] = float(agg.mean[-1])
        (out / f"compare_{name}.csv").write_text("\n".join(rows) + "\n")
        (out / f"compare_{name}.svg").write_text(line_plot_svg(plot, name.replace("_", " "), xlabel, ylabel))
    for alg, alg_runs in runs.items():
        if cfg.discrete:
            finals = [r.hamming_distance[-1] for r in alg_runs if r.hamming_distance]
            summary.setdefault(alg, {})["final_hamming_median"] = float(np.median(finals)) if finals else math.nan
            summary[alg]["final_hamming_variance"] = float(np.var(finals, ddof=1)) if len(finals) > 1 else math.nan
        summary.setdefault(alg, {})["diverged_seeds"] = [r.seed for r in alg_runs if r.diverged]
    (out / "compare_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, indent=2, sort_keys=True))
    if status:
        print("error: at least one run diverged", file=sys.stderr)
    return status


def _format_worst(result: gc.ProbeResult) -> str:
    parts = [f"layer {layer}: {kind}[{i}] analytic={a:.6e} numeric={n:.6e} err={e:.2e}"
             for layer, (i, kind, a, n, e) in sorted(result.worst.items())]
    return "; ".join(parts)


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    seed = cfg.seeds[0]
    suites = gc.run_suite(args.probes, seed=seed, activation=args.activation, corrupt=args.corrupt)
    thresholds = {"qnet": args.qnet_threshold, "fgdqn": args.fgdqn_threshold}
    status = 0
    for name, results in suites.items():
        worst = max(results, key=lambda r: r.max_rel_error)
        ok = worst.max_rel_error < thresholds[name]
        status |= 0 if ok else 4
        print(f"{name}: probes={len(results)} max_rel_error={worst.max_rel_error:.3e} "
              f"threshold={thresholds[name]:.0e} {'PASS' if ok else 'FAIL'}")
        print(f"  worst probe per layer: {_format_worst(worst)}")
    return status


def cmd_eval(cfg: RunConfig, args) -> int:
    path = Path(args.checkpoint)
    if not path.exists():
        raise CliError(f"checkpoint {path} does not exist")
    doc = json.loads(path.read_text())
    if cfg.discrete:
        mdp = cfg.build_environment()
        if "q_table" in doc:
            q = np.asarray(doc["q_table"], dtype=float)
        else:
            net, _ = load_checkpoint(path)
            q = StateActionEncoder(mdp.num_states, mdp.num_actions).q_values(net, np.arange(mdp.num_states))
        if q.shape != (mdp.num_states, mdp.num_actions):
            raise CliError(f"checkpoint shape {q.shape} does not match the environment")
        policy = np.argmax(q, axis=1)
        optimal, _ = policy_iteration(mdp)
        report = {"policy": policy.tolist(), "optimal_policy": optimal.tolist(),
                  "hamming_distance": M.hamming_distance(policy, optimal),
                  "true_bellman_error": M.true_bellman_error_table(q, mdp)}
    else:
        if "q_table" in doc:
            raise CliError("tabular checkpoints cannot drive a continuous environment")
        net, _ = load_checkpoint(path)
        env = cfg.build_environment()
        env.rng = np.random.default_rng(cfg.seeds[0])
        encoder = StateEncoder(env.state_dim, env.num_actions)
        rewards = []
        for _ in range(args.episodes):
            state, total, done = env.reset(), 0.0, False
            while not done:
                result = env.step(argmax_action(net, encoder, np.asarray(state))[0])
                total += result.reward
                state, done = result.next_state, result.terminal
            rewards.append(total)
        report = {"episodes": args.episodes, "mean_reward": float(np.mean(rewards)), "rewards": rewards}
    print(json.dumps(report))
    return 0


COMMANDS = {"solve": cmd_solve, "train": cmd_train, "compare": cmd_compare, "gradcheck": cmd_gradcheck,
            "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.parallel < 1:
            raise CliError("--parallel must be >= 1")
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except (CliError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
