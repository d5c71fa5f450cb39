"""Command-line interface: ``dpcs <command> [options]``.

Commands
  init-config  write a config file with every default filled in
  synth        write a synthetic scenario in the scenario text format
  train        train one algorithm; writes the log, timings and agents
  eval         evaluate a checkpoint against unscheduled service
  compare      train dpcs, cddpg and dddpg on one scenario and tabulate
  bench        decision latency versus number of households

Exit status: 0 when every requested artifact was written, 2 for
configuration or input errors, 3 when training diverged, 1 otherwise.

Output files (CSV columns / JSON keys)
  train_log.csv      episode, sigma, reward_mean, reward_h<i>..., critic_loss,
                     actor_grad_norm, update_rounds (undiscounted episode returns)
  timing.csv         episode, seconds
  metrics.csv/json   profile, peak (kW), mean (kW), Var, PAR, Cost
  schedule_<id>.csv  slot, hour, requested_kw, shiftable_kw, nonshiftable_kw, total_kw
  rtp.csv            slot, hour, load_kw, rtp
  evaluation.json    fulfilled_fraction, rollouts, unfulfilled_kwh, returns, best_response
  compare.csv        metric, original, dpcs, cddpg, dddpg (load statistics + latency_s)
  rewards.csv        household, algorithm, episode_1, final_episode
  reward_curves.csv  episode, <algorithm>... (moving average of reward_mean)
  scaling.csv        N, input widths, latencies (s), actor multiply-accumulates
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as cfgmod
from . import data, trainer
from .agents import AgentSet, Algorithm
from .errors import ConfigurationError, DPCSError
from .rewards import LoadStats

ALGORITHMS = tuple(a.value for a in Algorithm)


# -- helpers -------------------------------------------------------------------------
def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2) + "\n")


def _load_config(args) -> tuple:
    """Resolved config plus the verbatim text of the file it came from (if any)."""
    text = None
    if args.config:
        cfg = cfgmod.load(args.config)
        text = Path(args.config).read_text()
    else:
        cfg = cfgmod.ExperimentConfig(output_dir=cfgmod.default_output_dir())
    sc = cfg.scenario
    if getattr(args, "synthetic", None) is not None:
        sc = replace(sc, source="synthetic", households=args.synthetic, path=None)
    if getattr(args, "scenario", None):
        sc = cfgmod.ScenarioSource(source="csv" if args.scenario.endswith(".csv") else "file", path=args.scenario,
                                   T=sc.T, slot_minutes=sc.slot_minutes, start=sc.start)
    tr = cfg.train
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "episodes", None) is not None:
        overrides["episodes"] = args.episodes
    if getattr(args, "algorithm", None):
        overrides["algorithm"] = args.algorithm
    if overrides:
        try:
            tr = replace(tr, **overrides)
        except ConfigurationError as exc:
            raise ConfigurationError(f"command-line override: {exc}") from None
    out = args.out or cfg.output_dir
    return replace(cfg, scenario=sc, train=tr, output_dir=str(out)), text


def _prepare_out(cfg: cfgmod.ExperimentConfig, text: Optional[str]) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if text is not None:
        (out / "config.json").write_text(text)
    (out / "config.resolved.json").write_text(cfg.dumps())
    return out


def _print_episode(rec: dict) -> None:
    loss = rec["critic_loss"]
    loss_s = "-" if loss is None else f"{loss:.4g}"
    per = " ".join(f"{rec[k]:.2f}" for k in rec if k.startswith("reward_h"))
    print(f"episode {rec['episode']:5d}  sigma {rec['sigma']:.3f}  reward {rec['reward_mean']:9.3f}  "
          f"[{per}]  critic_loss {loss_s}  rounds {rec['update_rounds']}", flush=True)


def _hours(scenario, T: int) -> list:
    return [round(t * scenario.slot_minutes / 60.0, 6) for t in range(T)]


def _export_metrics(out: Path, ev: trainer.Evaluation, formats) -> None:
    rows = [("original", ev.original), ("scheduled", ev.scheduled)]
    if "csv" in formats:
        _write_csv(out / "metrics.csv", ["profile", *LoadStats.COLUMNS],
                   [[name, *s.as_row().values()] for name, s in rows])
    if "json" in formats:
        _write_json(out / "metrics.json", {name: s.as_row() for name, s in rows})


def _export_schedules(out: Path, scenario, ev: trainer.Evaluation) -> None:
    r = ev.scheduled_rollout
    hours = _hours(scenario, scenario.T)
    for i, h in enumerate(scenario.households):
        _write_csv(out / f"schedule_{h.id}.csv",
                   ["slot", "hour", "requested_kw", "shiftable_kw", "nonshiftable_kw", "total_kw"],
                   [[t + 1, hours[t], float(r.requested_kw[t, i]), float(r.shiftable_kw[t, i]),
                     float(r.nonshiftable_kw[t, i]), float(r.household_kw[t, i])] for t in range(scenario.T)])
    _write_csv(out / "rtp.csv", ["slot", "hour", "load_kw", "rtp"],
               [[t + 1, hours[t], float(r.loads[t]), float(r.prices[t])] for t in range(scenario.T)])


def _evaluate_and_export(out: Path, agents: AgentSet, scenario, cfg: cfgmod.ExperimentConfig,
                         best_response: bool = True) -> trainer.Evaluation:
    rp = cfg.reward_params()
    es = cfg.evaluation
    ev = trainer.evaluate(agents, scenario, cfg.price, rp, rollouts=es.rollouts, noise=es.noise,
                          seed=cfg.train.seed)
    _export_metrics(out, ev, cfg.formats)
    _export_schedules(out, scenario, ev)
    summary = {
        "fulfilled_fraction": ev.fulfilled_fraction(),
        "rollouts": es.rollouts,
        "unfulfilled_kwh": ev.scheduled_rollout.unfulfilled_kwh,
        "returns": ev.scheduled_rollout.returns(rp.gamma),
        "original_returns": ev.original_rollout.returns(rp.gamma),
    }
    if best_response:
        checks = [trainer.best_response_check(agents, scenario, i, es.br_perturbations, es.br_magnitude,
                                              cfg.train.seed, cfg.price, rp) for i in range(scenario.N)]
        summary["best_response"] = [asdict(c) for c in checks]
    _write_json(out / "evaluation.json", summary)
    return ev


def _print_comparison(ev: trainer.Evaluation) -> None:
    print(f"{'metric':<10} {'original':>12} {'scheduled':>12}")
    for row in ev.comparison_rows():
        print(f"{row['metric']:<10} {row['original']:12.4f} {row['scheduled']:12.4f}")
    print(f"fulfilled in {ev.fulfilled_fraction():.0%} of {len(ev.rollout_unfulfilled)} rollouts")


# -- commands -------------------------------------------------------------------------
def cmd_init_config(args) -> int:
    cfg = cfgmod.paper_scale() if args.paper_scale else cfgmod.ExperimentConfig(
        output_dir=cfgmod.default_output_dir())
    text = cfg.dumps()
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text)
    return 0


def cmd_synth(args) -> int:
    sc = data.synth_scenario(args.seed, args.households, args.T, args.slot_minutes)
    data.save_scenario(sc, args.output)
    print(f"wrote {args.output}: {sc.N} households, T={sc.T}, slot {sc.slot_minutes:g} min")
    return 0


def cmd_train(args) -> int:
    cfg, text = _load_config(args)
    scenario = cfg.scenario.load()
    out = _prepare_out(cfg, text)
    on_episode = None if args.quiet else _print_episode
    agents, log = trainer.train(cfg.train, scenario, cfg.price, cfg.reward_params(),
                                checkpoint_dir=out / "checkpoints", on_episode=on_episode)
    log.write_csv(out / "train_log.csv")
    log.write_timing_csv(out / "timing.csv")
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "agents.npz"
    agents.save(ckpt, {"episodes": cfg.train.episodes, "seed": cfg.train.seed})
    print(f"wrote {out / 'train_log.csv'} and {ckpt}")
    return 0


def cmd_eval(args) -> int:
    cfg, text = _load_config(args)
    scenario = cfg.scenario.load()
    agents = AgentSet.load(args.checkpoint)
    agents.check_compatible(scenario.obs_dims())
    out = _prepare_out(cfg, text)
    ev = _evaluate_and_export(out, agents, scenario, cfg, best_response=not args.no_best_response)
    _print_comparison(ev)
    return 0


def cmd_compare(args) -> int:
    cfg, text = _load_config(args)
    scenario = cfg.scenario.load()
    out = _prepare_out(cfg, text)
    algorithms = args.algorithms or list(ALGORITHMS)
    results = {}
    for alg in algorithms:
        tc = replace(cfg.train, algorithm=alg)
        print(f"training {alg} for {tc.episodes} episodes", flush=True)
        agents, log = trainer.train(tc, scenario, cfg.price, cfg.reward_params(),
                                    on_episode=None if args.quiet else _print_episode)
        sub = out / alg
        sub.mkdir(exist_ok=True)
        log.write_csv(sub / "train_log.csv")
        log.write_timing_csv(sub / "timing.csv")
        agents.save(sub / "agents.npz", {"episodes": tc.episodes, "seed": tc.seed})
        ev = trainer.evaluate(agents, scenario, cfg.price, cfg.reward_params(), rollouts=cfg.evaluation.rollouts,
                              noise=cfg.evaluation.noise, seed=tc.seed)
        results[alg] = (log, ev, trainer.decision_latency(agents, scenario))

    first = next(iter(results.values()))[1]
    header = ["metric", "original", *algorithms]
    rows = []
    for col in LoadStats.COLUMNS:
        rows.append([col, first.original.as_row()[col], *(results[a][1].scheduled.as_row()[col] for a in algorithms)])
    rows.append(["fulfilled_fraction", "", *(results[a][1].fulfilled_fraction() for a in algorithms)])
    rows.append(["latency_s", "", *(results[a][2] for a in algorithms)])
    _write_csv(out / "compare.csv", header, rows)

    reward_rows = []
    for alg in algorithms:
        R = results[alg][0].rewards()
        for i, h in enumerate(scenario.households):
            reward_rows.append([h.id, alg, float(R[0, i]), float(R[-1, i])])
    _write_csv(out / "rewards.csv", ["household", "algorithm", "episode_1", "final_episode"], reward_rows)

    curves = {a: trainer.moving_average([r["reward_mean"] for r in results[a][0].records], args.smooth)
              for a in algorithms}
    n_ep = len(next(iter(curves.values())))
    _write_csv(out / "reward_curves.csv", ["episode", *algorithms],
               [[k + 1, *(float(curves[a][k]) for a in algorithms)] for k in range(n_ep)])
    if "json" in cfg.formats:
        _write_json(out / "compare.json", {"columns": header, "rows": rows})
    for row in rows:
        print("  ".join(str(round(v, 6)) if isinstance(v, float) else str(v) for v in row))
    return 0


def cmd_bench(args) -> int:
    rows = trainer.inference_benchmark(args.households, seed=args.seed, repeats=args.repeats, inner=args.inner)
    out = Path(args.out or cfgmod.default_output_dir("bench"))
    out.mkdir(parents=True, exist_ok=True)
    header = list(rows[0])
    _write_csv(out / "scaling.csv", header, [[r[k] for k in header] for r in rows])
    for r in rows:
        print(f"N={r['N']:4d}  dpcs {r['dpcs_household_latency_s'] * 1e6:8.2f} us (width {r['dpcs_input_width']})  "
              f"cddpg {r['cddpg_latency_s'] * 1e6:8.2f} us (width {r['cddpg_input_width']})")
    return 0


# -- parser ---------------------------------------------------------------------------
def _common(p: argparse.ArgumentParser, training: bool = True) -> None:
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="training and evaluation seed")
    p.add_argument("--out", help=f"output directory (default: config, else ${cfgmod.OUTPUT_ROOT_ENV}/desk)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", help="scenario file (.csv profiles or scenario text format)")
    src.add_argument("--synthetic", type=int, metavar="N", help="synthetic scenario with N households")
    if training:
        p.add_argument("--episodes", type=int)
    p.add_argument("--quiet", action="store_true", help="no per-episode lines")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpcs", description="Household load scheduling with multi-agent actor-critic.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-config", help="write a config file with all defaults")
    p.add_argument("-o", "--output", help="destination (default: stdout)")
    p.add_argument("--paper-scale", action="store_true", help="144 slots, 1000 episodes, beta 1440")
    p.set_defaults(func=cmd_init_config)

    p = sub.add_parser("synth", help="write a synthetic scenario file")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--households", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=48)
    p.add_argument("--slot-minutes", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one algorithm")
    _common(p)
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--checkpoint", help="where to save the trained agents (default: <out>/agents.npz)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p, training=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--no-best-response", action="store_true", help="skip the unilateral-deviation check")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train and compare all algorithms")
    _common(p)
    p.add_argument("--algorithms", nargs="+", choices=ALGORITHMS)
    p.add_argument("--smooth", type=int, default=10, help="moving-average window for reward curves")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="decision latency versus N")
    p.add_argument("--households", type=int, nargs="+", default=[4, 50])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--inner", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except trainer.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DPCSError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
