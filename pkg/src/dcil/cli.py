"""Command-line entry point: ``dcil <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 planner failure,
4 training aborted by critic divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from dcil import __version__, kernels
from dcil.ablation import (VARIANT_ORDER, aggregate_csv, read_aggregate_csv, solved_by,
                           success_curve, welch_test)
from dcil.config import (ABLATIONS, ConfigError, RunConfig, apply_mapping, apply_overrides,
                         load_config_file)
from dcil.env import MapError, resolve_maze
from dcil.plots import line_chart_svg, maze_svg
from dcil.rrt import (PlannerFailure, Trajectory, TrajectoryParseError, load_trajectory,
                      rrt_plan, save_trajectory)
from dcil.sac import SacAgent
from dcil.skills import SkillChain, extract_skills, load_skills, save_skills
from dcil.trainer import evaluate_chain, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PLANNER = 3
EXIT_DIVERGED = 4

RUN_ROOT_ENV = "DCIL_RUN_ROOT"

log = logging.getLogger("dcil")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_config_file(args.config, cfg)
    cfg = apply_overrides(cfg, getattr(args, "set", None) or [])
    flat = {
        "seed": ("seed", None),
        "maze": ("env", "maze"),
        "max_nodes": ("rrt", "max_nodes"),
        "goal_bias": ("rrt", "goal_bias"),
        "expand_steps": ("rrt", "expand_steps"),
        "demo_seed": ("rrt", "seed"),
        "epsilon_dist": ("skills", "epsilon_dist"),
        "n_skills": ("skills", "n_skills"),
        "beta": ("skills", "beta"),
        "steps": ("trainer", "budget"),
        "eval_period": ("trainer", "eval_period"),
    }
    for attr, (section, key) in flat.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        if section == "seed":
            cfg = replace(cfg, seed=int(value))
        else:
            cfg = apply_overrides(cfg, [f"{section}.{key}={value}"])
    if getattr(args, "stop_on_solve", False):
        cfg = replace(cfg, trainer=replace(cfg.trainer, stop_on_solve=True))
    ablate = getattr(args, "ablate", None)
    if ablate:
        cfg = cfg.with_ablation(ablate)
    return cfg.validate()


def run_root(args) -> Path:
    root = getattr(args, "run_root", None) or os.environ.get(RUN_ROOT_ENV) or "runs"
    return Path(root)


def fresh_dir(path: Path) -> Path:
    """``path`` itself if unused, else the first free ``path-N``."""
    candidate = path
    n = 1
    while candidate.exists() and any(candidate.iterdir()):
        candidate = path.with_name(f"{path.name}-{n}")
        n += 1
    candidate.mkdir(parents=True, exist_ok=True)
    return candidate


# --------------------------------------------------------------------------
# pipeline pieces shared by several commands


def make_demo(cfg: RunConfig) -> Trajectory:
    maze = resolve_maze(cfg.env.maze)
    return rrt_plan(maze, maze.start, maze.exit, cfg.env.env_config(), cfg.demo_seed,
                    cfg.rrt.limits())


def make_skills(cfg: RunConfig, demo: Trajectory) -> SkillChain:
    eps = cfg.skills.epsilon_dist
    if eps is None:
        eps = demo.arc_length() / cfg.skills.n_skills
    return extract_skills(demo, eps, cfg.skills.beta)


def run_training(cfg: RunConfig, run_dir: Path, demo: Trajectory | None = None,
                 chain: SkillChain | None = None) -> tuple[dict, int]:
    """Full pipeline into ``run_dir``; returns the summary and the exit code."""
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.to_json())
    maze = resolve_maze(cfg.env.maze)
    if demo is None:
        demo = make_demo(cfg)
    save_trajectory(demo, run_dir / "demo.txt")
    if chain is None:
        chain = make_skills(cfg, demo)
    save_skills(chain, run_dir / "skills.txt")

    ckpt_dir = run_dir / "checkpoints"
    if cfg.trainer.checkpoints:
        ckpt_dir.mkdir(exist_ok=True)
    state = {"first_solve_saved": False}

    def on_eval(point, agent):
        if not cfg.trainer.checkpoints:
            return
        extra = {"seed": cfg.seed, "step": point.step}
        agent.save(ckpt_dir / "latest.npz", extra)
        if point.chain_solved and not state["first_solve_saved"]:
            agent.save(ckpt_dir / "first_solve.npz", extra)
            state["first_solve_saved"] = True

    report = train(cfg.train_config(), chain, maze, on_eval=on_eval)
    (run_dir / "metrics.csv").write_text(report.metrics_csv())
    summary = report.summary()
    summary.update({"seed": cfg.seed, "demo_seed": cfg.demo_seed,
                    "disable_bonus": cfg.trainer.disable_bonus,
                    "disable_overshoot": cfg.trainer.disable_overshoot,
                    "budget": cfg.trainer.budget, "eval_period": cfg.trainer.eval_period,
                    "kernels": kernels.BACKEND, "version": __version__})
    (run_dir / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary, (EXIT_DIVERGED if report.diverged else EXIT_OK)


def _ablation_worker(job: tuple[str, str, int, str]) -> tuple[str, int, dict, int]:
    cfg_json, variant, seed, run_dir = job
    cfg = apply_mapping(RunConfig(), json.loads(cfg_json))
    cfg = replace(cfg.with_ablation(variant), seed=seed)
    try:
        summary, code = run_training(cfg, Path(run_dir))
    except PlannerFailure as exc:
        return variant, seed, {"error": str(exc)}, EXIT_PLANNER
    return variant, seed, summary, code


# --------------------------------------------------------------------------
# commands


def cmd_gen_demo(args) -> int:
    cfg = resolve_config(args)
    demo = make_demo(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_trajectory(demo, out)
    print(f"wrote {out}: {len(demo)} states, arc length {demo.arc_length():.4f}, "
          f"{demo.meta.get('n_nodes', '?')} tree nodes")
    return EXIT_OK


def cmd_extract_skills(args) -> int:
    cfg = resolve_config(args)
    demo = load_trajectory(args.demo)
    chain = make_skills(cfg, demo)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_skills(chain, out)
    print(f"wrote {out}: {len(chain)} skills, epsilon_dist {chain.epsilon_dist:.4f}, "
          f"t_max {[s.t_max for s in chain]}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    demo = load_trajectory(args.demo) if args.demo else None
    chain = load_skills(args.skills) if args.skills else None
    if args.run_dir:
        run_dir = Path(args.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
    else:
        variant = args.ablate or "full"
        run_dir = fresh_dir(run_root(args) / f"train-{variant}-seed{cfg.seed}")
    summary, code = run_training(cfg, run_dir, demo, chain)
    print(f"run directory: {run_dir}")
    print(f"steps {summary['env_steps']}  solved_at_end {summary['solved_at_end']}  "
          f"first_solve_step {summary['first_solve_step']}  max_zone {summary['max_zone']}")
    if code == EXIT_DIVERGED:
        print(f"error: {summary['divergence_message']}", file=sys.stderr)
    return code


def _load_run_inputs(args):
    run = Path(args.run) if args.run else None
    cfg = RunConfig()
    if run is not None:
        cfg = load_config_file(run / "config.json")
    maze = resolve_maze(args.maze or cfg.env.maze)
    skills_path = args.skills or (run / "skills.txt" if run else None)
    if skills_path is None:
        raise UsageError("give --run or --skills")
    chain = load_skills(skills_path)
    return run, cfg, maze, chain


def cmd_eval(args) -> int:
    run, cfg, maze, chain = _load_run_inputs(args)
    ckpt = args.checkpoint
    if ckpt is None:
        if run is None:
            raise UsageError("give --checkpoint or --run")
        ckpt = run / "checkpoints" / "latest.npz"
        if not ckpt.exists():
            raise UsageError(f"{run}: no checkpoint found")
    agent, _ = SacAgent.load(ckpt)
    env_cfg = cfg.env.env_config()
    rng = np.random.default_rng(args.seed)

    def stochastic(s, g, i, t):
        return agent.sample_action(s, g, rng)[0]

    policy = None if args.deterministic else stochastic
    results = [evaluate_chain(agent, chain, maze, env_cfg, policy=policy)
               for _ in range(args.episodes)]
    solved = [r.solved for r in results]
    print(f"solved {sum(solved)}/{len(solved)} ({np.mean(solved):.3f})  "
          f"max_zone {max(r.max_zone for r in results)}")
    if args.trajectory_out:
        first = results[0]
        save_trajectory(Trajectory(first.trajectory,
                                   {"source": "eval", "checkpoint": str(ckpt),
                                    "solved": first.solved, "max_zone": first.max_zone}),
                        args.trajectory_out)
        print(f"wrote {args.trajectory_out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    variants = args.variants or list(VARIANT_ORDER)
    for v in variants:
        if v not in ABLATIONS:
            raise UsageError(f"unknown variant {v!r}; choose from {sorted(ABLATIONS)}")
    seeds = [cfg.seed + k for k in range(args.seeds)]
    root = fresh_dir(run_root(args) / (args.name or "ablation"))
    (root / "config.json").write_text(cfg.to_json())
    base = cfg.to_json()
    jobs = [(base, v, s, str(root / v / f"seed{s}")) for v in variants for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_ablation_worker, jobs))
    else:
        results = [_ablation_worker(j) for j in jobs]

    first: dict[str, list] = {v: [] for v in variants}
    code = EXIT_OK
    for variant, seed, summary, rc in results:
        if rc == EXIT_PLANNER:
            print(f"error: {variant} seed {seed}: {summary['error']}", file=sys.stderr)
            return EXIT_PLANNER
        if rc == EXIT_DIVERGED:
            print(f"warning: {variant} seed {seed} diverged", file=sys.stderr)
        first[variant].append(summary.get("first_solve_step"))

    period = cfg.trainer.eval_period
    steps = list(range(0, cfg.trainer.budget + 1, period))
    if steps[-1] != cfg.trainer.budget:
        steps.append(cfg.trainer.budget)
    curves = {v: success_curve(first[v], steps) for v in variants}
    (root / "ablation.csv").write_text(aggregate_csv(steps, curves))
    (root / "ablation.svg").write_text(line_chart_svg(
        steps, curves, title="Full-chain success rate", xlabel="environment steps",
        ylabel=f"success rate ({len(seeds)} seeds)"))
    summary = {"variants": variants, "seeds": seeds, "first_solve_step": first,
               "final_success_rate": {v: float(curves[v][-1]) for v in variants}}
    if "full" in variants and "no-bonus" in variants and len(seeds) >= 2:
        final = cfg.trainer.budget
        res = welch_test(solved_by(first["full"], final), solved_by(first["no-bonus"], final))
        summary["welch_full_vs_no_bonus"] = {"statistic": res.statistic, "pvalue": res.pvalue}
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"ablation directory: {root}")
    for v in variants:
        print(f"{v:>13}: final success rate {curves[v][-1]:.2f}")
    return code


def cmd_plot(args) -> int:
    if args.ablation:
        steps, curves = read_aggregate_csv(Path(args.ablation).read_text())
        svg = line_chart_svg(steps, curves, title="Full-chain success rate",
                             xlabel="environment steps", ylabel="success rate")
    else:
        if not args.run:
            raise UsageError("give --run or --ablation")
        run, cfg, maze, chain = _load_run_inputs(args)
        paths = []
        demo_path = run / "demo.txt"
        if demo_path.exists():
            paths.append(("demonstration", load_trajectory(demo_path).states, "#888888"))
        if args.trajectory:
            paths.append(("agent", load_trajectory(args.trajectory).states, "#1f77b4"))
        svg = maze_svg(maze, paths, goals=chain.goals, goal_radius=cfg.env.epsilon_success)
        if args.metrics_out:
            rows = [r for r in csv.reader((run / "metrics.csv").read_text().splitlines()[1:])]
            header, body = rows[0], rows[1:]
            steps = [int(r[0]) for r in body]
            col = {h: k for k, h in enumerate(header)}
            series = {"chain solved": [float(r[col["chain_solved"]]) for r in body],
                      "max zone / 22": [float(r[col["max_zone"]]) / max(1, maze.n_zones - 1)
                                        for r in body]}
            Path(args.metrics_out).write_text(line_chart_svg(
                steps, series, title="Training progress", xlabel="environment steps"))
            print(f"wrote {args.metrics_out}")
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="JSON run configuration (sections env, rrt, skills, "
                                    "sac, replay, trainer)")
    g.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one configuration value (repeatable)")
    g.add_argument("--seed", type=int, help="master seed (default 0)")
    g.add_argument("--maze", help="builtin map name or map file (default canonical)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcil", description="Divide-and-conquer imitation learning on a Dubins-car maze.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log evaluation points")
    parser.add_argument("--run-root", help=f"directory for run outputs "
                                           f"(default ${RUN_ROOT_ENV} or ./runs)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demo", help="plan a demonstration with kinodynamic RRT")
    _config_args(p)
    p.add_argument("--out", required=True, help="trajectory file to write")
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--goal-bias", type=float)
    p.add_argument("--expand-steps", type=int)
    p.set_defaults(func=cmd_gen_demo)

    p = sub.add_parser("extract-skills", help="cut a demonstration into skills")
    _config_args(p)
    p.add_argument("--demo", required=True, help="trajectory file")
    p.add_argument("--out", required=True, help="skill file to write")
    p.add_argument("--epsilon-dist", "--eps-dist", type=float, help="arc length per skill")
    p.add_argument("--n-skills", type=int, help="skill count when --epsilon-dist is unset")
    p.add_argument("--beta", type=float, help="step-budget coefficient (default 1.25)")
    p.set_defaults(func=cmd_extract_skills)

    p = sub.add_parser("train", help="train the goal-conditioned policy on the skill chain")
    _config_args(p)
    p.add_argument("--demo", help="trajectory file (planned from the seed if omitted)")
    p.add_argument("--skills", help="skill file (extracted from the demo if omitted)")
    p.add_argument("--steps", type=int, help="environment interaction budget")
    p.add_argument("--eval-period", type=int)
    p.add_argument("--demo-seed", type=int, help="planner seed (default: master seed)")
    p.add_argument("--n-skills", type=int)
    p.add_argument("--epsilon-dist", "--eps-dist", type=float)
    p.add_argument("--ablate", choices=sorted(ABLATIONS), help="ablation variant")
    p.add_argument("--stop-on-solve", action="store_true",
                   help="stop at the first evaluation that completes the chain")
    p.add_argument("--run-dir", help="explicit run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the full chain")
    p.add_argument("--run", help="run directory (config, skills and latest checkpoint)")
    p.add_argument("--checkpoint", help="agent checkpoint (.npz)")
    p.add_argument("--skills", help="skill file")
    p.add_argument("--maze", help="map override")
    p.add_argument("-k", "--episodes", type=int, default=1)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--deterministic", dest="deterministic", action="store_true",
                      default=True, help="act with the policy mean (default)")
    mode.add_argument("--stochastic", dest="deterministic", action="store_false",
                      help="sample actions")
    p.add_argument("--seed", type=int, default=0, help="sampling seed for --stochastic")
    p.add_argument("--trajectory-out", help="write the first evaluation trajectory here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation variants over several seeds")
    _config_args(p)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds (from --seed)")
    p.add_argument("--variants", nargs="+", choices=sorted(ABLATIONS))
    p.add_argument("--steps", type=int, help="interaction budget per run")
    p.add_argument("--eval-period", type=int)
    p.add_argument("--n-skills", type=int)
    p.add_argument("--stop-on-solve", action="store_true")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--name", help="directory name under the run root")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="write SVG figures from run outputs")
    p.add_argument("--run", help="run directory: draws maze, demo and skill goals")
    p.add_argument("--skills", help="skill file override")
    p.add_argument("--maze", help="map override")
    p.add_argument("--trajectory", help="extra trajectory to overlay (e.g. from eval)")
    p.add_argument("--metrics-out", help="also chart the run's metrics.csv here")
    p.add_argument("--ablation", help="ablation.csv to chart instead of a run")
    p.add_argument("--out", required=True, help="SVG file to write")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except PlannerFailure as exc:
        print(f"error: planner failure: {exc}", file=sys.stderr)
        return EXIT_PLANNER
    except (UsageError, ConfigError, MapError, TrajectoryParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
