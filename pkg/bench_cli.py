import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import torch

from app.config.config import ExperimentConfig, load_experiment_config, settings
from app.harness import (
    cmd_eval,
    cmd_gen_data,
    cmd_plan,
    cmd_plot_data,
    cmd_refs,
    cmd_train,
    load_report,
    open_store,
)

logger = logging.getLogger("bench_cli")

VERBS = ("gen-data", "train", "plan", "eval", "plot-data", "refs")


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Diffusion / Schrodinger-bridge planning benchmark on Maze2D.")
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("--config", type=Path, default=None, help="TOML experiment file")
    parser.add_argument("--maze", default=None, help="maze id (open, umaze, medium, large)")
    parser.add_argument("--engine", choices=("ddpm", "i2sb"), default=None)
    parser.add_argument("--prior", default=None, help="gaussian, straight_line, learned or learned:<checkpoint>")
    parser.add_argument("--nfe", type=_int_list, default=None, help="comma-separated NFE values")
    parser.add_argument("--steps", type=_int_list, default=None, help="comma-separated training-steps values")
    parser.add_argument("--seed", type=_int_list, default=None, help="comma-separated seeds")
    parser.add_argument("--out", type=Path, default=None, help="output root (SBPLAN_OUT takes precedence)")
    parser.add_argument("--start", type=_float_list, default=None, help="plan: x,y[,vx,vy]")
    parser.add_argument("--goal", type=_float_list, default=None, help="plan: x,y")
    parser.add_argument("--checkpoint", type=Path, default=None, help="plan: denoiser checkpoint")
    parser.add_argument("--report", type=Path, default=None, help="plot-data: sweep report JSON")
    parser.add_argument("--figure", action="append", default=None, help="plot-data: figure to write (repeatable)")
    return parser.parse_args(argv)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides: Dict = {
        "maze_id": args.maze,
        "engines": [args.engine] if args.engine else None,
        "priors": [args.prior] if args.prior else None,
        "nfe_list": args.nfe,
        "training_steps": args.steps,
        "seeds": args.seed,
        "out_dir": args.out,
    }
    return load_experiment_config(args.config, overrides)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=settings.log_level)
    torch.use_deterministic_algorithms(True)
    config = build_config(args)

    if args.verb == "gen-data":
        for path in cmd_gen_data(config):
            print(path)
    elif args.verb == "train":
        for report in cmd_train(config):
            print(report.model_dump_json())
    elif args.verb == "refs":
        print(cmd_refs(config).model_dump_json(indent=2))
    elif args.verb == "eval":
        report = cmd_eval(config)
        print(f"{len(report.rows)} rows written for {report.maze_id}")
    elif args.verb == "plan":
        if args.start is None or args.goal is None:
            logger.error("plan needs --start and --goal")
            return 2
        start = list(args.start) + [0.0] * (4 - len(args.start))
        dump = cmd_plan(
            config,
            start_state=start[:4],
            goal_position=args.goal[:2],
            engine=args.engine or "i2sb",
            prior=args.prior or "straight_line",
            nfe=args.nfe[0] if args.nfe else None,
            seed=args.seed[0] if args.seed else 0,
            checkpoint=args.checkpoint,
        )
        print(f"plan: {dump.engine}/{dump.prior} nfe={dump.nfe} in {dump.plan_seconds:.3f}s")
    elif args.verb == "plot-data":
        store = open_store(config)
        path = args.report or store.reports_dir / f"sweep_{config.maze_id}.json"
        for figure, out in cmd_plot_data(load_report(path), store.reports_dir / "figures", args.figure).items():
            print(f"{figure}: {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
