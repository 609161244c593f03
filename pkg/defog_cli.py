#!/usr/bin/env python3
"""
Defogging laboratory command line

Usage:
    python defog_cli.py simulate --out data/games --count 200 --seed 0
    python defog_cli.py split --manifest data/games/manifest.txt --out data/splits --seed 0
    python defog_cli.py featurize-check --manifest data/splits/test_manifest.txt --out runs/check
    python defog_cli.py train --train data/splits/train_manifest.txt --valid data/splits/valid_manifest.txt --out runs/cl
    python defog_cli.py sweep --checkpoint runs/cl/best.ckpt --valid data/splits/valid_manifest.txt --out runs/cl
    python defog_cli.py evaluate --predictor PM --manifest data/splits/test_manifest.txt --out runs/eval
    python defog_cli.py report --manifest data/splits/test_manifest.txt --model CL=runs/cl/best.ckpt:runs/cl/thresholds.txt
    python defog_cli.py heatmap --predictor runs/cl/best.ckpt --manifest data/splits/test_manifest.txt --type 5

Every command accepts --seed and --config (key=value lines such as
``model.encoder_kind=CL``) and writes <out>/<command>_log.txt. The exit
status is 0 on success, 1 when the command failed.
"""

import sys
import logging
import argparse
from typing import Dict, List, Optional

from config import configure_logging, data_dir
from baselines import BASELINES
from defog_nodes import StateManager, run_command

logger = logging.getLogger(__name__)


def _ratios(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratios look like 0.8,0.1,0.1, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="Seed for simulation, splitting and initialization (default: config file seeds, else 0)")
    common.add_argument("--config", default=None, help="key=value config file (sections sim./model./train./eval.)")
    common.add_argument("--tech", default=None, help="Tech tree file (default: built-in)")
    common.add_argument("--n_jobs", type=int, default=None, help="Parallel workers (default: DEFOG_N_JOBS)")
    common.add_argument("--log_level", default=None, help="Logging level (default: LOG_LEVEL)")

    parser = argparse.ArgumentParser(description="Defogging laboratory")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", parents=[common], help="Generate synthetic games")
    simulate.add_argument("--out", default=str(data_dir() / "games"))
    simulate.add_argument("--count", type=int, default=10)
    simulate.add_argument("--height", type=int, default=None)
    simulate.add_argument("--width", type=int, default=None)

    split = commands.add_parser("split", parents=[common], help="Split a manifest into train/valid/test")
    split.add_argument("--manifest", required=True)
    split.add_argument("--out", default=str(data_dir() / "splits"))
    split.add_argument("--ratios", type=_ratios, default=[0.8, 0.1, 0.1])

    check = commands.add_parser("featurize-check", parents=[common], help="Featurizer and observer self-checks")
    check.add_argument("--manifest", required=True)
    check.add_argument("--out", default="runs/featurize_check")
    check.add_argument("--r", type=int, default=32)
    check.add_argument("--g", type=int, default=None)

    train = commands.add_parser("train", parents=[common], help="Train a defogger model")
    train.add_argument("--train", dest="train_manifest", required=True)
    train.add_argument("--valid", dest="valid_manifest", required=True)
    train.add_argument("--out", default="runs/train")
    train.add_argument("--encoder", dest="encoder_kind", choices=["C", "CL"], default=None)
    train.add_argument("--depth", type=int, default=None)
    train.add_argument("--block", dest="block_kind", choices=["basic", "gated", "residual"], default=None)
    train.add_argument("--preset", choices=["desk", "full"], default="desk", help="Model width preset")
    train.add_argument("--g", type=int, default=None, help="Grid stride; also sets the window r = g")
    train.add_argument("--s", type=float, default=None, help="Prediction horizon in seconds")
    train.add_argument("--steps", type=int, default=None)
    train.add_argument("--lr", type=float, default=None)

    sweep = commands.add_parser("sweep", parents=[common], help="Calibrate thresholds on validation games")
    sweep.add_argument("--checkpoint", required=True)
    sweep.add_argument("--valid", dest="valid_manifest", required=True)
    sweep.add_argument("--out", default="runs/sweep")

    evaluate = commands.add_parser("evaluate", parents=[common], help="Score one predictor")
    evaluate.add_argument("--predictor", default="PM", help=f"Baseline ({', '.join(BASELINES)}) or checkpoint path")
    evaluate.add_argument("--manifest", required=True)
    evaluate.add_argument("--out", default="runs/evaluate")
    evaluate.add_argument("--thresholds", default=None)
    evaluate.add_argument("--g", type=int, default=32)
    evaluate.add_argument("--s", type=float, default=15.0)

    report = commands.add_parser("report", parents=[common], help="Baselines and models over a (g, s) grid")
    report.add_argument("--manifest", required=True)
    report.add_argument("--out", default="runs/report")
    report.add_argument("--grid", default="64:15,32:30,32:15,32:5,32:0")
    report.add_argument("--baselines", default=",".join(BASELINES))
    report.add_argument("--model", dest="models", action="append", default=[],
                        help="name=checkpoint[:thresholds]; repeatable")

    heat = commands.add_parser("heatmap", parents=[common], help="Input / predicted / real graymaps")
    heat.add_argument("--predictor", default="PM")
    heat.add_argument("--manifest", required=True)
    heat.add_argument("--out", default="runs/heatmap")
    heat.add_argument("--game", type=int, default=0)
    heat.add_argument("--player", type=int, default=0)
    heat.add_argument("--step", type=int, default=None)
    heat.add_argument("--type", dest="type_id", type=int, default=0)
    heat.add_argument("--side", choices=["ally", "enemy"], default="enemy")
    heat.add_argument("--g", type=int, default=32)
    heat.add_argument("--s", type=float, default=15.0)
    heat.add_argument("--scale", type=int, default=8)
    return parser


def _sections(args: argparse.Namespace) -> Dict[str, Dict]:
    """Command-line values that override config-file sections"""
    sections: Dict[str, Dict] = {"sim": {}, "model": {}, "train": {}, "eval": {}}
    if args.command == "simulate":
        sections["sim"] = {"height": args.height, "width": args.width}
    elif args.command == "train":
        sections["model"] = {"encoder_kind": args.encoder_kind, "depth": args.depth, "block_kind": args.block_kind,
                             "r": args.g, "g": args.g, "s": args.s}
        sections["train"] = {"steps": args.steps, "lr": args.lr}
    return sections


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    values = {k: v for k, v in vars(args).items() if k not in ("command", "out", "seed", "config")}
    values["sections"] = _sections(args)
    if args.command == "split":
        values["ratios"] = tuple(args.ratios)
    if args.command == "report":
        values["baselines"] = [b for b in args.baselines.split(",") if b]

    state = StateManager.create_initial_state(args.command, args.out, args.seed, args.config, values)
    if args.command in ("split", "featurize-check"):
        state["manifest_path"] = args.manifest

    state = run_command(state)
    response = state.get("response") or {}
    if not response.get("success"):
        error = response.get("error", {})
        print(f"❌ {error.get('error_code', 'ERR_GENERAL')}: {error.get('technical_details', state.get('error'))}",
              file=sys.stderr)
        return 1
    print(f"✅ {args.command} finished - log: {args.out}/{args.command}_log.txt")
    return 0


if __name__ == "__main__":
    sys.exit(main())
