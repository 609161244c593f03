#!/usr/bin/env python3
"""
Task scoring, threshold calibration, report tables and graymap heatmaps

Tasks:
- op_u: every enemy unit, per cell, from the regression head
- hid_u: enemy units hidden at target time, per cell, from the regression head
- g_op_b: global existence of enemy building types, from the classification head
- huber: regression error on the enemy channels

Scores are computed per game-perspective sample and averaged over samples.
"""

import logging
import argparse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, field_validator
from tqdm import tqdm

from tech_tree import TechTree, default_tech_tree
from grid_featurizer import CountGrid
from fog_observer import hidden_enemy_counts
from sequence_sampler import Predictions, Sample, load_samples
from baselines import BASELINES

logger = logging.getLogger(__name__)

EXISTENCE_TASKS = ("op_u", "hid_u", "g_op_b")
TASKS = EXISTENCE_TASKS + ("huber",)
# Rows of the desk report; "g:s" pairs with r = g
DEFAULT_GRID = ((64, 15), (32, 30), (32, 15), (32, 5), (32, 0))

Predictor = Callable[[Sample], Predictions]


class EvalConfig(BaseModel):
    """Scoring and calibration settings"""
    model_config = ConfigDict(extra="forbid")

    aggregation: str = "pooled"
    huber_delta: float = Field(default=1.0, gt=0)
    n_thresholds: int = Field(default=30, ge=2)
    threshold_min: float = Field(default=0.001, gt=0)
    threshold_max: float = Field(default=1.5, gt=0)
    default_threshold: float = Field(default=0.5, ge=0)

    @field_validator("aggregation")
    @classmethod
    def _known_aggregation(cls, value):
        if value not in ("pooled", "sliced"):
            raise ValueError(f"aggregation must be 'pooled' or 'sliced', got '{value}'")
        return value

    def threshold_grid(self) -> np.ndarray:
        return np.geomspace(self.threshold_min, self.threshold_max, self.n_thresholds)


@dataclass
class TaskScore:
    task: str
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    huber: Optional[float] = None
    threshold: Optional[float] = None

    def as_row(self) -> Dict:
        return {"task": self.task, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "huber": self.huber, "threshold": self.threshold}


# ----------------------------------------------------------------------
# Counting
# ----------------------------------------------------------------------

def precision_recall_f1(tp: float, fp: float, fn: float) -> Tuple[float, float, float]:
    """
    P/R/F1 with the empty-game conventions

    TP = FP = FN = 0 scores 1 everywhere; otherwise a zero denominator gives 0.
    """
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def task_arrays(predictions: Predictions, sample: Sample, task: str,
                tech: Optional[TechTree] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    (scores, truth) for one sample; leading axis is the input step

    Count scores come from clamped predictions; truth is "at least one unit".
    """
    predictions.check_aligned(sample)
    n = sample.num_types
    counts = np.maximum(predictions.counts, 0.0)
    if task == "op_u":
        return counts[..., n:], sample.targets[..., n:] > 0
    if task == "hid_u":
        hidden = hidden_enemy_counts(counts, sample.target_obs, n)
        return hidden[..., n:], sample.hidden_targets()[..., n:] > 0
    if task == "g_op_b":
        buildings = (tech or default_tech_tree()).building_ids
        return predictions.global_probs[:, buildings], sample.global_targets[:, buildings].astype(bool)
    raise KeyError(f"Unknown existence task '{task}' (choose from {EXISTENCE_TASKS})")


def _confusion(predicted: np.ndarray, truth: np.ndarray, axes=None) -> Tuple[np.ndarray, ...]:
    tp = np.sum(predicted & truth, axis=axes)
    fp = np.sum(predicted & ~truth, axis=axes)
    fn = np.sum(~predicted & truth, axis=axes)
    return tp, fp, fn


def _sample_prf(scores: np.ndarray, truth: np.ndarray, threshold: float, aggregation: str) -> Tuple[float, ...]:
    predicted = scores > threshold
    if aggregation == "pooled":
        return precision_recall_f1(*(int(v) for v in _confusion(predicted, truth)))
    # one slice per input step, averaged inside the game
    axes = tuple(range(1, predicted.ndim))
    per_step = [precision_recall_f1(int(tp), int(fp), int(fn))
                for tp, fp, fn in zip(*_confusion(predicted, truth, axes))]
    return tuple(float(v) for v in np.mean(per_step, axis=0))


def score_existence_task(predictions: Sequence[Predictions], samples: Sequence[Sample], task: str,
                         threshold: float, aggregation: str = "pooled",
                         tech: Optional[TechTree] = None) -> TaskScore:
    """
    Per-sample P/R/F1 at a fixed threshold, averaged over samples

    Raises:
        ValueError: predictions and samples are not aligned one to one
    """
    if len(predictions) != len(samples):
        raise ValueError(f"{len(predictions)} predictions for {len(samples)} samples")
    if not samples:
        raise ValueError("Cannot score an empty sample stream")
    per_sample = [_sample_prf(*task_arrays(p, s, task, tech), threshold, aggregation)
                  for p, s in zip(predictions, samples)]
    precision, recall, f1 = np.mean(per_sample, axis=0)
    return TaskScore(task, float(precision), float(recall), float(f1), threshold=threshold)


def huber_values(pred: np.ndarray, target: np.ndarray, delta: float) -> np.ndarray:
    e = pred - target
    return np.where(np.abs(e) <= delta, 0.5 * e * e, delta * (np.abs(e) - 0.5 * delta))


def score_huber(predictions: Sequence[Predictions], samples: Sequence[Sample], delta: float = 1.0) -> TaskScore:
    """Mean Huber over (T, H_rg, W_rg, enemy channels) of each sample, then over samples"""
    if len(predictions) != len(samples):
        raise ValueError(f"{len(predictions)} predictions for {len(samples)} samples")
    per_sample = []
    for p, s in zip(predictions, samples):
        p.check_aligned(s)
        n = s.num_types
        per_sample.append(huber_values(np.maximum(p.counts[..., n:], 0.0), s.targets[..., n:], delta).mean())
    return TaskScore("huber", huber=float(np.mean(per_sample)))


def sweep_threshold(predictions: Sequence[Predictions], samples: Sequence[Sample], task: str,
                    config: Optional[EvalConfig] = None,
                    tech: Optional[TechTree] = None) -> Tuple[float, pd.DataFrame]:
    """
    F1-maximizing threshold on a log-spaced grid

    Returns:
        (best threshold, DataFrame of threshold / precision / recall / f1 per grid point);
        ties resolve to the smallest threshold
    """
    config = config or EvalConfig()
    if not samples:
        raise ValueError("Threshold sweep needs validation samples")
    rows = []
    for threshold in config.threshold_grid():
        score = score_existence_task(predictions, samples, task, float(threshold), config.aggregation, tech)
        rows.append({"threshold": float(threshold), "precision": score.precision,
                     "recall": score.recall, "f1": score.f1})
    table = pd.DataFrame(rows)
    best = float(table["threshold"].iloc[int(np.argmax(table["f1"].to_numpy()))])
    logger.info(f"🎯 {task}: best threshold {best:.4g} (F1 {table['f1'].max():.4f})")
    return best, table


def score_all(predictions: Sequence[Predictions], samples: Sequence[Sample],
              thresholds: Optional[Dict[str, float]] = None, config: Optional[EvalConfig] = None,
              tech: Optional[TechTree] = None) -> List[TaskScore]:
    config = config or EvalConfig()
    thresholds = thresholds or {}
    scores = [score_existence_task(predictions, samples, task, thresholds.get(task, config.default_threshold),
                                   config.aggregation, tech)
              for task in EXISTENCE_TASKS]
    scores.append(score_huber(predictions, samples, config.huber_delta))
    return scores


def predict_all(predictor: Predictor, samples: Sequence[Sample], n_jobs: int = 1,
                desc: str = "Predicting") -> List[Predictions]:
    """Run a predictor over samples; output order follows the input for any n_jobs"""
    return Parallel(n_jobs=n_jobs)(delayed(predictor)(sample) for sample in tqdm(samples, desc=desc, unit="game"))


def baseline_predictor(name: str, tech: TechTree) -> Predictor:
    if name not in BASELINES:
        raise KeyError(f"Unknown baseline '{name}' (choose from {sorted(BASELINES)})")
    function = BASELINES[name]

    def predict(sample: Sample) -> Predictions:
        return function(sample, tech)

    predict.__name__ = name
    return predict


# ----------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------

REPORT_COLUMNS = ["predictor", "g", "s", "task", "precision", "recall", "f1", "huber", "threshold"]


@dataclass
class EvalReport:
    """Scores per (predictor, g, s, task); every row of a (g, s) block uses the same games"""
    rows: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=REPORT_COLUMNS))
    games: int = 0

    def add(self, predictor: str, g: int, s: float, scores: Sequence[TaskScore]) -> None:
        new = pd.DataFrame([{"predictor": predictor, "g": int(g), "s": float(s), **score.as_row()}
                            for score in scores], columns=REPORT_COLUMNS)
        self.rows = new if self.rows.empty else pd.concat([self.rows, new], ignore_index=True)

    def grid(self) -> List[Tuple[int, float]]:
        return list(dict.fromkeys(zip(self.rows["g"].astype(int), self.rows["s"].astype(float))))

    def to_lines(self) -> List[str]:
        """Machine-readable lines `predictor g s task P R F1 huber threshold` ('-' for absent values)"""
        def fmt(value) -> str:
            return "-" if value is None or (isinstance(value, float) and np.isnan(value)) else f"{value:.6f}"

        lines = []
        for row in self.rows.itertuples(index=False):
            lines.append(" ".join([row.predictor.replace(" ", "_"), str(int(row.g)), f"{row.s:g}", row.task,
                                   fmt(row.precision), fmt(row.recall), fmt(row.f1), fmt(row.huber),
                                   fmt(row.threshold)]))
        return lines

    def render(self) -> str:
        """Aligned table: one block per (g, s), predictors as rows, P/R/F1 per task plus Huber"""
        blocks = [f"games: {self.games}"]
        for g, s in self.grid():
            part = self.rows[(self.rows["g"] == g) & (self.rows["s"] == s)]
            order = list(dict.fromkeys(part["predictor"]))
            table = pd.DataFrame(index=order)
            for task in EXISTENCE_TASKS:
                scores = part[part["task"] == task].set_index("predictor")
                for column, short in (("precision", "P"), ("recall", "R"), ("f1", "F1")):
                    table[f"{task} {short}"] = scores[column].reindex(order).astype(float)
            table["Huber"] = part[part["task"] == "huber"].set_index("predictor")["huber"].reindex(order).astype(float)
            blocks.append(f"\n== g={g} s={s:g} ==\n" + table.to_string(float_format=lambda v: f"{v:.3f}"))
        return "\n".join(blocks) + "\n"

    def save(self, output_dir) -> Tuple[Path, Path]:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        table_path = output_dir / "report.txt"
        lines_path = output_dir / "report_lines.txt"
        table_path.write_text(self.render(), encoding="utf-8")
        lines_path.write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")
        logger.info(f"📄 Report written to {table_path}")
        return table_path, lines_path


def evaluate_predictor(name: str, predictor: Predictor, samples: Sequence[Sample], g: int, s: float,
                       report: EvalReport, thresholds: Optional[Dict[str, float]] = None,
                       config: Optional[EvalConfig] = None, tech: Optional[TechTree] = None,
                       n_jobs: int = 1) -> List[TaskScore]:
    predictions = predict_all(predictor, samples, n_jobs, desc=f"{name} g={g} s={s:g}")
    scores = score_all(predictions, samples, thresholds, config, tech)
    report.add(name, g, s, scores)
    return scores


def report(models: Dict[str, Tuple[object, Dict[str, float]]], baselines: Sequence[str],
           test_manifest: pd.DataFrame, grid: Sequence[Tuple[int, float]] = DEFAULT_GRID,
           config: Optional[EvalConfig] = None, tech: Optional[TechTree] = None,
           n_jobs: int = 1) -> EvalReport:
    """
    Score baselines and trained models on a test manifest

    Args:
        models: name -> (DefoggerModel, calibrated thresholds); a model only
            appears in the (g, s) block matching its own configuration
        baselines: baseline names from BASELINES
        grid: (g, s) pairs; r = g
    """
    config = config or EvalConfig()
    tech = tech or default_tech_tree()
    result = EvalReport()
    for g, s in grid:
        samples = load_samples(test_manifest, g, g, s, tech, n_jobs=n_jobs, desc=f"Test games g={g} s={s:g}")
        result.games = len(test_manifest)
        for name in baselines:
            evaluate_predictor(name, baseline_predictor(name, tech), samples, g, s, result,
                               config=config, tech=tech, n_jobs=n_jobs)
        for name, (model, thresholds) in models.items():
            model_config = model.config
            if (model_config.r, model_config.g, float(model_config.s)) != (g, g, float(s)):
                continue
            model_samples = samples
            if model_config.step is not None:
                model_samples = load_samples(test_manifest, g, g, s, tech, step=model_config.step, n_jobs=n_jobs,
                                             desc=f"Test games for {name}")
            evaluate_predictor(name, model.predict, model_samples, g, s, result, thresholds, config, tech, n_jobs)
    return result


def parse_grid(text: str) -> List[Tuple[int, float]]:
    """'64:15,32:30' -> [(64, 15.0), (32, 30.0)]"""
    pairs = []
    for item in text.split(","):
        g, sep, s = item.strip().partition(":")
        if not sep:
            raise ValueError(f"grid entries look like g:s, got '{item}'")
        pairs.append((int(g), float(s)))
    return pairs


# ----------------------------------------------------------------------
# Heatmaps
# ----------------------------------------------------------------------

def _graymap(values: np.ndarray, peak: float, scale: int) -> str:
    if peak > 0:
        gray = np.rint(255.0 * (1.0 - np.clip(values, 0.0, None) / peak)).astype(int)
    else:
        gray = np.full(values.shape, 255, dtype=int)
    gray = np.kron(gray, np.ones((scale, scale), dtype=int))
    rows = [" ".join(str(v) for v in row) for row in gray]
    return f"P2\n{gray.shape[1]} {gray.shape[0]}\n255\n" + "\n".join(rows) + "\n"


def heatmap(pred: CountGrid, truth: CountGrid, obs: CountGrid, type_id: int, out_path,
            side: str = "enemy", scale: int = 1) -> List[Path]:
    """
    Write input / predicted / real graymaps of one unit type

    Intensity is normalized per triptych: 255 is zero, 0 the largest count of
    the three grids. Files are <stem>_input.pgm, <stem>_predicted.pgm, <stem>_real.pgm.
    """
    if not (pred.shape == truth.shape == obs.shape):
        raise ValueError(f"heatmap grids differ: {pred.shape}, {truth.shape}, {obs.shape}")
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    channel = truth.channel(side, type_id)
    layers = {"input": obs.data[..., channel], "predicted": np.maximum(pred.data[..., channel], 0.0),
              "real": truth.data[..., channel]}
    peak = max(float(layer.max()) for layer in layers.values())

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    stem = out_path.with_suffix("")
    written = []
    for name, layer in layers.items():
        path = Path(f"{stem}_{name}.pgm")
        path.write_text(_graymap(layer, peak, scale), encoding="ascii")
        written.append(path)
    return written


def read_graymap(path) -> np.ndarray:
    """Parse a plain (P2) graymap back into an int array"""
    tokens = Path(path).read_text(encoding="ascii").split()
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain graymap")
    width, height = int(tokens[1]), int(tokens[2])
    return np.array(tokens[4:4 + width * height], dtype=int).reshape(height, width)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Score the rule-based baselines on a manifest")
    parser.add_argument("manifest", help="test manifest")
    parser.add_argument("--grid", default="32:15", help="comma separated g:s pairs")
    parser.add_argument("--n_jobs", type=int, default=1)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    from replay_io import read_manifest
    result = report({}, list(BASELINES), read_manifest(args.manifest), parse_grid(args.grid), n_jobs=args.n_jobs)
    print(result.render())
