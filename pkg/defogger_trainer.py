#!/usr/bin/env python3
"""
Training loop for the defogger model

One game-perspective sample per optimizer step, back-propagated through the
whole unrolled sequence. Validation runs every `validate_every` steps; the
checkpoint with the best validation op_u F1 is kept as best.ckpt.
"""

import math
import logging
import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator
from tqdm import tqdm

from tensorgrad import SGD, Adam, backward, step_decay
from tech_tree import TechTree, default_tech_tree
from sequence_sampler import Sample, load_samples
from defogger_model import DefoggerModel, ModelConfig
from evaluation import EvalConfig, score_existence_task, score_huber

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "epoch", "lr", "train_loss", "valid_huber", "valid_op_u_f1", "valid_g_op_b_f1"]


class TrainingDivergedError(ValueError):
    """Loss became NaN or infinite; carries the last good checkpoint (None if none was written)"""

    def __init__(self, message: str, checkpoint_path: Optional[Path] = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class TrainConfig(BaseModel):
    """Optimizer and schedule settings"""
    model_config = ConfigDict(extra="forbid")

    optimizer: str = "adam"
    lr: Optional[float] = Field(default=None, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    lr_decay: float = Field(default=1.0, gt=0, le=1)
    lr_decay_every: int = Field(default=0, ge=0)
    steps: int = Field(default=2000, ge=1)
    validate_every: int = Field(default=200, ge=1)
    threshold: float = Field(default=0.5, ge=0)
    seed: int = 0

    @field_validator("optimizer")
    @classmethod
    def _known_optimizer(cls, value):
        if value not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got '{value}'")
        return value


@dataclass
class TrainResult:
    best_checkpoint: Optional[Path]
    last_checkpoint: Path
    log: pd.DataFrame
    best_step: int


class DefoggerTrainer:
    """
    Owns one model and its optimizer for a single training run

    Args:
        model: model to train in place
        config: optimizer and schedule settings
        output_dir: where checkpoints and training_log.txt go
        eval_config: Huber δ for the validation proxy
    """

    def __init__(self, model: DefoggerModel, config: TrainConfig, output_dir,
                 eval_config: Optional[EvalConfig] = None, tech: Optional[TechTree] = None):
        self.model = model
        self.config = config
        self.eval_config = eval_config or EvalConfig(huber_delta=model.config.huber_delta)
        self.tech = tech or default_tech_tree()
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.base_lr = config.lr if config.lr is not None else model.config.lr
        params = model.parameters()
        if config.optimizer == "adam":
            self.optimizer = Adam(params, lr=self.base_lr)
        else:
            self.optimizer = SGD(params, lr=self.base_lr, momentum=config.momentum)
        self.rng = np.random.default_rng(config.seed)
        self.best_checkpoint: Optional[Path] = None

    @property
    def best_path(self) -> Path:
        return self.output_dir / "best.ckpt"

    @property
    def last_path(self) -> Path:
        return self.output_dir / "last.ckpt"

    @property
    def log_path(self) -> Path:
        return self.output_dir / "training_log.txt"

    def train_step(self, sample: Sample) -> float:
        """Forward, backward and one optimizer update; returns the loss"""
        self.optimizer.zero_grad()
        output = self.model(sample)
        loss = self.model.loss(output, sample)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(
                f"Loss is {value} on game {sample.game_id or '?'} (player {sample.player}); "
                f"last good checkpoint: {self.best_checkpoint}", self.best_checkpoint)
        backward(loss)
        self.optimizer.step()
        return value

    def validate(self, samples: Sequence[Sample]) -> dict:
        predictions = [self.model.predict(sample) for sample in samples]
        threshold = self.config.threshold
        return {
            "valid_huber": score_huber(predictions, samples, self.eval_config.huber_delta).huber,
            "valid_op_u_f1": score_existence_task(predictions, samples, "op_u", threshold,
                                                  self.eval_config.aggregation, self.tech).f1,
            "valid_g_op_b_f1": score_existence_task(predictions, samples, "g_op_b", threshold,
                                                    self.eval_config.aggregation, self.tech).f1,
        }

    def _order(self, count: int) -> np.ndarray:
        return self.rng.permutation(count)

    def train(self, train_samples: Sequence[Sample], valid_samples: Sequence[Sample]) -> TrainResult:
        if not train_samples:
            raise ValueError("Training needs at least one sample")
        if not valid_samples:
            raise ValueError("Training needs at least one validation sample")

        rows: List[dict] = []
        best_key = None
        best_step = 0
        running: List[float] = []
        order = self._order(len(train_samples))
        epoch, position = 0, 0

        logger.info(f"🚀 Training {self.model.config.encoder_kind}/{self.model.config.depth} "
                    f"({self.model.num_parameters():,} parameters) for {self.config.steps} steps "
                    f"on {len(train_samples)} samples")
        for step in tqdm(range(1, self.config.steps + 1), desc="Training", unit="step"):
            if position == len(order):
                order = self._order(len(train_samples))
                epoch, position = epoch + 1, 0
            lr = step_decay(self.base_lr, step - 1, self.config.lr_decay, self.config.lr_decay_every)
            self.optimizer.lr = lr
            running.append(self.train_step(train_samples[order[position]]))
            position += 1

            if step % self.config.validate_every and step != self.config.steps:
                continue
            metrics = self.validate(valid_samples)
            row = {"step": step, "epoch": epoch, "lr": lr, "train_loss": float(np.mean(running)), **metrics}
            rows.append(row)
            running = []
            key = (metrics["valid_op_u_f1"], -metrics["valid_huber"])
            if best_key is None or key > best_key:
                best_key, best_step = key, step
                self.best_checkpoint = self.model.save(self.best_path)
            logger.info(f"📊 step {step}: train loss {row['train_loss']:.5f}, "
                        f"valid Huber {metrics['valid_huber']:.5f}, op_u F1 {metrics['valid_op_u_f1']:.4f}")

        log = pd.DataFrame(rows, columns=LOG_COLUMNS)
        log.to_csv(self.log_path, sep=" ", index=False, float_format="%.8g")
        last = self.model.save(self.last_path)
        logger.info(f"✅ Training finished; best step {best_step}, log at {self.log_path}")
        return TrainResult(self.best_checkpoint, last, log, best_step)


def train(model: DefoggerModel, train_manifest: pd.DataFrame, valid_manifest: pd.DataFrame,
          config: TrainConfig, output_dir, tech: Optional[TechTree] = None, n_jobs: int = 1) -> TrainResult:
    """Sample both manifests at the model's (r, g, s) and run a full training"""
    tech = tech or default_tech_tree()
    if len(train_manifest) == 0 or len(valid_manifest) == 0:
        raise ValueError("Training and validation manifests must not be empty")
    c = model.config
    train_samples = load_samples(train_manifest, c.r, c.g, c.s, tech, step=c.step, n_jobs=n_jobs,
                                 desc="Training games")
    valid_samples = load_samples(valid_manifest, c.r, c.g, c.s, tech, step=c.step, n_jobs=n_jobs,
                                 desc="Validation games")
    return DefoggerTrainer(model, config, output_dir, tech=tech).train(train_samples, valid_samples)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Train a defogger model")
    parser.add_argument("train_manifest")
    parser.add_argument("valid_manifest")
    parser.add_argument("--output_dir", default="runs/train")
    parser.add_argument("--encoder", choices=["C", "CL"], default="CL")
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    from replay_io import read_manifest
    tech = default_tech_tree()
    model = DefoggerModel(ModelConfig.desk(encoder_kind=args.encoder, seed=args.seed), tech)
    result = train(model, read_manifest(args.train_manifest), read_manifest(args.valid_manifest),
                   TrainConfig(steps=args.steps, seed=args.seed), args.output_dir, tech)
    print(result.log.to_string(index=False))
