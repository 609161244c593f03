"""
Model nodes for the defogging pipeline
Implements 2 nodes: train, sweep
"""
from pathlib import Path
from typing import Dict, Optional

import pandas as pd
from dotenv import dotenv_values

from config import settings
from tensorgrad import precision
from replay_io import read_manifest
from sequence_sampler import load_samples
from defogger_model import DefoggerModel
from defogger_trainer import train
from evaluation import EXISTENCE_TASKS, predict_all, sweep_threshold

from .base_node import BaseNode
from .graph_state import GraphState, StateManager, PipelineStages


def write_thresholds(thresholds: Dict[str, float], path) -> Path:
    """key=value lines, one per existence task"""
    path = Path(path)
    path.write_text("".join(f"{task}={thresholds[task]!r}\n" for task in EXISTENCE_TASKS), encoding="utf-8")
    return path


def read_thresholds(path) -> Dict[str, float]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Thresholds file not found: {path}")
    values = dotenv_values(path)
    unknown = sorted(set(values) - set(EXISTENCE_TASKS))
    if unknown:
        raise ValueError(f"{path}: unknown tasks {unknown}")
    return {task: float(value) for task, value in values.items()}


def load_model(state: GraphState, node: BaseNode, checkpoint: Optional[str]) -> Optional[DefoggerModel]:
    """Load a checkpoint or put a missing-checkpoint error on the state"""
    if not checkpoint or not Path(checkpoint).exists():
        StateManager.set_error(state, f"Checkpoint not found: {checkpoint}", "missing_checkpoint_error")
        return None
    model = DefoggerModel.load(checkpoint, state["tech"])
    node.logger.info(f"📦 Loaded {model.config.encoder_kind}/{model.config.depth} from {checkpoint}")
    return model


class TrainNode(BaseNode):
    """Train a model on a train manifest, validating on a valid manifest"""

    def __init__(self):
        super().__init__(PipelineStages.TRAIN)

    def execute(self, state: GraphState) -> GraphState:
        train_manifest = read_manifest(self.arg(state, "train_manifest"))
        valid_manifest = read_manifest(self.arg(state, "valid_manifest"))
        sections = state["sections"]

        with precision(settings.defog_precision):
            model = DefoggerModel(sections["model"], state["tech"])
            result = train(model, train_manifest, valid_manifest, sections["train"], state["out_dir"],
                           state["tech"], n_jobs=self.arg(state, "n_jobs", settings.defog_n_jobs))

        state["checkpoint_path"] = str(result.best_checkpoint)
        StateManager.add_written(state, result.best_checkpoint, result.last_checkpoint,
                                 Path(state["out_dir"]) / "training_log.txt")
        final = result.log.iloc[-1]
        c = model.config
        StateManager.record(state, encoder=c.encoder_kind, depth=c.depth, block=c.block_kind,
                            parameters=model.num_parameters(), r=c.r, g=c.g, s=c.s,
                            steps=sections["train"].steps, best_step=result.best_step,
                            final_train_loss=f"{final['train_loss']:.6g}",
                            final_valid_huber=f"{final['valid_huber']:.6g}",
                            final_valid_op_u_f1=f"{final['valid_op_u_f1']:.6g}",
                            checkpoint=Path(result.best_checkpoint).name)
        return state


class SweepNode(BaseNode):
    """Calibrate per-task thresholds of a checkpoint on a validation manifest"""

    def __init__(self):
        super().__init__(PipelineStages.SWEEP)

    def execute(self, state: GraphState) -> GraphState:
        model = load_model(state, self, self.arg(state, "checkpoint"))
        if model is None:
            return state
        c = model.config
        eval_config = state["sections"]["eval"]
        n_jobs = self.arg(state, "n_jobs", settings.defog_n_jobs)
        samples = load_samples(read_manifest(self.arg(state, "valid_manifest")), c.r, c.g, c.s, state["tech"],
                               step=c.step, n_jobs=n_jobs, desc="Validation games")
        predictions = predict_all(model.predict, samples, n_jobs, desc="Predicting validation")

        thresholds, tables = {}, []
        for task in EXISTENCE_TASKS:
            thresholds[task], table = sweep_threshold(predictions, samples, task, eval_config, state["tech"])
            tables.append(table.assign(task=task))
        if not 0.4 < thresholds["g_op_b"] < 0.7:
            self.logger.warning(f"g_op_b threshold {thresholds['g_op_b']:.4g} is outside (0.4, 0.7)")

        out_dir = Path(state["out_dir"])
        thresholds_path = write_thresholds(thresholds, out_dir / "thresholds.txt")
        table_path = out_dir / "sweep_table.txt"
        table_path.write_text(pd.concat(tables, ignore_index=True)
                              [["task", "threshold", "precision", "recall", "f1"]]
                              .to_string(index=False, float_format=lambda v: f"{v:.6f}") + "\n", encoding="utf-8")
        state["thresholds"] = thresholds
        StateManager.add_written(state, thresholds_path, table_path)
        StateManager.record(state, games=len(samples) // 2,
                            **{f"threshold_{task}": f"{value:.6g}" for task, value in thresholds.items()})
        return state
