"""
Evaluation nodes for the defogging pipeline
Implements 3 nodes: evaluate, report, heatmap
"""
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

from config import settings
from grid_featurizer import CountGrid, GridSpec
from replay_io import manifest_paths, read_manifest, read_replay
from sequence_sampler import load_samples, sample_sequence
from baselines import BASELINES
from evaluation import EvalReport, baseline_predictor, evaluate_predictor, heatmap, parse_grid, report

from .base_node import BaseNode
from .graph_state import GraphState, StateManager, PipelineStages
from .model_nodes import load_model, read_thresholds


def resolve_predictor(state: GraphState, node: BaseNode, name: str,
                      g: int, s: float) -> Optional[Tuple[Callable, int, float, Optional[float]]]:
    """
    A baseline name or a checkpoint path -> (predictor, g, s, step)

    Checkpoints bring their own grid, horizon and input step.
    """
    if name in BASELINES:
        return baseline_predictor(name, state["tech"]), g, s, None
    model = load_model(state, node, name)
    if model is None:
        return None
    return model.predict, model.config.g, model.config.s, model.config.step


class EvaluateNode(BaseNode):
    """Score one predictor on a manifest"""

    def __init__(self):
        super().__init__(PipelineStages.EVALUATE)

    def execute(self, state: GraphState) -> GraphState:
        name = self.arg(state, "predictor", "PM")
        resolved = resolve_predictor(state, self, name, int(self.arg(state, "g", 32)), float(self.arg(state, "s", 15)))
        if resolved is None:
            return state
        predictor, g, s, step = resolved
        thresholds_path = self.arg(state, "thresholds")
        thresholds = read_thresholds(thresholds_path) if thresholds_path else None
        n_jobs = self.arg(state, "n_jobs", settings.defog_n_jobs)

        manifest = read_manifest(self.arg(state, "manifest"))
        samples = load_samples(manifest, g, g, s, state["tech"], step=step, n_jobs=n_jobs,
                               desc="Evaluation games")
        result = EvalReport(games=len(manifest))
        label = name if name in BASELINES else Path(name).stem
        scores = evaluate_predictor(label, predictor, samples, g, s, result, thresholds,
                                    state["sections"]["eval"], state["tech"], n_jobs)

        written = result.save(state["out_dir"])
        state["report"] = result
        StateManager.add_written(state, *written)
        values: Dict[str, str] = {}
        for score in scores:
            if score.task == "huber":
                values["huber"] = f"{score.huber:.6f}"
            else:
                values.update({f"{score.task}_precision": f"{score.precision:.6f}",
                               f"{score.task}_recall": f"{score.recall:.6f}",
                               f"{score.task}_f1": f"{score.f1:.6f}"})
        StateManager.record(state, predictor=label, games=len(manifest), g=g, s=s, **values)
        return state


class ReportNode(BaseNode):
    """Baselines and trained models side by side over a (g, s) grid"""

    def __init__(self):
        super().__init__(PipelineStages.REPORT)

    def execute(self, state: GraphState) -> GraphState:
        models = {}
        for entry in self.arg(state, "models", []):
            # name=checkpoint[:thresholds]
            name, _, rest = entry.partition("=")
            checkpoint, _, thresholds_path = rest.partition(":")
            model = load_model(state, self, checkpoint)
            if model is None:
                return state
            models[name] = (model, read_thresholds(thresholds_path) if thresholds_path else {})

        grid = parse_grid(self.arg(state, "grid", "64:15,32:30,32:15,32:5,32:0"))
        baselines = list(self.arg(state, "baselines", list(BASELINES)))
        result = report(models, baselines, read_manifest(self.arg(state, "manifest")), grid,
                        state["sections"]["eval"], state["tech"],
                        n_jobs=self.arg(state, "n_jobs", settings.defog_n_jobs))

        written = result.save(state["out_dir"])
        state["report"] = result
        StateManager.add_written(state, *written)
        StateManager.record(state, games=result.games, rows=len(result.rows),
                            grid=",".join(f"{g}:{s:g}" for g, s in grid),
                            predictors=",".join(baselines + list(models)))
        print(result.render())
        return state


class HeatmapNode(BaseNode):
    """Input / predicted / real graymaps for one step of one game"""

    def __init__(self):
        super().__init__(PipelineStages.HEATMAP)

    def execute(self, state: GraphState) -> GraphState:
        name = self.arg(state, "predictor", "PM")
        resolved = resolve_predictor(state, self, name, int(self.arg(state, "g", 32)), float(self.arg(state, "s", 15)))
        if resolved is None:
            return state
        predictor, g, s, input_step = resolved
        tech = state["tech"]
        paths = manifest_paths(read_manifest(self.arg(state, "manifest")))
        game = int(self.arg(state, "game", 0))
        if not 0 <= game < len(paths):
            raise ValueError(f"game index {game} outside the manifest's {len(paths)} games")

        replay = read_replay(paths[game])
        player = int(self.arg(state, "player", 0))
        sample = sample_sequence(replay, GridSpec.for_replay(replay, g, g), s, player, tech, step=input_step,
                                 game_id=paths[game].name)
        step = int(self.arg(state, "step", sample.num_steps - 1))
        if not 0 <= step < sample.num_steps:
            raise ValueError(f"step {step} outside 0..{sample.num_steps - 1}")
        type_id = int(self.arg(state, "type_id", 0))
        if not 0 <= type_id < tech.num_types:
            raise ValueError(f"unit type {type_id} outside 0..{tech.num_types - 1}")

        predictions = predictor(sample)
        n = tech.num_types
        written = heatmap(CountGrid(predictions.counts[step], n), CountGrid(sample.targets[step], n),
                          CountGrid(sample.obs[step], n), type_id, Path(state["out_dir"]) / "heatmap.pgm",
                          side=self.arg(state, "side", "enemy"), scale=int(self.arg(state, "scale", 1)))
        StateManager.add_written(state, *written)
        StateManager.record(state, predictor=name if name in BASELINES else Path(name).stem, game=paths[game].name,
                            player=player, step=step, time=f"{sample.times[step]:g}",
                            unit_type=tech.types[type_id].name, images=len(written))
        return state
