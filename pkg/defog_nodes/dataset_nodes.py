"""
Configuration and dataset nodes for the defogging pipeline
Implements 4 nodes: load_config, simulate, split, featurize_check
"""
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import build_section, load_config_file, settings
from tech_tree import load_tech_tree
from grid_featurizer import FeaturizationError, GridSpec, featurize_frame
from fog_observer import hidden_enemy_counts, observe
from toy_simulator import SimConfig, generate_dataset
from replay_io import manifest_paths, read_manifest, read_replay, split, write_splits
from defogger_model import ModelConfig
from defogger_trainer import TrainConfig
from evaluation import EvalConfig

from .base_node import BaseNode
from .graph_state import GraphState, StateManager, PipelineStages

MODEL_PRESETS = {"desk": ModelConfig.desk, "full": ModelConfig.full}
SECTION_MODELS = {"sim": SimConfig, "model": ModelConfig, "train": TrainConfig, "eval": EvalConfig}


class LoadConfigNode(BaseNode):
    """
    Resolve every configuration section
    Precedence: command-line values, then --config file entries, then the model preset, then defaults

    --seed reaches every section with a seed field only when it was given; otherwise the
    command seed (simulation and split) falls back to the resolved sim.seed
    """

    def __init__(self):
        super().__init__(PipelineStages.LOAD_CONFIG)

    def execute(self, state: GraphState) -> GraphState:
        overrides = load_config_file(state.get("config_path"))
        tech = load_tech_tree(self.arg(state, "tech"))
        cli_sections: Dict[str, Dict] = self.arg(state, "sections", {})
        seed = state.get("seed")

        sections = {}
        for name, model_cls in SECTION_MODELS.items():
            cli_values = dict(cli_sections.get(name, {}))
            if seed is not None and "seed" in model_cls.model_fields:
                cli_values.setdefault("seed", seed)
            file_values = dict(overrides[name])
            if name == "sim":
                cli_values["tech"] = tech
            if name == "model":
                preset = MODEL_PRESETS[self.arg(state, "preset", "desk")]()
                file_values = {**preset.model_dump(exclude_unset=True), **file_values}
            sections[name] = build_section(model_cls, file_values, **cli_values)

        if seed is None:
            state["seed"] = sections["sim"].seed
            state["summary"]["seed"] = state["seed"]
        state["sections"] = sections
        state["tech"] = tech
        Path(state["out_dir"]).mkdir(parents=True, exist_ok=True)
        self.logger.info(f"⚙️ Configuration resolved (config file: {state.get('config_path') or 'none'})")
        return state


class SimulateNode(BaseNode):
    """Generate a synthetic dataset and its manifest"""

    def __init__(self):
        super().__init__(PipelineStages.SIMULATE)

    def execute(self, state: GraphState) -> GraphState:
        count = int(self.arg(state, "count", 10))
        sim_config: SimConfig = state["sections"]["sim"]
        manifest = generate_dataset(state["seed"], count, sim_config, state["out_dir"],
                                    n_jobs=self.arg(state, "n_jobs", settings.defog_n_jobs))
        manifest_path = Path(state["out_dir"]) / "manifest.txt"
        state["manifest_path"] = str(manifest_path)
        StateManager.add_written(state, manifest_path)
        StateManager.record(state, games=len(manifest), manifest=manifest_path.name,
                            first_seed=state["seed"], map=f"{sim_config.height}x{sim_config.width}")
        return state


class SplitNode(BaseNode):
    """Partition a manifest into train / valid / test manifests"""

    def __init__(self):
        super().__init__(PipelineStages.SPLIT)

    def execute(self, state: GraphState) -> GraphState:
        self.require(state, "manifest_path")
        manifest = read_manifest(state["manifest_path"])
        ratios = tuple(self.arg(state, "ratios", (0.8, 0.1, 0.1)))
        parts = split(manifest, ratios, seed=state["seed"])
        written = write_splits(parts, state["out_dir"])
        state["split_paths"] = [str(p) for p in written]
        StateManager.add_written(state, *written)
        StateManager.record(state, train_games=len(parts[0]), valid_games=len(parts[1]),
                            test_games=len(parts[2]), ratios=",".join(f"{r:g}" for r in ratios))
        return state


def check_replay(path: Path, r: int, g: int, tech) -> List[Dict]:
    """
    Featurizer / observer invariants on every frame of one replay, per player

    - own units are never fogged (ally channels of the observation equal the truth)
    - observed counts never exceed the truth
    - hidden + observed enemy counts equal the truth
    - with r = g every unit inside the covered extent is counted exactly once
    """
    replay = read_replay(path)
    spec = GridSpec.for_replay(replay, r, g)
    shape = (replay.height, replay.width)
    n = tech.num_types
    H_cov, W_cov = spec.covered_extent
    rows = []
    for player in (0, 1):
        ally_match = obs_le_full = hidden_sum = conserved = True
        for frame in replay.frames:
            full = featurize_frame(frame, spec, tech, player).data
            seen = featurize_frame(observe(frame, player, tech, shape), spec, tech, player).data
            ally_match &= bool(np.array_equal(full[..., :n], seen[..., :n]))
            obs_le_full &= bool((seen <= full).all())
            hidden = hidden_enemy_counts(full, seen, n)
            hidden_sum &= bool(np.array_equal(hidden[..., n:] + seen[..., n:], full[..., n:]))
            if r == g and len(frame):
                units = frame.units
                inside = (units[:, 2] < W_cov) & (units[:, 3] < H_cov) & (units[:, 0] >= 0)
                conserved &= int(full.sum()) == int(inside.sum())
        rows.append({"game": path.name, "player": player, "frames": len(replay.frames),
                     "ally_match": ally_match, "obs_le_full": obs_le_full, "hidden_sum": hidden_sum,
                     "counts_conserved": conserved,
                     "ok": ally_match and obs_le_full and hidden_sum and conserved})
    return rows


class FeaturizeCheckNode(BaseNode):
    """Run the featurization self-checks over a manifest"""

    def __init__(self):
        super().__init__(PipelineStages.FEATURIZE_CHECK)

    def execute(self, state: GraphState) -> GraphState:
        self.require(state, "manifest_path")
        r = int(self.arg(state, "r", 32))
        g = int(self.arg(state, "g", r))
        tech = state["tech"]
        paths = manifest_paths(read_manifest(state["manifest_path"]))

        rows = []
        for path in tqdm(paths, desc="Checking games", unit="game"):
            rows += check_replay(path, r, g, tech)
        results = pd.DataFrame(rows)
        state["check_results"] = results

        table_path = Path(state["out_dir"]) / "featurize_check.txt"
        table_path.write_text(results.to_string(index=False) + "\n", encoding="utf-8")
        StateManager.add_written(state, table_path)
        failed = int((~results["ok"]).sum())
        StateManager.record(state, games=len(paths), checked=len(results), failed=failed, r=r, g=g)
        if failed:
            bad = results.loc[~results["ok"], ["game", "player"]].itertuples(index=False)
            raise FeaturizationError(f"{failed} featurization checks failed: "
                                     f"{', '.join(f'{game}/p{player}' for game, player in bad)}")
        return state
