#!/usr/bin/env python3
"""
Aligned (input, target) sequences for one player of one game

Input frames are taken at t_k = 180 + k·step, step = max(s, 5), for every
t_k in [180, 660]. For each t_k the sample holds the partial observation
o_{t_k}, the full-state target y_{t_k+s}, the observation o_{t_k+s} at
target time and per-type global existence flags of y_{t_k+s}.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from tech_tree import TechTree
from grid_featurizer import GridSpec, Replay, TerrainMap, featurize_frames
from fog_observer import hidden_enemy_counts, observe, visibility_mask
from replay_io import manifest_paths, read_replay

logger = logging.getLogger(__name__)

WINDOW_START = 180.0
WINDOW_END = 660.0
MIN_STEP = 5.0


class SamplingError(ValueError):
    """Replay cannot provide the requested sequence"""


def step_for_horizon(s: float, step: Optional[float] = None) -> float:
    """Seconds between consecutive inputs; max(s, 5) unless overridden"""
    if step is None:
        return max(float(s), MIN_STEP)
    if step < MIN_STEP:
        raise SamplingError(f"step must be >= {MIN_STEP} s, got {step}")
    return float(step)


def input_times(s: float, step: Optional[float] = None) -> np.ndarray:
    step = step_for_horizon(s, step)
    count = int(math.floor((WINDOW_END - WINDOW_START) / step + 1e-9)) + 1
    return WINDOW_START + step * np.arange(count)


@dataclass(eq=False)
class Sample:
    """
    One game seen by one player

    Arrays are indexed [k, i, j, c] with k over input steps; channels follow
    the CountGrid layout (ally types, then enemy types).
    """
    player: int
    spec: GridSpec
    step: float
    horizon: float
    times: np.ndarray
    obs: np.ndarray
    targets: np.ndarray
    target_obs: np.ndarray
    global_targets: np.ndarray
    visible_cells: np.ndarray
    terrain: TerrainMap
    f_me: int
    f_op: int
    enemy_start_cell: Tuple[int, int]
    game_id: str = ""

    @property
    def num_steps(self) -> int:
        return len(self.times)

    @property
    def num_types(self) -> int:
        return self.obs.shape[-1] // 2

    def hidden_targets(self) -> np.ndarray:
        """Hidden enemy counts at target time: max(y − o, 0) on enemy channels"""
        return hidden_enemy_counts(self.targets, self.target_obs, self.num_types)


@dataclass(eq=False)
class Predictions:
    """
    Per-step predictor output aligned with a Sample

    counts: T × H_rg × W_rg × C_u predicted unit counts (all channels)
    global_probs: T × |types| probabilities of enemy type existence
    """
    counts: np.ndarray
    global_probs: np.ndarray

    def clamped(self) -> "Predictions":
        return Predictions(np.maximum(self.counts, 0.0), self.global_probs)

    def check_aligned(self, sample: Sample) -> None:
        if self.counts.shape != sample.targets.shape:
            raise ValueError(f"Prediction counts {self.counts.shape} vs targets {sample.targets.shape}")
        if self.global_probs.shape != sample.global_targets.shape:
            raise ValueError(f"Global predictions {self.global_probs.shape} vs {sample.global_targets.shape}")


def _cell_of(spec: GridSpec, x: int, y: int) -> Tuple[int, int]:
    return min(y // spec.g, spec.H_rg - 1), min(x // spec.g, spec.W_rg - 1)


def sample_sequence(replay: Replay, spec: GridSpec, s: float, player: int, tech: TechTree,
                    step: Optional[float] = None, game_id: str = "") -> Sample:
    """
    Build the aligned sequence of one player

    Raises:
        SamplingError: replay ends before 660 + s seconds or grid does not fit the map
    """
    if (spec.H, spec.W) != (replay.height, replay.width):
        raise SamplingError(f"GridSpec is for {spec.H}×{spec.W}, replay map is {replay.height}×{replay.width}")
    if player not in (0, 1):
        raise SamplingError(f"player must be 0 or 1, got {player}")
    if s < 0:
        raise SamplingError(f"horizon s must be >= 0, got {s}")
    if not replay.frames or replay.frames[-1].time < WINDOW_END + s or replay.frames[0].time > WINDOW_START:
        last = replay.frames[-1].time if replay.frames else None
        raise SamplingError(f"replay covers up to t={last}, needs [{WINDOW_START}, {WINDOW_END + s}]")

    step = step_for_horizon(s, step)
    times = input_times(s, step)
    shape = (replay.height, replay.width)
    n_types = tech.num_types

    now = [replay.frame_at(t) for t in times]
    later = [replay.frame_at(t + s) for t in times]
    obs = featurize_frames([observe(f, player, tech, shape) for f in now], spec, tech, player)
    targets = featurize_frames(later, spec, tech, player)
    target_obs = featurize_frames([observe(f, player, tech, shape) for f in later], spec, tech, player)
    visible = [visibility_mask(f, player, tech, shape).to_cells(spec) for f in now]

    global_targets = targets[..., n_types:].max(axis=(1, 2)) >= 1.0

    opponent = 1 - player
    enemy_units = replay.frames[0].units_of(opponent)
    enemy_buildings = [u for u in enemy_units if tech.types[int(u[1])].is_building]
    anchor = enemy_buildings[0] if enemy_buildings else (enemy_units[0] if len(enemy_units) else None)
    if anchor is None:
        enemy_start_cell = (spec.H_rg - 1, spec.W_rg - 1)
    else:
        enemy_start_cell = _cell_of(spec, int(anchor[2]), int(anchor[3]))

    return Sample(
        player=player, spec=spec, step=step, horizon=float(s), times=times,
        obs=obs, targets=targets, target_obs=target_obs,
        global_targets=global_targets, visible_cells=np.stack(visible),
        terrain=replay.terrain, f_me=int(replay.factions[player]), f_op=int(replay.factions[opponent]),
        enemy_start_cell=enemy_start_cell, game_id=game_id,
    )


def sample_both_players(replay: Replay, spec: GridSpec, s: float, tech: TechTree,
                        step: Optional[float] = None, game_id: str = "") -> List[Sample]:
    """Both perspectives of one game, player 0 first"""
    return [sample_sequence(replay, spec, s, player, tech, step, game_id) for player in (0, 1)]


def _load_game(path: Path, r: int, g: int, s: float, tech: TechTree, step: Optional[float],
               players: Sequence[int]) -> List[Sample]:
    replay = read_replay(path)
    spec = GridSpec.for_replay(replay, r, g)
    return [sample_sequence(replay, spec, s, p, tech, step, game_id=path.name) for p in players]


def load_samples(manifest: pd.DataFrame, r: int, g: int, s: float, tech: TechTree,
                 step: Optional[float] = None, players: Sequence[int] = (0, 1),
                 n_jobs: int = 1, desc: str = "Sampling games") -> List[Sample]:
    """
    Samples for every game of a manifest, in manifest order then player order

    Results do not depend on n_jobs.
    """
    paths = manifest_paths(manifest)
    per_game = Parallel(n_jobs=n_jobs)(
        delayed(_load_game)(path, r, g, s, tech, step, tuple(players))
        for path in tqdm(paths, desc=desc, unit="game")
    )
    samples = [sample for game in per_game for sample in game]
    logger.info(f"📦 {len(samples)} samples from {len(paths)} games (r={r}, g={g}, s={s})")
    return samples
