#!/usr/bin/env python3
"""
Rule-based defogging baselines

- Input: copy the current observation
- PS (previous seen): last observed count of every cell, refreshed while the cell is visible
- PM (perfect memory): running maximum of observed counts, nothing is ever forgotten
- PM+R: PM plus the buildings the tech tree says must exist for the enemy types seen so far

Ally channels are always copied from the observation (own units are never
fogged). Global predictions are hard 0/1 probabilities.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Set, Tuple

import numpy as np

from tech_tree import TechTree
from sequence_sampler import Predictions, Sample

logger = logging.getLogger(__name__)


@dataclass
class MemoryState:
    """What a rule-based predictor remembers about the enemy, per cell and type"""
    last_seen: np.ndarray
    ever_seen_max: np.ndarray
    seen_types: Set[int] = field(default_factory=set)
    last_seen_visible_mask: Optional[np.ndarray] = None
    last_building_cell: Optional[Tuple[int, int]] = None

    @classmethod
    def empty(cls, height: int, width: int, num_types: int) -> "MemoryState":
        return cls(
            last_seen=np.zeros((height, width, num_types)),
            ever_seen_max=np.zeros((height, width, num_types)),
            last_seen_visible_mask=np.zeros((height, width), dtype=bool),
        )

    def update(self, enemy_obs: np.ndarray, visible: np.ndarray, tech: TechTree) -> None:
        """Fold in one step: visible cells are reset to what is observed now"""
        self.last_seen = np.where(visible[..., None], enemy_obs, self.last_seen)
        self.ever_seen_max = np.maximum(self.ever_seen_max, enemy_obs)
        self.last_seen_visible_mask = visible.copy()
        self.seen_types.update(int(t) for t in np.flatnonzero(enemy_obs.max(axis=(0, 1)) > 0))

        buildings = tech.building_ids
        if buildings:
            building_counts = enemy_obs[..., buildings].sum(axis=-1)
            if building_counts.max() > 0:
                i, j = np.unravel_index(int(np.argmax(building_counts)), building_counts.shape)
                self.last_building_cell = (int(i), int(j))


def _global_from_counts(enemy_counts: np.ndarray) -> np.ndarray:
    return (enemy_counts.max(axis=(0, 1)) > 0).astype(np.float64)


def _assemble(sample: Sample, enemy_per_step, global_per_step) -> Predictions:
    n = sample.num_types
    counts = np.array(sample.obs, dtype=np.float64, copy=True)
    counts[..., n:] = np.stack(enemy_per_step)
    return Predictions(counts, np.stack(global_per_step))


def input_predict(sample: Sample, tech: TechTree = None) -> Predictions:
    """Prediction at step k is o_{t_k}; global = enemy types present in o_{t_k}"""
    n = sample.num_types
    enemy = [sample.obs[k, ..., n:] for k in range(sample.num_steps)]
    return _assemble(sample, enemy, [_global_from_counts(e) for e in enemy])


def ps_predict(sample: Sample, tech: TechTree) -> Predictions:
    """Last seen count per cell; a visible cell shows exactly what is observed now"""
    n = sample.num_types
    memory = MemoryState.empty(sample.spec.H_rg, sample.spec.W_rg, n)
    enemy, global_probs = [], []
    for k in range(sample.num_steps):
        memory.update(sample.obs[k, ..., n:], sample.visible_cells[k], tech)
        enemy.append(memory.last_seen.copy())
        global_probs.append(_global_from_counts(memory.last_seen))
    return _assemble(sample, enemy, global_probs)


def pm_predict(sample: Sample, tech: TechTree) -> Predictions:
    """Running maximum of every observed enemy count"""
    n = sample.num_types
    memory = MemoryState.empty(sample.spec.H_rg, sample.spec.W_rg, n)
    enemy, global_probs = [], []
    for k in range(sample.num_steps):
        memory.update(sample.obs[k, ..., n:], sample.visible_cells[k], tech)
        enemy.append(memory.ever_seen_max.copy())
        global_probs.append(_global_from_counts(memory.ever_seen_max))
    return _assemble(sample, enemy, global_probs)


def pmr_predict(sample: Sample, tech: TechTree) -> Predictions:
    """
    PM plus tech-tree inference

    Every type in the prerequisite closure of the seen enemy types is asserted
    globally. Each inferred building type never actually seen adds one unit at
    the most recently observed enemy building cell, or at the enemy start cell
    when no enemy building has been observed yet.
    """
    n = sample.num_types
    buildings = set(tech.building_ids)
    memory = MemoryState.empty(sample.spec.H_rg, sample.spec.W_rg, n)
    enemy, global_probs = [], []
    for k in range(sample.num_steps):
        memory.update(sample.obs[k, ..., n:], sample.visible_cells[k], tech)
        counts = memory.ever_seen_max.copy()
        probs = _global_from_counts(counts)

        inferred = tech.prerequisite_closure(sorted(memory.seen_types))
        probs[sorted(inferred)] = 1.0
        cell = memory.last_building_cell or sample.enemy_start_cell
        for type_id in sorted((inferred & buildings) - memory.seen_types):
            counts[cell[0], cell[1], type_id] += 1.0

        enemy.append(counts)
        global_probs.append(probs)
    return _assemble(sample, enemy, global_probs)


BASELINES: Dict[str, Callable[[Sample, TechTree], Predictions]] = {
    "Input": input_predict,
    "PS": ps_predict,
    "PM": pm_predict,
    "PM+R": pmr_predict,
}


def run_baseline(name: str, sample: Sample, tech: TechTree) -> Predictions:
    if name not in BASELINES:
        raise KeyError(f"Unknown baseline '{name}' (choose from {sorted(BASELINES)})")
    return BASELINES[name](sample, tech)
