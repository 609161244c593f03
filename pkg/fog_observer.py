#!/usr/bin/env python3
"""
Fog of war: per-player visibility, partial observations, hidden-enemy targets
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from tech_tree import TechTree
from grid_featurizer import (CountGrid, GridSpec, PLAYER_COL, RawFrame, TYPE_COL, X_COL, Y_COL,
                             cells_touched_by_mask)

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Arrays that must share a shape do not"""


@dataclass(eq=False)
class VisibilityMask:
    """H × W walk-tile booleans; mask[y, x]"""
    mask: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.mask.shape

    def is_visible(self, x: int, y: int) -> bool:
        return bool(self.mask[y, x])

    def count(self) -> int:
        return int(self.mask.sum())

    def to_cells(self, spec: GridSpec) -> np.ndarray:
        """Cell visible when any of its walk tiles is visible"""
        return cells_touched_by_mask(self.mask, spec)


def visibility_mask(frame: RawFrame, player: int, tech: TechTree, shape: Tuple[int, int]) -> VisibilityMask:
    """
    Tiles within Euclidean distance <= sight_range of any own unit

    Args:
        frame: full frame
        player: observing player id
        tech: supplies per-type sight ranges
        shape: (H, W) of the map in walk tiles
    """
    H, W = shape
    mask = np.zeros((H, W), dtype=bool)
    own = frame.units_of(player)
    for unit in own:
        sight = tech.types[int(unit[TYPE_COL])].sight_range
        x, y = int(unit[X_COL]), int(unit[Y_COL])
        reach = int(np.floor(sight))
        y0, y1 = max(0, y - reach), min(H, y + reach + 1)
        x0, x1 = max(0, x - reach), min(W, x + reach + 1)
        dy = np.arange(y0, y1)[:, None] - y
        dx = np.arange(x0, x1)[None, :] - x
        mask[y0:y1, x0:x1] |= dx * dx + dy * dy <= sight * sight
    return VisibilityMask(mask)


def observe(frame: RawFrame, player: int, tech: TechTree, shape: Tuple[int, int]) -> RawFrame:
    """All own units plus enemy / neutral units standing on visible tiles"""
    if len(frame) == 0:
        return RawFrame(frame.time, frame.units.copy())
    visible = visibility_mask(frame, player, tech, shape).mask
    units = frame.units
    keep = (units[:, PLAYER_COL] == player) | visible[units[:, Y_COL], units[:, X_COL]]
    return RawFrame(frame.time, units[keep])


def hidden_enemy_grid(full: CountGrid, observed: CountGrid) -> CountGrid:
    """Enemy channels max(full − observed, 0); ally channels zero"""
    if full.shape != observed.shape or full.num_types != observed.num_types:
        raise ShapeError(f"hidden_enemy_grid: {full.shape} vs {observed.shape}")
    data = np.zeros_like(full.data)
    enemy = slice(full.num_types, 2 * full.num_types)
    data[..., enemy] = np.maximum(full.data[..., enemy] - observed.data[..., enemy], 0.0)
    return CountGrid(data, full.num_types)


def hidden_enemy_counts(full: np.ndarray, observed: np.ndarray, num_types: int) -> np.ndarray:
    """Array form of hidden_enemy_grid over any leading axes (… × C_u)"""
    if full.shape != observed.shape:
        raise ShapeError(f"hidden_enemy_counts: {full.shape} vs {observed.shape}")
    hidden = np.zeros_like(full)
    hidden[..., num_types:] = np.maximum(full[..., num_types:] - observed[..., num_types:], 0.0)
    return hidden
