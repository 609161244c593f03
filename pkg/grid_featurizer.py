#!/usr/bin/env python3
"""
Spatial featurization: raw frames → coarse count grids

A cell (i, j) pools the walk tiles [i·g, i·g+r) × [j·g, j·g+r); the grid has
H_rg = ceil((H − r)/g) rows and W_rg = ceil((W − r)/g) columns. Every unit
adds 1 to the (side, type) channel of every cell whose window covers it.
Rows index y, columns index x.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from tech_tree import TechTree

logger = logging.getLogger(__name__)

NEUTRAL_PLAYER = -1
PLAYERS = (0, 1)
TERRAIN_CHANNELS = ("walkability", "buildability", "ground_height")

# RawFrame.units columns
PLAYER_COL, TYPE_COL, X_COL, Y_COL = 0, 1, 2, 3


class GridSpecError(ValueError):
    """Window/stride combination yields an empty grid or is malformed"""


class FeaturizationError(ValueError):
    """Frame cannot be featurized (unknown type, out-of-bounds unit, ...)"""


@dataclass(eq=False)
class TerrainMap:
    """H × W × C_T static terrain (walkability, buildability, ground height)"""
    channels: np.ndarray

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 3 or self.channels.shape[2] != len(TERRAIN_CHANNELS):
            raise ValueError(f"Terrain must be H × W × {len(TERRAIN_CHANNELS)}, got {self.channels.shape}")
        if not np.all(np.isfinite(self.channels)):
            raise ValueError("Terrain values must be finite")

    @property
    def height(self) -> int:
        return self.channels.shape[0]

    @property
    def width(self) -> int:
        return self.channels.shape[1]

    def __eq__(self, other):
        return isinstance(other, TerrainMap) and np.array_equal(self.channels, other.channels)


@dataclass(eq=False)
class RawFrame:
    """Full game state at one instant: rows of (player, type, x, y)"""
    time: float
    units: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))

    def __post_init__(self):
        self.units = np.asarray(self.units, dtype=np.int64).reshape(-1, 4)

    def __len__(self) -> int:
        return self.units.shape[0]

    def __eq__(self, other):
        return (isinstance(other, RawFrame)
                and self.time == other.time
                and np.array_equal(self.units, other.units))

    def units_of(self, player: int) -> np.ndarray:
        return self.units[self.units[:, PLAYER_COL] == player]


@dataclass(eq=False)
class Replay:
    """One game: terrain, per-player factions, frames in time order"""
    terrain: TerrainMap
    factions: Tuple[int, int]
    frames: List[RawFrame]

    @property
    def height(self) -> int:
        return self.terrain.height

    @property
    def width(self) -> int:
        return self.terrain.width

    def frame_at(self, time: float) -> RawFrame:
        """Latest frame with frame.time <= time"""
        times = [f.time for f in self.frames]
        index = int(np.searchsorted(times, time, side="right")) - 1
        if index < 0:
            raise IndexError(f"No frame at or before t={time}")
        return self.frames[index]

    def __eq__(self, other):
        return (isinstance(other, Replay)
                and self.terrain == other.terrain
                and tuple(self.factions) == tuple(other.factions)
                and len(self.frames) == len(other.frames)
                and all(a == b for a, b in zip(self.frames, other.frames)))


def grid_dims(H: int, W: int, r: int, g: int) -> Tuple[int, int]:
    """(H_rg, W_rg) = (ceil((H − r)/g), ceil((W − r)/g))"""
    if g < 1:
        raise GridSpecError(f"stride g must be >= 1, got {g}")
    if r >= H or r >= W:
        raise GridSpecError(f"window r={r} leaves an empty grid on a {H}×{W} map")
    return math.ceil((H - r) / g), math.ceil((W - r) / g)


@dataclass(frozen=True)
class GridSpec:
    r: int
    g: int
    H: int
    W: int

    def __post_init__(self):
        if not self.r >= self.g >= 1:
            raise GridSpecError(f"need r >= g >= 1, got r={self.r}, g={self.g}")
        grid_dims(self.H, self.W, self.r, self.g)

    @classmethod
    def for_replay(cls, replay: Replay, r: int, g: int) -> "GridSpec":
        return cls(r=r, g=g, H=replay.height, W=replay.width)

    @property
    def shape(self) -> Tuple[int, int]:
        return grid_dims(self.H, self.W, self.r, self.g)

    @property
    def H_rg(self) -> int:
        return self.shape[0]

    @property
    def W_rg(self) -> int:
        return self.shape[1]

    @property
    def covered_extent(self) -> Tuple[int, int]:
        """Walk-tile extent touched by at least one window"""
        return (self.H_rg - 1) * self.g + self.r, (self.W_rg - 1) * self.g + self.r

    def covering_range(self, coord: int, cells: int) -> Tuple[int, int]:
        """Inclusive range of cell indices whose window [i·g, i·g+r) contains coord"""
        low = max(0, -(-(coord - self.r + 1) // self.g))
        high = min(cells - 1, coord // self.g)
        return low, high


@dataclass(eq=False)
class CountGrid:
    """H_rg × W_rg × C_u unit counts; ally channels first, enemy channels second"""
    data: np.ndarray
    num_types: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 2 * self.num_types:
            raise ValueError(f"CountGrid must be H × W × {2 * self.num_types}, got {self.data.shape}")

    @classmethod
    def zeros(cls, spec: GridSpec, tech: TechTree) -> "CountGrid":
        return cls(np.zeros((spec.H_rg, spec.W_rg, tech.num_channels)), tech.num_types)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @property
    def ally(self) -> np.ndarray:
        return self.data[..., :self.num_types]

    @property
    def enemy(self) -> np.ndarray:
        return self.data[..., self.num_types:]

    def channel(self, side: str, type_id: int) -> int:
        if side not in ("ally", "enemy"):
            raise ValueError(f"side must be 'ally' or 'enemy', got {side}")
        return type_id if side == "ally" else self.num_types + type_id

    def __eq__(self, other):
        return (isinstance(other, CountGrid)
                and self.num_types == other.num_types
                and np.array_equal(self.data, other.data))


def featurize_frame(frame: RawFrame, spec: GridSpec, tech: TechTree, perspective_player: int) -> CountGrid:
    """
    Accumulate unit counts by (side, type) over every covering window

    Neutral units are skipped; unknown type ids and out-of-map units raise.
    """
    grid = np.zeros((spec.H_rg, spec.W_rg, tech.num_channels))
    units = frame.units
    if len(units) == 0:
        return CountGrid(grid, tech.num_types)

    bad_types = units[(units[:, TYPE_COL] < 0) | (units[:, TYPE_COL] >= tech.num_types), TYPE_COL]
    if len(bad_types):
        raise FeaturizationError(f"Unknown unit-type id {int(bad_types[0])} at t={frame.time}")
    out_of_bounds = ((units[:, X_COL] < 0) | (units[:, X_COL] >= spec.W)
                     | (units[:, Y_COL] < 0) | (units[:, Y_COL] >= spec.H))
    if out_of_bounds.any():
        raise FeaturizationError(f"Unit outside the {spec.H}×{spec.W} map at t={frame.time}")

    for player, type_id, x, y in units:
        if player == NEUTRAL_PLAYER:
            continue
        channel = type_id if player == perspective_player else tech.num_types + type_id
        i_low, i_high = spec.covering_range(int(y), spec.H_rg)
        j_low, j_high = spec.covering_range(int(x), spec.W_rg)
        if i_low <= i_high and j_low <= j_high:
            grid[i_low:i_high + 1, j_low:j_high + 1, channel] += 1.0

    return CountGrid(grid, tech.num_types)


def featurize_frames(frames: Sequence[RawFrame], spec: GridSpec, tech: TechTree, perspective_player: int) -> np.ndarray:
    """Stack featurized frames into a T × H_rg × W_rg × C_u array"""
    if not frames:
        return np.zeros((0, spec.H_rg, spec.W_rg, tech.num_channels))
    return np.stack([featurize_frame(f, spec, tech, perspective_player).data for f in frames])


def existence(grid: CountGrid, threshold: float) -> np.ndarray:
    """Boolean grid: count strictly greater than threshold"""
    if threshold < 0:
        raise ValueError(f"threshold must be non-negative, got {threshold}")
    return grid.data > threshold


def cells_touched_by_mask(mask: np.ndarray, spec: GridSpec) -> np.ndarray:
    """
    Pool a walk-tile boolean mask to cells: a cell is set when any tile in its window is set
    """
    H_rg, W_rg = spec.shape
    # 2-D prefix sums make every window query O(1)
    prefix = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), dtype=np.int64)
    prefix[1:, 1:] = np.cumsum(np.cumsum(mask.astype(np.int64), axis=0), axis=1)
    rows = np.arange(H_rg) * spec.g
    cols = np.arange(W_rg) * spec.g
    r0, c0 = rows[:, None], cols[None, :]
    r1 = np.minimum(r0 + spec.r, mask.shape[0])
    c1 = np.minimum(c0 + spec.r, mask.shape[1])
    window_sums = prefix[r1, c1] - prefix[r0, c1] - prefix[r1, c0] + prefix[r0, c0]
    return window_sums > 0
