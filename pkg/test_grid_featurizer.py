#!/usr/bin/env python3
"""
Grid featurization tests: grid_dims, featurize_frame, existence, tech tree loading
"""
import sys
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_array_equal

# 프로젝트 루트를 Python 경로에 추가
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from tech_tree import (TechTree, TechTreeError, UnitTypeDef, default_tech_tree,
                       format_tech_tree, load_tech_tree, parse_tech_tree)
from grid_featurizer import (CountGrid, FeaturizationError, GridSpec, GridSpecError, RawFrame,
                             cells_touched_by_mask, existence, featurize_frame, grid_dims)


def _random_frame(rng, n_units, H, W, n_types, time=0.0):
    units = np.stack([
        rng.integers(-1, 2, n_units),
        rng.integers(0, n_types, n_units),
        rng.integers(0, W, n_units),
        rng.integers(0, H, n_units),
    ], axis=1)
    return RawFrame(time, units)


def _naive_featurize(frame, spec, n_types, me):
    """Brute-force window membership over every cell"""
    H_rg, W_rg = spec.shape
    grid = np.zeros((H_rg, W_rg, 2 * n_types))
    for player, type_id, x, y in frame.units:
        if player == -1:
            continue
        channel = type_id if player == me else n_types + type_id
        for i in range(H_rg):
            for j in range(W_rg):
                if i * spec.g <= y < i * spec.g + spec.r and j * spec.g <= x < j * spec.g + spec.r:
                    grid[i, j, channel] += 1
    return grid


@pytest.mark.parametrize("H,W,r,g,expected", [
    (512, 512, 32, 32, (15, 15)),
    (512, 512, 64, 64, (7, 7)),
    (128, 128, 16, 16, (7, 7)),
])
def test_grid_dims_examples(H, W, r, g, expected):
    assert grid_dims(H, W, r, g) == expected


def test_grid_dims_matches_window_start_count():
    rng = np.random.default_rng(0)
    for _ in range(300):
        g = int(rng.integers(1, 65))
        r = int(rng.integers(g, 65))
        H = int(rng.integers(r + 1, 513))
        W = int(rng.integers(r + 1, 513))
        # window starts i·g with i·g < H − r
        starts_h = len([s for s in range(0, H, g) if s < H - r])
        starts_w = len([s for s in range(0, W, g) if s < W - r])
        assert grid_dims(H, W, r, g) == (starts_h, starts_w)


def test_grid_dims_rejects_empty_grid():
    with pytest.raises(GridSpecError):
        grid_dims(32, 64, 32, 32)
    with pytest.raises(GridSpecError):
        grid_dims(64, 16, 32, 32)


def test_grid_spec_requires_r_at_least_g():
    with pytest.raises(GridSpecError):
        GridSpec(r=16, g=32, H=128, W=128)
    with pytest.raises(GridSpecError):
        GridSpec(r=4, g=0, H=128, W=128)


def test_featurize_empty_frame_is_zero():
    tech = default_tech_tree()
    spec = GridSpec(r=32, g=32, H=256, W=256)
    grid = featurize_frame(RawFrame(0.0), spec, tech, 0)
    assert grid.shape == (7, 7, 12)
    assert not grid.data.any()


def test_featurize_single_enemy_unit_partition():
    tech = default_tech_tree()
    spec = GridSpec(r=32, g=32, H=256, W=256)
    grid = featurize_frame(RawFrame(0.0, [[1, 4, 0, 0]]), spec, tech, perspective_player=0)
    assert np.count_nonzero(grid.data) == 1
    assert grid.data[0, 0, tech.enemy_channel(4)] == 1.0


def test_featurize_overlapping_windows_count_twice():
    tech = default_tech_tree()
    spec = GridSpec(r=32, g=16, H=128, W=128)
    # x=20 lies in windows starting at 0 and 16, y=40 in those starting at 16 and 32
    grid = featurize_frame(RawFrame(0.0, [[0, 1, 20, 40]]), spec, tech, perspective_player=0)
    assert grid.data.sum() == 4.0
    oracle = _naive_featurize(RawFrame(0.0, [[0, 1, 20, 40]]), spec, tech.num_types, 0)
    assert_array_equal(grid.data, oracle)

    grid = featurize_frame(RawFrame(0.0, [[0, 1, 0, 20]]), spec, tech, perspective_player=0)
    assert grid.data.sum() == 2.0
    assert grid.data[0, 0, 1] == 1.0 and grid.data[1, 0, 1] == 1.0


def test_featurize_matches_naive_oracle_on_random_frames():
    tech = default_tech_tree()
    rng = np.random.default_rng(7)
    for r, g in [(32, 32), (32, 16), (48, 16), (8, 8), (20, 7)]:
        spec = GridSpec(r=r, g=g, H=96, W=128)
        for _ in range(5):
            frame = _random_frame(rng, 40, spec.H, spec.W, tech.num_types)
            grid = featurize_frame(frame, spec, tech, perspective_player=1)
            oracle = _naive_featurize(frame, spec, tech.num_types, 1)
            assert_array_equal(grid.data, oracle)
            assert grid.data.sum() == oracle.sum()


def test_featurize_is_permutation_invariant():
    tech = default_tech_tree()
    spec = GridSpec(r=32, g=16, H=128, W=128)
    rng = np.random.default_rng(3)
    frame = _random_frame(rng, 60, spec.H, spec.W, tech.num_types)
    shuffled = RawFrame(frame.time, frame.units[rng.permutation(len(frame))])
    assert featurize_frame(frame, spec, tech, 0) == featurize_frame(shuffled, spec, tech, 0)


def test_partition_case_each_covered_unit_counts_once():
    tech = default_tech_tree()
    spec = GridSpec(r=16, g=16, H=128, W=128)
    rng = np.random.default_rng(11)
    frame = _random_frame(rng, 80, spec.H, spec.W, tech.num_types)
    grid = featurize_frame(frame, spec, tech, 0)
    ext_h, ext_w = spec.covered_extent
    units = frame.units
    covered = (units[:, 0] != -1) & (units[:, 2] < ext_w) & (units[:, 3] < ext_h)
    assert grid.data.sum() == covered.sum()
    assert grid.data.max() <= covered.sum()


def test_featurize_ignores_neutral_and_rejects_unknown_type():
    tech = default_tech_tree()
    spec = GridSpec(r=32, g=32, H=128, W=128)
    grid = featurize_frame(RawFrame(0.0, [[-1, 0, 5, 5]]), spec, tech, 0)
    assert not grid.data.any()
    with pytest.raises(FeaturizationError):
        featurize_frame(RawFrame(0.0, [[0, 6, 5, 5]]), spec, tech, 0)
    with pytest.raises(FeaturizationError):
        featurize_frame(RawFrame(0.0, [[0, 1, 128, 5]]), spec, tech, 0)


def test_existence_is_strict():
    grid = CountGrid(np.zeros((2, 2, 12)), 6)
    assert not existence(grid, 0.1).any()
    grid.data[0, 0, 0] = 1.0
    grid.data[1, 1, 3] = 0.5
    mask = existence(grid, 0.5)
    assert mask[0, 0, 0]
    assert not mask[1, 1, 3]
    assert existence(grid, 0.0)[1, 1, 3]


def test_cells_touched_by_mask_matches_any_over_window():
    spec = GridSpec(r=24, g=8, H=64, W=80)
    rng = np.random.default_rng(5)
    mask = rng.random((64, 80)) < 0.01
    pooled = cells_touched_by_mask(mask, spec)
    for i in range(spec.H_rg):
        for j in range(spec.W_rg):
            window = mask[i * 8:i * 8 + 24, j * 8:j * 8 + 24]
            assert pooled[i, j] == window.any()


def test_tech_tree_text_format_loads_back():
    tree = default_tech_tree()
    assert parse_tech_tree(format_tech_tree(tree)) == tree
    shipped = load_tech_tree(str(project_root / "data" / "default_tech.txt"))
    assert shipped == tree
    assert tree.num_channels == 12
    assert tree.prerequisite_closure([5]) == {0, 2, 3}


def test_tech_tree_validation():
    with pytest.raises(TechTreeError):
        TechTree(types=(UnitTypeDef(0, "a", False, frozenset({1})), UnitTypeDef(1, "b", False, frozenset({0}))))
    with pytest.raises(TechTreeError):
        TechTree(types=(UnitTypeDef(0, "a", True, frozenset(), 5.0, 3.0),))
    with pytest.raises(TechTreeError):
        TechTree(types=(UnitTypeDef(1, "a", False),))
    with pytest.raises(TechTreeError):
        parse_tech_tree("0 base X - 40 0\n")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
