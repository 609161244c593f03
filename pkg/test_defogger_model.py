#!/usr/bin/env python3
"""
Defogger model tests: shapes, static encoding, init behaviour, gradients, parameter counts
"""
import sys
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from tensorgrad import ShapeError, Tensor, assert_gradcheck, precision
from tensorgrad import functional as F
from tech_tree import default_tech_tree
from grid_featurizer import GridSpec, TerrainMap
from sequence_sampler import Sample
from baselines import input_predict
from defogger_model import (QUOTED_PARAMETER_COUNTS, CEncoder, CLEncoder, ConvBlock, DefoggerModel, ModelConfig,
                            ModelOutput, reference_parameter_counts, split_layers)

TECH = default_tech_tree()
N = TECH.num_types


def tiny_config(**overrides) -> ModelConfig:
    values = dict(conv_channels=3, lstm_channels=8, kernel_size=2, terrain_channels=2, faction_channels=2,
                  r=4, g=4, seed=1)
    values.update(overrides)
    return ModelConfig(**values)


def tiny_sample(T: int = 2, seed: int = 0, size: int = 16, f_me: int = 0, f_op: int = 2) -> Sample:
    """3 × 3 grid (r = g = 4 on a 16 × 16 map)"""
    rng = np.random.default_rng(seed)
    spec = GridSpec(4, 4, size, size)
    H_rg, W_rg = spec.shape
    obs = rng.integers(0, 3, size=(T, H_rg, W_rg, 2 * N)).astype(np.float64)
    targets = obs + rng.integers(0, 2, size=obs.shape)
    terrain = TerrainMap(np.stack([rng.integers(0, 2, (size, size)), rng.integers(0, 2, (size, size)),
                                   rng.normal(size=(size, size))], axis=-1))
    return Sample(
        player=0, spec=spec, step=5.0, horizon=5.0, times=180.0 + 5.0 * np.arange(T),
        obs=obs, targets=targets, target_obs=obs.copy(),
        global_targets=targets[..., N:].max(axis=(1, 2)) >= 1,
        visible_cells=np.ones((T, H_rg, W_rg), dtype=bool), terrain=terrain,
        f_me=f_me, f_op=f_op, enemy_start_cell=(2, 2),
    )


# ----------------------------------------------------------------------
# Configuration and layout
# ----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(depth=5)
    with pytest.raises(ValueError):
        ModelConfig(lstm_channels=30)
    with pytest.raises(ValueError):
        ModelConfig(faction_channels=7)
    with pytest.raises(ValueError):
        ModelConfig(block_kind="dense")
    with pytest.raises(ValueError):
        ModelConfig(step=2.5)
    assert ModelConfig().step is None and ModelConfig(step="10").step == 10.0
    assert ModelConfig(depth="9", predict_delta="false").depth == 9
    assert ModelConfig.desk().hidden_size == 64


def test_split_layers():
    assert split_layers(4, 4) == [1, 1, 1, 1]
    assert split_layers(9, 4) == [3, 2, 2, 2]
    assert split_layers(9, 2) == [5, 4]
    assert split_layers(16, 3) == [6, 5, 5]


@pytest.mark.parametrize("depth", [4, 9, 16])
def test_c_encoder_reaches_single_cell(depth):
    config = tiny_config(encoder_kind="C", depth=depth, conv_channels=2)
    encoder = CEncoder(3, config, np.random.default_rng(0))
    assert sum(layer.stride == 2 for layer in encoder.layers) == 4
    assert len(encoder.layers) == depth
    for height in range(1, 17):
        for width in (1, height, 16):
            out = encoder.feature_map(Tensor(np.ones((height, width, 3))))
            assert out.shape == (1, 1, 2), (height, width)


def test_cl_state_extents_halve_per_block():
    for depth, expected in [(4, [(4, 3)]), (9, [(4, 3), (2, 2)]), (16, [(4, 3), (2, 2), (1, 1)])]:
        encoder = CLEncoder(5, tiny_config(depth=depth), np.random.default_rng(0))
        assert encoder.state_shapes(7, 5) == expected
        assert encoder.skip_factors == [2 ** (j + 1) for j in range(len(expected))]


def test_cell_memory_adds_a_grid_resolution_state():
    encoder = CLEncoder(5, tiny_config(depth=9, cell_memory=True), np.random.default_rng(0))
    assert encoder.skip_factors == [1, 2, 4]
    assert encoder.state_shapes(7, 5) == [(7, 5), (4, 3), (2, 2)]
    assert encoder.blocks[1].cell_lstm is None

    model = DefoggerModel(tiny_config(cell_memory=True), TECH)
    state = model.initial_state(GridSpec(4, 4, 16, 16))
    assert [h.shape for h, _ in state.blocks] == [(3, 3, 2), (2, 2, 2)]


def test_c_encoder_embeds_to_lstm_width():
    config = tiny_config(encoder_kind="C", conv_channels=5, lstm_channels=12)
    encoder = CEncoder(3, config, np.random.default_rng(0))
    assert encoder.output_size == config.hidden_size == 3
    assert encoder(Tensor(np.ones((6, 4, 3)))).shape == (3,)


def test_desk_preset():
    desk = ModelConfig.desk()
    assert (desk.conv_channels, desk.hidden_size, desk.depth) == (32, 64, 4)
    assert desk.cell_memory and desk.lr == 2e-3
    assert ModelConfig().lr == 1e-4 and not ModelConfig.full().cell_memory
    assert ModelConfig.desk(lr=1e-4).lr == 1e-4


@pytest.mark.parametrize("kind", ["basic", "gated", "residual"])
def test_block_kinds_keep_width_and_stride(kind):
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(5, 5, 3)))
    assert ConvBlock(3, 4, 2, 1, kind, "elu", rng)(x).shape == (5, 5, 4)
    assert ConvBlock(3, 4, 3, 2, kind, "relu", rng)(x).shape == (3, 3, 4)


def test_residual_block_uses_identity_when_shapes_agree():
    rng = np.random.default_rng(0)
    block = ConvBlock(4, 4, 3, 1, "residual", "elu", rng)
    assert block.shortcut is None
    for p in block.parameters():
        p.data[...] = 0.0
    x = np.abs(rng.normal(size=(3, 3, 4)))
    assert_allclose(block(Tensor(x)).data, x, atol=1e-6)


# ----------------------------------------------------------------------
# Static encoding
# ----------------------------------------------------------------------

def test_static_encoding_matches_grid():
    model = DefoggerModel(tiny_config(), TECH)
    sample = tiny_sample()
    static = model.encode_static(sample.terrain, 0, 1, sample.spec)
    assert static.shape == (3, 3, 2 + 2)

    spec = GridSpec(4, 3, 17, 14)
    wide = DefoggerModel(tiny_config(r=4, g=3), TECH)
    terrain = TerrainMap(np.zeros((17, 14, 3)))
    assert wide.encode_static(terrain, 0, 0, spec).shape[:2] == spec.shape


def test_zero_terrain_and_weights_give_zero_terrain_slice():
    model = DefoggerModel(tiny_config(), TECH)
    model.static.terrain_conv.kernel.data[...] = 0.0
    static = model.encode_static(TerrainMap(np.zeros((16, 16, 3))), 1, 2, GridSpec(4, 4, 16, 16))
    assert not static.data[..., :2].any()


def test_faction_slice_depends_only_on_factions():
    model = DefoggerModel(tiny_config(), TECH)
    a = model.encode_static(tiny_sample(seed=1).terrain, 2, 0, GridSpec(4, 4, 16, 16))
    b = model.encode_static(tiny_sample(seed=2).terrain, 2, 0, GridSpec(4, 4, 16, 16))
    c = model.encode_static(tiny_sample(seed=2).terrain, 0, 2, GridSpec(4, 4, 16, 16))
    assert_array_equal(a.data[..., 2:], b.data[..., 2:])
    assert (a.data[..., 2:] != c.data[..., 2:]).any()
    assert_array_equal(a.data[0, 0, 2:], a.data[2, 1, 2:])
    with pytest.raises(ValueError):
        model.encode_static(tiny_sample().terrain, 7, 0, GridSpec(4, 4, 16, 16))


# ----------------------------------------------------------------------
# Forward behaviour
# ----------------------------------------------------------------------

@pytest.mark.parametrize("kind,cell_memory", [("C", False), ("CL", False), ("CL", True)])
def test_zero_initialized_heads_reproduce_input(kind, cell_memory):
    sample = tiny_sample(T=3)
    model = DefoggerModel(tiny_config(encoder_kind=kind, cell_memory=cell_memory), TECH)
    predictions = model.predict(sample)
    assert_array_equal(predictions.counts, input_predict(sample).counts)
    assert_array_equal(predictions.global_probs, np.full((3, N), 0.5))


def test_full_value_mode_starts_at_zero():
    model = DefoggerModel(tiny_config(predict_delta=False), TECH)
    assert not model.predict(tiny_sample()).counts.any()


def test_forward_is_deterministic_and_state_resets_per_game():
    model = DefoggerModel(tiny_config(zero_init_heads=False, depth=9), TECH)
    first, other = tiny_sample(seed=3), tiny_sample(seed=4)
    before = model.predict(first)
    model.predict(other)
    after = model.predict(first)
    assert_array_equal(before.counts, after.counts)
    assert_array_equal(before.global_probs, after.global_probs)
    twin = DefoggerModel(tiny_config(zero_init_heads=False, depth=9), TECH)
    assert_array_equal(twin.predict(first).counts, before.counts)


def test_latent_state_carries_across_steps():
    model = DefoggerModel(tiny_config(zero_init_heads=False), TECH)
    sample = tiny_sample(T=2)
    sample.obs[1] = sample.obs[0]
    counts = model.predict(sample).counts
    # same input twice, different recurrent state
    assert (counts[0] != counts[1]).any()


def test_cell_memory_separates_cells_sharing_a_downsampled_state():
    sample = tiny_sample(T=2, seed=6)
    sample.obs[:, 0, 0] = 0.0
    sample.obs[:, 0, 1] = 0.0
    sample.obs[0, 0, 1, N + 4] = 2.0

    coarse = DefoggerModel(tiny_config(zero_init_heads=False), TECH).predict(sample).counts
    assert_array_equal(coarse[1, 0, 0], coarse[1, 0, 1])

    fine = DefoggerModel(tiny_config(zero_init_heads=False, cell_memory=True), TECH).predict(sample).counts
    assert (fine[1, 0, 0] != fine[1, 0, 1]).any()


def test_spatial_lstm_permutation_equivariance():
    model = DefoggerModel(tiny_config(), TECH)
    cell = model.encoder.blocks[0].lstm
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 3, 3))
    h, c = rng.normal(size=(3, 3, 2)), rng.normal(size=(3, 3, 2))
    perm = rng.permutation(9)

    def permute(a):
        return a.reshape(9, -1)[perm].reshape(a.shape)

    h1, c1 = cell(Tensor(x), (Tensor(h), Tensor(c)))
    h2, c2 = cell(Tensor(permute(x)), (Tensor(permute(h)), Tensor(permute(c))))
    assert_allclose(h2.data, permute(h1.data), atol=1e-6)
    assert_allclose(c2.data, permute(c1.data), atol=1e-6)


def test_mismatched_grid_is_rejected():
    model = DefoggerModel(tiny_config(r=8, g=4), TECH)
    with pytest.raises(ShapeError):
        model.forward(tiny_sample())


# ----------------------------------------------------------------------
# Loss
# ----------------------------------------------------------------------

def test_perfect_prediction_loss_is_near_zero():
    sample = tiny_sample()
    model = DefoggerModel(tiny_config(), TECH)
    output = ModelOutput(
        counts=[Tensor(sample.targets[k]) for k in range(2)],
        logits=[Tensor(np.where(sample.global_targets[k], 40.0, -40.0)) for k in range(2)],
    )
    assert model.loss(output, sample).item() < 1e-12


def test_zero_head_weight_is_pure_regression():
    sample = tiny_sample()
    model = DefoggerModel(tiny_config(head_weight=0.0), TECH)
    output = model.forward(sample)
    huber = np.mean([F.huber(output.counts[k], sample.targets[k]).item() for k in range(2)])
    assert_allclose(model.loss(output, sample).item(), huber, rtol=1e-5)

    weighted = DefoggerModel(tiny_config(head_weight=1.0), TECH)
    assert weighted.loss(weighted.forward(sample), sample).item() > huber


@pytest.mark.parametrize("kind,depth,block,cell_memory", [
    ("C", 4, "basic", False), ("C", 4, "gated", False), ("C", 4, "residual", False),
    ("CL", 4, "basic", False), ("CL", 4, "gated", False), ("CL", 4, "residual", False),
    ("CL", 9, "basic", False), ("CL", 4, "basic", True),
    ("CL", 9, "residual", True),
])
def test_full_model_gradients(kind, depth, block, cell_memory):
    with precision("float64"):
        sample = tiny_sample(T=2, seed=7)
        model = DefoggerModel(tiny_config(encoder_kind=kind, depth=depth, block_kind=block,
                                          cell_memory=cell_memory, zero_init_heads=False), TECH)
        assert_gradcheck(lambda: model.loss(model.forward(sample), sample), model.parameters(),
                         max_entries=6, rng=np.random.default_rng(0))


def test_mse_loss_gradients():
    with precision("float64"):
        sample = tiny_sample(T=2, seed=8)
        model = DefoggerModel(tiny_config(regression_loss="mse", zero_init_heads=False,
                                          nonlinearity="selu"), TECH)
        assert_gradcheck(lambda: model.loss(model.forward(sample), sample), model.parameters(),
                         max_entries=4, rng=np.random.default_rng(1))


# ----------------------------------------------------------------------
# Sizes and persistence
# ----------------------------------------------------------------------

def test_reference_parameter_counts():
    table = reference_parameter_counts(TECH)
    counts = {(row.encoder, row.depth): row.parameters for row in table.itertuples()}
    assert counts == {("C", 4): 306_022, ("C", 9): 634_342, ("CL", 4): 421_030, ("CL", 9): 839_846}
    for key, quoted in QUOTED_PARAMETER_COUNTS.items():
        assert abs(counts[key] - quoted) <= 0.1 * quoted


def test_checkpoint_roundtrip(tmp_path):
    sample = tiny_sample()
    model = DefoggerModel(tiny_config(encoder_kind="C", zero_init_heads=False), TECH)
    path = model.save(tmp_path / "model.ckpt")
    restored = DefoggerModel.load(path, TECH)
    assert restored.config == model.config
    assert_array_equal(restored.predict(sample).counts, model.predict(sample).counts)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
