#!/usr/bin/env python3
"""
Encoder-decoder defogging model on tensorgrad

Architecture, per input step t:
- static input (once per game): E_M conv (kernel r, stride g) over terrain → H_rg × W_rg × F_T,
  plus learned faction embeddings of both players (F_F/2 each) replicated spatially
- encoder input: concat(static, o_t) → H_rg × W_rg × (F_T + F_F + C_u)
- encoder C: conv stack in 4 stages, each stage ending in a stride-2 layer, a 1×1 projection to
  F_E, then global sum-pool
- encoder CL: 1/2/3 blocks (depth 4/9/16) of stride-1 convs, a stride-2 downsample conv and a
  spatially replicated LSTM (kernel 1), then global sum-pool; with cell_memory the first block
  also runs a kernel-1 LSTM at grid resolution before downsampling
- latent LSTM carries the game state across steps (reset per game)
- decoder: latent embedding replicated over the grid, concatenated with o_t (and, for CL, every
  block's LSTM output upsampled back to the grid) → two 1×1 convs
- heads: P_r 1×1 conv → C_u count deltas per cell; P_c sum-pool → linear → logit per enemy type
- ŷ_t = o_t + δ_t when predict_delta is set

"LSTM channels" is the gate width of every LSTM; the hidden size carried between steps
(the embedding F_E) is lstm_channels // 4.
"""

import argparse
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import expit

from tensorgrad import Conv2d, Embedding, Linear, LSTMCell, Module, ShapeError, Tensor, load_checkpoint, save_checkpoint
from tensorgrad import functional as F
from tech_tree import TechTree, default_tech_tree
from grid_featurizer import GridSpec, TerrainMap, TERRAIN_CHANNELS
from sequence_sampler import Predictions, Sample

logger = logging.getLogger(__name__)

C_STAGES = 4
CL_BLOCKS = {4: 1, 9: 2, 16: 3}

# model sizes quoted for the 4- and 9-layer encoders at 128/256 channels
QUOTED_PARAMETER_COUNTS = {
    ("C", 4): 300_000,
    ("C", 9): 600_000,
    ("CL", 4): 450_000,
    ("CL", 9): 800_000,
}

State = Tuple[Tensor, Tensor]


class ModelConfig(BaseModel):
    """Model hyper-parameters; field defaults are the full-width model"""

    model_config = ConfigDict(extra="forbid")

    encoder_kind: Literal["C", "CL"] = "CL"
    depth: int = 4
    block_kind: Literal["basic", "gated", "residual"] = "basic"
    conv_channels: int = Field(128, gt=0)
    lstm_channels: int = Field(256, gt=0)
    kernel_size: int = Field(3, ge=1)
    terrain_channels: int = Field(8, gt=0)
    faction_channels: int = Field(8, gt=0)
    r: int = Field(32, ge=1)
    g: int = Field(32, ge=1)
    s: float = Field(15.0, ge=0)
    step: Optional[float] = Field(None, ge=5.0)
    cell_memory: bool = False
    nonlinearity: Literal["elu", "relu", "selu"] = "elu"
    predict_delta: bool = True
    regression_loss: Literal["huber", "mse"] = "huber"
    huber_delta: float = Field(1.0, gt=0)
    head_weight: float = Field(1.0, ge=0)
    zero_init_heads: bool = True
    lr: float = Field(1e-4, gt=0)
    seed: int = Field(0, ge=0)

    @field_validator("depth")
    @classmethod
    def _known_depth(cls, value):
        if value not in CL_BLOCKS:
            raise ValueError(f"depth must be one of {sorted(CL_BLOCKS)}, got {value}")
        return value

    @field_validator("lstm_channels")
    @classmethod
    def _gate_width(cls, value):
        if value % 4:
            raise ValueError(f"lstm_channels is the LSTM gate width and must be a multiple of 4, got {value}")
        return value

    @field_validator("faction_channels")
    @classmethod
    def _even_factions(cls, value):
        if value % 2:
            raise ValueError(f"faction_channels holds two player embeddings and must be even, got {value}")
        return value

    @property
    def hidden_size(self) -> int:
        return self.lstm_channels // 4

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """
        CPU-trainable widths: 32 conv channels, embedding 64

        Adds the grid-resolution cell memory and trains at lr 2e-3, so that a
        few thousand steps are enough to fit a handful of games.
        """
        values = dict(conv_channels=32, lstm_channels=256, depth=4, cell_memory=True, lr=2e-3)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def full(cls, encoder_kind: str = "CL", depth: int = 4, **overrides) -> "ModelConfig":
        """Full-width reference configuration used for the parameter-count comparison"""
        values = dict(encoder_kind=encoder_kind, depth=depth, conv_channels=128, lstm_channels=256,
                      kernel_size=2, terrain_channels=8, faction_channels=8, r=32, g=32)
        values.update(overrides)
        return cls(**values)


def split_layers(total: int, groups: int) -> List[int]:
    """Spread `total` layers over `groups`, earlier groups taking the remainder"""
    return [len(part) for part in np.array_split(np.arange(total), groups)]


# ----------------------------------------------------------------------
# Blocks
# ----------------------------------------------------------------------

class ConvBlock(Module):
    """
    One encoder layer

    basic: conv → nonlinearity
    gated: conv with doubled output channels → GLU
    residual: conv → nonlinearity → conv, plus identity (or strided 1×1 projection) shortcut,
    nonlinearity after the sum
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int, kind: str,
                 nonlinearity: str, rng: np.random.Generator, name: Optional[str] = None):
        super().__init__(name)
        self.kind = kind
        self.stride = stride
        self.act = F.activation(nonlinearity)
        if kind == "basic":
            self.conv = Conv2d(in_channels, out_channels, kernel_size, rng, stride=stride)
        elif kind == "gated":
            self.conv = Conv2d(in_channels, 2 * out_channels, kernel_size, rng, stride=stride)
        elif kind == "residual":
            self.conv_a = Conv2d(in_channels, out_channels, kernel_size, rng, stride=stride)
            self.conv_b = Conv2d(out_channels, out_channels, kernel_size, rng)
            needs_projection = in_channels != out_channels or stride != 1
            self.shortcut = Conv2d(in_channels, out_channels, 1, rng, stride=stride) if needs_projection else None
        else:
            raise ValueError(f"Unknown block kind '{kind}'")

    def forward(self, x: Tensor) -> Tensor:
        if self.kind == "basic":
            return self.act(self.conv(x))
        if self.kind == "gated":
            return F.glu(self.conv(x))
        residual = x if self.shortcut is None else self.shortcut(x)
        return self.act(F.add(self.conv_b(self.act(self.conv_a(x))), residual))


class StaticEncoder(Module):
    """E_M over the terrain plus one learned vector per faction id"""

    def __init__(self, config: ModelConfig, factions: Sequence[int], rng: np.random.Generator):
        super().__init__("static")
        self.r, self.g = config.r, config.g
        self.factions = tuple(factions)
        self.act = F.activation(config.nonlinearity)
        self.terrain_conv = Conv2d(len(TERRAIN_CHANNELS), config.terrain_channels, config.r, rng,
                                   stride=config.g, padding="valid")
        self.faction_table = Embedding(len(self.factions), config.faction_channels // 2, rng)

    def faction_index(self, faction: int) -> int:
        if faction not in self.factions:
            raise ValueError(f"Unknown faction id {faction} (known: {self.factions})")
        return self.factions.index(faction)

    def forward(self, terrain: TerrainMap, f_me: int, f_op: int, spec: GridSpec) -> Tensor:
        if (terrain.height, terrain.width) != (spec.H, spec.W) or (spec.r, spec.g) != (self.r, self.g):
            raise ShapeError(f"terrain {terrain.height}×{terrain.width} with r={spec.r}, g={spec.g} "
                             f"does not match the model (r={self.r}, g={self.g})")
        ext_h, ext_w = spec.covered_extent
        terrain_map = self.act(self.terrain_conv(Tensor(terrain.channels[:ext_h, :ext_w])))
        if terrain_map.shape[:2] != spec.shape:
            raise ShapeError(f"E_M output {terrain_map.shape[:2]} vs grid {spec.shape}")
        factions = F.concat([self.faction_table(self.faction_index(f_me)),
                             self.faction_table(self.faction_index(f_op))], axis=-1)
        return F.concat([terrain_map, F.broadcast_spatial(factions, spec.H_rg, spec.W_rg)], axis=-1)


class CEncoder(Module):
    """
    Convolutions only; four stride-2 stages bring any grid up to 16×16 down to 1×1,
    a 1×1 projection then maps conv_channels to the embedding width F_E
    """

    def __init__(self, in_channels: int, config: ModelConfig, rng: np.random.Generator):
        super().__init__("encoder_c")
        layers = []
        channels = in_channels
        for stage_size in split_layers(config.depth, C_STAGES):
            for index in range(stage_size):
                stride = 2 if index == stage_size - 1 else 1
                layers.append(ConvBlock(channels, config.conv_channels, config.kernel_size, stride,
                                        config.block_kind, config.nonlinearity, rng))
                channels = config.conv_channels
        self.layers = layers
        self.act = F.activation(config.nonlinearity)
        self.projection = Conv2d(channels, config.hidden_size, 1, rng)
        self.output_size = config.hidden_size

    def feature_map(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def forward(self, x: Tensor) -> Tensor:
        return F.pool_sum_global(self.act(self.projection(self.feature_map(x))))


class CLBlock(Module):
    """
    stride-1 convs → stride-2 downsample → spatially replicated LSTM

    With cell_memory a second kernel-1 LSTM runs on the stride-1 features before
    downsampling, so every grid cell keeps a state of its own. States are
    ordered (cell memory, downsampled LSTM).
    """

    def __init__(self, in_channels: int, num_convs: int, config: ModelConfig, rng: np.random.Generator,
                 cell_memory: bool = False):
        super().__init__("cl_block")
        convs = []
        channels = in_channels
        for _ in range(num_convs):
            convs.append(ConvBlock(channels, config.conv_channels, config.kernel_size, 1,
                                   config.block_kind, config.nonlinearity, rng))
            channels = config.conv_channels
        self.convs = convs
        self.cell_lstm = LSTMCell(channels, config.hidden_size, rng) if cell_memory else None
        self.downsample = ConvBlock(channels, config.conv_channels, config.kernel_size, 2,
                                    config.block_kind, config.nonlinearity, rng)
        self.lstm = LSTMCell(config.conv_channels, config.hidden_size, rng)

    @property
    def num_states(self) -> int:
        return 1 if self.cell_lstm is None else 2

    def forward(self, x: Tensor, states: Sequence[State]) -> Tuple[Tensor, List[State]]:
        if len(states) != self.num_states:
            raise ShapeError(f"CL block expects {self.num_states} states, got {len(states)}")
        for conv in self.convs:
            x = conv(x)
        new_states = []
        if self.cell_lstm is not None:
            new_states.append(self.cell_lstm(x, states[0]))
        h, c = self.lstm(self.downsample(x), states[-1])
        new_states.append((h, c))
        return h, new_states


class CLEncoder(Module):
    def __init__(self, in_channels: int, config: ModelConfig, rng: np.random.Generator):
        super().__init__("encoder_cl")
        blocks = []
        channels = in_channels
        for index, num_convs in enumerate(split_layers(config.depth, CL_BLOCKS[config.depth])):
            blocks.append(CLBlock(channels, num_convs, config, rng, cell_memory=config.cell_memory and index == 0))
            channels = config.hidden_size
        self.blocks = blocks
        self.output_size = config.hidden_size

    @property
    def skip_factors(self) -> List[int]:
        """Upsampling factor back to the grid of every LSTM output, in state order"""
        factors = []
        for j, block in enumerate(self.blocks):
            if block.cell_lstm is not None:
                factors.append(2 ** j)
            factors.append(2 ** (j + 1))
        return factors

    def state_shapes(self, H_rg: int, W_rg: int) -> List[Tuple[int, int]]:
        """Spatial extent of every LSTM state: ceil(H_rg / factor)"""
        return [(math.ceil(H_rg / f), math.ceil(W_rg / f)) for f in self.skip_factors]

    def forward(self, x: Tensor, states: Sequence[State]) -> Tuple[Tensor, List[State], List[Tensor]]:
        """Returns (pooled embedding, new states, skips); skips are the LSTM outputs in state order"""
        new_states = []
        position = 0
        for block in self.blocks:
            x, block_states = block(x, states[position:position + block.num_states])
            position += block.num_states
            new_states.extend(block_states)
        skips = [h for h, _ in new_states]
        return F.pool_sum_global(x), new_states, skips


class Decoder(Module):
    """Two 1×1 convolutions over the concatenated decoder input"""

    def __init__(self, in_channels: int, channels: int, nonlinearity: str, rng: np.random.Generator):
        super().__init__("decoder")
        self.act = F.activation(nonlinearity)
        self.conv_in = Conv2d(in_channels, channels, 1, rng)
        self.conv_out = Conv2d(channels, channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.act(self.conv_out(self.act(self.conv_in(x))))


# ----------------------------------------------------------------------
# Model
# ----------------------------------------------------------------------

@dataclass
class RecurrentState:
    """Per-game recurrent state: latent LSTM plus every spatial LSTM state of the CL encoder"""
    latent: State
    blocks: List[State] = field(default_factory=list)


@dataclass
class ModelOutput:
    """Differentiable per-step outputs: ŷ_t (unclamped) and enemy-type logits"""
    counts: List[Tensor]
    logits: List[Tensor]

    def to_predictions(self) -> Predictions:
        counts = np.stack([c.data for c in self.counts]).astype(np.float64)
        probs = expit(np.stack([l.data for l in self.logits]).astype(np.float64))
        return Predictions(counts, probs)


class DefoggerModel(Module):
    """
    Full model; forward() unrolls one game-perspective sample

    Args:
        config: model hyper-parameters
        tech: tech tree (fixes C_u, the number of enemy types and the faction ids)
        rng: initialization generator (default: seeded from config.seed)
    """

    def __init__(self, config: ModelConfig, tech: TechTree, rng: Optional[np.random.Generator] = None):
        super().__init__("defogger")
        self.config = config
        self.num_types = tech.num_types
        self.num_channels = tech.num_channels
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        hidden = config.hidden_size

        self.static = StaticEncoder(config, tech.factions, rng)
        encoder_in = config.terrain_channels + config.faction_channels + self.num_channels
        if config.encoder_kind == "C":
            self.encoder = CEncoder(encoder_in, config, rng)
            self.skip_factors = []
        else:
            self.encoder = CLEncoder(encoder_in, config, rng)
            self.skip_factors = self.encoder.skip_factors
        self.latent = LSTMCell(self.encoder.output_size, hidden, rng)
        self.decoder = Decoder(hidden * (1 + len(self.skip_factors)) + self.num_channels, config.conv_channels,
                               config.nonlinearity, rng)
        self.regression_head = Conv2d(config.conv_channels, self.num_channels, 1, rng,
                                      zero_init=config.zero_init_heads)
        self.classifier_head = Linear(config.conv_channels, self.num_types, rng,
                                      zero_init=config.zero_init_heads)

    def encode_static(self, terrain: TerrainMap, f_me: int, f_op: int, spec: GridSpec) -> Tensor:
        return self.static(terrain, f_me, f_op, spec)

    def initial_state(self, spec: GridSpec) -> RecurrentState:
        blocks = []
        if isinstance(self.encoder, CLEncoder):
            for h, w in self.encoder.state_shapes(spec.H_rg, spec.W_rg):
                blocks.append(self.encoder.blocks[0].lstm.initial_state((h, w)))
        return RecurrentState(self.latent.initial_state(), blocks)

    def step(self, static: Tensor, obs: Tensor, state: RecurrentState) -> Tuple[Tensor, Tensor, RecurrentState]:
        """One time step: (ŷ_t, logits_t, next state)"""
        x = F.concat([static, obs], axis=-1)
        if isinstance(self.encoder, CLEncoder):
            features, block_states, skips = self.encoder(x, state.blocks)
        else:
            features, block_states, skips = self.encoder(x), [], []
        h, c = self.latent(features, state.latent)

        H_rg, W_rg = obs.shape[0], obs.shape[1]
        parts = [F.broadcast_spatial(h, H_rg, W_rg), obs]
        for factor, skip in zip(self.skip_factors, skips):
            parts.append(skip if factor == 1 else F.upsample_nearest(skip, factor, out_shape=(H_rg, W_rg)))
        decoded = self.decoder(F.concat(parts, axis=-1))

        delta = self.regression_head(decoded)
        counts = F.add(obs, delta) if self.config.predict_delta else delta
        logits = self.classifier_head(F.pool_sum_global(decoded))
        return counts, logits, RecurrentState((h, c), block_states)

    def check_sample(self, sample: Sample) -> None:
        if (sample.spec.r, sample.spec.g) != (self.config.r, self.config.g):
            raise ShapeError(f"sample grid r={sample.spec.r}, g={sample.spec.g} vs model "
                             f"r={self.config.r}, g={self.config.g}")
        if sample.obs.shape[-1] != self.num_channels:
            raise ShapeError(f"sample has {sample.obs.shape[-1]} unit channels, model expects {self.num_channels}")

    def forward(self, sample: Sample) -> ModelOutput:
        self.check_sample(sample)
        static = self.encode_static(sample.terrain, sample.f_me, sample.f_op, sample.spec)
        state = self.initial_state(sample.spec)
        counts, logits = [], []
        for k in range(sample.num_steps):
            y_hat, c_hat, state = self.step(static, Tensor(sample.obs[k]), state)
            counts.append(y_hat)
            logits.append(c_hat)
        return ModelOutput(counts, logits)

    def loss(self, output: ModelOutput, sample: Sample) -> Tensor:
        """Mean over steps of regression(ŷ, y) + λ·BCE(ĉ, global targets); ŷ unclamped"""
        regression = F.REGRESSION_LOSSES[self.config.regression_loss]
        terms = []
        for k, (y_hat, c_hat) in enumerate(zip(output.counts, output.logits)):
            term = regression(y_hat, sample.targets[k], self.config.huber_delta)
            if self.config.head_weight > 0:
                bce = F.bce_with_logits(c_hat, sample.global_targets[k].astype(np.float64))
                term = F.add(term, F.mul(bce, self.config.head_weight))
            terms.append(term)
        return F.mul(F.add_n(terms), 1.0 / len(terms))

    def predict(self, sample: Sample) -> Predictions:
        return self.forward(sample).to_predictions()

    def get_config(self) -> Dict:
        return {"model": self.config.model_dump(), "num_types": self.num_types,
                "factions": list(self.static.factions)}

    def save(self, path) -> Path:
        path = save_checkpoint(path, self.state_dict(), self.get_config())
        logger.info(f"Model saved to {path}")
        return path

    @classmethod
    def load(cls, path, tech: TechTree) -> "DefoggerModel":
        saved, params = load_checkpoint(path)
        if saved.get("num_types") != tech.num_types:
            raise ShapeError(f"checkpoint was trained for {saved.get('num_types')} unit types, "
                             f"tech tree has {tech.num_types}")
        model = cls(ModelConfig(**saved["model"]), tech)
        model.load_state_dict(params)
        logger.info(f"Model loaded from {path}")
        return model


def reference_parameter_counts(tech: Optional[TechTree] = None) -> pd.DataFrame:
    """Parameter totals of the full-width configurations next to the quoted model sizes"""
    tech = tech or default_tech_tree()
    rows = []
    for (kind, depth), quoted in QUOTED_PARAMETER_COUNTS.items():
        count = DefoggerModel(ModelConfig.full(kind, depth), tech).num_parameters()
        rows.append({"encoder": kind, "depth": depth, "parameters": count, "quoted": quoted,
                     "relative_error": abs(count - quoted) / quoted})
    return pd.DataFrame(rows)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Defogger model parameter counts")
    parser.add_argument("--encoder", choices=["C", "CL"], default=None)
    parser.add_argument("--depth", type=int, choices=[4, 9, 16], default=4)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    if args.encoder is None:
        print(reference_parameter_counts().to_string(index=False))
    else:
        model = DefoggerModel(ModelConfig.full(args.encoder, args.depth), default_tech_tree())
        print(f"📊 {args.encoder}/{args.depth}: {model.num_parameters():,} parameters")
