#!/usr/bin/env python3
"""
Toy RTS simulator - synthetic two-player games with full-state replays

Games are a deterministic function of (SimConfig, seed). The PRNG is numpy's
PCG64 bit generator seeded with the 64-bit game seed; nothing reads a
platform default.

Each player starts with a base and a few workers in opposite corners.
Production follows a build-order template (rush / tech / expand) sampled once
per player; every pick respects the tech tree. Workers oscillate around
their base, army units scout, attack-move or regroup along straight lines at
their type's move speed, and expansions go to fixed candidate sites. Nothing
dies.
"""

import argparse
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, field_validator
from tqdm import tqdm

from tech_tree import TechTree, default_tech_tree, load_tech_tree
from grid_featurizer import RawFrame, Replay, TerrainMap
from replay_io import write_manifest, write_replay

logger = logging.getLogger(__name__)

TEMPLATES = ("rush", "tech", "expand")

# (x, y) as fractions of the map size
START_SITES = ((0.15, 0.15), (0.68, 0.68))
EXPANSION_SITES = ((0.15, 0.68), (0.68, 0.15), (0.42, 0.42))

WORKER_RADIUS = (6.0, 14.0)
WORKER_PERIOD = (20.0, 40.0)
BUILD_RADIUS = (6.0, 16.0)
WORKERS_PER_BASE = 8


class SimulationError(ValueError):
    """The configured game cannot be simulated"""


class SimConfig(BaseModel):
    """Simulator configuration; defaults give a 256×256 map and 12-minute games"""

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")

    height: int = Field(256, ge=64)
    width: int = Field(256, ge=64)
    tech: TechTree = Field(default_factory=default_tech_tree)
    game_length: float = Field(720.0, ge=660.0)
    tick: float = Field(5.0, gt=0)
    template_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    play_fraction: float = Field(0.75, gt=0.5, le=1.0)
    build_interval: float = Field(20.0, gt=0)
    start_workers: int = Field(4, ge=0)
    max_units: int = Field(60, ge=1)

    @field_validator("template_weights", mode="before")
    @classmethod
    def _split_weights(cls, value):
        if isinstance(value, str):
            value = [float(v) for v in value.split(",")]
        return value

    @field_validator("template_weights")
    @classmethod
    def _check_weights(cls, value):
        if any(w < 0 for w in value) or sum(value) <= 0:
            raise ValueError("template_weights must be non-negative with a positive sum")
        return value

    @property
    def bounds(self) -> Tuple[int, int]:
        """(x_max, y_max) exclusive bounds of the area units may occupy"""
        return int(self.play_fraction * self.width), int(self.play_fraction * self.height)


@dataclass
class _Unit:
    type_id: int
    x: float
    y: float
    home: Tuple[float, float]
    target: Optional[Tuple[float, float]] = None
    radius: float = 0.0
    angle: float = 0.0
    period: float = 1.0
    phase: float = 0.0


@dataclass
class _Player:
    id: int
    faction: int
    template: str
    start: Tuple[float, float]
    bases: List[Tuple[float, float]]
    units: List[_Unit]
    next_build: float


class ToySimulator:
    """One seeded game"""

    def __init__(self, config: SimConfig):
        self.config = config
        self.tech = config.tech
        self.rng = np.random.Generator(np.random.PCG64(config.seed))
        self.base_type, self.worker_type = self._resolve_roles()
        self.depth = self._type_depths()
        army = [t.id for t in self.tech.types if not t.is_building and t.id != self.worker_type]
        self.min_army_depth = min((self.depth[a] for a in army), default=0)
        self.x_max, self.y_max = config.bounds

    def _resolve_roles(self) -> Tuple[int, int]:
        roots = [t.id for t in self.tech.types if t.is_building and not t.prerequisites]
        if not roots:
            raise SimulationError("Tech tree has no building without prerequisites to start from")
        base = roots[0]
        workers = [t.id for t in self.tech.types
                   if not t.is_building and t.prerequisites <= {base} and t.move_speed > 0]
        if not workers:
            raise SimulationError(f"Tech tree has no mobile unit producible from '{self.tech.types[base].name}'")
        return base, workers[0]

    def _type_depths(self) -> Dict[int, int]:
        depth: Dict[int, int] = {}

        def resolve(type_id: int) -> int:
            if type_id not in depth:
                parents = self.tech.types[type_id].prerequisites
                depth[type_id] = 1 + max((resolve(p) for p in parents), default=-1)
            return depth[type_id]

        for unit_type in self.tech.types:
            resolve(unit_type.id)
        return depth

    # ------------------------------------------------------------------
    # Setup
    # ------------------------------------------------------------------

    def _generate_terrain(self) -> TerrainMap:
        H, W = self.config.height, self.config.width
        yy, xx = np.mgrid[0:H, 0:W]

        walkable = np.ones((H, W))
        for _ in range(int(self.rng.integers(6, 12))):
            cx, cy = self.rng.uniform(0, W), self.rng.uniform(0, H)
            radius = self.rng.uniform(3.0, 8.0)
            walkable[(xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2] = 0.0

        coarse = self.rng.integers(0, 3, size=(math.ceil(H / 32), math.ceil(W / 32))).astype(np.float64)
        height = np.kron(coarse, np.ones((32, 32)))[:H, :W]
        for fx, fy in START_SITES:
            plateau = (xx - fx * W) ** 2 + (yy - fy * H) ** 2 <= 28.0 ** 2
            height[plateau] = 2.0
            walkable[plateau] = 1.0

        buildable = walkable * (self.rng.random((H, W)) >= 0.05)
        return TerrainMap(np.stack([walkable, buildable, height], axis=-1))

    def _place_near(self, center: Tuple[float, float], radius_range: Tuple[float, float]) -> Tuple[float, float]:
        angle = self.rng.uniform(0.0, 2.0 * math.pi)
        radius = self.rng.uniform(*radius_range)
        return self._clip(center[0] + radius * math.cos(angle), center[1] + radius * math.sin(angle))

    def _clip(self, x: float, y: float) -> Tuple[float, float]:
        return min(max(x, 0.0), self.x_max - 1.0), min(max(y, 0.0), self.y_max - 1.0)

    def _spawn_worker(self, player: _Player, base: Tuple[float, float]) -> _Unit:
        return _Unit(
            type_id=self.worker_type, x=base[0], y=base[1], home=base,
            radius=self.rng.uniform(*WORKER_RADIUS),
            angle=self.rng.uniform(0.0, 2.0 * math.pi),
            period=self.rng.uniform(*WORKER_PERIOD),
            phase=self.rng.uniform(0.0, 2.0 * math.pi),
        )

    def _setup_players(self) -> List[_Player]:
        W, H = self.config.width, self.config.height
        starts = [self._clip(fx * W, fy * H) for fx, fy in START_SITES]
        if self.rng.random() < 0.5:
            starts.reverse()

        weights = np.asarray(self.config.template_weights, dtype=np.float64)
        players = []
        for pid in (0, 1):
            faction = int(self.rng.choice(self.tech.factions))
            template = TEMPLATES[int(self.rng.choice(len(TEMPLATES), p=weights / weights.sum()))]
            player = _Player(pid, faction, template, starts[pid], [starts[pid]], [], 0.0)
            player.units.append(_Unit(self.base_type, starts[pid][0], starts[pid][1], starts[pid]))
            for _ in range(self.config.start_workers):
                player.units.append(self._spawn_worker(player, starts[pid]))
            player.next_build = self.rng.uniform(self.config.tick, self.config.build_interval)
            players.append(player)
        return players

    # ------------------------------------------------------------------
    # Production
    # ------------------------------------------------------------------

    def _item_weight(self, player: _Player, type_id: int, owned: Dict[int, int], free_sites: int) -> float:
        template = player.template
        unit_type = self.tech.types[type_id]
        if type_id == self.base_type:
            if not free_sites:
                return 0.0
            return {"rush": 0.2, "tech": 0.3, "expand": 2.5}[template]
        if unit_type.is_building:
            if owned.get(type_id, 0) == 0:
                return {"rush": 3.0, "tech": 4.0, "expand": 2.0}[template]
            return 0.3
        if type_id == self.worker_type:
            if owned.get(type_id, 0) >= WORKERS_PER_BASE * len(player.bases):
                return 0.0
            return {"rush": 1.0, "tech": 1.0, "expand": 3.0}[template]
        if self.depth[type_id] <= self.min_army_depth:
            return {"rush": 4.0, "tech": 1.0, "expand": 1.5}[template]
        return {"rush": 0.5, "tech": 4.0, "expand": 1.5}[template]

    def _produce(self, player: _Player, built: set, free_sites: List[Tuple[float, float]]) -> None:
        if len(player.units) >= self.config.max_units:
            return
        owned: Dict[int, int] = {}
        for unit in player.units:
            owned[unit.type_id] = owned.get(unit.type_id, 0) + 1

        candidates = [t.id for t in self.tech.types if t.prerequisites <= built]
        weights = np.array([self._item_weight(player, c, owned, len(free_sites)) for c in candidates])
        if weights.sum() <= 0:
            return
        choice = candidates[int(self.rng.choice(len(candidates), p=weights / weights.sum()))]
        unit_type = self.tech.types[choice]

        if choice == self.base_type:
            site = min(free_sites, key=lambda s: (s[0] - player.start[0]) ** 2 + (s[1] - player.start[1]) ** 2)
            free_sites.remove(site)
            player.bases.append(site)
            player.units.append(_Unit(choice, site[0], site[1], site))
        elif unit_type.is_building:
            x, y = self._place_near(player.start, BUILD_RADIUS)
            player.units.append(_Unit(choice, x, y, (x, y)))
        elif choice == self.worker_type:
            base = player.bases[int(self.rng.integers(len(player.bases)))]
            player.units.append(self._spawn_worker(player, base))
        else:
            rally = self._place_near(player.start, BUILD_RADIUS)
            player.units.append(_Unit(choice, player.start[0], player.start[1], rally, target=rally))

    # ------------------------------------------------------------------
    # Movement
    # ------------------------------------------------------------------

    def _new_order(self, unit: _Unit, player: _Player, enemy: _Player) -> Tuple[float, float]:
        roll = self.rng.random()
        if roll < 0.35:
            return self.rng.uniform(0, self.x_max - 1), self.rng.uniform(0, self.y_max - 1)
        if roll < 0.7:
            return enemy.bases[int(self.rng.integers(len(enemy.bases)))]
        return unit.home

    def _move(self, player: _Player, enemy: _Player, t: float) -> None:
        for unit in player.units:
            speed = self.tech.types[unit.type_id].move_speed
            if speed == 0:
                continue
            if unit.type_id == self.worker_type:
                reach = unit.radius * 0.5 * (1.0 - math.cos(unit.phase + 2.0 * math.pi * t / unit.period))
                unit.x, unit.y = self._clip(unit.home[0] + reach * math.cos(unit.angle),
                                            unit.home[1] + reach * math.sin(unit.angle))
                continue
            if unit.target is None:
                unit.target = self._new_order(unit, player, enemy)
            dx, dy = unit.target[0] - unit.x, unit.target[1] - unit.y
            distance = math.hypot(dx, dy)
            stride = speed * self.config.tick
            if distance <= stride:
                unit.x, unit.y = unit.target
                unit.target = self._new_order(unit, player, enemy)
            else:
                unit.x, unit.y = self._clip(unit.x + dx / distance * stride, unit.y + dy / distance * stride)

    def _snapshot(self, players: Sequence[_Player], t: float) -> RawFrame:
        rows = [(p.id, u.type_id, int(u.x), int(u.y)) for p in players for u in p.units]
        return RawFrame(t, np.array(rows, dtype=np.int64).reshape(-1, 4))

    def run(self) -> Replay:
        terrain = self._generate_terrain()
        players = self._setup_players()
        W, H = self.config.width, self.config.height
        free_sites = [self._clip(fx * W, fy * H) for fx, fy in EXPANSION_SITES]

        n_ticks = int(math.floor(self.config.game_length / self.config.tick + 1e-9))
        frames = [self._snapshot(players, 0.0)]
        for k in range(1, n_ticks + 1):
            t = k * self.config.tick
            built = [{u.type_id for u in p.units} for p in players]
            for player, owned_types in zip(players, built):
                while player.next_build <= t:
                    self._produce(player, owned_types, free_sites)
                    player.next_build += self.config.build_interval * self.rng.uniform(0.6, 1.4)
            self._move(players[0], players[1], t)
            self._move(players[1], players[0], t)
            frames.append(self._snapshot(players, t))

        logger.debug(f"seed={self.config.seed} templates={[p.template for p in players]} "
                     f"units={[len(p.units) for p in players]}")
        return Replay(terrain, (players[0].faction, players[1].faction), frames)


def generate_replay(config: SimConfig) -> Replay:
    """Simulate one game; bit-identical for identical (config, seed)"""
    return ToySimulator(config).run()


def _generate_one(config: SimConfig, seed: int, path: Path) -> Dict:
    replay = generate_replay(config.model_copy(update={"seed": seed}))
    try:
        write_replay(replay, path)
    except OSError as e:
        raise OSError(f"Failed to write replay {path}: {e}") from e
    return {"path": path.name, "seed": seed, "f0": replay.factions[0], "f1": replay.factions[1]}


def generate_dataset(base_seed: int, count: int, config: SimConfig, output_dir,
                     n_jobs: int = 1) -> pd.DataFrame:
    """
    Simulate `count` games with seeds base_seed + i and write them with a manifest

    Args:
        base_seed: seed of the first game
        count: number of games (>= 1)
        config: simulator configuration (its seed field is overridden)
        output_dir: directory receiving game_XXXXX.dfg files and manifest.txt
        n_jobs: joblib worker count; the manifest is identical for any value

    Returns:
        pd.DataFrame: manifest rows (path, seed, f0, f1)
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    output_path = Path(output_dir)
    output_path.mkdir(parents=True, exist_ok=True)

    jobs = [(base_seed + i, output_path / f"game_{i:05d}.dfg") for i in range(count)]
    rows = Parallel(n_jobs=n_jobs)(
        delayed(_generate_one)(config, seed, path)
        for seed, path in tqdm(jobs, desc="Simulating games", unit="game")
    )
    manifest = pd.DataFrame(rows, columns=["path", "seed", "f0", "f1"])
    write_manifest(manifest, output_path / "manifest.txt")
    logger.info(f"✅ {count} games written to {output_path}")
    return manifest


def main():
    parser = argparse.ArgumentParser(description="Toy RTS replay generator")
    parser.add_argument("--output", "-o", default="data/games", help="Output directory")
    parser.add_argument("--count", "-n", type=int, default=10, help="Number of games")
    parser.add_argument("--seed", type=int, default=0, help="Seed of the first game")
    parser.add_argument("--tech", default=None, help="Tech tree file (default: built-in)")
    parser.add_argument("--n-jobs", type=int, default=1, help="Parallel workers")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    config = SimConfig(tech=load_tech_tree(args.tech))
    manifest = generate_dataset(args.seed, args.count, config, args.output, n_jobs=args.n_jobs)
    print(f"📊 {len(manifest)} games → {args.output}/manifest.txt")


if __name__ == "__main__":
    main()
