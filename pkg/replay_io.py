#!/usr/bin/env python3
"""
Replay files, manifests and train/valid/test splitting

Replay format, version DFG1 (UTF-8 text, every line terminated by '\\n'):

    DFG1 <H> <W> <C_T> <f0> <f1>
    <C_T terrain blocks, each H lines of W space-separated reals>
    <one line per frame>  t | player,type,x,y ; player,type,x,y ; ...

Reals are written with Python's shortest round-trip repr, so reading a
written replay gives back identical values. A frame without units is
written as ``t |``. Frames appear in increasing time order.

Manifest: space-separated text with a header row ``path seed f0 f1``; paths
are relative to the manifest's directory.
"""

import logging
import os
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from grid_featurizer import RawFrame, Replay, TerrainMap, TERRAIN_CHANNELS

logger = logging.getLogger(__name__)

FORMAT_VERSION = "DFG1"
MANIFEST_COLUMNS = ["path", "seed", "f0", "f1"]
MANIFEST_NAME = "manifest.txt"

PathLike = Union[str, Path]


class ReplayFormatError(ValueError):
    """Malformed or unsupported replay file"""

    def __init__(self, message: str, line_number: int = None, last_good_frame: float = None):
        self.line_number = line_number
        self.last_good_frame = last_good_frame
        where = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{where}{message}")


# ----------------------------------------------------------------------
# Replays
# ----------------------------------------------------------------------

def _format_frame(frame: RawFrame) -> str:
    units = " ; ".join(f"{p},{u},{x},{y}" for p, u, x, y in frame.units.tolist())
    return f"{float(frame.time)!r} | {units}".rstrip()


def format_replay(replay: Replay) -> str:
    """Serialize a replay to DFG1 text"""
    channels = replay.terrain.channels
    H, W, C_T = channels.shape
    lines = [f"{FORMAT_VERSION} {H} {W} {C_T} {replay.factions[0]} {replay.factions[1]}"]
    for c in range(C_T):
        for row in channels[:, :, c].tolist():
            lines.append(" ".join(repr(v) for v in row))
    lines.extend(_format_frame(frame) for frame in replay.frames)
    return "\n".join(lines) + "\n"


def write_replay(replay: Replay, path: PathLike) -> None:
    path = Path(path)
    if path.parent != Path('.'):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_replay(replay), encoding="utf-8")


def _parse_header(line: str) -> Tuple[int, int, int, Tuple[int, int]]:
    parts = line.split()
    if not parts:
        raise ReplayFormatError("empty header", line_number=1)
    if parts[0] != FORMAT_VERSION:
        raise ReplayFormatError(f"unsupported version '{parts[0]}' (expected {FORMAT_VERSION})", line_number=1)
    if len(parts) != 6:
        raise ReplayFormatError(f"header needs 6 fields, got {len(parts)}", line_number=1)
    try:
        H, W, C_T, f0, f1 = (int(p) for p in parts[1:])
    except ValueError as e:
        raise ReplayFormatError(f"bad header: {e}", line_number=1) from e
    if H < 1 or W < 1 or C_T != len(TERRAIN_CHANNELS):
        raise ReplayFormatError(f"bad map shape {H}×{W}×{C_T}", line_number=1)
    return H, W, C_T, (f0, f1)


def _parse_frame(line: str, line_number: int, H: int, W: int, last_time) -> RawFrame:
    time_str, sep, body = line.partition("|")
    if not sep:
        raise ReplayFormatError("frame line has no '|'", line_number, last_time)
    try:
        time = float(time_str)
        rows = [[int(v) for v in record.split(",")] for record in body.split(";") if record.strip()]
    except ValueError as e:
        raise ReplayFormatError(f"malformed frame: {e}", line_number, last_time) from e
    if any(len(r) != 4 for r in rows):
        raise ReplayFormatError("unit record must be player,type,x,y", line_number, last_time)
    units = np.array(rows, dtype=np.int64).reshape(-1, 4) if rows else np.zeros((0, 4), dtype=np.int64)
    if last_time is not None and time <= last_time:
        raise ReplayFormatError(f"frame time {time} not after {last_time}", line_number, last_time)
    if len(units):
        if ((units[:, 2] < 0) | (units[:, 2] >= W) | (units[:, 3] < 0) | (units[:, 3] >= H)).any():
            raise ReplayFormatError(f"unit outside the {H}×{W} map", line_number, last_time)
        if (~np.isin(units[:, 0], (-1, 0, 1))).any():
            raise ReplayFormatError("player id must be 0, 1 or -1", line_number, last_time)
    return RawFrame(time, units)


def parse_replay(text: str) -> Replay:
    """Parse DFG1 text; errors carry the line number and the last complete frame"""
    lines = text.split("\n")
    # a complete file ends with '\n', leaving one empty trailing element
    truncated = lines[-1] != ""
    if not truncated:
        lines.pop()
    if not lines:
        raise ReplayFormatError("empty file", line_number=1)

    H, W, C_T, factions = _parse_header(lines[0])
    n_terrain = C_T * H
    if len(lines) - 1 < n_terrain or (truncated and len(lines) - 1 == n_terrain):
        raise ReplayFormatError(f"file ends inside the terrain block ({len(lines) - 1} of {n_terrain} rows)",
                                line_number=len(lines))

    channels = np.empty((H, W, C_T))
    for index in range(n_terrain):
        line_number = index + 2
        try:
            row = [float(v) for v in lines[index + 1].split()]
        except ValueError as e:
            raise ReplayFormatError(f"bad terrain value: {e}", line_number) from e
        if len(row) != W:
            raise ReplayFormatError(f"terrain row has {len(row)} values, expected {W}", line_number)
        channels[index % H, :, index // H] = row

    frames: List[RawFrame] = []
    last_time = None
    first_frame_line = n_terrain + 1
    for index in range(first_frame_line, len(lines)):
        line_number = index + 1
        if truncated and index == len(lines) - 1:
            good = "no complete frame" if last_time is None else f"last good frame t={last_time!r}"
            raise ReplayFormatError(f"truncated frame line ({good})", line_number, last_time)
        frame = _parse_frame(lines[index], line_number, H, W, last_time)
        frames.append(frame)
        last_time = frame.time

    try:
        terrain = TerrainMap(channels)
    except ValueError as e:
        raise ReplayFormatError(str(e)) from e
    return Replay(terrain, factions, frames)


def read_replay(path: PathLike) -> Replay:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Replay not found: {path}")
    try:
        return parse_replay(path.read_text(encoding="utf-8"))
    except ReplayFormatError as e:
        error = ReplayFormatError(f"{path}: {e}")
        error.line_number, error.last_good_frame = e.line_number, e.last_good_frame
        raise error from e


# ----------------------------------------------------------------------
# Manifests
# ----------------------------------------------------------------------

def write_manifest(manifest: pd.DataFrame, path: PathLike) -> None:
    manifest[MANIFEST_COLUMNS].to_csv(path, sep=" ", index=False, lineterminator="\n")


def read_manifest(path: PathLike) -> pd.DataFrame:
    """Load a manifest; the 'path' column is resolved against the manifest's directory"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    manifest = pd.read_csv(path, sep=" ", dtype={"path": str, "seed": np.uint64, "f0": int, "f1": int})
    missing = [c for c in MANIFEST_COLUMNS if c not in manifest.columns]
    if missing:
        raise ValueError(f"Manifest {path} is missing columns {missing}")
    manifest.attrs["root"] = str(path.parent)
    return manifest


def manifest_paths(manifest: pd.DataFrame) -> List[Path]:
    root = Path(manifest.attrs.get("root", "."))
    return [root / p for p in manifest["path"]]


def split(manifest: pd.DataFrame, ratios: Sequence[float] = (0.8, 0.1, 0.1),
          seed: int = 0) -> Tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    """
    Deterministic disjoint train/valid/test partition by game

    Split sizes are round(ratio·n) for valid and test, the remainder for train.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative values summing to 1, got {tuple(ratios)}")
    n = len(manifest)
    n_valid = int(round(ratios[1] * n))
    n_test = int(round(ratios[2] * n))
    n_train = n - n_valid - n_test
    if min(n_train, n_valid, n_test) < 1:
        raise ValueError(f"split of {n} games with ratios {tuple(ratios)} leaves an empty partition "
                         f"({n_train}/{n_valid}/{n_test})")

    train, rest = train_test_split(manifest, test_size=n_valid + n_test, random_state=seed, shuffle=True)
    valid, test = train_test_split(rest, test_size=n_test, random_state=seed, shuffle=True)
    parts = []
    for part in (train, valid, test):
        part = part.sort_index()
        part.attrs = dict(manifest.attrs)
        parts.append(part)
    return tuple(parts)


def write_splits(parts: Sequence[pd.DataFrame], output_dir: PathLike,
                 names: Sequence[str] = ("train", "valid", "test")) -> List[Path]:
    """Write split manifests next to each other; game paths are rewritten relative to output_dir"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, part in zip(names, parts):
        rebased = part.copy()
        rebased["path"] = [_relative_to(p, output_dir) for p in manifest_paths(part)]
        target = output_dir / f"{name}_manifest.txt"
        write_manifest(rebased, target)
        written.append(target)
    return written


def _relative_to(path: Path, base: Path) -> str:
    return Path(os.path.relpath(path, base)).as_posix()
