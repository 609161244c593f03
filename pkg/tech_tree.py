#!/usr/bin/env python3
"""
Tech tree: unit-type table and prerequisite DAG

Text format (one type per line, '#' starts a comment):

    id name flags prerequisites sight speed

- id: dense small integer, 0..N-1 in file order
- flags: 'B' for a building, 'U' for a mobile unit
- prerequisites: comma-separated type ids, or '-' for none
- sight: sight radius in walk tiles
- speed: walk tiles per second (must be 0 for buildings)

Example::

    0 base      B -  40 0
    3 tech_lab  B 2  32 0
    5 heavy     U 3  32 8
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, List, Optional, Sequence, Set, Tuple

logger = logging.getLogger(__name__)

DEFAULT_FACTIONS: Tuple[int, ...] = (0, 1, 2)


class TechTreeError(ValueError):
    """Invalid unit-type table or prerequisite graph"""


@dataclass(frozen=True)
class UnitTypeDef:
    id: int
    name: str
    is_building: bool
    prerequisites: FrozenSet[int] = frozenset()
    sight_range: float = 0.0
    move_speed: float = 0.0


@dataclass(frozen=True)
class TechTree:
    """
    Ordered unit types plus the faction ids games may draw from

    Channel layout of a CountGrid follows type order: ally channels
    [0, N), enemy channels [N, 2N).
    """
    types: Tuple[UnitTypeDef, ...]
    factions: Tuple[int, ...] = DEFAULT_FACTIONS

    def __post_init__(self):
        for index, unit_type in enumerate(self.types):
            if unit_type.id != index:
                raise TechTreeError(f"Type ids must be dense 0..N-1; got id {unit_type.id} at position {index}")
            if unit_type.sight_range < 0:
                raise TechTreeError(f"{unit_type.name}: sight_range must be >= 0")
            if unit_type.is_building and unit_type.move_speed != 0:
                raise TechTreeError(f"{unit_type.name}: buildings must have move_speed 0")
            unknown = [p for p in unit_type.prerequisites if not 0 <= p < len(self.types)]
            if unknown:
                raise TechTreeError(f"{unit_type.name}: unknown prerequisite ids {sorted(unknown)}")
        if not self.factions:
            raise TechTreeError("At least one faction id is required")
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        # 0 = unvisited, 1 = on stack, 2 = done
        marks = [0] * len(self.types)
        for root in range(len(self.types)):
            if marks[root]:
                continue
            stack = [(root, iter(sorted(self.types[root].prerequisites)))]
            marks[root] = 1
            while stack:
                node, children = stack[-1]
                child = next(children, None)
                if child is None:
                    marks[node] = 2
                    stack.pop()
                elif marks[child] == 1:
                    raise TechTreeError(f"Prerequisite cycle through '{self.types[child].name}'")
                elif marks[child] == 0:
                    marks[child] = 1
                    stack.append((child, iter(sorted(self.types[child].prerequisites))))

    @property
    def num_types(self) -> int:
        return len(self.types)

    @property
    def num_channels(self) -> int:
        """C_u: ally + enemy channel per type"""
        return 2 * len(self.types)

    @property
    def building_ids(self) -> List[int]:
        return [t.id for t in self.types if t.is_building]

    def ally_channel(self, type_id: int) -> int:
        return type_id

    def enemy_channel(self, type_id: int) -> int:
        return self.num_types + type_id

    def enemy_slice(self) -> slice:
        return slice(self.num_types, 2 * self.num_types)

    def prerequisite_closure(self, type_ids: Sequence[int]) -> Set[int]:
        """All transitive ancestors of the given types (the types themselves excluded)"""
        closure: Set[int] = set()
        frontier = list(type_ids)
        while frontier:
            current = frontier.pop()
            for parent in self.types[current].prerequisites:
                if parent not in closure:
                    closure.add(parent)
                    frontier.append(parent)
        return closure

    def by_name(self, name: str) -> UnitTypeDef:
        for unit_type in self.types:
            if unit_type.name == name:
                return unit_type
        raise KeyError(name)


def default_tech_tree() -> TechTree:
    """Six types shared by all factions: base, worker, barracks, tech_lab, light, heavy (C_u = 12)"""
    return TechTree(types=(
        UnitTypeDef(0, "base", True, frozenset(), 40.0, 0.0),
        UnitTypeDef(1, "worker", False, frozenset({0}), 28.0, 12.0),
        UnitTypeDef(2, "barracks", True, frozenset({0}), 32.0, 0.0),
        UnitTypeDef(3, "tech_lab", True, frozenset({2}), 32.0, 0.0),
        UnitTypeDef(4, "light", False, frozenset({2}), 28.0, 14.0),
        UnitTypeDef(5, "heavy", False, frozenset({3}), 32.0, 8.0),
    ), factions=DEFAULT_FACTIONS)


def parse_tech_tree(text: str, factions: Sequence[int] = DEFAULT_FACTIONS) -> TechTree:
    """Parse the plain-text tech tree format (see module docstring)"""
    types: List[UnitTypeDef] = []
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise TechTreeError(f"line {line_number}: expected 6 fields, got {len(parts)}")
        id_str, name, flags, prereq_str, sight_str, speed_str = parts
        if flags not in ("B", "U"):
            raise TechTreeError(f"line {line_number}: flags must be 'B' or 'U', got '{flags}'")
        try:
            prerequisites = frozenset() if prereq_str == "-" else frozenset(int(p) for p in prereq_str.split(","))
            types.append(UnitTypeDef(
                id=int(id_str),
                name=name,
                is_building=flags == "B",
                prerequisites=prerequisites,
                sight_range=float(sight_str),
                move_speed=float(speed_str),
            ))
        except ValueError as e:
            raise TechTreeError(f"line {line_number}: {e}") from e
    return TechTree(types=tuple(types), factions=tuple(factions))


def load_tech_tree(path: Optional[str] = None) -> TechTree:
    """Load a tech tree file, or the built-in default when path is None"""
    if path is None:
        return default_tech_tree()
    tree = parse_tech_tree(Path(path).read_text(encoding="utf-8"))
    logger.info(f"✅ Tech tree loaded: {path} ({tree.num_types} types)")
    return tree


def format_tech_tree(tree: TechTree) -> str:
    """Render a tech tree in the text format accepted by parse_tech_tree"""
    lines = ["# id name flags prerequisites sight speed"]
    for t in tree.types:
        prereqs = ",".join(str(p) for p in sorted(t.prerequisites)) or "-"
        lines.append(f"{t.id} {t.name} {'B' if t.is_building else 'U'} {prereqs} {t.sight_range:g} {t.move_speed:g}")
    return "\n".join(lines) + "\n"


if __name__ == "__main__":
    print(format_tech_tree(default_tech_tree()), end="")
