"""The 10x10 tile world: movement, tile events, shared reward, mood-driven stamina.

Coordinates are (x, y) with x the column and y the row; y grows downward so
row 0 is the top line of a map file. Moving off the grid keeps the entity in
place and reports a wall bump. Traps never end an episode; only the goal does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from random import Random

GRID_WIDTH = 10
GRID_HEIGHT = 10


class TileKind(Enum):
    GOAL = "G"
    FOOD = "F"
    TRAP = "T"
    SAFE = "S"


class Direction(Enum):
    UP = "Up"
    DOWN = "Down"
    LEFT = "Left"
    RIGHT = "Right"

    @property
    def delta(self) -> tuple[int, int]:
        return _DELTAS[self]


_DELTAS: dict[Direction, tuple[int, int]] = {
    Direction.UP: (0, -1),
    Direction.DOWN: (0, 1),
    Direction.LEFT: (-1, 0),
    Direction.RIGHT: (1, 0),
}

# Canonical order used for every deterministic tie-break on actions.
DIRECTION_ORDER: tuple[Direction, ...] = (
    Direction.UP,
    Direction.DOWN,
    Direction.LEFT,
    Direction.RIGHT,
)


class StepEvent(Enum):
    REACHED_GOAL = "ReachedGoal"
    ATE_FOOD = "AteFood"
    HIT_TRAP = "HitTrap"
    BUMPED_WALL = "BumpedWall"


class MapFormatError(ValueError):
    """Malformed map text; the message carries a line/column diagnostic."""


@dataclass(frozen=True)
class GridMap:
    """Immutable tile grid plus the designated start cell.

    ``tiles[y][x]`` is row-major; the grid is always 10x10, holds at least one
    goal tile, and the start cell is a safe tile.
    """

    tiles: tuple[tuple[TileKind, ...], ...]
    start: tuple[int, int]

    def __post_init__(self):
        if len(self.tiles) != GRID_HEIGHT or any(len(row) != GRID_WIDTH for row in self.tiles):
            raise ValueError(f"grid must be {GRID_WIDTH}x{GRID_HEIGHT}")
        sx, sy = self.start
        if not self.in_bounds(sx, sy):
            raise ValueError(f"start {self.start} out of bounds")
        if self.tile_at(sx, sy) is not TileKind.SAFE:
            raise ValueError(f"start {self.start} must sit on a safe tile")
        if not self.goal_cells():
            raise ValueError("map needs at least one goal tile")

    @property
    def width(self) -> int:
        return GRID_WIDTH

    @property
    def height(self) -> int:
        return GRID_HEIGHT

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < GRID_WIDTH and 0 <= y < GRID_HEIGHT

    def tile_at(self, x: int, y: int) -> TileKind:
        return self.tiles[y][x]

    def goal_cells(self) -> list[tuple[int, int]]:
        return [
            (x, y)
            for y in range(GRID_HEIGHT)
            for x in range(GRID_WIDTH)
            if self.tiles[y][x] is TileKind.GOAL
        ]


@dataclass
class EntityState:
    """The centrally controlled entity's mutable state."""

    position: tuple[int, int]
    stamina: int = 1
    career_delta: float = 0.0
    consumed_food: set[tuple[int, int]] = field(default_factory=set)


@dataclass(frozen=True)
class TransitionOutcome:
    new_position: tuple[int, int]
    events: frozenset[StepEvent]
    shared_reward: float
    episode_done: bool


def step(grid: GridMap, entity: EntityState, action: Direction) -> TransitionOutcome:
    """Move the entity one cell; mutates position and consumed food.

    Off-grid moves clamp in place with a BumpedWall event. A food cell grants
    AteFood only the first time it is entered within the episode. Landing on
    the goal yields the shared +1.0 reward and ends the episode.
    """
    x, y = entity.position
    dx, dy = action.delta
    nx, ny = x + dx, y + dy
    events: set[StepEvent] = set()
    if not grid.in_bounds(nx, ny):
        nx, ny = x, y
        events.add(StepEvent.BUMPED_WALL)
    else:
        kind = grid.tile_at(nx, ny)
        if kind is TileKind.FOOD and (nx, ny) not in entity.consumed_food:
            events.add(StepEvent.ATE_FOOD)
            entity.consumed_food.add((nx, ny))
        elif kind is TileKind.TRAP:
            events.add(StepEvent.HIT_TRAP)
        elif kind is TileKind.GOAL:
            events.add(StepEvent.REACHED_GOAL)
    entity.position = (nx, ny)
    done = StepEvent.REACHED_GOAL in events
    return TransitionOutcome(
        new_position=(nx, ny),
        events=frozenset(events),
        shared_reward=1.0 if done else 0.0,
        episode_done=done,
    )


def stamina_from_mood(mood: float) -> int:
    """Map a mood in [0, 2] to moves-per-round via max(1, round(3 * mood))."""
    if not (0.0 <= mood <= 2.0):
        raise ValueError(f"mood must lie in [0, 2], got {mood}")
    return max(1, round(mood * 3))


def update_career(
    entity: EntityState,
    outcome: TransitionOutcome,
    goal_delta: float = 0.5,
    trap_delta: float = -0.3,
) -> EntityState:
    """Apply the career change for one transition: goal gains, trap losses."""
    if StepEvent.REACHED_GOAL in outcome.events:
        entity.career_delta += goal_delta
    if StepEvent.HIT_TRAP in outcome.events:
        entity.career_delta += trap_delta
    return entity


def distance_to_goal(grid: GridMap, position: tuple[int, int]) -> float:
    """Euclidean distance from a cell to the nearest goal tile."""
    x, y = position
    return min(math.hypot(gx - x, gy - y) for gx, gy in grid.goal_cells())


def serialize_state(grid: GridMap, entity: EntityState) -> str:
    """Byte-stable canonical text for (map, entity); identical states match exactly."""
    rows = "/".join("".join(t.value for t in row) for row in grid.tiles)
    consumed = ";".join(f"{x},{y}" for x, y in sorted(entity.consumed_food))
    lines = [
        f"tiles {rows}",
        f"start {grid.start[0]} {grid.start[1]}",
        f"pos {entity.position[0]} {entity.position[1]}",
        f"stamina {entity.stamina}",
        f"career {entity.career_delta!r}",
        f"consumed {consumed}",
    ]
    return "\n".join(lines)


def parse_state(text: str) -> tuple[GridMap, EntityState]:
    """Inverse of :func:`serialize_state`."""
    fields: dict[str, str] = {}
    for line in text.splitlines():
        key, _, value = line.partition(" ")
        fields[key] = value
    try:
        tiles = tuple(
            tuple(TileKind(ch) for ch in row) for row in fields["tiles"].split("/")
        )
        sx, sy = fields["start"].split()
        px, py = fields["pos"].split()
        consumed: set[tuple[int, int]] = set()
        if fields.get("consumed"):
            for pair in fields["consumed"].split(";"):
                cx, cy = pair.split(",")
                consumed.add((int(cx), int(cy)))
        grid = GridMap(tiles=tiles, start=(int(sx), int(sy)))
        entity = EntityState(
            position=(int(px), int(py)),
            stamina=int(fields["stamina"]),
            career_delta=float(fields["career"]),
            consumed_food=consumed,
        )
    except (KeyError, ValueError) as exc:
        raise ValueError(f"unparseable state text: {exc}") from exc
    return grid, entity


def parse_map_text(text: str) -> GridMap:
    """Parse the map file format: a ``start x y`` header then 10 rows of 10 tiles.

    Raises :class:`MapFormatError` with a line (and column, where sensible)
    diagnostic on any malformed input.
    """
    lines = text.splitlines()
    if not lines:
        raise MapFormatError("line 1: empty map file, expected 'start x y' header")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "start":
        raise MapFormatError(f"line 1: expected header 'start x y', got {lines[0]!r}")
    try:
        sx, sy = int(header[1]), int(header[2])
    except ValueError:
        raise MapFormatError(f"line 1: start coordinates must be integers, got {lines[0]!r}") from None
    rows = lines[1:]
    if len(rows) != GRID_HEIGHT:
        raise MapFormatError(
            f"line {len(lines)}: expected {GRID_HEIGHT} tile rows after the header, got {len(rows)}"
        )
    tiles: list[tuple[TileKind, ...]] = []
    for i, row in enumerate(rows):
        lineno = i + 2
        if len(row) != GRID_WIDTH:
            raise MapFormatError(
                f"line {lineno}: expected {GRID_WIDTH} tiles, got {len(row)}"
            )
        parsed: list[TileKind] = []
        for j, ch in enumerate(row):
            try:
                parsed.append(TileKind(ch))
            except ValueError:
                raise MapFormatError(
                    f"line {lineno}, column {j + 1}: invalid tile character {ch!r}"
                ) from None
        tiles.append(tuple(parsed))
    try:
        return GridMap(tiles=tuple(tiles), start=(sx, sy))
    except ValueError as exc:
        raise MapFormatError(f"line 1: {exc}") from None


def format_map(grid: GridMap) -> str:
    rows = ["".join(t.value for t in row) for row in grid.tiles]
    return "\n".join([f"start {grid.start[0]} {grid.start[1]}", *rows]) + "\n"


def load_map(path) -> GridMap:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_map_text(fh.read())


def generate_map(
    rng: Random,
    food_tiles: int = 5,
    trap_tiles: int = 8,
    goal_tiles: int = 1,
) -> GridMap:
    """Seeded random map: pick a start cell, then scatter goals, food and traps."""
    if goal_tiles < 1:
        raise ValueError("need at least one goal tile")
    special = goal_tiles + food_tiles + trap_tiles
    if special > GRID_WIDTH * GRID_HEIGHT - 1:
        raise ValueError("too many special tiles for a 10x10 grid")
    cells = [(x, y) for y in range(GRID_HEIGHT) for x in range(GRID_WIDTH)]
    start = cells[rng.randrange(len(cells))]
    others = [c for c in cells if c != start]
    chosen = rng.sample(others, special)
    kinds: dict[tuple[int, int], TileKind] = {}
    for c in chosen[:goal_tiles]:
        kinds[c] = TileKind.GOAL
    for c in chosen[goal_tiles : goal_tiles + food_tiles]:
        kinds[c] = TileKind.FOOD
    for c in chosen[goal_tiles + food_tiles :]:
        kinds[c] = TileKind.TRAP
    tiles = tuple(
        tuple(kinds.get((x, y), TileKind.SAFE) for x in range(GRID_WIDTH))
        for y in range(GRID_HEIGHT)
    )
    return GridMap(tiles=tiles, start=start)
