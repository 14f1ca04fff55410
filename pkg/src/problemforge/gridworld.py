"""Deterministic partially observable gridworld simulator.

Levels are laid out as 1, 2, 4, or 6 rooms of 5x5 interior cells with a
door in the middle of every dividing wall.  The agent turns, moves,
picks up / drops non-door objects, and toggles doors; locked doors open
only while carrying a key of matching color (the key is retained).

State is value-semantic: ``env_step`` returns a new level and never
mutates its input, so rollouts can run concurrently on distinct values.
"""

from __future__ import annotations

from enum import IntEnum
from typing import Iterator, Optional

import numpy as np

from .alphabet import (
    Color,
    DoorState,
    Location,
    ObjectDescriptor,
    ObjectKind,
    Proposition,
    get_alphabet,
    make_next,
)

__all__ = [
    "Action",
    "Direction",
    "Level",
    "GridObject",
    "KIND_CODES",
    "room_grid_shape",
    "level_dimensions",
    "door_positions",
    "make_empty_level",
    "env_step",
    "observe",
    "label",
    "satisfies_proposition",
    "render_ascii",
    "level_to_json",
    "level_from_json",
    "validate_level",
]


class Action(IntEnum):
    TURN_LEFT = 0
    TURN_RIGHT = 1
    FORWARD = 2
    PICKUP = 3
    DROP = 4
    TOGGLE = 5


class Direction(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3


# (dx, dy) per direction; y grows downward
DIR_VEC = ((0, -1), (1, 0), (0, 1), (-1, 0))

# grid cell codes (channel 0 of observations reuses these, door states split out)
CELL_EMPTY = 0
CELL_WALL = 1
OBS_OUT_OF_BOUNDS = 2
KIND_CODES = {ObjectKind.BALL: 3, ObjectKind.SQUARE: 4, ObjectKind.KEY: 5, ObjectKind.DOOR: 6}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}
OBS_DOOR_BASE = 5  # door_open=6, door_closed=7, door_locked=8

COLOR_CODES = {
    Color.RED: 1,
    Color.GREEN: 2,
    Color.BLUE: 3,
    Color.PURPLE: 4,
    Color.YELLOW: 5,
    Color.GRAY: 6,
}
CODE_COLORS = {v: k for k, v in COLOR_CODES.items()}
STATE_CODES = {DoorState.OPEN: 1, DoorState.CLOSED: 2, DoorState.LOCKED: 3}
CODE_STATES = {v: k for k, v in STATE_CODES.items()}

ROOM_SIZE = 5
ROOM_LAYOUTS = {1: (1, 1), 2: (1, 2), 4: (2, 2), 6: (2, 3)}
OBJECT_COUNT_RANGE = {1: (1, 5), 2: (1, 10), 4: (4, 15), 6: (7, 20)}


class GridObject:
    """A concrete placed object: fully specified descriptor."""

    __slots__ = ("x", "y", "kind", "color", "state")

    def __init__(self, x: int, y: int, kind: int, color: int, state: int = 0):
        self.x = x
        self.y = y
        self.kind = kind
        self.color = color
        self.state = state

    @property
    def descriptor(self) -> ObjectDescriptor:
        return _descriptor_from_codes(self.kind, self.color, self.state)

    def __repr__(self):
        return f"GridObject({self.x},{self.y},{CODE_KINDS[self.kind].value},{CODE_COLORS[self.color].value})"


def _descriptor_from_codes(kind: int, color: int, state: int) -> ObjectDescriptor:
    return ObjectDescriptor(
        CODE_KINDS[kind],
        CODE_COLORS[color],
        CODE_STATES[state] if state else DoorState.UNSPECIFIED,
    )


def room_grid_shape(rooms: int) -> tuple[int, int]:
    """(room rows, room cols) for a room count."""
    try:
        return ROOM_LAYOUTS[rooms]
    except KeyError:
        raise ValueError(f"room count must be one of {sorted(ROOM_LAYOUTS)}, got {rooms}") from None


def level_dimensions(rooms: int) -> tuple[int, int]:
    """(width, height) in cells."""
    rows, cols = room_grid_shape(rooms)
    return cols * (ROOM_SIZE + 1) + 1, rows * (ROOM_SIZE + 1) + 1


def door_positions(rooms: int) -> list[tuple[int, int]]:
    """Middle cell of every dividing wall, sorted."""
    rows, cols = room_grid_shape(rooms)
    span = ROOM_SIZE + 1
    doors = []
    for r in range(rows):
        for c in range(cols - 1):
            doors.append((span * (c + 1), span * r + 3))
    for r in range(rows - 1):
        for c in range(cols):
            doors.append((span * c + 3, span * (r + 1)))
    return sorted(doors)


class Level:
    """A fully specified level: grids, agent pose, carried object.

    Grids are flat bytearrays indexed by ``y * width + x``.  The kind
    grid holds wall/empty/object codes; color and door-state grids are
    zero wherever no object sits.
    """

    __slots__ = ("rooms", "width", "height", "kind", "color", "state", "ax", "ay", "adir", "carried")

    def __init__(self, rooms, width, height, kind, color, state, ax, ay, adir, carried=None):
        self.rooms = rooms
        self.width = width
        self.height = height
        self.kind = kind
        self.color = color
        self.state = state
        self.ax = ax
        self.ay = ay
        self.adir = adir
        self.carried = carried  # None or (kind_code, color_code)

    def clone(self) -> "Level":
        return Level(
            self.rooms, self.width, self.height,
            bytearray(self.kind), bytearray(self.color), bytearray(self.state),
            self.ax, self.ay, self.adir, self.carried,
        )

    def idx(self, x: int, y: int) -> int:
        return y * self.width + x

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def objects(self) -> list[GridObject]:
        out = []
        w = self.width
        for i, k in enumerate(self.kind):
            if k >= 3:
                out.append(GridObject(i % w, i // w, k, self.color[i], self.state[i]))
        return out

    def object_count(self) -> int:
        """Placed objects plus the carried one, doors included."""
        n = sum(1 for k in self.kind if k >= 3)
        return n + (1 if self.carried is not None else 0)

    def non_door_count(self) -> int:
        n = sum(1 for k in self.kind if 3 <= k < 6)
        return n + (1 if self.carried is not None else 0)

    def door_count(self) -> int:
        return sum(1 for k in self.kind if k == 6)

    def free_floor_cells(self) -> list[tuple[int, int]]:
        """Floor cells holding no object and not under the agent."""
        out = []
        w = self.width
        for i, k in enumerate(self.kind):
            if k == CELL_EMPTY:
                x, y = i % w, i // w
                if (x, y) != (self.ax, self.ay):
                    out.append((x, y))
        return out

    def front_cell(self) -> tuple[int, int]:
        dx, dy = DIR_VEC[self.adir]
        return self.ax + dx, self.ay + dy

    def signature(self) -> bytes:
        """Bit-exact state fingerprint (serialization equality)."""
        carried = self.carried or (0, 0)
        head = bytes([self.rooms, self.ax, self.ay, self.adir, carried[0], carried[1]])
        return head + bytes(self.kind) + bytes(self.color) + bytes(self.state)

    def __eq__(self, other):
        return isinstance(other, Level) and self.signature() == other.signature()

    def __hash__(self):
        return hash(self.signature())


def make_empty_level(rooms: int) -> Level:
    """Walls and doorless door slots for a room count; no objects, agent at origin room."""
    width, height = level_dimensions(rooms)
    kind = bytearray(width * height)
    for x in range(width):
        kind[x] = CELL_WALL
        kind[(height - 1) * width + x] = CELL_WALL
    for y in range(height):
        kind[y * width] = CELL_WALL
        kind[y * width + width - 1] = CELL_WALL
    rows, cols = room_grid_shape(rooms)
    span = ROOM_SIZE + 1
    for c in range(1, cols):
        for y in range(height):
            kind[y * width + span * c] = CELL_WALL
    for r in range(1, rows):
        for x in range(width):
            kind[span * r * width + x] = CELL_WALL
    for x, y in door_positions(rooms):
        kind[y * width + x] = CELL_EMPTY  # door object placed separately
    return Level(rooms, width, height, kind, bytearray(width * height), bytearray(width * height), 1, 1, Direction.EAST, None)


def place_object(level: Level, x: int, y: int, kind: int, color: int, state: int = 0) -> None:
    i = level.idx(x, y)
    level.kind[i] = kind
    level.color[i] = color
    level.state[i] = state


def remove_object(level: Level, x: int, y: int) -> None:
    i = level.idx(x, y)
    level.kind[i] = CELL_EMPTY
    level.color[i] = 0
    level.state[i] = 0


def env_step(level: Level, action: int) -> Level:
    """Apply one action; invalid actions are no-ops."""
    new = level.clone()
    w = new.width
    if action == Action.TURN_LEFT:
        new.adir = (new.adir - 1) % 4
        return new
    if action == Action.TURN_RIGHT:
        new.adir = (new.adir + 1) % 4
        return new
    fx, fy = new.front_cell()
    if not new.in_bounds(fx, fy):
        return new
    fi = fy * w + fx
    k = new.kind[fi]
    if action == Action.FORWARD:
        if k == CELL_EMPTY or (k == 6 and new.state[fi] == 1):
            new.ax, new.ay = fx, fy
        return new
    if action == Action.PICKUP:
        if new.carried is None and 3 <= k < 6:
            new.carried = (k, new.color[fi])
            new.kind[fi] = CELL_EMPTY
            new.color[fi] = 0
        return new
    if action == Action.DROP:
        if new.carried is not None and k == CELL_EMPTY and (fx, fy) != (new.ax, new.ay):
            new.kind[fi], new.color[fi] = new.carried
            new.carried = None
        return new
    if action == Action.TOGGLE:
        if k == 6:
            s = new.state[fi]
            if s == 1:
                new.state[fi] = 2
            elif s == 2:
                new.state[fi] = 1
            elif s == 3 and new.carried is not None and new.carried[0] == 5 and new.carried[1] == new.color[fi]:
                new.state[fi] = 1
        return new
    raise ValueError(f"unknown action {action!r}")


# Per-direction observation offsets: view[row][col] -> (dx, dy) from the
# agent, with the agent at the middle of the rear row and forward up.
def _view_offsets():
    tables = []
    for d in range(4):
        fdx, fdy = DIR_VEC[d]
        rdx, rdy = DIR_VEC[(d + 1) % 4]
        table = []
        for row in range(5):
            fwd = 4 - row
            for col in range(5):
                side = col - 2
                table.append((fdx * fwd + rdx * side, fdy * fwd + rdy * side))
        tables.append(tuple(table))
    return tuple(tables)


VIEW_OFFSETS = _view_offsets()


def observe(level: Level) -> np.ndarray:
    """5x5x2 crop in front of the agent (kinds incl. door states, colors)."""
    out = np.zeros((5, 5, 2), dtype=np.int8)
    w = level.width
    offsets = VIEW_OFFSETS[level.adir]
    for j, (dx, dy) in enumerate(offsets):
        x, y = level.ax + dx, level.ay + dy
        row, col = divmod(j, 5)
        if not level.in_bounds(x, y):
            out[row, col, 0] = OBS_OUT_OF_BOUNDS
            continue
        i = y * w + x
        k = level.kind[i]
        if k == 6:
            out[row, col, 0] = OBS_DOOR_BASE + level.state[i]
        else:
            out[row, col, 0] = k
        out[row, col, 1] = level.color[i]
    if level.carried is not None:
        out[4, 2, 0] = level.carried[0]
        out[4, 2, 1] = level.carried[1]
    return out


def _generalizations(kind: int, color: int, state: int) -> Iterator[ObjectDescriptor]:
    colors = (CODE_COLORS[color], Color.UNSPECIFIED)
    if kind == 6:
        states = (CODE_STATES[state], DoorState.UNSPECIFIED)
    else:
        states = (DoorState.UNSPECIFIED,)
    k = CODE_KINDS[kind]
    for c in colors:
        for s in states:
            yield ObjectDescriptor(k, c, s)


def _view_object_cells(level: Level) -> list[tuple[int, int, int, int, int]]:
    w = level.width
    out = []
    for dx, dy in VIEW_OFFSETS[level.adir]:
        x, y = level.ax + dx, level.ay + dy
        if not level.in_bounds(x, y):
            continue
        i = y * w + x
        k = level.kind[i]
        if k >= 3:
            out.append((x, y, k, level.color[i], level.state[i]))
    return out


def label(level: Level) -> set[Proposition]:
    """Every alphabet proposition satisfied by the current state.

    Closed under implication: each emitted fact appears at all of its
    generalization levels.  Adjacency is orthogonal, requires both
    objects inside the view, and never pairs two doors.
    """
    props: set[Proposition] = set()
    w = level.width
    fx, fy = level.front_cell()
    if level.in_bounds(fx, fy):
        i = fy * w + fx
        if level.kind[i] >= 3:
            for d in _generalizations(level.kind[i], level.color[i], level.state[i]):
                props.add(Proposition(Location.FRONT, d))
    if level.carried is not None:
        for d in _generalizations(level.carried[0], level.carried[1], 0):
            props.add(Proposition(Location.CARRYING, d))
    cells = _view_object_cells(level)
    for a in range(len(cells)):
        xa, ya, ka, ca, sa = cells[a]
        for b in range(a + 1, len(cells)):
            xb, yb, kb, cb, sb = cells[b]
            if abs(xa - xb) + abs(ya - yb) != 1:
                continue
            if ka == 6 and kb == 6:
                continue
            for da in _generalizations(ka, ca, sa):
                for db in _generalizations(kb, cb, sb):
                    props.add(make_next(da, db))
    return props


def _matches(desc: ObjectDescriptor, kind: int, color: int, state: int) -> bool:
    if KIND_CODES[desc.kind] != kind:
        return False
    if desc.color is not Color.UNSPECIFIED and COLOR_CODES[desc.color] != color:
        return False
    if desc.door_state is not DoorState.UNSPECIFIED and STATE_CODES[desc.door_state] != state:
        return False
    return True


def satisfies_proposition(level: Level, prop: Proposition) -> bool:
    """Direct satisfaction check, equivalent to ``prop in label(level)``
    up to implication (some emitted label element implies ``prop``)."""
    w = level.width
    if prop.location is Location.FRONT:
        fx, fy = level.front_cell()
        if not level.in_bounds(fx, fy):
            return False
        i = fy * w + fx
        return level.kind[i] >= 3 and _matches(prop.first, level.kind[i], level.color[i], level.state[i])
    if prop.location is Location.CARRYING:
        if level.carried is None:
            return False
        return _matches(prop.first, level.carried[0], level.carried[1], 0)
    cells = _view_object_cells(level)
    for a in range(len(cells)):
        xa, ya, ka, ca, sa = cells[a]
        for b in range(a + 1, len(cells)):
            xb, yb, kb, cb, sb = cells[b]
            if abs(xa - xb) + abs(ya - yb) != 1 or (ka == 6 and kb == 6):
                continue
            if _matches(prop.first, ka, ca, sa) and _matches(prop.second, kb, cb, sb):
                return True
            if _matches(prop.first, kb, cb, sb) and _matches(prop.second, ka, ca, sa):
                return True
    return False


DIR_NAMES = {Direction.NORTH: "north", Direction.EAST: "east", Direction.SOUTH: "south", Direction.WEST: "west"}
NAME_DIRS = {v: k for k, v in DIR_NAMES.items()}
AGENT_CHARS = {Direction.NORTH: "^", Direction.EAST: ">", Direction.SOUTH: "v", Direction.WEST: "<"}


def render_ascii(level: Level) -> str:
    """One char per cell: '#' wall, '.' floor, '^>v<' agent, 'b/s/k'
    objects, 'O/C/L' open/closed/locked doors."""
    rows = []
    w = level.width
    for y in range(level.height):
        row = []
        for x in range(w):
            i = y * w + x
            k = level.kind[i]
            if (x, y) == (level.ax, level.ay):
                row.append(AGENT_CHARS[Direction(level.adir)])
            elif k == CELL_WALL:
                row.append("#")
            elif k == CELL_EMPTY:
                row.append(".")
            elif k == 6:
                row.append({1: "O", 2: "C", 3: "L"}[level.state[i]])
            else:
                row.append({3: "b", 4: "s", 5: "k"}[k])
        rows.append("".join(row))
    return "\n".join(rows)


def level_to_json(level: Level) -> dict:
    objects = []
    for obj in sorted(level.objects(), key=lambda o: (o.y, o.x)):
        entry = {
            "x": obj.x,
            "y": obj.y,
            "kind": CODE_KINDS[obj.kind].value,
            "color": CODE_COLORS[obj.color].value,
        }
        if obj.kind == 6:
            entry["state"] = CODE_STATES[obj.state].value
        objects.append(entry)
    agent = {"x": level.ax, "y": level.ay, "dir": DIR_NAMES[Direction(level.adir)]}
    if level.carried is not None:
        agent["carrying"] = {
            "kind": CODE_KINDS[level.carried[0]].value,
            "color": CODE_COLORS[level.carried[1]].value,
        }
    return {
        "rooms": level.rooms,
        "width": level.width,
        "height": level.height,
        "agent": agent,
        "objects": objects,
    }


def level_from_json(data: dict) -> Level:
    level = make_empty_level(int(data["rooms"]))
    if (level.width, level.height) != (int(data["width"]), int(data["height"])):
        raise ValueError("level dimensions inconsistent with room count")
    kind_by_name = {k.value: v for k, v in KIND_CODES.items()}
    color_by_name = {c.value: v for c, v in COLOR_CODES.items()}
    state_by_name = {s.value: v for s, v in STATE_CODES.items()}
    for obj in data["objects"]:
        kind = kind_by_name[obj["kind"]]
        state = state_by_name[obj["state"]] if kind == 6 else 0
        place_object(level, int(obj["x"]), int(obj["y"]), kind, color_by_name[obj["color"]], state)
    agent = data["agent"]
    level.ax, level.ay = int(agent["x"]), int(agent["y"])
    level.adir = int(NAME_DIRS[agent["dir"]])
    if "carrying" in agent:
        c = agent["carrying"]
        level.carried = (kind_by_name[c["kind"]], color_by_name[c["color"]])
    validate_level(level)
    return level


def validate_level(level: Level) -> None:
    """Raise ValueError unless all level invariants hold."""
    width, height = level_dimensions(level.rooms)
    if (level.width, level.height) != (width, height):
        raise ValueError("dimensions do not match room count")
    base = make_empty_level(level.rooms)
    doors = set(door_positions(level.rooms))
    w = level.width
    seen_doors = set()
    for y in range(height):
        for x in range(width):
            i = y * w + x
            k = level.kind[i]
            if base.kind[i] == CELL_WALL:
                if k != CELL_WALL:
                    raise ValueError(f"wall cell ({x},{y}) altered")
                continue
            if k == CELL_WALL:
                raise ValueError(f"unexpected wall at ({x},{y})")
            if k == 6:
                if (x, y) not in doors:
                    raise ValueError(f"door off its wall slot at ({x},{y})")
                if level.state[i] not in (1, 2, 3):
                    raise ValueError("door without a valid state")
                seen_doors.add((x, y))
            elif 3 <= k < 6:
                if (x, y) in doors:
                    raise ValueError(f"non-door object on a door slot at ({x},{y})")
                if level.state[i] != 0:
                    raise ValueError("non-door object with door state")
            if k >= 3 and not (1 <= level.color[i] <= 6):
                raise ValueError("object without a valid color")
    if seen_doors != doors:
        raise ValueError(f"missing doors at {sorted(doors - seen_doors)}")
    if not level.in_bounds(level.ax, level.ay):
        raise ValueError("agent out of bounds")
    ai = level.idx(level.ax, level.ay)
    k = level.kind[ai]
    if not (k == CELL_EMPTY or (k == 6 and level.state[ai] == 1)):
        raise ValueError("agent must stand on floor or an open door")
    if level.carried is not None and level.carried[0] == 6:
        raise ValueError("agent cannot carry a door")
    lo, hi = OBJECT_COUNT_RANGE[level.rooms]
    lo = max(lo, len(doors))
    n = level.object_count()
    if not (lo <= n <= hi):
        raise ValueError(f"object count {n} outside [{lo},{hi}]")
