"""Problem edit operators and mutation sequences.

Eight level edits (room add/remove, object add/remove/move/replace,
agent move), three task edits (switch a proposition, add/remove a
state), and two hindsight edits that derive sub-problems from a
rollout's intermediate machine state.  A mutation applies a uniformly
drawn number of edits, each kind drawn uniformly among the kinds
applicable at that step; hindsight kinds are only offered as the first
edit.  Rewards are re-sparsified after task and hindsight edits.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .gridworld import (
    OBJECT_COUNT_RANGE,
    ROOM_LAYOUTS,
    Level,
    door_positions,
    level_dimensions,
    make_empty_level,
    place_object,
    remove_object,
    room_grid_shape,
)
from .problem import Problem
from .reward_machine import (
    Edge,
    Formula,
    RewardMachine,
    RmStructureError,
    assign_rewards,
    validate_rm,
)
from .alphabet import get_alphabet
from .samplers import _COLORS, _DOOR_STATES, _NON_DOOR_KINDS

__all__ = ["EditKind", "RolloutContext", "EditError", "edit_applicable", "apply_edit", "mutate"]


class EditKind(Enum):
    ADD_ROOMS = "AddRooms"
    REMOVE_ROOMS = "RemoveRooms"
    ADD_OBJECT = "AddObject"
    REMOVE_OBJECT = "RemoveObject"
    MOVE_AGENT = "MoveAgent"
    MOVE_OBJECT = "MoveObject"
    REPLACE_DOOR = "ReplaceDoor"
    REPLACE_NON_DOOR = "ReplaceNonDoor"
    SWITCH_PROPOSITION = "SwitchProposition"
    ADD_STATE = "AddState"
    REMOVE_STATE = "RemoveState"
    EXTRACT_PRECEDING = "ExtractPreceding"
    EXTRACT_SUCCEEDING = "ExtractSucceeding"


LEVEL_EDITS = (
    EditKind.ADD_ROOMS,
    EditKind.REMOVE_ROOMS,
    EditKind.ADD_OBJECT,
    EditKind.REMOVE_OBJECT,
    EditKind.MOVE_AGENT,
    EditKind.MOVE_OBJECT,
    EditKind.REPLACE_DOOR,
    EditKind.REPLACE_NON_DOOR,
)
TASK_EDITS = (EditKind.SWITCH_PROPOSITION, EditKind.ADD_STATE, EditKind.REMOVE_STATE)
HINDSIGHT_EDITS = (EditKind.EXTRACT_PRECEDING, EditKind.EXTRACT_SUCCEEDING)

MAX_RM_STATES = 6


class EditError(ValueError):
    """Edit applied outside its precondition."""


@dataclass(frozen=True)
class RolloutContext:
    """Where a rollout ended: machine state plus a level snapshot."""

    final_rm_state: int
    final_level_state: Level


def _room_count_after(kind: EditKind, rooms: int) -> int:
    order = [1, 2, 4, 6]
    i = order.index(rooms)
    return order[i + 1] if kind is EditKind.ADD_ROOMS else order[i - 1]


def edit_applicable(problem: Problem, kind: EditKind, ctx: Optional[RolloutContext] = None) -> bool:
    level, rm = problem.level, problem.rm
    if kind is EditKind.ADD_ROOMS:
        return level.rooms in (1, 2, 4)
    if kind is EditKind.REMOVE_ROOMS:
        return level.rooms in (2, 4, 6)
    if kind is EditKind.ADD_OBJECT:
        return level.object_count() < OBJECT_COUNT_RANGE[level.rooms][1]
    if kind is EditKind.REMOVE_OBJECT:
        floor = max(OBJECT_COUNT_RANGE[level.rooms][0], level.door_count())
        return level.object_count() > floor and level.non_door_count() > 0
    if kind is EditKind.MOVE_AGENT:
        return bool(level.free_floor_cells())
    if kind is EditKind.MOVE_OBJECT:
        return bool(level.free_floor_cells()) and any(3 <= k < 6 for k in level.kind)
    if kind is EditKind.REPLACE_DOOR:
        return level.door_count() > 0
    if kind is EditKind.REPLACE_NON_DOOR:
        return any(3 <= k < 6 for k in level.kind)
    if kind is EditKind.SWITCH_PROPOSITION:
        return True
    if kind is EditKind.ADD_STATE:
        return rm.num_states() < MAX_RM_STATES
    if kind is EditKind.REMOVE_STATE:
        return rm.num_states() > 2
    if kind in HINDSIGHT_EDITS:
        return ctx is not None and ctx.final_rm_state not in (rm.initial, rm.accepting)
    raise ValueError(f"unknown edit kind {kind!r}")


# --- level surgery -------------------------------------------------------


def _copy_region(src: Level, dst: Level, dx: int, dy: int) -> None:
    """Copy objects and agent from src into dst at offset (dx, dy)."""
    for obj in src.objects():
        place_object(dst, obj.x + dx, obj.y + dy, obj.kind, obj.color, obj.state)
    dst.ax, dst.ay, dst.adir = src.ax + dx, src.ay + dy, src.adir
    dst.carried = src.carried


def _fill_new_doors(level: Level, rng: np.random.Generator) -> None:
    for x, y in door_positions(level.rooms):
        i = level.idx(x, y)
        if level.kind[i] != 6:
            place_object(level, x, y, 6, int(rng.choice(_COLORS)), int(rng.choice(_DOOR_STATES)))


def _add_rooms(level: Level, rng: np.random.Generator) -> Level:
    rooms = level.rooms
    new = make_empty_level(_room_count_after(EditKind.ADD_ROOMS, rooms))
    span = 6
    if rooms == 1:
        side = rng.integers(2)  # 0: new room right, 1: new room left
        dx, dy = (0, 0) if side == 0 else (span, 0)
    elif rooms == 2:
        side = rng.integers(2)  # 0: new row below, 1: above
        dx, dy = (0, 0) if side == 0 else (0, span)
    else:
        side = rng.integers(2)  # 0: new column right, 1: left
        dx, dy = (0, 0) if side == 0 else (span, 0)
    # old dividing doors land on new door slots; walls align by construction
    _copy_region(level, new, dx, dy)
    _fill_new_doors(new, rng)
    return new


def _rooms_of_cell(x: int, y: int) -> tuple[int, int]:
    """(room col, room row) of an interior cell."""
    return (x - 1) // 6, (y - 1) // 6


def _remove_rooms(level: Level, rng: np.random.Generator) -> Level:
    rooms = level.rooms
    rows, cols = room_grid_shape(rooms)
    acol, arow = _rooms_of_cell(level.ax, level.ay)
    if rooms == 2:
        keep_col = acol
        dx, dy = -6 * keep_col, 0
        keep = lambda c, r: c == keep_col
    elif rooms == 4:
        keep_row = arow
        dx, dy = 0, -6 * keep_row
        keep = lambda c, r: r == keep_row
    else:
        if acol == 0:
            drop_col = 2
        elif acol == 2:
            drop_col = 0
        else:
            drop_col = int(rng.choice(np.array([0, 2])))
        dx, dy = (-6 if drop_col == 0 else 0), 0
        keep = lambda c, r: c != drop_col
    new = make_empty_level(_room_count_after(EditKind.REMOVE_ROOMS, rooms))
    for obj in level.objects():
        c, r = _rooms_of_cell(obj.x, obj.y)
        nx, ny = obj.x + dx, obj.y + dy
        if obj.kind == 6:
            # keep only doors that still sit on a door slot of the new layout
            if new.in_bounds(nx, ny) and (nx, ny) in set(door_positions(new.rooms)):
                on_kept_wall = True
                if rooms == 2:
                    on_kept_wall = False  # the single dividing wall is gone
                elif rooms == 4:
                    on_kept_wall = obj.y % 6 != 0  # horizontal dividing walls gone
                else:
                    on_kept_wall = keep(*_rooms_of_cell(obj.x - 1, obj.y)) and keep(
                        *_rooms_of_cell(min(obj.x + 1, level.width - 2), obj.y)
                    )
                if on_kept_wall:
                    place_object(new, nx, ny, obj.kind, obj.color, obj.state)
            continue
        if keep(c, r):
            place_object(new, nx, ny, obj.kind, obj.color, obj.state)
    new.ax, new.ay, new.adir = level.ax + dx, level.ay + dy, level.adir
    new.carried = level.carried
    _fill_new_doors(new, rng)
    # an agent standing on a vanished door cell is re-placed uniformly
    ai = new.idx(new.ax, new.ay) if new.in_bounds(new.ax, new.ay) else None
    if ai is None or not (new.kind[ai] == 0 or (new.kind[ai] == 6 and new.state[ai] == 1)):
        free = new.free_floor_cells()
        new.ax, new.ay = free[int(rng.integers(len(free)))]
    # clamp the object count into the new room range
    lo = max(OBJECT_COUNT_RANGE[new.rooms][0], new.door_count())
    hi = OBJECT_COUNT_RANGE[new.rooms][1]
    while new.object_count() > hi:
        non_doors = [o for o in new.objects() if o.kind != 6]
        pick = non_doors[int(rng.integers(len(non_doors)))]
        remove_object(new, pick.x, pick.y)
    while new.object_count() < lo:
        free = new.free_floor_cells()
        x, y = free[int(rng.integers(len(free)))]
        place_object(new, x, y, int(rng.choice(_NON_DOOR_KINDS)), int(rng.choice(_COLORS)))
    return new


def _apply_level_edit(level: Level, kind: EditKind, rng: np.random.Generator) -> Level:
    if kind is EditKind.ADD_ROOMS:
        return _add_rooms(level, rng)
    if kind is EditKind.REMOVE_ROOMS:
        return _remove_rooms(level, rng)
    new = level.clone()
    if kind is EditKind.ADD_OBJECT:
        free = new.free_floor_cells()
        x, y = free[int(rng.integers(len(free)))]
        place_object(new, x, y, int(rng.choice(_NON_DOOR_KINDS)), int(rng.choice(_COLORS)))
        return new
    if kind is EditKind.REMOVE_OBJECT:
        non_doors = [o for o in new.objects() if o.kind != 6]
        pick = non_doors[int(rng.integers(len(non_doors)))]
        remove_object(new, pick.x, pick.y)
        return new
    if kind is EditKind.MOVE_AGENT:
        free = new.free_floor_cells()
        x, y = free[int(rng.integers(len(free)))]
        new.ax, new.ay, new.adir = x, y, int(rng.integers(4))
        return new
    if kind is EditKind.MOVE_OBJECT:
        non_doors = [o for o in new.objects() if o.kind != 6]
        pick = non_doors[int(rng.integers(len(non_doors)))]
        free = new.free_floor_cells()
        x, y = free[int(rng.integers(len(free)))]
        remove_object(new, pick.x, pick.y)
        place_object(new, x, y, pick.kind, pick.color)
        return new
    if kind is EditKind.REPLACE_DOOR:
        doors = [o for o in new.objects() if o.kind == 6]
        pick = doors[int(rng.integers(len(doors)))]
        place_object(new, pick.x, pick.y, 6, int(rng.choice(_COLORS)), int(rng.choice(_DOOR_STATES)))
        return new
    if kind is EditKind.REPLACE_NON_DOOR:
        non_doors = [o for o in new.objects() if o.kind != 6]
        pick = non_doors[int(rng.integers(len(non_doors)))]
        place_object(new, pick.x, pick.y, int(rng.choice(_NON_DOOR_KINDS)), int(rng.choice(_COLORS)))
        return new
    raise ValueError(kind)


# --- task surgery --------------------------------------------------------


def _rebuild(states, edges, initial, accepting) -> RewardMachine:
    """Recompute sibling negations, renumber densely, re-sparsify."""
    by_source: dict[int, list[tuple[int, int]]] = {}
    for src, dst, pos in edges:
        by_source.setdefault(src, []).append((dst, pos))
    new_edges = []
    for src, out in by_source.items():
        positives = [p for _, p in out]
        for dst, pos in out:
            negs = frozenset(p for p in positives if p != pos)
            new_edges.append(Edge(src, dst, Formula(pos, negs)))
    order = {s: i for i, s in enumerate(sorted(states))}
    rm = RewardMachine(
        states=tuple(range(len(states))),
        edges=tuple(
            Edge(order[e.source], order[e.target], e.formula)
            for e in sorted(new_edges, key=lambda e: (e.source, e.target))
        ),
        rewards={},
        initial=order[initial],
        accepting=order[accepting],
    )
    return assign_rewards(rm, "sparse")


def _prune_rm(states, edges, initial, accepting):
    """Drop states off every initial->accepting path (and their edges)."""
    adj: dict[int, set[int]] = {s: set() for s in states}
    radj: dict[int, set[int]] = {s: set() for s in states}
    for src, dst, _ in edges:
        adj[src].add(dst)
        radj[dst].add(src)

    def closure(start, graph):
        seen, stack = {start}, [start]
        while stack:
            u = stack.pop()
            for v in graph[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    keep = closure(initial, adj) & closure(accepting, radj)
    if initial not in keep or accepting not in keep or len(keep) < 2:
        raise EditError("edit disconnected the machine")
    edges = [(s, d, p) for s, d, p in edges if s in keep and d in keep]
    return sorted(keep), edges


def _switch_proposition(rm: RewardMachine, rng: np.random.Generator) -> RewardMachine:
    alphabet = get_alphabet()
    edges = [(e.source, e.target, e.formula.positive) for e in rm.edges]
    i = int(rng.integers(len(edges)))
    src, dst, old = edges[i]
    sibling_pos = {p for s, d, p in edges if s == src and (s, d) != (src, dst)}
    while True:
        new_pos = alphabet[int(rng.integers(len(alphabet)))]
        if new_pos is not old and new_pos not in sibling_pos:
            break
    edges[i] = (src, dst, new_pos)
    return _rebuild(list(rm.states), edges, rm.initial, rm.accepting)


def _add_state(rm: RewardMachine, rng: np.random.Generator) -> RewardMachine:
    alphabet = get_alphabet()
    new_prop = alphabet[int(rng.integers(len(alphabet)))]
    fresh = max(rm.states) + 1
    states = list(rm.states) + [fresh]
    edges = [(e.source, e.target, e.formula.positive) for e in rm.edges]
    position = ("start", "middle", "end")[int(rng.integers(3))]
    if position == "start":
        edges.append((fresh, rm.initial, new_prop))
        return _rebuild(states, edges, fresh, rm.accepting)
    if position == "end":
        edges.append((rm.accepting, fresh, new_prop))
        return _rebuild(states, edges, rm.initial, fresh)
    i = int(rng.integers(len(edges)))
    src, dst, pos = edges[i]
    edges[i] = (src, fresh, pos)
    edges.append((fresh, dst, new_prop))
    return _rebuild(states, edges, rm.initial, rm.accepting)


def _remove_state_option(rm: RewardMachine, victim: int, replacement: int):
    """Build the machine left after deleting ``victim``.

    Removing the initial state promotes one of its successors; removing
    the accepting state promotes one of its predecessors (dropping that
    state's other outgoing edges); removing a middle state redirects its
    incoming edges to one of its successors.
    """
    edges = [(e.source, e.target, e.formula.positive) for e in rm.edges]
    initial, accepting = rm.initial, rm.accepting
    if victim == initial:
        initial = replacement
        edges = [(s, d, p) for s, d, p in edges if victim not in (s, d)]
    elif victim == accepting:
        accepting = replacement
        edges = [(s, d, p) for s, d, p in edges if victim not in (s, d) and s != replacement]
    else:
        rewired = []
        present = {(s, d) for s, d, _ in edges if victim not in (s, d)}
        for s, d, p in edges:
            if s == victim:
                continue
            if d == victim:
                if (s, replacement) in present or s == replacement:
                    continue
                present.add((s, replacement))
                rewired.append((s, replacement, p))
            else:
                rewired.append((s, d, p))
        edges = rewired
    states = [s for s in rm.states if s != victim]
    states, edges = _prune_rm(states, edges, initial, accepting)
    return _rebuild(states, edges, initial, accepting)


def _remove_state(rm: RewardMachine, rng: np.random.Generator) -> RewardMachine:
    succ: dict[int, list[int]] = {u: [] for u in rm.states}
    pred: dict[int, list[int]] = {u: [] for u in rm.states}
    for e in rm.edges:
        succ[e.source].append(e.target)
        pred[e.target].append(e.source)
    options = []
    for victim in rm.states:
        if victim == rm.initial:
            options += [(victim, s) for s in sorted(succ[victim]) if s != rm.accepting]
        elif victim == rm.accepting:
            options += [(victim, p) for p in sorted(pred[victim]) if p != rm.initial]
        else:
            options += [(victim, s) for s in sorted(succ[victim])]
    for i in rng.permutation(len(options)):
        victim, replacement = options[int(i)]
        try:
            return _remove_state_option(rm, victim, replacement)
        except EditError:
            continue
    raise EditError("no removable state")


def _extract_preceding(problem: Problem, ctx: RolloutContext) -> Problem:
    rm = problem.rm
    edges = [(e.source, e.target, e.formula.positive) for e in rm.edges]
    accepting = ctx.final_rm_state
    edges = [(s, d, p) for s, d, p in edges if s != accepting]
    states, edges = _prune_rm(list(rm.states), edges, rm.initial, accepting)
    return Problem(rm=_rebuild(states, edges, rm.initial, accepting), level=problem.level)


def _extract_succeeding(problem: Problem, ctx: RolloutContext) -> Problem:
    rm = problem.rm
    edges = [(e.source, e.target, e.formula.positive) for e in rm.edges]
    initial = ctx.final_rm_state
    states, edges = _prune_rm(list(rm.states), edges, initial, rm.accepting)
    return Problem(
        rm=_rebuild(states, edges, initial, rm.accepting),
        level=ctx.final_level_state.clone(),
    )


def apply_edit(
    problem: Problem,
    kind: EditKind,
    rng: np.random.Generator,
    ctx: Optional[RolloutContext] = None,
) -> Problem:
    """Apply one edit; raises EditError when its precondition fails."""
    if not edit_applicable(problem, kind, ctx):
        raise EditError(f"{kind.value} not applicable")
    if kind in LEVEL_EDITS:
        return Problem(rm=problem.rm, level=_apply_level_edit(problem.level, kind, rng))
    if kind is EditKind.SWITCH_PROPOSITION:
        return Problem(rm=_switch_proposition(problem.rm, rng), level=problem.level)
    if kind is EditKind.ADD_STATE:
        return Problem(rm=_add_state(problem.rm, rng), level=problem.level)
    if kind is EditKind.REMOVE_STATE:
        return Problem(rm=_remove_state(problem.rm, rng), level=problem.level)
    if kind is EditKind.EXTRACT_PRECEDING:
        return _extract_preceding(problem, ctx)
    if kind is EditKind.EXTRACT_SUCCEEDING:
        return _extract_succeeding(problem, ctx)
    raise ValueError(kind)


def mutate(
    problem: Problem,
    rng: np.random.Generator,
    ctx: Optional[RolloutContext] = None,
    count_range: tuple[int, int] = (7, 10),
) -> tuple[Problem, list[EditKind]]:
    """Apply a uniformly drawn number of uniformly chosen applicable edits."""
    lo, hi = count_range
    if not (1 <= lo <= hi):
        raise ValueError("count range must be nonempty and positive")
    count = int(rng.integers(lo, hi + 1))
    applied: list[EditKind] = []
    current = problem
    for step in range(count):
        kinds = list(LEVEL_EDITS + TASK_EDITS)
        if step == 0:
            kinds += list(HINDSIGHT_EDITS)
        options = [k for k in kinds if edit_applicable(current, k, ctx)]
        kind = options[int(rng.integers(len(options)))]
        current = apply_edit(current, kind, rng, ctx)
        applied.append(kind)
    return current, applied
