"""Static and exact solvability checks for problems.

The static check decomposes the task into initial->accepting paths and
walks each path's positive propositions against a tree of reachability
states: when a proposition has no reachable match, the check branches by
opening each reachable locked door whose matching-color key is within
reach.  Multiple opening orders are kept because opening a door changes
its state, which later propositions may depend on.  Negative literals
are ignored, matching the check's static nature.

The exact check is a brute-force breadth-first search over the joint
(physical state, machine state) space and serves as the independent
oracle at desk scale.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .alphabet import Color, DoorState, ObjectDescriptor, Proposition
from .engine import CompiledRm, advance
from .gridworld import COLOR_CODES, KIND_CODES, STATE_CODES, Action, Level, env_step
from .problem import Problem
from .reward_machine import enumerate_paths

__all__ = [
    "ReachabilityNode",
    "reachable_set",
    "is_solvable_static",
    "is_solvable_exact",
    "batch_solvability_rate",
]


@dataclass(frozen=True)
class ReachabilityNode:
    """Reachability snapshot for a set of opened locked doors.

    ``reachable_objects`` holds (kind, color, state) codes for objects on
    reachable cells plus doors on the region boundary; opened doors are
    reported as open.  The carried object, being droppable anywhere
    reachable, is included.
    """

    opened_doors: frozenset[tuple[int, int]]
    reachable_cells: frozenset[tuple[int, int]]
    reachable_objects: tuple[tuple[int, int, int], ...]


def reachable_set(level: Level, opened: frozenset[tuple[int, int]] = frozenset()) -> ReachabilityNode:
    """Flood-fill from the agent; locked doors block unless in ``opened``."""
    w = level.width
    kind, state = level.kind, level.state
    seen = {(level.ax, level.ay)}
    queue = deque(seen)
    boundary_doors = set()
    while queue:
        x, y = queue.popleft()
        for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
            nx, ny = x + dx, y + dy
            if (nx, ny) in seen or not level.in_bounds(nx, ny):
                continue
            i = ny * w + nx
            k = kind[i]
            if k == 1:
                continue
            if k == 6 and state[i] == 3 and (nx, ny) not in opened:
                boundary_doors.add((nx, ny))
                continue
            seen.add((nx, ny))
            queue.append((nx, ny))
    objects = []
    for x, y in sorted(seen | boundary_doors):
        i = y * w + x
        k = kind[i]
        if k < 3:
            continue
        s = state[i]
        if k == 6 and (x, y) in opened:
            s = 1
        objects.append((k, level.color[i], s))
    if level.carried is not None:
        objects.append((level.carried[0], level.carried[1], 0))
    return ReachabilityNode(
        opened_doors=frozenset(opened),
        reachable_cells=frozenset(seen),
        reachable_objects=tuple(sorted(objects)),
    )


def _desc_matches(desc: ObjectDescriptor, code: tuple[int, int, int], door_flex: bool) -> bool:
    kind, color, state = code
    if KIND_CODES[desc.kind] != kind:
        return False
    if desc.color is not Color.UNSPECIFIED and COLOR_CODES[desc.color] != color:
        return False
    if desc.door_state is not DoorState.UNSPECIFIED:
        want = STATE_CODES[desc.door_state]
        if door_flex and want in (1, 2) and state in (1, 2):
            return True  # open and closed doors are freely toggled
        return want == state
    return True


def _prop_satisfiable(prop: Proposition, objects, door_flex: bool) -> bool:
    if prop.second is None:
        return any(_desc_matches(prop.first, c, door_flex) for c in objects)
    for i, a in enumerate(objects):
        for j, b in enumerate(objects):
            if i == j:
                continue
            if _desc_matches(prop.first, a, door_flex) and _desc_matches(prop.second, b, door_flex):
                return True
    return False


def _locked_door_options(level: Level, node: ReachabilityNode) -> list[tuple[int, int]]:
    """Locked reachable doors whose matching-color key is within reach."""
    w = level.width
    key_colors = {c for k, c, _ in node.reachable_objects if k == 5}
    options = []
    for x, y in sorted(node.reachable_cells):
        for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
            nx, ny = x + dx, y + dy
            if not level.in_bounds(nx, ny) or (nx, ny) in node.opened_doors:
                continue
            i = ny * w + nx
            if level.kind[i] == 6 and level.state[i] == 3 and level.color[i] in key_colors:
                options.append((nx, ny))
    return sorted(set(options))


def is_solvable_static(problem: Problem, door_flex: bool = True) -> bool:
    """True iff some path's propositions are satisfiable in order under
    some locked-door-opening strategy.

    ``door_flex`` treats open and closed doors as interchangeable for
    state-specific matching (toggling between them is free), which keeps
    the check sound with respect to the exact oracle.
    """
    paths = enumerate_paths(problem.rm)
    if not paths:
        return False
    level = problem.level
    nodes: dict[frozenset, ReachabilityNode] = {}

    def get_node(opened: frozenset) -> ReachabilityNode:
        if opened not in nodes:
            nodes[opened] = reachable_set(level, opened)
        return nodes[opened]

    def walk(props: Sequence[Proposition], idx: int, opened: frozenset, seen: set) -> bool:
        if idx == len(props):
            return True
        key = (idx, opened)
        if key in seen:
            return False
        seen.add(key)
        node = get_node(opened)
        if _prop_satisfiable(props[idx], node.reachable_objects, door_flex):
            if walk(props, idx + 1, opened, seen):
                return True
        for door in _locked_door_options(level, node):
            if walk(props, idx, opened | {door}, seen):
                return True
        return False

    for path in paths:
        props = [e.formula.positive for e in path]
        if walk(props, 0, frozenset(), set()):
            return True
    return False


def _compact_state(level: Level, u: int) -> bytes:
    objs = []
    w = level.width
    for i, k in enumerate(level.kind):
        if k >= 3:
            objs.extend((i % w, i // w, k, level.color[i], level.state[i]))
    carried = level.carried or (0, 0)
    return bytes([u, level.ax, level.ay, level.adir, carried[0], carried[1]] + objs)


def is_solvable_exact(
    problem: Problem,
    step_limit: int = 512,
    state_budget: int = 400_000,
) -> Optional[bool]:
    """Breadth-first search over the joint state space under all six
    actions.  Returns True/False, or None when the state budget is
    exceeded (distinct from False)."""
    crm = CompiledRm(problem.rm)
    level0 = problem.level.clone()
    u0, _ = advance(level0, crm, problem.rm.initial)
    if u0 == crm.accepting:
        return True
    seen = {_compact_state(level0, u0)}
    frontier = deque([(level0, u0, 0)])
    actions = list(Action)
    while frontier:
        level, u, depth = frontier.popleft()
        if depth >= step_limit:
            continue
        for action in actions:
            nxt = env_step(level, action)
            nu, _ = advance(nxt, crm, u)
            if nu == crm.accepting:
                return True
            key = _compact_state(nxt, nu)
            if key in seen:
                continue
            if len(seen) >= state_budget:
                return None
            seen.add(key)
            frontier.append((nxt, nu, depth + 1))
    return False


def batch_solvability_rate(
    sampler,
    batches: int = 5,
    batch_size: int = 4096,
    door_flex: bool = True,
) -> tuple[float, float]:
    """Mean and stddev (percent) of statically solvable problems per
    batch.  ``sampler(batch_index, item_index) -> Problem``."""
    rates = []
    for b in range(batches):
        solved = sum(
            1 for i in range(batch_size) if is_solvable_static(sampler(b, i), door_flex=door_flex)
        )
        rates.append(100.0 * solved / batch_size)
    arr = np.asarray(rates)
    return float(arr.mean()), float(arr.std())
