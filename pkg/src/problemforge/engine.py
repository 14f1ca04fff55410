"""Compiled machine stepping for hot loops.

Rollouts and the exact solvability search advance the task machine once
per environment step.  Building the full label set each step is wasteful
when only the current state's outgoing formulas matter, so formulas are
compiled to integer descriptor codes and checked directly against the
level.  Equivalence with the label-based semantics is property-tested.
"""

from __future__ import annotations

from typing import Optional

from .alphabet import Color, DoorState, Location, Proposition
from .gridworld import COLOR_CODES, KIND_CODES, STATE_CODES, Level, _view_object_cells
from .reward_machine import RewardMachine, RmStructureError

__all__ = ["compile_proposition", "CompiledRm", "advance"]

_LOC_FRONT, _LOC_CARRY, _LOC_NEXT = 0, 1, 2


def compile_proposition(prop: Proposition) -> tuple:
    """(loc, k1, c1, s1, k2, c2, s2) with 0 meaning unspecified."""

    def codes(desc):
        k = KIND_CODES[desc.kind]
        c = COLOR_CODES[desc.color] if desc.color is not Color.UNSPECIFIED else 0
        s = STATE_CODES[desc.door_state] if desc.door_state is not DoorState.UNSPECIFIED else 0
        return k, c, s

    loc = {Location.FRONT: _LOC_FRONT, Location.CARRYING: _LOC_CARRY, Location.NEXT: _LOC_NEXT}[prop.location]
    k1, c1, s1 = codes(prop.first)
    if prop.second is not None:
        k2, c2, s2 = codes(prop.second)
    else:
        k2 = c2 = s2 = 0
    return (loc, k1, c1, s1, k2, c2, s2)


def _code_satisfied(level: Level, code: tuple, cells: Optional[list]) -> bool:
    loc, k1, c1, s1, k2, c2, s2 = code
    if loc == _LOC_FRONT:
        fx, fy = level.front_cell()
        if not level.in_bounds(fx, fy):
            return False
        i = fy * level.width + fx
        k = level.kind[i]
        return (
            k == k1
            and (c1 == 0 or level.color[i] == c1)
            and (s1 == 0 or level.state[i] == s1)
        )
    if loc == _LOC_CARRY:
        if level.carried is None:
            return False
        ck, cc = level.carried
        return ck == k1 and (c1 == 0 or cc == c1)
    # adjacency within the view
    if cells is None:
        cells = _view_object_cells(level)
    n = len(cells)
    for a in range(n):
        xa, ya, ka, ca, sa = cells[a]
        for b in range(a + 1, n):
            xb, yb, kb, cb, sb = cells[b]
            if abs(xa - xb) + abs(ya - yb) != 1:
                continue
            if (
                ka == k1
                and (c1 == 0 or ca == c1)
                and (s1 == 0 or sa == s1)
                and kb == k2
                and (c2 == 0 or cb == c2)
                and (s2 == 0 or sb == s2)
            ):
                return True
            if (
                kb == k1
                and (c1 == 0 or cb == c1)
                and (s1 == 0 or sb == s1)
                and ka == k2
                and (c2 == 0 or ca == c2)
                and (s2 == 0 or sa == s2)
            ):
                return True
    return False


class CompiledRm:
    """Per-state edge tables with integer-coded formulas."""

    __slots__ = ("rm", "tables", "accepting")

    def __init__(self, rm: RewardMachine):
        self.rm = rm
        self.accepting = rm.accepting
        self.tables = {}
        for u in rm.states:
            entries = []
            for e in rm.outgoing(u):
                pos = compile_proposition(e.formula.positive)
                negs = tuple(compile_proposition(p) for p in e.formula.negatives)
                entries.append((e.target, rm.reward(e.source, e.target), pos, negs))
            self.tables[u] = tuple(entries)


def advance(level: Level, crm: CompiledRm, state: int) -> tuple[int, float]:
    """One machine step on the level's current facts; self-loop on miss."""
    entries = crm.tables[state]
    if not entries:
        return state, 0.0
    needs_cells = any(
        e[2][0] == _LOC_NEXT or any(n[0] == _LOC_NEXT for n in e[3]) for e in entries
    )
    cells = _view_object_cells(level) if needs_cells else None
    fired = None
    for target, reward, pos, negs in entries:
        if not _code_satisfied(level, pos, cells):
            continue
        if any(_code_satisfied(level, n, cells) for n in negs):
            continue
        if fired is not None:
            raise RmStructureError("nondeterministic machine: multiple edges fired")
        fired = (target, reward)
    return fired if fired is not None else (state, 0.0)
