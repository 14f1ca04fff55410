"""Students and the rollout engine.

A student exposes ``reset(problem, rng)``, ``act(observation, ctx)`` and
``value(observation, ctx)`` with values in [0, 1].  Two built-ins are
provided: a uniform-random student and a breadth-first planner that
tracks the (deterministic) level state internally, plans door unlocking
and object fetching, and falls back to random actions when planning
fails.  External policies attach through a newline-delimited JSON
subprocess protocol.
"""

from __future__ import annotations

import heapq
import json
import subprocess
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .alphabet import Color, DoorState, ObjectKind, Proposition
from .engine import CompiledRm, advance, compile_proposition
from .gridworld import (
    COLOR_CODES,
    DIR_VEC,
    KIND_CODES,
    STATE_CODES,
    Action,
    Level,
    env_step,
    observe,
)
from .problem import Problem
from .reward_machine import RewardMachine, rm_to_json, export_policy_graph

__all__ = [
    "RmContext",
    "RolloutSummary",
    "Trajectory",
    "Step",
    "rollout",
    "RandomStudent",
    "PlannerStudent",
    "random_student",
    "planner_student",
    "SubprocessStudent",
]

HORIZON = 512


@dataclass(frozen=True)
class RmContext:
    """Task context handed to students each step."""

    rm: RewardMachine
    state: int


@dataclass(frozen=True)
class Step:
    observation: np.ndarray
    action: int
    reward: float
    value: float
    rm_state: int


@dataclass
class RolloutSummary:
    undiscounted_return: float
    per_step_values: list[float]
    per_step_rewards: list[float]
    final_rm_state: int
    solved: bool
    length: int


@dataclass
class Trajectory:
    steps: list[Step]
    summary: RolloutSummary
    final_level: Level


def rollout(
    problem: Problem,
    student,
    horizon: int = HORIZON,
    rng: Optional[np.random.Generator] = None,
    record_steps: bool = True,
) -> Trajectory:
    """Run one episode: observe, act, step the world, step the machine.

    The machine advances on the label of each post-action state; the
    initial state's label is applied once before the first action so a
    task already satisfied at spawn makes progress.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    crm = CompiledRm(problem.rm)
    level = problem.level.clone()
    rewards: list[float] = []
    values: list[float] = []
    steps: list[Step] = []
    if horizon <= 0:
        summary = RolloutSummary(0.0, [], [], problem.rm.initial, False, 0)
        return Trajectory([], summary, level)
    u, r0 = advance(level, crm, problem.rm.initial)
    total = r0
    solved = u == crm.accepting
    student.reset(problem, rng)
    t = 0
    while t < horizon and not solved:
        obs = observe(level)
        ctx = RmContext(problem.rm, u)
        value = float(student.value(obs, ctx))
        action = int(student.act(obs, ctx))
        level = env_step(level, action)
        u, reward = advance(level, crm, u)
        rewards.append(reward)
        values.append(value)
        if record_steps:
            steps.append(Step(obs, action, reward, value, u))
        total += reward
        solved = u == crm.accepting
        t += 1
    summary = RolloutSummary(
        undiscounted_return=total,
        per_step_values=values,
        per_step_rewards=rewards,
        final_rm_state=u,
        solved=solved,
        length=t,
    )
    return Trajectory(steps, summary, level)


class RandomStudent:
    """Uniform actions, zero value estimates."""

    def reset(self, problem: Problem, rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, observation, ctx) -> int:
        return int(self._rng.integers(6))

    def value(self, observation, ctx) -> float:
        return 0.0


def random_student() -> RandomStudent:
    return RandomStudent()


# --- planner -------------------------------------------------------------


def _match_codes(desc, kind, color, state) -> bool:
    if KIND_CODES[desc.kind] != kind:
        return False
    if desc.color is not Color.UNSPECIFIED and COLOR_CODES[desc.color] != color:
        return False
    if desc.door_state is not DoorState.UNSPECIFIED:
        want = STATE_CODES[desc.door_state]
        if want in (1, 2):
            return state in (1, 2)  # open/closed reachable via toggling
        return state == want
    return True


@dataclass
class _Plan:
    actions: deque
    edge_target: int
    total_len: int


class PlannerStudent:
    """Breadth-first planner over the level's pose graph.

    Keeps a synchronized internal copy of the (deterministic) level,
    plans the cheapest outgoing machine edge, and replans when the
    machine advances or the plan runs out.  Negative literals are
    ignored during planning.  The value estimate is gamma raised to the
    estimated number of steps left to task completion.
    """

    def __init__(self, gamma: float = 0.99, fail_cooldown: int = 24, combo_limit: int = 12):
        self.gamma = gamma
        self.fail_cooldown = fail_cooldown
        self.combo_limit = combo_limit

    def reset(self, problem: Problem, rng: np.random.Generator) -> None:
        self._rng = rng
        self._rm = problem.rm
        self._level = problem.level.clone()
        self._rm_state: Optional[int] = None
        self._plan: Optional[_Plan] = None
        self._cooldown = 0
        self._dist_to_accept = self._rm_distances(problem.rm)
        self._nominal = problem.level.width + problem.level.height

    @staticmethod
    def _rm_distances(rm: RewardMachine) -> dict[int, int]:
        radj: dict[int, list[int]] = {u: [] for u in rm.states}
        for e in rm.edges:
            radj[e.target].append(e.source)
        dist = {rm.accepting: 0}
        frontier = [rm.accepting]
        while frontier:
            nxt = []
            for u in frontier:
                for v in radj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        return dist

    def _sync(self, ctx: RmContext) -> None:
        if ctx.state != self._rm_state:
            self._rm_state = ctx.state
            self._plan = None
            self._cooldown = 0

    def _ensure_plan(self) -> None:
        if self._plan is not None and self._plan.actions:
            return
        if self._cooldown > 0:
            return
        self._plan = self._build_plan()
        if self._plan is None or not self._plan.actions:
            self._plan = None
            self._cooldown = self.fail_cooldown

    def act(self, observation, ctx) -> int:
        self._sync(ctx)
        self._ensure_plan()
        if self._plan is not None and self._plan.actions:
            action = self._plan.actions.popleft()
        else:
            self._cooldown = max(0, self._cooldown - 1)
            action = int(self._rng.integers(6))
        self._level = env_step(self._level, action)
        return int(action)

    def value(self, observation, ctx) -> float:
        self._sync(ctx)
        self._ensure_plan()
        if self._plan is None:
            return 0.0
        remaining_edges = self._dist_to_accept.get(self._plan.edge_target, None)
        if remaining_edges is None:
            return 0.0
        estimate = len(self._plan.actions) + remaining_edges * self._nominal
        return float(min(1.0, self.gamma ** estimate))

    # -- plan construction

    def _build_plan(self) -> Optional[_Plan]:
        best: Optional[_Plan] = None
        for edge in self._rm.outgoing(self._rm_state):
            if edge.target not in self._dist_to_accept:
                continue
            actions = _plan_proposition(self._level, edge.formula.positive, self.combo_limit)
            if actions is None or not self._plan_reaches(actions, edge.formula.positive):
                continue
            plan = _Plan(deque(actions), edge.target, len(actions))
            if best is None or plan.total_len < best.total_len:
                best = plan
        return best

    def _plan_reaches(self, actions: list[int], prop: Proposition) -> bool:
        """Simulate the plan; accept if the proposition holds at any step."""
        from .engine import _code_satisfied

        code = compile_proposition(prop)
        work = self._level
        for a in actions:
            work = env_step(work, a)
            if _code_satisfied(work, code, None):
                return True
        return not actions


def planner_student(gamma: float = 0.99) -> PlannerStudent:
    return PlannerStudent(gamma=gamma)


def _objects_of(level: Level):
    w = level.width
    out = []
    for i, k in enumerate(level.kind):
        if k >= 3:
            out.append((i % w, i // w, k, level.color[i], level.state[i]))
    return out


def _route(level: Level, goal_test, goal_dir=None) -> Optional[list[int]]:
    """Dijkstra over (x, y, dir) poses; returns the action list.

    Closed doors cost an extra toggle; locked doors are passable only
    while carrying the matching key.  ``goal_test(x, y, d)`` marks goal
    poses.
    """
    w = level.width
    carried = level.carried
    start = (level.ax, level.ay, level.adir)
    if goal_test(*start):
        return []
    dist = {start: 0}
    prev: dict[tuple, tuple] = {}
    heap = [(0, 0, start)]
    counter = 1
    while heap:
        cost, _, pose = heapq.heappop(heap)
        if cost > dist.get(pose, -1):
            continue
        x, y, d = pose
        neighbors = []
        neighbors.append(((x, y, (d - 1) % 4), [int(Action.TURN_LEFT)]))
        neighbors.append(((x, y, (d + 1) % 4), [int(Action.TURN_RIGHT)]))
        dx, dy = DIR_VEC[d]
        nx, ny = x + dx, y + dy
        if level.in_bounds(nx, ny):
            i = ny * w + nx
            k = level.kind[i]
            if k == 0:
                neighbors.append(((nx, ny, d), [int(Action.FORWARD)]))
            elif k == 6:
                s = level.state[i]
                if s == 1:
                    neighbors.append(((nx, ny, d), [int(Action.FORWARD)]))
                elif s == 2:
                    neighbors.append(((nx, ny, d), [int(Action.TOGGLE), int(Action.FORWARD)]))
                elif (
                    s == 3
                    and carried is not None
                    and carried[0] == 5
                    and carried[1] == level.color[i]
                ):
                    neighbors.append(((nx, ny, d), [int(Action.TOGGLE), int(Action.FORWARD)]))
        for npose, acts in neighbors:
            ncost = cost + len(acts)
            if ncost < dist.get(npose, 1 << 30):
                dist[npose] = ncost
                prev[npose] = (pose, acts)
                if goal_test(*npose):
                    out: list[int] = []
                    cur = npose
                    while cur != start:
                        cur, a = prev[cur]
                        out = list(a) + out
                    return out
                heapq.heappush(heap, (ncost, counter, npose))
                counter += 1
    return None


def _simulate(level: Level, actions: list[int]) -> Level:
    for a in actions:
        level = env_step(level, a)
    return level


def _plan_face_cell(level: Level, cx: int, cy: int) -> Optional[list[int]]:
    """Route to any pose whose front cell is (cx, cy)."""

    def goal(x, y, d):
        dx, dy = DIR_VEC[d]
        return (x + dx, y + dy) == (cx, cy)

    return _route(level, goal)


def _flank_cells(level: Level) -> set[tuple[int, int]]:
    """Floor cells orthogonally adjacent to door slots: the chokepoints."""
    out = set()
    w = level.width
    for i, k in enumerate(level.kind):
        if k == 6:
            x, y = i % w, i // w
            for dx, dy in DIR_VEC:
                if level.in_bounds(x + dx, y + dy):
                    out.add((x + dx, y + dy))
    return out


def _plan_drop_anywhere(level: Level) -> Optional[list[int]]:
    """Route to a pose facing a free floor cell, then drop.

    Cells flanking doors are avoided when possible so the drop never
    plugs a passage.
    """
    w = level.width
    flanks = _flank_cells(level)

    def goal_factory(avoid):
        def goal(x, y, d):
            dx, dy = DIR_VEC[d]
            fx, fy = x + dx, y + dy
            if not level.in_bounds(fx, fy):
                return False
            if level.kind[fy * w + fx] != 0 or (fx, fy) == (x, y):
                return False
            return not (avoid and (fx, fy) in flanks)

        return goal

    path = _route(level, goal_factory(True))
    if path is None:
        path = _route(level, goal_factory(False))
    if path is None:
        return None
    return path + [int(Action.DROP)]


def _plan_fetch(level: Level, targets: list[tuple[int, int]]) -> Optional[list[int]]:
    """Pick up the nearest of the target (non-door) object cells."""
    actions: list[int] = []
    work = level
    if work.carried is not None:
        drop = _plan_drop_anywhere(work)
        if drop is None:
            return None
        actions += drop
        work = _simulate(work, drop)
    target_set = set(targets)

    def goal(x, y, d):
        dx, dy = DIR_VEC[d]
        return (x + dx, y + dy) in target_set

    path = _route(work, goal)
    if path is None:
        return None
    return actions + path + [int(Action.PICKUP)]


def _door_toggle_suffix(state: int, want: Optional[DoorState]) -> Optional[list[int]]:
    """Toggles needed to bring a faced door from ``state`` to ``want``."""
    if want is None or want is DoorState.UNSPECIFIED:
        return []
    want_code = STATE_CODES[want]
    if want_code == state:
        return []
    if want_code == 1:  # open
        return [int(Action.TOGGLE)]  # closed or locked-with-key both open in one
    if want_code == 2:  # closed
        if state == 1:
            return [int(Action.TOGGLE)]
        return [int(Action.TOGGLE), int(Action.TOGGLE)]  # locked: open then close
    return None  # cannot re-lock


def _unlock_round(level: Level) -> Optional[list[int]]:
    """Fetch a key for some reachable locked door and open it."""
    objs = _objects_of(level)
    locked = [(x, y, c) for x, y, k, c, s in objs if k == 6 and s == 3]
    if not locked:
        return None
    keys = [(x, y, c) for x, y, k, c, s in objs if k == 5]
    carried_key_color = level.carried[1] if level.carried is not None and level.carried[0] == 5 else None
    for lx, ly, lc in sorted(locked):
        actions: list[int] = []
        work = level
        if carried_key_color != lc:
            matching = [(x, y) for x, y, c in keys if c == lc]
            if not matching:
                continue
            fetch = _plan_fetch(work, matching)
            if fetch is None:
                continue
            actions += fetch
            work = _simulate(work, fetch)
        approach = _plan_face_cell(work, lx, ly)
        if approach is None:
            continue
        actions += approach + [int(Action.TOGGLE)]
        return actions
    return None


def _unblock_round(level: Level) -> Optional[list[int]]:
    """Move some reachable passage-blocking object off its door flank."""
    flanks = _flank_cells(level)
    w = level.width
    blockers = sorted(
        (x, y) for x, y in flanks if 3 <= level.kind[level.idx(x, y)] < 6
    )
    for bx, by in blockers:
        fetch = _plan_fetch(level, [(bx, by)])
        if fetch is None:
            continue
        work = _simulate(level, fetch)
        stash = _plan_drop_anywhere(work)
        if stash is None:
            continue
        return fetch + stash
    return None


def _with_recovery(level: Level, planner) -> Optional[list[int]]:
    """Try ``planner`` directly, then interleave unlock and unblock
    rounds (bounded) to open passages it needs."""
    actions: list[int] = []
    work = level
    for _ in range(4):
        sub = planner(work)
        if sub is not None:
            return actions + sub
        fix = _unlock_round(work)
        if fix is None:
            fix = _unblock_round(work)
        if fix is None:
            return None
        actions += fix
        work = _simulate(work, fix)
    return None


def _exists_match(level: Level, desc) -> int:
    """Count level objects (grid plus carried) matching a descriptor."""
    n = 0
    for x, y, k, c, s in _objects_of(level):
        if _match_codes(desc, k, c, s):
            n += 1
    if level.carried is not None and _match_codes(desc, level.carried[0], level.carried[1], 0):
        n += 1
    return n


def _prop_possible(level: Level, prop: Proposition) -> bool:
    """Cheap gate: do objects matching the proposition exist at all?
    No amount of unlocking or unblocking conjures a missing object."""
    if prop.second is None:
        if prop.location.value == "carrying":
            return any(
                k != 6 and _match_codes(prop.first, k, c, s)
                for _, _, k, c, s in _objects_of(level)
            ) or (
                level.carried is not None
                and _match_codes(prop.first, level.carried[0], level.carried[1], 0)
            )
        return _exists_match(level, prop.first) > 0
    n1 = _exists_match(level, prop.first)
    n2 = _exists_match(level, prop.second)
    if n1 == 0 or n2 == 0:
        return False
    if n1 == 1 and n2 == 1:
        # the single matching object must not be the same one
        for x, y, k, c, s in _objects_of(level):
            if _match_codes(prop.first, k, c, s) and _match_codes(prop.second, k, c, s):
                return False
        return True
    return True


def _plan_proposition(level: Level, prop: Proposition, combo_limit: int = 12) -> Optional[list[int]]:
    """An action sequence whose final state satisfies ``prop``, or None."""
    if not _prop_possible(level, prop):
        return None
    code = compile_proposition(prop)
    loc = code[0]
    if loc == 0:
        return _with_recovery(level, lambda lv: _plan_front(lv, prop))
    if loc == 1:
        return _with_recovery(level, lambda lv: _plan_carrying(lv, prop))
    return _with_recovery(level, lambda lv: _plan_next(lv, prop, combo_limit))


def _plan_front(level: Level, prop: Proposition) -> Optional[list[int]]:
    objs = _objects_of(level)
    desc = prop.first
    best: Optional[list[int]] = None
    for x, y, k, c, s in objs:
        if not _match_codes(desc, k, c, s):
            continue
        if k == 6:
            suffix = _door_toggle_suffix(s, desc.door_state)
            if suffix is None:
                continue
            if suffix and s == 3:
                # unlocking needs the matching key in hand first
                carried = level.carried
                work = level
                pre: list[int] = []
                if carried is None or carried[0] != 5 or carried[1] != c:
                    keys = [(kx, ky) for kx, ky, kk, kc, _ in objs if kk == 5 and kc == c]
                    fetch = _plan_fetch(level, keys) if keys else None
                    if fetch is None:
                        continue
                    pre = fetch
                    work = _simulate(level, fetch)
                approach = _plan_face_cell(work, x, y)
                if approach is None:
                    continue
                cand = pre + approach + suffix
            else:
                approach = _plan_face_cell(level, x, y)
                if approach is None:
                    continue
                cand = approach + suffix
        else:
            approach = _plan_face_cell(level, x, y)
            if approach is None:
                continue
            cand = approach
        if best is None or len(cand) < len(best):
            best = cand
    return best


def _plan_carrying(level: Level, prop: Proposition) -> Optional[list[int]]:
    desc = prop.first
    if level.carried is not None and _match_codes(desc, level.carried[0], level.carried[1], 0):
        return []
    targets = [
        (x, y)
        for x, y, k, c, s in _objects_of(level)
        if k != 6 and _match_codes(desc, k, c, s)
    ]
    if not targets:
        return None
    return _plan_fetch(level, targets)


def _adjacent_pairs_match(level: Level, prop: Proposition):
    objs = _objects_of(level)
    for i, (xa, ya, ka, ca, sa) in enumerate(objs):
        for xb, yb, kb, cb, sb in objs[i + 1 :]:
            if abs(xa - xb) + abs(ya - yb) != 1 or (ka == 6 and kb == 6):
                continue
            if (_match_codes(prop.first, ka, ca, sa) and _match_codes(prop.second, kb, cb, sb)) or (
                _match_codes(prop.first, kb, cb, sb) and _match_codes(prop.second, ka, ca, sa)
            ):
                yield (xa, ya), (xb, yb)


def _plan_next(level: Level, prop: Proposition, combo_limit: int) -> Optional[list[int]]:
    # an existing adjacent pair only needs to be looked at
    for (xa, ya), _ in _adjacent_pairs_match(level, prop):
        path = _plan_face_cell(level, xa, ya)
        if path is not None:
            return path
    objs = _objects_of(level)
    w = level.width

    def matches(desc, entry):
        x, y, k, c, s = entry
        return _match_codes(desc, k, c, s)

    combos = []
    for carrier_desc, anchor_desc in ((prop.first, prop.second), (prop.second, prop.first)):
        if carrier_desc.kind is ObjectKind.DOOR:
            continue
        carried_ok = level.carried is not None and _match_codes(
            carrier_desc, level.carried[0], level.carried[1], 0
        )
        carriers = [e for e in objs if e[2] != 6 and matches(carrier_desc, e)]
        anchors = [e for e in objs if matches(anchor_desc, e)]
        for anchor in anchors:
            if carried_ok:
                combos.append((None, anchor, anchor_desc))
            for carrier in carriers:
                if (carrier[0], carrier[1]) != (anchor[0], anchor[1]):
                    combos.append((carrier, anchor, anchor_desc))
    if not combos:
        return None

    def rough(combo):
        carrier, anchor, _ = combo
        cx, cy = (level.ax, level.ay) if carrier is None else (carrier[0], carrier[1])
        return abs(level.ax - cx) + abs(level.ay - cy) + abs(cx - anchor[0]) + abs(cy - anchor[1])

    combos.sort(
        key=lambda combo: (rough(combo), combo[1][:2], combo[0][:2] if combo[0] else (-1, -1))
    )
    for carrier, anchor, anchor_desc in combos[:combo_limit]:
        actions: list[int] = []
        work = level
        if carrier is not None:
            fetch = _plan_fetch(work, [(carrier[0], carrier[1])])
            if fetch is None:
                continue
            actions += fetch
            work = _simulate(work, fetch)
        ax_, ay_ = anchor[0], anchor[1]
        drop_cells = []
        for dx, dy in DIR_VEC:
            tx, ty = ax_ + dx, ay_ + dy
            if work.in_bounds(tx, ty) and work.kind[ty * w + tx] == 0 and (tx, ty) != (work.ax, work.ay):
                drop_cells.append((tx, ty))
        if not drop_cells:
            continue
        targets = set(drop_cells)

        def goal(x, y, d):
            dx, dy = DIR_VEC[d]
            return (x + dx, y + dy) in targets

        path = _route(work, goal)
        if path is None:
            continue
        plan = actions + path + [int(Action.DROP)]
        if anchor[2] == 6 and anchor_desc.door_state is not DoorState.UNSPECIFIED:
            # crossing may have toggled the anchor door; restore its state
            done = _simulate(work, path + [int(Action.DROP)])
            cur = done.state[done.idx(ax_, ay_)]
            want = STATE_CODES[anchor_desc.door_state]
            if cur != want:
                suffix = _door_toggle_suffix(cur, anchor_desc.door_state)
                approach = _plan_face_cell(done, ax_, ay_)
                if suffix is None or approach is None:
                    continue
                plan += approach + suffix
        return plan
    return None


class SubprocessStudent:
    """External policy over a line-delimited JSON protocol.

    Each step sends {"observation": [[...]], "rm_graph": ..., "rm_state": u}
    and expects {"action": int, "value": float} on one line.
    """

    def __init__(self, argv: list[str]):
        self._argv = argv
        self._proc: Optional[subprocess.Popen] = None
        self._graph_json: Optional[dict] = None

    def reset(self, problem: Problem, rng: np.random.Generator) -> None:
        if self._proc is None:
            self._proc = subprocess.Popen(
                self._argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        graph = export_policy_graph(problem.rm)
        self._graph_json = {
            "rm": rm_to_json(problem.rm),
            "nodes": list(graph.nodes),
            "reversed_edges": [list(e) for e in graph.reversed_edges],
        }
        self._last: Optional[dict] = None

    def _query(self, observation, ctx) -> dict:
        payload = {
            "observation": observation.tolist(),
            "rm_graph": self._graph_json,
            "rm_state": ctx.state,
        }
        self._proc.stdin.write(json.dumps(payload) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise RuntimeError("subprocess student closed its output")
        return json.loads(line)

    def act(self, observation, ctx) -> int:
        self._last = self._query(observation, ctx)
        return int(self._last["action"])

    def value(self, observation, ctx) -> float:
        return float(self._query(observation, ctx)["value"])

    def close(self) -> None:
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
            self._proc = None
