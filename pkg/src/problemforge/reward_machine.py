"""Finite-state task machines with formula-labeled reward transitions.

A machine starts in its initial state and advances whenever the current
label (set of satisfied propositions) satisfies exactly one outgoing edge
formula; reaching the accepting state completes the task.  Unmatched
labels leave the state unchanged with reward 0 (implicit self-loop).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .alphabet import (
    Alphabet,
    Literal,
    Proposition,
    Sign,
    decompose_literal,
    get_alphabet,
)

__all__ = [
    "Formula",
    "Edge",
    "RewardMachine",
    "HierarchySpec",
    "RmStructureError",
    "rm_step",
    "assign_rewards",
    "check_determinism",
    "validate_rm",
    "enumerate_paths",
    "path_metrics",
    "export_policy_graph",
    "rm_to_json",
    "rm_from_json",
]


class RmStructureError(ValueError):
    """Raised when a machine violates its structural contract."""


@dataclass(frozen=True)
class Formula:
    """A positive proposition conjoined with negated sibling propositions."""

    positive: Proposition
    negatives: frozenset[Proposition] = frozenset()

    def __post_init__(self):
        if self.positive in self.negatives:
            raise RmStructureError("formula negates its own positive proposition")

    def satisfied_by(self, label: Iterable[Proposition], alphabet: Optional[Alphabet] = None) -> bool:
        alphabet = alphabet or get_alphabet()
        label = list(label)
        if not any(alphabet.implies(l, self.positive) for l in label):
            return False
        for neg in self.negatives:
            if any(alphabet.implies(l, neg) for l in label):
                return False
        return True


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    formula: Formula


@dataclass(frozen=True)
class RewardMachine:
    """States, formula-labeled edges, per-edge rewards, initial/accepting.

    Immutable; stepping is a pure function so machines can be shared
    across concurrent rollouts.
    """

    states: tuple[int, ...]
    edges: tuple[Edge, ...]
    rewards: dict[tuple[int, int], float] = field(hash=False)
    initial: int = 0
    accepting: int = 1

    def outgoing(self, state: int) -> list[Edge]:
        return [e for e in self.edges if e.source == state]

    def incoming(self, state: int) -> list[Edge]:
        return [e for e in self.edges if e.target == state]

    def reward(self, source: int, target: int) -> float:
        return self.rewards.get((source, target), 0.0)

    def num_states(self) -> int:
        return len(self.states)

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {u: [] for u in self.states}
        for e in self.edges:
            adj[e.source].append(e.target)
        for targets in adj.values():
            targets.sort()
        return adj


@dataclass(frozen=True)
class HierarchySpec:
    """A tree of machines where edges may call child machines.

    Only the flat case executes; :meth:`flatten` returns the root machine
    when no edge carries a call.
    """

    tree_edges: tuple[tuple[int, int], ...]
    machines: tuple[RewardMachine, ...]
    call_labels: tuple[dict[tuple[int, int], Optional[int]], ...]

    def num_machines(self) -> int:
        return len(self.machines)

    def children(self, node: int) -> list[int]:
        return sorted(c for p, c in self.tree_edges if p == node)

    def flatten(self) -> RewardMachine:
        if any(c is not None for calls in self.call_labels for c in calls.values()):
            raise RmStructureError("hierarchy has call labels; flat execution unsupported")
        return self.machines[0]


def check_determinism(rm: RewardMachine) -> bool:
    """Check the structural determinism contract.

    For every state, the outgoing positives must be pairwise distinct and
    each edge's negatives must equal the set of its siblings' positives.
    """
    for u in rm.states:
        out = rm.outgoing(u)
        positives = [e.formula.positive for e in out]
        if len(set(positives)) != len(positives):
            return False
        all_pos = set(positives)
        for e in out:
            if e.formula.negatives != frozenset(all_pos - {e.formula.positive}):
                return False
    return True


def validate_rm(rm: RewardMachine) -> None:
    """Raise RmStructureError unless the machine is fully well-formed."""
    state_set = set(rm.states)
    if len(state_set) != len(rm.states) or len(state_set) < 2:
        raise RmStructureError("states must be distinct and at least two")
    if rm.initial not in state_set or rm.accepting not in state_set:
        raise RmStructureError("initial/accepting state missing")
    if rm.initial == rm.accepting:
        raise RmStructureError("initial state cannot be accepting")
    seen_pairs = set()
    for e in rm.edges:
        if e.source not in state_set or e.target not in state_set:
            raise RmStructureError("edge endpoint outside state set")
        if e.source == e.target:
            raise RmStructureError("explicit self-loops are not stored")
        if (e.source, e.target) in seen_pairs:
            raise RmStructureError("duplicate edge between state pair")
        seen_pairs.add((e.source, e.target))
    if rm.outgoing(rm.accepting):
        raise RmStructureError("accepting state has outgoing edges")
    if not check_determinism(rm):
        raise RmStructureError("determinism contract violated")
    # every state lies on some initial->accepting path
    adj = rm.adjacency()
    radj: dict[int, list[int]] = {u: [] for u in rm.states}
    for e in rm.edges:
        radj[e.target].append(e.source)
    reach = _closure(rm.initial, adj)
    coreach = _closure(rm.accepting, radj)
    for u in rm.states:
        if u not in reach or u not in coreach:
            raise RmStructureError(f"state {u} not on any initial->accepting path")


def _closure(start: int, adj: dict[int, list[int]]) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def rm_step(
    rm: RewardMachine,
    state: int,
    label: Iterable[Proposition],
    alphabet: Optional[Alphabet] = None,
) -> tuple[int, float]:
    """Advance one step on ``label``; unmatched labels self-loop with 0."""
    if state not in set(rm.states):
        raise RmStructureError(f"state {state} not in machine")
    label = list(label)
    fired = [e for e in rm.outgoing(state) if e.formula.satisfied_by(label, alphabet)]
    if len(fired) > 1:
        raise RmStructureError("nondeterministic machine: multiple edges fired")
    if not fired:
        return state, 0.0
    edge = fired[0]
    return edge.target, rm.reward(edge.source, edge.target)


def _shortest_dist_to(rm: RewardMachine, goal: int) -> dict[int, int]:
    # BFS over reversed edges: distance (in edges) from each state to goal.
    radj: dict[int, list[int]] = {u: [] for u in rm.states}
    for e in rm.edges:
        radj[e.target].append(e.source)
    dist = {goal: 0}
    frontier = [goal]
    while frontier:
        nxt = []
        for u in frontier:
            for v in radj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


def assign_rewards(rm: RewardMachine, kind: str = "sparse") -> RewardMachine:
    """Return a copy with rewards set per ``kind``.

    sparse: 1 on edges into the accepting state.  stepwise: 1 on every
    edge.  distance_shaped: potential difference with the potential of a
    state proportional to its remaining distance to the accepting state.
    """
    if kind == "sparse":
        rewards = {(e.source, e.target): (1.0 if e.target == rm.accepting else 0.0) for e in rm.edges}
    elif kind == "stepwise":
        rewards = {(e.source, e.target): 1.0 for e in rm.edges}
    elif kind == "distance_shaped":
        dist = _shortest_dist_to(rm, rm.accepting)
        missing = [u for u in rm.states if u not in dist]
        if missing:
            raise RmStructureError(f"accepting state unreachable from {missing}")
        d0 = dist[rm.initial]
        if d0 == 0:
            raise RmStructureError("initial state already accepting")
        phi = {u: 1.0 - dist[u] / d0 for u in rm.states}
        rewards = {(e.source, e.target): phi[e.target] - phi[e.source] for e in rm.edges}
    else:
        raise ValueError(f"unknown reward kind {kind!r}")
    return RewardMachine(rm.states, rm.edges, rewards, rm.initial, rm.accepting)


def enumerate_paths(rm: RewardMachine) -> list[list[Edge]]:
    """All simple initial->accepting paths as edge lists, in lexicographic
    order of the visited state sequences."""
    edge_map = {(e.source, e.target): e for e in rm.edges}
    adj = rm.adjacency()
    paths: list[list[Edge]] = []
    path: list[int] = [rm.initial]
    on_path = {rm.initial}

    def dfs(u: int):
        if u == rm.accepting:
            paths.append([edge_map[(a, b)] for a, b in zip(path, path[1:])])
            return
        for v in adj[u]:
            if v in on_path:
                continue
            path.append(v)
            on_path.add(v)
            dfs(v)
            path.pop()
            on_path.remove(v)

    dfs(rm.initial)
    return paths


def is_acyclic(rm: RewardMachine) -> bool:
    return _topological_order(rm) is not None


def _topological_order(rm: RewardMachine) -> Optional[list[int]]:
    indeg = {u: 0 for u in rm.states}
    for e in rm.edges:
        indeg[e.target] += 1
    adj = rm.adjacency()
    frontier = sorted(u for u, d in indeg.items() if d == 0)
    order = []
    while frontier:
        u = frontier.pop(0)
        order.append(u)
        for v in adj[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                frontier.append(v)
        frontier.sort()
    return order if len(order) == len(rm.states) else None


def path_metrics(rm: RewardMachine) -> tuple[int, float]:
    """(number of initial->accepting paths, average path length in edges).

    Computed by dynamic programming over a topological order, without
    enumerating paths.  Raises on cyclic machines.
    """
    order = _topological_order(rm)
    if order is None:
        raise RmStructureError("path metrics require an acyclic machine")
    count = {u: 0 for u in rm.states}
    length_sum = {u: 0 for u in rm.states}
    count[rm.initial] = 1
    adj = rm.adjacency()
    for u in order:
        if count[u] == 0 and u != rm.initial:
            continue
        for v in adj[u]:
            count[v] += count[u]
            length_sum[v] += length_sum[u] + count[u]
    n = count[rm.accepting]
    avg = (length_sum[rm.accepting] / n) if n else 0.0
    return n, avg


@dataclass(frozen=True)
class PolicyGraph:
    """Reversed-edge graph export for policy conditioning.

    Each reversed edge carries the feature records of the original
    formula's positive literal and all of its negative literals; the
    consumer is responsible for aggregation.  ``current_state`` is a slot
    for marking the active state during a rollout.
    """

    nodes: tuple[int, ...]
    reversed_edges: tuple[tuple[int, int], ...]
    edge_features: tuple[tuple, ...]
    current_state: Optional[int] = None


def export_policy_graph(rm: RewardMachine, current_state: Optional[int] = None) -> PolicyGraph:
    reversed_edges = []
    features = []
    for e in rm.edges:
        reversed_edges.append((e.target, e.source))
        lits = [Literal(e.formula.positive, Sign.POSITIVE)]
        lits += [Literal(p, Sign.NEGATIVE) for p in sorted(e.formula.negatives, key=Proposition.name)]
        features.append(tuple(decompose_literal(l) for l in lits))
    return PolicyGraph(
        nodes=tuple(rm.states),
        reversed_edges=tuple(reversed_edges),
        edge_features=tuple(features),
        current_state=current_state,
    )


def rm_to_json(rm: RewardMachine) -> dict:
    return {
        "states": list(rm.states),
        "initial": rm.initial,
        "accepting": rm.accepting,
        "edges": [
            {
                "src": e.source,
                "dst": e.target,
                "pos": e.formula.positive.name(),
                "negs": sorted(p.name() for p in e.formula.negatives),
                "reward": rm.reward(e.source, e.target),
            }
            for e in rm.edges
        ],
    }


def rm_from_json(data: dict, alphabet: Optional[Alphabet] = None) -> RewardMachine:
    alphabet = alphabet or get_alphabet()
    edges = []
    rewards = {}
    for entry in data["edges"]:
        formula = Formula(
            positive=alphabet.parse(entry["pos"]),
            negatives=frozenset(alphabet.parse(n) for n in entry.get("negs", [])),
        )
        edges.append(Edge(int(entry["src"]), int(entry["dst"]), formula))
        rewards[(int(entry["src"]), int(entry["dst"]))] = float(entry.get("reward", 0.0))
    rm = RewardMachine(
        states=tuple(int(s) for s in data["states"]),
        edges=tuple(edges),
        rewards=rewards,
        initial=int(data["initial"]),
        accepting=int(data["accepting"]),
    )
    validate_rm(rm)
    return rm


def make_chain(
    propositions: list[Proposition],
    reward_kind: str = "sparse",
) -> RewardMachine:
    """Build a sequential machine from an ordered proposition list."""
    n = len(propositions)
    if n < 1:
        raise RmStructureError("chain needs at least one transition")
    edges = tuple(
        Edge(i, i + 1, Formula(positive=p)) for i, p in enumerate(propositions)
    )
    rm = RewardMachine(
        states=tuple(range(n + 1)),
        edges=edges,
        rewards={},
        initial=0,
        accepting=n,
    )
    return assign_rewards(rm, reward_kind)
