"""Random generation of levels, task machines, and problems.

Three problem-sampling strategies are supported: independent (level and
task drawn separately over the full alphabet), level-conditioned (edge
propositions restricted to facts the level's objects could realize), and
task-conditioned (the level is made to contain objects matching every
edge proposition).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .alphabet import (
    Alphabet,
    Color,
    DoorState,
    ObjectDescriptor,
    ObjectKind,
    Proposition,
    get_alphabet,
)
from .gridworld import (
    COLOR_CODES,
    KIND_CODES,
    OBJECT_COUNT_RANGE,
    STATE_CODES,
    Level,
    door_positions,
    make_empty_level,
    place_object,
    validate_level,
)
from .problem import Problem
from .reward_machine import (
    Edge,
    Formula,
    HierarchySpec,
    RewardMachine,
    assign_rewards,
    validate_rm,
)

__all__ = [
    "LevelSamplerConfig",
    "SequentialRmConfig",
    "RandomWalkConfig",
    "SampleError",
    "sample_level",
    "sample_sequential_rm",
    "sample_hierarchy_structure",
    "sample_rw_structure",
    "label_rm_propositions",
    "label_rm_calls",
    "sample_rm",
    "level_allowed_propositions",
    "sample_problem",
]

RETRY_BUDGET = 20


class SampleError(RuntimeError):
    """Sampling could not produce a valid artifact within its retry budget."""


@dataclass(frozen=True)
class LevelSamplerConfig:
    room_choices: tuple[int, ...] = (1, 2, 4, 6)
    # (min, max) objects per room count; min is raised to the door count
    object_ranges: dict[int, tuple[int, int]] = field(default_factory=lambda: dict(OBJECT_COUNT_RANGE))

    def __post_init__(self):
        for r in self.room_choices:
            if r not in self.object_ranges:
                raise ValueError(f"no object range for {r} rooms")


@dataclass(frozen=True)
class SequentialRmConfig:
    min_length: int = 1
    max_length: int = 5
    reward_kind: str = "sparse"

    def __post_init__(self):
        if not (1 <= self.min_length <= self.max_length):
            raise ValueError("need 1 <= min_length <= max_length")


@dataclass(frozen=True)
class RandomWalkConfig:
    """Random-walk task structure sampling.

    Walks start at the initial state and follow a row-normalized random
    matrix restricted by ``structure``; each completed walk restarts with
    ``restart_prob`` and the edge sets are unioned.  ``chain_bias`` adds
    extra prior mass to one-step transitions, yielding the backbone-plus-
    shortcut graphs the benchmark statistics are calibrated against.
    """

    num_states: int = 6
    structure: str = "dag"  # sequential | dag | cyclic
    avg_connectivity: float = 1.0
    restart_prob: float = 1.0 / 3.0
    chain_bias: float = 0.4
    max_paths: Optional[int] = 2
    hierarchy_size: int = 1
    reward_kind: str = "sparse"

    def __post_init__(self):
        if self.structure not in ("sequential", "dag", "cyclic"):
            raise ValueError(f"unknown structure {self.structure!r}")
        if not (0.0 <= self.restart_prob <= 1.0):
            raise ValueError("restart_prob must be in [0, 1]")
        if self.num_states < 2:
            raise ValueError("need at least two states")
        if self.chain_bias < 0:
            raise ValueError("chain_bias must be nonnegative")


_NON_DOOR_KINDS = (KIND_CODES[ObjectKind.BALL], KIND_CODES[ObjectKind.SQUARE], KIND_CODES[ObjectKind.KEY])
_COLORS = tuple(COLOR_CODES.values())
_DOOR_STATES = tuple(STATE_CODES.values())


def sample_level(rng: np.random.Generator, cfg: LevelSamplerConfig = LevelSamplerConfig()) -> Level:
    """Uniform rooms, object count, object attributes, placements, agent pose."""
    rooms = int(rng.choice(np.array(cfg.room_choices)))
    level = make_empty_level(rooms)
    doors = door_positions(rooms)
    lo, hi = cfg.object_ranges[rooms]
    lo = max(lo, len(doors))
    total = int(rng.integers(lo, hi + 1))
    for x, y in doors:
        place_object(level, x, y, 6, int(rng.choice(_COLORS)), int(rng.choice(_DOOR_STATES)))
    n_free = total - len(doors)
    free = level.free_floor_cells()
    picks = rng.choice(len(free), size=n_free, replace=False)
    for i in picks:
        x, y = free[int(i)]
        place_object(level, x, y, int(rng.choice(_NON_DOOR_KINDS)), int(rng.choice(_COLORS)))
    free = level.free_floor_cells()
    ax, ay = free[int(rng.integers(len(free)))]
    level.ax, level.ay, level.adir = ax, ay, int(rng.integers(4))
    return level


def _draw_prop(rng: np.random.Generator, allowed: Sequence[Proposition]) -> Proposition:
    return allowed[int(rng.integers(len(allowed)))]


def _allowed_mask_from(allowed, alphabet: Alphabet) -> np.ndarray:
    if allowed is None:
        return np.ones(len(alphabet), dtype=bool)
    if isinstance(allowed, np.ndarray) and allowed.dtype == bool:
        mask = allowed
    else:
        mask = np.zeros(len(alphabet), dtype=bool)
        for p in allowed:
            mask[alphabet.index[p]] = True
    if not mask.any():
        raise SampleError("allowed proposition set is empty")
    return mask


def sample_sequential_rm(
    rng: np.random.Generator,
    cfg: SequentialRmConfig = SequentialRmConfig(),
    allowed: Optional[Sequence[Proposition]] = None,
) -> RewardMachine:
    """A single chain of uniform length.

    Each edge proposition is drawn uniformly from the allowed set, with
    the same incoming-tautology exclusion the graph labeler applies: a
    proposition implied by its predecessor would fire the instant the
    state is entered, so such candidates are masked (falling back to the
    whole allowed set when the exclusion empties it).
    """
    alphabet = get_alphabet()
    mask = _allowed_mask_from(allowed, alphabet)
    idxs = np.flatnonzero(mask)
    C = alphabet.constraint_matrix
    length = int(rng.integers(cfg.min_length, cfg.max_length + 1))
    edges = []
    prev: Optional[int] = None
    for i in range(length):
        if prev is None:
            cand = idxs
        else:
            masked = np.flatnonzero(mask & (C[:, prev] != 0))
            cand = masked if len(masked) else idxs
        pick = int(cand[rng.integers(len(cand))])
        edges.append(Edge(i, i + 1, Formula(positive=alphabet[pick])))
        prev = pick
    rm = RewardMachine(tuple(range(length + 1)), tuple(edges), {}, 0, length)
    return assign_rewards(rm, cfg.reward_kind)


def ordered_partitions(n: int) -> list[tuple[int, ...]]:
    """All compositions (ordered integer partitions) of n, lexicographic."""
    if n == 0:
        return [()]
    out = []
    for first in range(1, n + 1):
        for rest in ordered_partitions(n - first):
            out.append((first,) + rest)
    return sorted(out)


def sample_hierarchy_structure(
    rng: np.random.Generator,
    m: int,
    weights: Optional[Sequence[float]] = None,
) -> list[tuple[int, int]]:
    """Sample tree edges over ``m`` machine nodes.

    A composition of floor(m/2) is drawn; its i-th summand is the child
    count of the i-th node, children assigned in index order.  Nodes left
    over once the composition is exhausted are chained sequentially off
    the last attached node.
    """
    if m < 1:
        raise ValueError("hierarchy needs at least one machine")
    parts = ordered_partitions(m // 2)
    if weights is None:
        probs = np.full(len(parts), 1.0 / len(parts))
    else:
        if len(weights) != len(parts):
            raise ValueError(f"need {len(parts)} weights for m={m}, got {len(weights)}")
        w = np.asarray(weights, dtype=float)
        probs = w / w.sum()
    comp = parts[int(rng.choice(len(parts), p=probs))]
    edges: list[tuple[int, int]] = []
    next_child = 1
    last_attached = 0
    for node, n_children in enumerate(comp):
        for _ in range(n_children):
            if next_child >= m:
                break
            edges.append((node, next_child))
            last_attached = next_child
            next_child += 1
    while next_child < m:
        edges.append((last_attached, next_child))
        last_attached = next_child
        next_child += 1
    return edges


def _structure_mask(n: int, structure: str) -> np.ndarray:
    mask = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        if structure == "sequential":
            mask[i, i + 1] = True
        elif structure == "dag":
            mask[i, i + 1 :] = True
        else:
            mask[i, :] = True
            mask[i, i] = False
    return mask


def sample_rw_structure(
    rng: np.random.Generator,
    cfg: RandomWalkConfig,
    num_states: Optional[int] = None,
    non_root: bool = False,
) -> tuple[int, list[tuple[int, int]]]:
    """Sample an unlabeled machine graph via restarted random walks.

    Returns (state count, edge list) with states relabeled 0..k-1,
    initial 0, accepting k-1.  Walks follow a row-normalized random
    matrix under the structural mask (with ``chain_bias`` extra mass on
    one-step transitions) until the accepting state or the length cap;
    each completed walk restarts with the configured probability and the
    edge sets are unioned.  States off every initial->accepting path are
    pruned; samples whose path count exceeds ``max_paths`` are rejected
    and retried.
    """
    for _ in range(RETRY_BUDGET):
        n = num_states if num_states is not None else cfg.num_states
        mask = _structure_mask(n, cfg.structure)
        if not mask[:-1].any():
            raise SampleError("structure mask admits no edges")
        matrix = rng.random((n, n)) * mask
        if cfg.chain_bias > 0:
            for i in range(n - 1):
                if mask[i, i + 1]:
                    matrix[i, i + 1] += cfg.chain_bias
        row_sums = matrix.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            matrix = np.where(row_sums > 0, matrix / row_sums, 0.0)

        walk_len = max(n, int(round(cfg.avg_connectivity * n)))
        edges: set[tuple[int, int]] = set()
        pinned_first: Optional[int] = None
        while True:
            u, steps = 0, 0
            while u != n - 1 and steps < walk_len:
                row = matrix[u]
                if row.sum() <= 0:
                    u = 0  # dead end: wrap to the initial state
                    continue
                if u == 0 and non_root and pinned_first is not None:
                    v = pinned_first
                else:
                    v = int(rng.choice(n, p=row))
                if u == 0 and non_root:
                    pinned_first = v
                edges.add((u, v))
                u = v
                steps += 1
            if rng.random() >= cfg.restart_prob:
                break
        graph = _prune_graph(n, edges)
        if graph is None:
            continue
        k, relabeled = graph
        if cfg.max_paths is not None and cfg.structure != "cyclic":
            n_paths = _count_dag_paths(k, relabeled)
            if n_paths > cfg.max_paths:
                continue
        return k, relabeled
    raise SampleError("random-walk structure sampling exhausted its retry budget")


def _prune_graph(n: int, edges: set[tuple[int, int]]):
    """Keep states reachable from 0 and co-reachable to n-1; relabel."""
    if not edges:
        return None
    adj: dict[int, set[int]] = {}
    radj: dict[int, set[int]] = {}
    for u, v in edges:
        adj.setdefault(u, set()).add(v)
        radj.setdefault(v, set()).add(u)
    reach = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj.get(u, ()):
            if v not in reach:
                reach.add(v)
                stack.append(v)
    if n - 1 not in reach:
        return None
    coreach = {n - 1}
    stack = [n - 1]
    while stack:
        u = stack.pop()
        for v in radj.get(u, ()):
            if v not in coreach:
                coreach.add(v)
                stack.append(v)
    keep = sorted(reach & coreach)
    if 0 not in keep or len(keep) < 2:
        return None
    relabel = {old: new for new, old in enumerate(keep)}
    relabel[n - 1] = len(keep) - 1  # accepting last
    kept_edges = sorted(
        (relabel[u], relabel[v]) for u, v in edges if u in relabel and v in relabel
    )
    return len(keep), kept_edges


def _count_dag_paths(n: int, edges: list[tuple[int, int]]) -> int:
    count = [0] * n
    count[0] = 1
    for u in range(n):
        for a, b in edges:
            if a == u:
                count[b] += count[u]
    return count[n - 1]


def label_rm_propositions(
    graph: tuple[int, list[tuple[int, int]]],
    rng: np.random.Generator,
    allowed: Optional[Sequence[Proposition]] = None,
    alphabet: Optional[Alphabet] = None,
    reward_kind: str = "sparse",
) -> RewardMachine:
    """Assign edge propositions under tautology/nondeterminism masking.

    Candidates implied by any labeled incoming proposition are masked
    (the edge would fire the instant the state is entered), as are
    generalizations and specializations of already-assigned sibling
    propositions.  An all-zero mask raises SampleError so the caller can
    retry with fresh randomness.
    """
    alphabet = alphabet or get_alphabet()
    n, edges = graph
    C = alphabet.constraint_matrix
    base = _allowed_mask_from(allowed, alphabet).astype(float)

    assignment: dict[tuple[int, int], int] = {}
    incoming: dict[int, list[tuple[int, int]]] = {}
    outgoing: dict[int, list[tuple[int, int]]] = {}
    for e in edges:
        incoming.setdefault(e[1], []).append(e)
        outgoing.setdefault(e[0], []).append(e)

    for u in range(n):
        for e in sorted(outgoing.get(u, [])):
            weights = base.copy()
            for inc in incoming.get(u, []):
                if inc in assignment:
                    weights *= C[:, assignment[inc]]
            for sib in outgoing.get(u, []):
                if sib != e and sib in assignment:
                    j = assignment[sib]
                    weights *= C[:, j] * C[j, :]
            total = weights.sum()
            if total <= 0:
                raise SampleError("proposition mask exhausted; resample")
            weights /= total
            assignment[e] = int(rng.choice(len(alphabet), p=weights))

    rm_edges = []
    for e in sorted(edges):
        u = e[0]
        siblings = {alphabet[assignment[s]] for s in outgoing.get(u, []) if s != e}
        rm_edges.append(Edge(e[0], e[1], Formula(alphabet[assignment[e]], frozenset(siblings))))
    rm = RewardMachine(tuple(range(n)), tuple(rm_edges), {}, 0, n - 1)
    rm = assign_rewards(rm, reward_kind)
    validate_rm(rm)
    return rm


def label_rm_calls(
    hierarchy: HierarchySpec,
    rng: np.random.Generator,
    alphabet: Optional[Alphabet] = None,
) -> HierarchySpec:
    """Assign each edge a call to a compatible child machine, or none.

    A child is callable on an edge iff its initial-transition proposition
    is jointly satisfiable with the edge's positive proposition.  The
    no-call option is always admissible.
    """
    alphabet = alphabet or get_alphabet()
    K = alphabet.compatibility_matrix
    call_labels = []
    for i, rm in enumerate(hierarchy.machines):
        children = hierarchy.children(i)
        labels: dict[tuple[int, int], Optional[int]] = {}
        for e in rm.edges:
            options: list[Optional[int]] = [None]
            p_idx = alphabet.index[e.formula.positive]
            for child in children:
                child_rm = hierarchy.machines[child]
                init_edges = child_rm.outgoing(child_rm.initial)
                q_idx = alphabet.index[init_edges[0].formula.positive]
                if K[p_idx, q_idx]:
                    options.append(child)
            labels[(e.source, e.target)] = options[int(rng.integers(len(options)))]
        call_labels.append(labels)
    return HierarchySpec(hierarchy.tree_edges, hierarchy.machines, tuple(call_labels))


def sample_rm(
    rng: np.random.Generator,
    cfg,
    allowed: Optional[Sequence[Proposition]] = None,
) -> RewardMachine:
    """Dispatch on config type; retries structure+labeling as a unit."""
    if isinstance(cfg, SequentialRmConfig):
        return sample_sequential_rm(rng, cfg, allowed)
    if isinstance(cfg, RandomWalkConfig):
        for _ in range(RETRY_BUDGET):
            graph = sample_rw_structure(rng, cfg)
            try:
                return label_rm_propositions(graph, rng, allowed, reward_kind=cfg.reward_kind)
            except SampleError:
                continue
        raise SampleError("random-walk machine sampling exhausted its retry budget")
    raise TypeError(f"unknown task config {type(cfg)!r}")


def _level_descriptor_codes(level: Level) -> list[tuple[int, int, int]]:
    codes = [(o.kind, o.color, o.state) for o in level.objects()]
    if level.carried is not None:
        codes.append((level.carried[0], level.carried[1], 0))
    return codes


def _desc_matches_code(desc: ObjectDescriptor, code: tuple[int, int, int]) -> bool:
    kind, color, state = code
    if KIND_CODES[desc.kind] != kind:
        return False
    if desc.color is not Color.UNSPECIFIED and COLOR_CODES[desc.color] != color:
        return False
    if desc.door_state is not DoorState.UNSPECIFIED and STATE_CODES[desc.door_state] != state:
        return False
    return True


def proposition_realizable(prop: Proposition, codes: list[tuple[int, int, int]]) -> bool:
    """Could the level's objects satisfy ``prop``?  Adjacent pairs need
    two distinct objects."""
    if prop.second is None:
        return any(_desc_matches_code(prop.first, c) for c in codes)
    for i, a in enumerate(codes):
        for j, b in enumerate(codes):
            if i == j:
                continue
            if _desc_matches_code(prop.first, a) and _desc_matches_code(prop.second, b):
                return True
    return False


def level_allowed_mask(level: Level, alphabet: Optional[Alphabet] = None) -> np.ndarray:
    """Boolean mask over the alphabet of propositions realizable by the
    level's objects (adjacency propositions need two distinct objects)."""
    alphabet = alphabet or get_alphabet()
    table = alphabet.grid_code_table()
    codes = _level_descriptor_codes(level)
    if not codes:
        return np.zeros(len(alphabet), dtype=bool)
    oc = np.asarray(codes, dtype=np.int16)  # (M, 3): kind, color, state

    def match(kcol, ccol, scol):
        k, c, s = table[:, kcol : kcol + 1], table[:, ccol : ccol + 1], table[:, scol : scol + 1]
        return (
            (k == oc[:, 0])
            & ((c == 0) | (c == oc[:, 1]))
            & ((s == 0) | (s == oc[:, 2]))
        )

    m1 = match(1, 2, 3)  # (N, M)
    single = m1.any(axis=1)
    m2 = match(4, 5, 6)
    s1 = m1.sum(axis=1)
    s2 = m2.sum(axis=1)
    overlap = (m1 & m2).any(axis=1)
    pair = (s1 > 0) & (s2 > 0) & ~((s1 == 1) & (s2 == 1) & overlap)
    is_pair = table[:, 4] != 0
    return np.where(is_pair, pair, single)


def level_allowed_propositions(level: Level, alphabet: Optional[Alphabet] = None) -> list[Proposition]:
    """Alphabet subset whose specified attributes match objects present
    in the level (object pairs for adjacency propositions)."""
    alphabet = alphabet or get_alphabet()
    mask = level_allowed_mask(level, alphabet)
    return [alphabet[i] for i in np.flatnonzero(mask)]


def _required_descriptors(rm: RewardMachine) -> list[tuple[ObjectDescriptor, ...]]:
    reqs = []
    for e in rm.edges:
        prop = e.formula.positive
        if prop.second is None:
            reqs.append((prop.first,))
        else:
            reqs.append((prop.first, prop.second))
    return reqs


def _instantiate(rng: np.random.Generator, desc: ObjectDescriptor) -> tuple[int, int, int]:
    kind = KIND_CODES[desc.kind]
    color = COLOR_CODES[desc.color] if desc.color is not Color.UNSPECIFIED else int(rng.choice(_COLORS))
    if desc.kind is ObjectKind.DOOR:
        state = (
            STATE_CODES[desc.door_state]
            if desc.door_state is not DoorState.UNSPECIFIED
            else int(rng.choice(_DOOR_STATES))
        )
    else:
        state = 0
    return kind, color, state


def _condition_level_on_rm(rng: np.random.Generator, level: Level, rm: RewardMachine) -> Optional[Level]:
    """Force the level to contain matches for every edge proposition."""
    level = level.clone()
    requirements = _required_descriptors(rm)
    lo, hi = OBJECT_COUNT_RANGE[level.rooms]
    for group in requirements:
        codes = _level_descriptor_codes(level)
        if proposition_realizable_group(group, codes):
            continue
        for desc in group:
            kind, color, state = _instantiate(rng, desc)
            if kind == 6:
                doors = [o for o in level.objects() if o.kind == 6]
                if not doors:
                    return None
                pick = doors[int(rng.integers(len(doors)))]
                place_object(level, pick.x, pick.y, 6, color, state)
            else:
                free = level.free_floor_cells()
                if level.object_count() < hi and free:
                    x, y = free[int(rng.integers(len(free)))]
                    place_object(level, x, y, kind, color)
                else:
                    non_doors = [o for o in level.objects() if o.kind != 6]
                    if not non_doors:
                        return None
                    pick = non_doors[int(rng.integers(len(non_doors)))]
                    place_object(level, pick.x, pick.y, kind, color)
    codes = _level_descriptor_codes(level)
    if all(proposition_realizable_group(g, codes) for g in _required_descriptors(rm)):
        return level
    return None


def proposition_realizable_group(group: tuple[ObjectDescriptor, ...], codes) -> bool:
    if len(group) == 1:
        return any(_desc_matches_code(group[0], c) for c in codes)
    for i, a in enumerate(codes):
        for j, b in enumerate(codes):
            if i != j and _desc_matches_code(group[0], a) and _desc_matches_code(group[1], b):
                return True
    return False


def sample_problem(
    rng: np.random.Generator,
    mode: str,
    level_cfg: LevelSamplerConfig = LevelSamplerConfig(),
    task_cfg=SequentialRmConfig(),
) -> Problem:
    """Sample a (task, level) pair under the given conditioning mode."""
    if mode == "independent":
        level = sample_level(rng, level_cfg)
        rm = sample_rm(rng, task_cfg)
        return Problem(rm=rm, level=level)
    if mode == "level_conditioned":
        for _ in range(RETRY_BUDGET):
            level = sample_level(rng, level_cfg)
            allowed = level_allowed_mask(level)
            if not allowed.any():
                continue
            try:
                rm = sample_rm(rng, task_cfg, allowed)
            except SampleError:
                continue
            return Problem(rm=rm, level=level)
        raise SampleError("level-conditioned sampling exhausted its retry budget")
    if mode == "task_conditioned":
        rm = sample_rm(rng, task_cfg)
        for _ in range(RETRY_BUDGET):
            level = sample_level(rng, level_cfg)
            conditioned = _condition_level_on_rm(rng, level, rm)
            if conditioned is not None:
                validate_level(conditioned)
                return Problem(rm=rm, level=conditioned)
        raise SampleError("task-conditioned sampling could not host the required objects")
    raise ValueError(f"unknown sampling mode {mode!r}")
