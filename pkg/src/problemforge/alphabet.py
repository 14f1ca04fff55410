"""The proposition alphabet over gridworld object descriptors.

Propositions assert facts about the scene: the agent is in front of an
object, is carrying an object, or two objects are adjacent within the
agent's view.  Object descriptors may leave color (and, for doors, door
state) unspecified; an unspecified attribute matches anything.  The full
canonical enumeration contains exactly 889 propositions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional

import numpy as np

__all__ = [
    "ObjectKind",
    "Color",
    "DoorState",
    "Location",
    "Sign",
    "ObjectDescriptor",
    "Proposition",
    "Literal",
    "LiteralFeatures",
    "Alphabet",
    "get_alphabet",
    "decompose_literal",
]


class ObjectKind(Enum):
    BALL = "ball"
    SQUARE = "square"
    KEY = "key"
    DOOR = "door"


class Color(Enum):
    RED = "red"
    GREEN = "green"
    BLUE = "blue"
    PURPLE = "purple"
    YELLOW = "yellow"
    GRAY = "gray"
    UNSPECIFIED = "unspecified"


class DoorState(Enum):
    OPEN = "open"
    CLOSED = "closed"
    LOCKED = "locked"
    UNSPECIFIED = "unspecified"


class Location(Enum):
    FRONT = "front"
    CARRYING = "carrying"
    NEXT = "next"


class Sign(Enum):
    POSITIVE = 1
    NEGATIVE = -1


_KIND_ORDER = [ObjectKind.BALL, ObjectKind.SQUARE, ObjectKind.KEY, ObjectKind.DOOR]
_COLOR_ORDER = [
    Color.RED,
    Color.GREEN,
    Color.BLUE,
    Color.PURPLE,
    Color.YELLOW,
    Color.GRAY,
    Color.UNSPECIFIED,
]
_STATE_ORDER = [DoorState.OPEN, DoorState.CLOSED, DoorState.LOCKED, DoorState.UNSPECIFIED]

_KIND_RANK = {k: i for i, k in enumerate(_KIND_ORDER)}
_COLOR_RANK = {c: i for i, c in enumerate(_COLOR_ORDER)}
_STATE_RANK = {s: i for i, s in enumerate(_STATE_ORDER)}

SPECIFIED_COLORS = _COLOR_ORDER[:-1]
SPECIFIED_STATES = _STATE_ORDER[:-1]


@dataclass(frozen=True)
class ObjectDescriptor:
    """A possibly-underspecified object: kind, color, and door state.

    Non-doors always carry ``DoorState.UNSPECIFIED``.
    """

    kind: ObjectKind
    color: Color = Color.UNSPECIFIED
    door_state: DoorState = DoorState.UNSPECIFIED

    def __post_init__(self):
        if self.kind is not ObjectKind.DOOR and self.door_state is not DoorState.UNSPECIFIED:
            raise ValueError("only doors may specify a door state")

    def sort_key(self):
        return (_KIND_RANK[self.kind], _COLOR_RANK[self.color], _STATE_RANK[self.door_state])

    def generalizes(self, other: "ObjectDescriptor") -> bool:
        """True iff every concrete object matching ``other`` also matches self."""
        if self.kind is not other.kind:
            return False
        if self.color is not Color.UNSPECIFIED and self.color is not other.color:
            return False
        if self.door_state is not DoorState.UNSPECIFIED and self.door_state is not other.door_state:
            return False
        return True

    def compatible(self, other: "ObjectDescriptor") -> bool:
        """True iff a single concrete object could match both descriptors."""
        if self.kind is not other.kind:
            return False
        if (
            self.color is not Color.UNSPECIFIED
            and other.color is not Color.UNSPECIFIED
            and self.color is not other.color
        ):
            return False
        if (
            self.door_state is not DoorState.UNSPECIFIED
            and other.door_state is not DoorState.UNSPECIFIED
            and self.door_state is not other.door_state
        ):
            return False
        return True

    def tokens(self) -> list[str]:
        parts = [self.kind.value]
        if self.color is not Color.UNSPECIFIED:
            parts.append(self.color.value)
        if self.door_state is not DoorState.UNSPECIFIED:
            parts.append(self.door_state.value)
        return parts


@dataclass(frozen=True)
class Proposition:
    """An alphabet element: a location plus one or two object descriptors.

    ``second`` is present iff ``location`` is NEXT, and (first, second) is
    stored in canonical orientation so that symmetric variants collapse to
    a single alphabet entry.
    """

    location: Location
    first: ObjectDescriptor
    second: Optional[ObjectDescriptor] = None

    def __post_init__(self):
        if (self.second is not None) != (self.location is Location.NEXT):
            raise ValueError("second descriptor present iff location is next")
        if self.location is Location.NEXT:
            if self.first.kind is ObjectKind.DOOR and self.second.kind is ObjectKind.DOOR:
                raise ValueError("two doors cannot be adjacent")
            if self.first.sort_key() > self.second.sort_key():
                raise ValueError("next proposition not in canonical orientation")
        if self.location is Location.CARRYING and self.first.kind is ObjectKind.DOOR:
            raise ValueError("doors cannot be carried")

    def name(self) -> str:
        parts = [self.location.value] + self.first.tokens()
        if self.second is not None:
            parts += self.second.tokens()
        return "_".join(parts)

    def __str__(self):
        return self.name()


def make_next(a: ObjectDescriptor, b: ObjectDescriptor) -> Proposition:
    """Build a NEXT proposition, canonicalizing the operand order."""
    if a.sort_key() > b.sort_key():
        a, b = b, a
    return Proposition(Location.NEXT, a, b)


@dataclass(frozen=True)
class Literal:
    proposition: Proposition
    sign: Sign = Sign.POSITIVE

    def name(self) -> str:
        prefix = "" if self.sign is Sign.POSITIVE else "not_"
        return prefix + self.proposition.name()


@dataclass(frozen=True)
class LiteralFeatures:
    """Deterministic feature decomposition of a literal.

    ``location`` is a 3-vector one-hot over (front, carrying, next).  Each
    object vector has 13 entries: kind one-hot (4), color one-hot (6,
    all-zero when unspecified), door-state one-hot (3, all-zero when
    unspecified).  A missing second object is an all-zero 13-vector.
    """

    location: np.ndarray
    objects: np.ndarray
    sign: int


def _object_vector(desc: Optional[ObjectDescriptor]) -> np.ndarray:
    vec = np.zeros(13, dtype=np.int8)
    if desc is None:
        return vec
    vec[_KIND_RANK[desc.kind]] = 1
    if desc.color is not Color.UNSPECIFIED:
        vec[4 + _COLOR_RANK[desc.color]] = 1
    if desc.door_state is not DoorState.UNSPECIFIED:
        vec[10 + _STATE_RANK[desc.door_state]] = 1
    return vec


def decompose_literal(literal: Literal) -> LiteralFeatures:
    """Decompose a literal into location / per-object / sign features."""
    prop = literal.proposition
    loc = np.zeros(3, dtype=np.int8)
    loc[[Location.FRONT, Location.CARRYING, Location.NEXT].index(prop.location)] = 1
    objects = np.stack([_object_vector(prop.first), _object_vector(prop.second)])
    return LiteralFeatures(location=loc, objects=objects, sign=literal.sign.value)


def _non_door_descriptors() -> list[ObjectDescriptor]:
    return [
        ObjectDescriptor(kind, color)
        for kind in _KIND_ORDER[:3]
        for color in _COLOR_ORDER
    ]


def _door_descriptors() -> list[ObjectDescriptor]:
    return [
        ObjectDescriptor(ObjectKind.DOOR, color, state)
        for color in _COLOR_ORDER
        for state in _STATE_ORDER
    ]


class Alphabet:
    """The canonical proposition enumeration with implication machinery.

    Immutable after construction; the constraint and compatibility
    matrices are built lazily once and shared between readers.
    """

    def __init__(self):
        non_door = sorted(_non_door_descriptors(), key=ObjectDescriptor.sort_key)
        door = sorted(_door_descriptors(), key=ObjectDescriptor.sort_key)
        all_desc = sorted(non_door + door, key=ObjectDescriptor.sort_key)

        front = [Proposition(Location.FRONT, d) for d in all_desc]
        carrying = [Proposition(Location.CARRYING, d) for d in non_door]
        next_props = []
        for i, a in enumerate(all_desc):
            for b in all_desc[i:]:
                if a.kind is ObjectKind.DOOR and b.kind is ObjectKind.DOOR:
                    continue
                next_props.append(Proposition(Location.NEXT, a, b))
        next_props.sort(key=lambda p: (p.first.sort_key(), p.second.sort_key()))

        self.propositions: tuple[Proposition, ...] = tuple(front + carrying + next_props)
        self.index: dict[Proposition, int] = {p: i for i, p in enumerate(self.propositions)}
        self.by_name: dict[str, Proposition] = {p.name(): p for p in self.propositions}
        self.block_counts = {
            Location.FRONT: len(front),
            Location.CARRYING: len(carrying),
            Location.NEXT: len(next_props),
        }
        self._constraint = None
        self._compatibility = None

    def __len__(self):
        return len(self.propositions)

    def __iter__(self):
        return iter(self.propositions)

    def __getitem__(self, i: int) -> Proposition:
        return self.propositions[i]

    def parse(self, name: str) -> Proposition:
        try:
            return self.by_name[name]
        except KeyError:
            raise ValueError(f"unknown proposition {name!r}") from None

    def implies(self, p: Proposition, q: Proposition) -> bool:
        """True iff every world satisfying ``p`` satisfies ``q``."""
        if p.location is not q.location:
            return False
        if p.location is not Location.NEXT:
            return q.first.generalizes(p.first)
        straight = q.first.generalizes(p.first) and q.second.generalizes(p.second)
        crossed = q.first.generalizes(p.second) and q.second.generalizes(p.first)
        return straight or crossed

    def contradicts(self, p: Proposition, q: Proposition) -> bool:
        """True iff no world satisfies both ``p`` and ``q``.

        Only front/front and carrying/carrying pairs can contradict: those
        locations hold a single object, so incompatible descriptors cannot
        both be matched.  NEXT propositions never contradict anything.
        """
        if p.location is not q.location or p.location is Location.NEXT:
            return False
        return not p.first.compatible(q.first)

    @property
    def constraint_matrix(self) -> np.ndarray:
        """C[i, j] = 0 iff proposition j implies proposition i."""
        if self._constraint is None:
            self._constraint = self._build_constraint()
        return self._constraint

    @property
    def compatibility_matrix(self) -> np.ndarray:
        """K[i, j] = 0 iff propositions i and j are jointly unsatisfiable."""
        if self._compatibility is None:
            self._compatibility = self._build_compatibility()
        return self._compatibility

    def build_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        return self.constraint_matrix, self.compatibility_matrix

    def _desc_codes(self):
        # Integer encoding used to vectorize the pairwise relation builds.
        n = len(self.propositions)
        codes = np.zeros((n, 7), dtype=np.int16)
        for i, p in enumerate(self.propositions):
            loc = [Location.FRONT, Location.CARRYING, Location.NEXT].index(p.location)
            k1, c1, s1 = p.first.sort_key()
            if p.second is not None:
                k2, c2, s2 = p.second.sort_key()
            else:
                k2 = c2 = s2 = -1
            codes[i] = (loc, k1, c1, s1, k2, c2, s2)
        return codes

    def grid_code_table(self) -> np.ndarray:
        """(N, 7) int16 table of (loc, k1, c1, s1, k2, c2, s2) in grid-code
        space: kinds 3..6, colors 1..6, door states 1..3, 0 = unspecified
        (k2..s2 are 0 for single-descriptor propositions)."""
        if not hasattr(self, "_grid_codes"):
            codes = self._desc_codes().copy()
            for col in (1, 4):  # kind ranks 0..3 -> codes 3..6
                spec = codes[:, col] >= 0
                codes[spec, col] += 3
                codes[~spec, col] = 0
            for col in (2, 5):  # color ranks 0..5 -> 1..6, unspecified -> 0
                spec = (codes[:, col] >= 0) & (codes[:, col] < 6)
                codes[:, col] = np.where(spec, codes[:, col] + 1, 0)
            for col in (3, 6):  # state ranks 0..2 -> 1..3, unspecified -> 0
                spec = (codes[:, col] >= 0) & (codes[:, col] < 3)
                codes[:, col] = np.where(spec, codes[:, col] + 1, 0)
            self._grid_codes = codes
        return self._grid_codes

    @staticmethod
    def _gen_matrix(gk, gc, gs, sk, sc, ss):
        # generalizes(g, s) vectorized over all descriptor pairs
        kind_ok = gk[:, None] == sk[None, :]
        color_ok = (gc[:, None] == 6) | (gc[:, None] == sc[None, :])
        state_ok = (gs[:, None] == 3) | (gs[:, None] == ss[None, :])
        return kind_ok & color_ok & state_ok

    def _build_constraint(self) -> np.ndarray:
        codes = self._desc_codes()
        loc = codes[:, 0]
        g11 = self._gen_matrix(codes[:, 1], codes[:, 2], codes[:, 3], codes[:, 1], codes[:, 2], codes[:, 3])
        same_loc = loc[:, None] == loc[None, :]
        implies = same_loc & g11.T  # implies[p, q]: q generalizes p's first
        is_next = loc == 2
        both_next = is_next[:, None] & is_next[None, :]
        if both_next.any():
            g22 = self._gen_matrix(codes[:, 4], codes[:, 5], codes[:, 6], codes[:, 4], codes[:, 5], codes[:, 6])
            g12 = self._gen_matrix(codes[:, 1], codes[:, 2], codes[:, 3], codes[:, 4], codes[:, 5], codes[:, 6])
            g21 = self._gen_matrix(codes[:, 4], codes[:, 5], codes[:, 6], codes[:, 1], codes[:, 2], codes[:, 3])
            straight = g11.T & g22.T
            crossed = g21.T & g12.T
            implies = np.where(both_next, same_loc & (straight | crossed), implies)
        # C[i, j] = 0 iff p_j -> p_i, i.e. implies[j, i]
        return (~implies.T).astype(np.uint8)

    def _build_compatibility(self) -> np.ndarray:
        codes = self._desc_codes()
        loc = codes[:, 0]
        kind_eq = codes[:, 1][:, None] == codes[:, 1][None, :]
        c = codes[:, 2]
        s = codes[:, 3]
        color_ok = (c[:, None] == 6) | (c[None, :] == 6) | (c[:, None] == c[None, :])
        state_ok = (s[:, None] == 3) | (s[None, :] == 3) | (s[:, None] == s[None, :])
        compatible = kind_eq & color_ok & state_ok
        single_slot = (loc[:, None] == loc[None, :]) & (loc[:, None] != 2)
        contradicts = single_slot & ~compatible
        return (~contradicts).astype(np.uint8)


@lru_cache(maxsize=1)
def get_alphabet() -> Alphabet:
    """The shared canonical alphabet instance."""
    return Alphabet()
