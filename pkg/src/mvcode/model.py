"""Core types for versioned bit-vector data and quorum system states.

Conventions used throughout the package:

  * Version indices are 1-based: a system holds versions 1..nu, and larger
    index means newer.
  * Server indices are 0-based.
  * A length-K bit vector is packed into a Python int; bit ``i-1`` of the
    int is coordinate ``i`` of the vector.  This coordinate order is part
    of the wire contract.

Successive versions are correlated: version m+1 always lies within a fixed
Hamming distance (the model radius) of version m.  The functions below
enumerate and sample the resulting set of admissible version tuples, and
compute its combinatorics exactly with big integers.
"""

from __future__ import annotations

import math
import random
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Iterator, Mapping, Optional, Sequence

DEFAULT_ENUMERATION_CAP = 1 << 24


class EnumerationCapExceeded(RuntimeError):
    """An exhaustive walk would visit more elements than the configured cap."""

    def __init__(self, estimate: int, cap: int):
        super().__init__(
            f"enumeration would visit about {estimate} elements, cap is {cap}"
        )
        self.estimate = estimate
        self.cap = cap


def hamming_ball_volume(radius: int, K: int) -> int:
    """Number of length-K bit vectors within Hamming distance ``radius`` of a point.

    Exact big-integer value of sum(C(K, j) for j in 0..radius).
    """
    if radius < 0 or K < 0:
        raise ValueError("radius and K must be nonnegative")
    if radius > K:
        raise ValueError(f"radius {radius} exceeds vector length {K}")
    return sum(math.comb(K, j) for j in range(radius + 1))


def ball_index_bits(radius: int, K: int) -> int:
    """Bits needed to index any vector in a radius-``radius`` ball: ceil(log2 Vol)."""
    return (hamming_ball_volume(radius, K) - 1).bit_length()


@dataclass(frozen=True, slots=True)
class Message:
    """One data version: a fixed-length bit vector packed into an int."""

    bits: int
    K: int

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be positive")
        if not 0 <= self.bits < (1 << self.K):
            raise ValueError("bits out of range for length K")

    @classmethod
    def from_coordinates(cls, coords: Iterable[int]) -> "Message":
        coords = list(coords)
        value = 0
        for i, bit in enumerate(coords):
            if bit not in (0, 1):
                raise ValueError("coordinates must be 0 or 1")
            value |= bit << i
        return cls(value, len(coords))

    def coordinate(self, i: int) -> int:
        """Bit at 1-based coordinate i."""
        if not 1 <= i <= self.K:
            raise IndexError(f"coordinate {i} out of range 1..{self.K}")
        return (self.bits >> (i - 1)) & 1

    def weight(self) -> int:
        return self.bits.bit_count()

    def distance_to(self, other: "Message") -> int:
        if other.K != self.K:
            raise ValueError("messages have different lengths")
        return (self.bits ^ other.bits).bit_count()

    def flipped(self, mask: int) -> "Message":
        """Message with the coordinates selected by ``mask`` inverted."""
        return Message(self.bits ^ (mask & ((1 << self.K) - 1)), self.K)

    def to_hex(self) -> str:
        return f"{self.bits:0{(self.K + 3) // 4}x}"


@dataclass(frozen=True, slots=True)
class CorrelationModel:
    """Parameters of the version chain: length K, step radius, version count nu."""

    K: int
    radius: int
    nu: int

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be positive")
        if not 0 <= self.radius <= self.K:
            raise ValueError("radius must lie in [0, K]")
        if self.nu < 1:
            raise ValueError("nu must be at least 1")

    @classmethod
    def from_delta(cls, K: int, delta, nu: int) -> "CorrelationModel":
        """Build a model from a fractional step size; radius = floor(delta * K).

        ``delta`` may be a Fraction, a string such as "1/16", or a float.
        Flooring is this library's convention for fractional radii.
        """
        frac = Fraction(delta)
        if not 0 <= frac <= 1:
            raise ValueError("delta must lie in [0, 1]")
        return cls(K, math.floor(frac * K), nu)

    def ball_volume(self) -> int:
        return hamming_ball_volume(self.radius, self.K)

    def tuple_count(self) -> int:
        """Exact number of admissible version tuples: 2^K * Vol^(nu-1)."""
        return (1 << self.K) * self.ball_volume() ** (self.nu - 1)

    def contains(self, versions: "VersionTuple") -> bool:
        if len(versions) != self.nu:
            return False
        if any(m.K != self.K for m in versions.versions):
            return False
        return all(d <= self.radius for d in versions.consecutive_distances())


@dataclass(frozen=True, slots=True)
class VersionTuple:
    """An ordered tuple of versions (w_1, ..., w_nu)."""

    versions: tuple[Message, ...]

    def __len__(self) -> int:
        return len(self.versions)

    def version(self, u: int) -> Message:
        """The u-th version, 1-based."""
        return self.versions[u - 1]

    def consecutive_distances(self) -> tuple[int, ...]:
        return tuple(
            a.distance_to(b) for a, b in zip(self.versions, self.versions[1:])
        )

    def to_hex(self) -> str:
        return ",".join(m.to_hex() for m in self.versions)


@dataclass(frozen=True, slots=True)
class SystemState:
    """Which versions each server has received.

    ``per_server[i]`` is the set of 1-based version indices present at the
    0-based server i.  ``c_w`` is the write quorum size; it is needed only
    for completeness queries and may be omitted otherwise.
    """

    per_server: tuple[frozenset[int], ...]
    c_w: Optional[int] = None

    def __post_init__(self) -> None:
        for s in self.per_server:
            if any(u < 1 for u in s):
                raise ValueError("version indices are 1-based")
        if self.c_w is not None and not 1 <= self.c_w <= self.n:
            raise ValueError("c_w must lie in [1, n]")

    @property
    def n(self) -> int:
        return len(self.per_server)

    def holders(self, u: int) -> tuple[int, ...]:
        """Servers that received version u."""
        return tuple(i for i, s in enumerate(self.per_server) if u in s)

    def complete_versions(self) -> frozenset[int]:
        """Versions received by at least c_w servers."""
        if self.c_w is None:
            raise ValueError("state has no write quorum configured")
        every = set().union(*self.per_server) if self.per_server else set()
        return frozenset(u for u in every if len(self.holders(u)) >= self.c_w)

    def key(self) -> tuple[tuple[int, ...], ...]:
        """Canonical hashable form, used in reports and memo tables."""
        return tuple(tuple(sorted(s)) for s in self.per_server)


def latest_complete_version(state: SystemState) -> Optional[int]:
    """Largest version held by a write quorum, or None if there is none."""
    complete = state.complete_versions()
    return max(complete) if complete else None


def latest_common_version(state: SystemState, T: Sequence[int]) -> Optional[int]:
    """Largest version present at every server of T, or None."""
    servers = list(T)
    if not servers:
        raise ValueError("T must be nonempty")
    common = frozenset.intersection(*(state.per_server[t] for t in servers))
    return max(common) if common else None


# ---------------------------------------------------------------------------
# Hamming ball iteration and ranking.

def iter_ball_masks(K: int, radius: int) -> Iterator[int]:
    """XOR masks of all points within ``radius`` of a center, ascending weight.

    Within one weight class the masks follow lexicographic order of their
    support sets; the overall order is deterministic and documented.
    """
    if radius > K:
        raise ValueError("radius exceeds K")
    for j in range(radius + 1):
        for positions in combinations(range(K), j):
            mask = 0
            for p in positions:
                mask |= 1 << p
            yield mask


def iter_ball(center: int, radius: int, K: int) -> Iterator[int]:
    """All packed vectors within ``radius`` of ``center``."""
    for mask in iter_ball_masks(K, radius):
        yield center ^ mask


def _colex_rank(positions: Sequence[int]) -> int:
    return sum(math.comb(p, t) for t, p in enumerate(positions, start=1))


def _colex_unrank(rank: int, size: int) -> tuple[int, ...]:
    positions = []
    for t in range(size, 0, -1):
        # largest p with C(p, t) <= rank
        p = t - 1
        while math.comb(p + 1, t) <= rank:
            p += 1
        positions.append(p)
        rank -= math.comb(p, t)
    return tuple(reversed(positions))


def ball_rank(mask: int, K: int) -> int:
    """Index of a ball offset: weight classes ascending, colexicographic inside.

    The map is a bijection between masks of weight <= r and
    range(hamming_ball_volume(r, K)) for every r >= weight(mask); the index
    never depends on r, so the inverse needs no radius either.
    """
    if mask >= (1 << K):
        raise ValueError("mask wider than K")
    w = mask.bit_count()
    offset = hamming_ball_volume(w - 1, K) if w else 0
    positions = [p for p in range(K) if (mask >> p) & 1]
    return offset + _colex_rank(positions)


def ball_unrank(index: int, K: int) -> int:
    """Inverse of ball_rank."""
    if index < 0:
        raise ValueError("index must be nonnegative")
    w = 0
    while hamming_ball_volume(w, K) <= index:
        w += 1
        if w > K:
            raise ValueError("index out of range")
    if w == 0:
        return 0
    rem = index - hamming_ball_volume(w - 1, K)
    mask = 0
    for p in _colex_unrank(rem, w):
        mask |= 1 << p
    return mask


# ---------------------------------------------------------------------------
# Sampling and enumeration of admissible tuples.

def _sample_positions(rng: random.Random, count: int, K: int) -> list[int]:
    # Partial Fisher-Yates; spelled out so the draw sequence is stable
    # across Python versions.
    pool = list(range(K))
    for idx in range(count):
        swap = rng.randrange(idx, K)
        pool[idx], pool[swap] = pool[swap], pool[idx]
    return pool[:count]


def sample_tuple(model: CorrelationModel, seed) -> VersionTuple:
    """Draw one admissible tuple: w_1 uniform, each successor uniform in its ball.

    ``seed`` is an int or a random.Random instance.  In-ball sampling is
    exact: first a weight j with probability C(K,j)/Vol, then a uniform
    j-subset of coordinates to flip.
    """
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    K = model.K
    cumulative = [hamming_ball_volume(j, K) for j in range(model.radius + 1)]
    total = cumulative[-1]
    w = rng.getrandbits(K)
    out = [w]
    for _ in range(model.nu - 1):
        draw = rng.randrange(total)
        weight = bisect_right(cumulative, draw)
        mask = 0
        for p in _sample_positions(rng, weight, K):
            mask |= 1 << p
        w ^= mask
        out.append(w)
    return VersionTuple(tuple(Message(v, K) for v in out))


def _completion_estimate(
    model: CorrelationModel, present: Sequence[int], fixed: Mapping[int, int]
) -> int:
    estimate = 1
    prev = None
    for k in present:
        if k not in fixed:
            if prev is None:
                estimate *= 1 << model.K
            else:
                gap_radius = min((k - prev) * model.radius, model.K)
                estimate *= hamming_ball_volume(gap_radius, model.K)
        prev = k
    return estimate


def enumerate_conditional_set(
    model: CorrelationModel,
    fixed: Mapping[int, Message] | None = None,
    targets: Sequence[int] | None = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> Iterator[dict[int, Message]]:
    """All joint values of the target versions compatible with the fixed ones.

    ``fixed`` maps version indices to known values; ``targets`` lists the
    indices to enumerate (default: all remaining indices in 1..nu).  A
    yielded assignment is one that extends, together with the fixed values,
    to at least one full admissible tuple; version indices absent from both
    sets are existentially quantified away.

    The membership test reduces to pairwise constraints between consecutive
    known indices: values at positions a < b must be within (b-a)*radius of
    each other, because intermediate versions can always be interpolated
    step by step and can never be jumped over.
    """
    fixed = dict(fixed or {})
    for k, msg in fixed.items():
        if not 1 <= k <= model.nu:
            raise ValueError(f"fixed index {k} outside 1..{model.nu}")
        if msg.K != model.K:
            raise ValueError("fixed message has wrong length")
    if targets is None:
        target_list = [u for u in range(1, model.nu + 1) if u not in fixed]
    else:
        target_list = sorted(set(targets))
        for k in target_list:
            if not 1 <= k <= model.nu:
                raise ValueError(f"target index {k} outside 1..{model.nu}")
            if k in fixed:
                raise ValueError(f"index {k} is both fixed and a target")

    present = sorted(set(fixed) | set(target_list))
    fixed_bits = {k: msg.bits for k, msg in fixed.items()}
    estimate = _completion_estimate(model, present, fixed_bits)
    if estimate > cap:
        raise EnumerationCapExceeded(estimate, cap)

    if not present:
        yield {}
        return

    K, radius = model.K, model.radius
    next_fixed: dict[int, Optional[int]] = {}
    for idx, k in enumerate(present):
        nf = None
        if idx + 1 < len(present) and present[idx + 1] in fixed_bits:
            nf = present[idx + 1]
        next_fixed[k] = nf

    def walk(idx: int, assigned: dict[int, int]) -> Iterator[dict[int, Message]]:
        if idx == len(present):
            yield {k: Message(assigned[k], K) for k in target_list}
            return
        k = present[idx]
        prev = present[idx - 1] if idx > 0 else None
        if k in fixed_bits:
            value = fixed_bits[k]
            if prev is not None:
                bound = min((k - prev) * radius, K)
                if (value ^ assigned[prev]).bit_count() > bound:
                    return
            assigned[k] = value
            yield from walk(idx + 1, assigned)
            return
        nf = next_fixed[k]
        if prev is None:
            candidates: Iterable[int] = range(1 << K)
        else:
            bound = min((k - prev) * radius, K)
            candidates = iter_ball(assigned[prev], bound, K)
        for value in candidates:
            if nf is not None:
                ahead = min((nf - k) * radius, K)
                if (value ^ fixed_bits[nf]).bit_count() > ahead:
                    continue
            assigned[k] = value
            yield from walk(idx + 1, assigned)

    yield from walk(0, {})


def enumerate_possible_set(
    model: CorrelationModel, cap: int = DEFAULT_ENUMERATION_CAP
) -> Iterator[VersionTuple]:
    """Every admissible tuple exactly once, in a fixed deterministic order."""
    count = model.tuple_count()
    if count > cap:
        raise EnumerationCapExceeded(count, cap)
    K, radius, nu = model.K, model.radius, model.nu
    masks = list(iter_ball_masks(K, radius))

    def walk(prefix: list[int]) -> Iterator[VersionTuple]:
        if len(prefix) == nu:
            yield VersionTuple(tuple(Message(v, K) for v in prefix))
            return
        for mask in masks:
            prefix.append(prefix[-1] ^ mask)
            yield from walk(prefix)
            prefix.pop()

    for first in range(1 << K):
        yield from walk([first])
