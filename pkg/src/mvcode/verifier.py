"""Certification that a scheme actually behaves as a multi-version code.

Two decoding contracts are checked.  The subset contract: any c servers
whose version sets share a version must decode the newest shared version,
or a newer one, with the right content.  The quorum contract: given a
write quorum c_w and a read quorum c_r, any c_r servers must decode the
newest complete version (one present at c_w or more servers) or newer,
whenever a complete version exists.  ``quorum_bridge`` adapts a scheme
built for the subset contract to the quorum contract via the overlap size
c = c_w + c_r - n.

Exhaustive mode enumerates every state, every subset, and every admissible
tuple, so zero failures is a proof at those parameters.  Monte-Carlo mode
samples (tuple, state, subset) trials.  In both, NULL under a vacuous
guard (nothing shared, nothing complete) counts as a pass; NULL under a
live guard is a failure, as are raised decode errors, stale versions, and
wrong content.

A reader only ever learns the version sets of the servers it contacted,
so a decode verdict is a function of the subset's rows of the state.  The
exhaustive engine leans on that to share decode work across states that
agree on those rows; the verdict is then replayed against every full state
so reports and witnesses still range over the whole state space.
"""

import math
import random
import warnings
from concurrent.futures import ThreadPoolExecutor
from bisect import bisect_left
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

from .model import (
    DEFAULT_ENUMERATION_CAP,
    EnumerationCapExceeded,
    SystemState,
    VersionTuple,
    enumerate_possible_set,
    latest_common_version,
    latest_complete_version,
    sample_tuple,
)
from .schemes import DecodingError, MvcScheme

_WILSON_Z = 1.959963984540054

# Outcome codes for one decode attempt.  A positive value is the decoded
# version index after the content check passed; the rest always fail.
_NULL = 0
_RAISED = -1
_WRONG = -2

MODE_EXHAUSTIVE = "exhaustive"
MODE_MONTE_CARLO = "monte-carlo"
_MODES = ("auto", MODE_EXHAUSTIVE, MODE_MONTE_CARLO)


class Witness(NamedTuple):
    """One failing (state, subset, tuple) combination."""

    state: tuple[tuple[int, ...], ...]
    subset: tuple[int, ...]
    versions: tuple[str, ...]  # hex content per version, oldest first
    reason: str


@dataclass(frozen=True)
class VerificationReport:
    """Verdict of one verification run.

    ``tuples_checked`` is the per-cell tuple count in exhaustive mode and
    the trial count in Monte-Carlo mode; ``attempts`` counts the decode
    attempts actually judged (vacuous-guard combinations pass without an
    attempt in exhaustive mode, and pass as trials in Monte-Carlo mode).
    ``failures`` is truncated at the run's witness cap; ``failure_count``
    is always exact.  The per-state figures answer two readings of the
    error level: the worst state and the average state, with states whose
    every combination is vacuous contributing zero.
    """

    mode: str
    states_checked: int
    subsets_checked: int
    tuples_checked: int
    attempts: int
    failure_count: int
    failures: tuple[Witness, ...]
    empirical_error: float
    per_state_max_error: float
    state_averaged_error: float

    @property
    def passed(self) -> bool:
        return self.failure_count == 0

    def to_text(self) -> str:
        lines = [
            "mvc-verification mode={} passed={}".format(
                self.mode, "yes" if self.passed else "no"
            ),
            "states={} subsets={} tuples={} attempts={}".format(
                self.states_checked,
                self.subsets_checked,
                self.tuples_checked,
                self.attempts,
            ),
            "failures={} empirical-error={:.9f}".format(
                self.failure_count, self.empirical_error
            ),
            "per-state-max={:.9f} state-average={:.9f}".format(
                self.per_state_max_error, self.state_averaged_error
            ),
        ]
        for w in self.failures:
            state = "|".join(",".join(str(u) for u in s) for s in w.state)
            lines.append(
                "witness state={} subset={} versions={} reason={}".format(
                    state or "-",
                    ",".join(str(t) for t in w.subset),
                    ",".join(w.versions),
                    w.reason,
                )
            )
        return "\n".join(lines)


def _iter_states(n: int, nu: int, c_w: Optional[int] = None):
    """All states in lexicographic order of their n*nu inclusion bits.

    Server 0's row occupies the most significant bits, version 1 the least
    significant bit within a row, so the order (and with it every witness
    list) is reproducible.
    """
    row_bits = 1 << nu
    rows = [
        frozenset(u for u in range(1, nu + 1) if (block >> (u - 1)) & 1)
        for block in range(row_bits)
    ]
    for code in range(row_bits**n):
        sets = []
        for i in range(n):
            sets.append(rows[(code >> ((n - 1 - i) * nu)) & (row_bits - 1)])
        yield SystemState(tuple(sets), c_w)


def _judge(scheme: MvcScheme, T, state, symbols, vt: VersionTuple) -> int:
    try:
        out = scheme.decode(tuple(T), state, symbols)
    except DecodingError:
        return _RAISED
    if out is None:
        return _NULL
    version, message = out
    if not 1 <= version <= scheme.model.nu:
        return _WRONG
    if message != vt.version(version):
        return _WRONG
    return version


def _reason(code: int, threshold: int) -> str:
    if code == _NULL:
        return "returned NULL under a live guard"
    if code == _RAISED:
        return "decode raised an error"
    if code == _WRONG:
        return "wrong content or version out of range"
    return f"decoded version {code} below required {threshold}"


class _Cell:
    """Decode outcomes of one (subset, version-set rows) combination."""

    __slots__ = ("codes", "sorted_codes")

    def __init__(self, codes: list[int]):
        self.codes = codes
        self.sorted_codes = sorted(codes)

    def failure_count(self, threshold: int) -> int:
        # every failing code (NULL, raised, wrong) is < 1 <= threshold
        return bisect_left(self.sorted_codes, threshold)

    def failing_indices(self, threshold: int, limit: int):
        out = []
        for i, code in enumerate(self.codes):
            if code < threshold:
                out.append(i)
                if len(out) >= limit:
                    break
        return out


def _cell_outcomes(
    scheme: MvcScheme,
    T: tuple[int, ...],
    rows: tuple[frozenset, ...],
    tuples: Sequence[VersionTuple],
    encode_cache: dict,
) -> _Cell:
    sets = [frozenset()] * scheme.n
    for t, row in zip(T, rows):
        sets[t] = row
    cell_state = SystemState(tuple(sets))
    symbol_rows = []
    for t, row in zip(T, rows):
        got = tuple(sorted(row))
        key = (t, got)
        cached = encode_cache.get(key)
        if cached is None:
            cached = [scheme.encode(t, got, vt) for vt in tuples]
            encode_cache[key] = cached
        symbol_rows.append((t, cached))
    codes = []
    for i, vt in enumerate(tuples):
        symbols = {t: row[i] for t, row in symbol_rows}
        codes.append(_judge(scheme, T, cell_state, symbols, vt))
    return _Cell(codes)


def _exhaustive_run(
    scheme: MvcScheme,
    subsets: Sequence[tuple[int, ...]],
    threshold_of: Callable[[SystemState, tuple[int, ...]], Optional[int]],
    states: Iterable[SystemState],
    tuples: Sequence[VersionTuple],
    witness_cap: int,
    jobs: int,
) -> VerificationReport:
    state_rows = []
    needed: dict[tuple, None] = {}
    for state in states:
        live = []
        for T in subsets:
            threshold = threshold_of(state, T)
            if threshold is None:
                continue
            rows = tuple(state.per_server[t] for t in T)
            live.append((T, rows, threshold))
            needed.setdefault((T, rows))
        state_rows.append((state, live))

    encode_cache: dict = {}
    cell_keys = list(needed)

    def run(key):
        T, rows = key
        return _cell_outcomes(scheme, T, rows, tuples, encode_cache)

    if jobs > 1 and len(cell_keys) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            cells = dict(zip(cell_keys, pool.map(run, cell_keys)))
    else:
        cells = {key: run(key) for key in cell_keys}

    attempts = 0
    failure_count = 0
    witnesses: list[Witness] = []
    state_rates = []
    for state, live in state_rows:
        state_attempts = 0
        state_failures = 0
        for T, rows, threshold in live:
            cell = cells[(T, rows)]
            fails = cell.failure_count(threshold)
            state_attempts += len(tuples)
            state_failures += fails
            if fails and len(witnesses) < witness_cap:
                for i in cell.failing_indices(
                    threshold, witness_cap - len(witnesses)
                ):
                    vt = tuples[i]
                    witnesses.append(
                        Witness(
                            state.key(),
                            T,
                            tuple(m.to_hex() for m in vt.versions),
                            _reason(cell.codes[i], threshold),
                        )
                    )
        attempts += state_attempts
        failure_count += state_failures
        state_rates.append(
            state_failures / state_attempts if state_attempts else 0.0
        )
    return VerificationReport(
        MODE_EXHAUSTIVE,
        len(state_rows),
        len(subsets),
        len(tuples),
        attempts,
        failure_count,
        tuple(witnesses),
        failure_count / attempts if attempts else 0.0,
        max(state_rates, default=0.0),
        sum(state_rates) / len(state_rates) if state_rates else 0.0,
    )


def _random_state(rng: random.Random, n: int, nu: int, c_w: Optional[int]):
    return SystemState(
        tuple(
            frozenset(u for u in range(1, nu + 1) if rng.getrandbits(1))
            for _ in range(n)
        ),
        c_w,
    )


def _monte_carlo_run(
    scheme: MvcScheme,
    subset_size: int,
    threshold_of: Callable[[SystemState, tuple[int, ...]], Optional[int]],
    trials: int,
    seed: int,
    witness_cap: int,
    c_w: Optional[int],
    state_pool: Optional[Sequence[SystemState]],
) -> VerificationReport:
    if trials < 1:
        raise ValueError("need at least one trial")
    model = scheme.model
    n = scheme.n
    rng = random.Random(seed)
    failures = 0
    witnesses: list[Witness] = []
    states_seen = set()
    subsets_seen = set()
    per_state: dict[tuple, list[int]] = {}
    for _ in range(trials):
        vt = sample_tuple(model, rng)
        if state_pool is None:
            state = _random_state(rng, n, model.nu, c_w)
        else:
            state = state_pool[rng.randrange(len(state_pool))]
        T = tuple(sorted(rng.sample(range(n), subset_size)))
        states_seen.add(state.key())
        subsets_seen.add(T)
        record = per_state.setdefault(state.key(), [0, 0])
        record[0] += 1
        threshold = threshold_of(state, T)
        if threshold is None:
            continue  # vacuous guard: the trial passes
        symbols = {
            t: scheme.encode(t, tuple(sorted(state.per_server[t])), vt) for t in T
        }
        code = _judge(scheme, T, state, symbols, vt)
        if code < threshold:
            failures += 1
            record[1] += 1
            if len(witnesses) < witness_cap:
                witnesses.append(
                    Witness(
                        state.key(),
                        T,
                        tuple(m.to_hex() for m in vt.versions),
                        _reason(code, threshold),
                    )
                )
    rates = [f / a for a, f in per_state.values()]
    return VerificationReport(
        MODE_MONTE_CARLO,
        len(states_seen),
        len(subsets_seen),
        trials,
        trials,
        failures,
        tuple(witnesses),
        failures / trials,
        max(rates, default=0.0),
        sum(rates) / len(rates) if rates else 0.0,
    )


def _resolve_mode(mode: str, work: int, cap: int) -> str:
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}")
    if mode == MODE_MONTE_CARLO:
        return MODE_MONTE_CARLO
    if work <= cap:
        return MODE_EXHAUSTIVE
    if mode == MODE_EXHAUSTIVE:
        raise EnumerationCapExceeded(work, cap)
    warnings.warn(
        f"exhaustive verification needs {work} decode attempts, over the cap "
        f"of {cap}; falling back to Monte-Carlo sampling",
        RuntimeWarning,
        stacklevel=3,
    )
    return MODE_MONTE_CARLO


def _with_write_quorum(states, c_w: Optional[int]):
    out = []
    for state in states:
        if state.c_w != c_w:
            state = SystemState(state.per_server, c_w)
        out.append(state)
    return out


def _verify(
    scheme: MvcScheme,
    subset_size: int,
    threshold_of,
    c_w: Optional[int],
    mode: str,
    trials: int,
    seed: int,
    states: Optional[Sequence[SystemState]],
    cap: int,
    witness_cap: int,
    jobs: int,
) -> VerificationReport:
    model = scheme.model
    n = scheme.n
    subsets = list(combinations(range(n), subset_size))
    state_list = None if states is None else _with_write_quorum(states, c_w)
    n_states = (1 << (model.nu * n)) if state_list is None else len(state_list)
    work = n_states * len(subsets) * model.tuple_count()
    chosen = _resolve_mode(mode, work, cap)
    if chosen == MODE_EXHAUSTIVE:
        tuples = list(enumerate_possible_set(model, cap))
        state_iter = (
            state_list if state_list is not None else _iter_states(n, model.nu, c_w)
        )
        return _exhaustive_run(
            scheme, subsets, threshold_of, state_iter, tuples, witness_cap, jobs
        )
    return _monte_carlo_run(
        scheme,
        subset_size,
        threshold_of,
        trials,
        seed,
        witness_cap,
        c_w,
        state_list,
    )


def verify_requirement_A(
    scheme: MvcScheme,
    mode: str = "auto",
    trials: int = 2000,
    seed: int = 0,
    states: Optional[Sequence[SystemState]] = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
    witness_cap: int = 200,
    jobs: int = 1,
) -> VerificationReport:
    """Check the subset contract: every c servers sharing a version decode
    the newest shared version or newer, with correct content.

    ``auto`` runs exhaustively when states x subsets x tuples fits under
    ``cap`` and otherwise warns and samples; ``exhaustive`` raises
    EnumerationCapExceeded instead of sampling.  ``states`` restricts the
    sweep to the given states (replays); ``jobs`` parallelizes the decode
    work, with reports identical at any job count.
    """
    return _verify(
        scheme,
        scheme.c,
        lambda state, T: latest_common_version(state, T),
        None,
        mode,
        trials,
        seed,
        states,
        cap,
        witness_cap,
        jobs,
    )


def verify_definition_2(
    scheme: MvcScheme,
    c_w: int,
    c_r: int,
    mode: str = "auto",
    trials: int = 2000,
    seed: int = 0,
    states: Optional[Sequence[SystemState]] = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
    witness_cap: int = 200,
    jobs: int = 1,
) -> VerificationReport:
    """Check the quorum contract: whenever some version is complete (held
    by c_w or more servers), every c_r-subset decodes the newest complete
    version or newer.

    The threshold depends on the whole state, not on the contacted subset,
    so a scheme must cope with subset members that hold nothing; that is
    what ``quorum_bridge`` arranges for subset-contract schemes.
    """
    n = scheme.n
    if not 1 <= c_w <= n:
        raise ValueError("c_w must lie in [1, n]")
    if not 1 <= c_r <= n:
        raise ValueError("c_r must lie in [1, n]")
    return _verify(
        scheme,
        c_r,
        lambda state, T: latest_complete_version(state),
        c_w,
        mode,
        trials,
        seed,
        states,
        cap,
        witness_cap,
        jobs,
    )


class QuorumBridge(MvcScheme):
    """Read-quorum adapter over a subset-contract scheme.

    Encoding is the inner scheme's.  The decoder receives c_r servers,
    picks among their size-(c_w + c_r - n) subsets the one with the newest
    shared version (first in lexicographic order on ties), and delegates.
    Any complete version is held by at least c_w + c_r - n members of
    every read quorum, so the chosen subset's shared set reaches the
    newest complete version whenever one exists.
    """

    def __init__(self, inner: MvcScheme, c_w: int, c_r: int):
        n = inner.n
        if not 1 <= c_w <= n:
            raise ValueError("c_w must lie in [1, n]")
        if not 1 <= c_r <= n:
            raise ValueError("c_r must lie in [1, n]")
        overlap = c_w + c_r - n
        if overlap <= 0:
            raise ValueError("write and read quorums must overlap: c_w + c_r > n")
        if overlap < inner.c:
            raise ValueError(
                f"quorum overlap {overlap} is below the inner scheme's "
                f"subset size {inner.c}"
            )
        super().__init__(inner.model, n, c_r)
        self.inner = inner
        self.c_w = c_w
        self.c_r = c_r
        self.overlap = overlap
        self.name = f"quorum-bridge({inner.name})"

    def encode(self, server, received, versions):
        return self.inner.encode(server, received, versions)

    def decode(self, T, state, symbols):
        best = None
        for S in combinations(sorted(T), self.overlap):
            u = latest_common_version(state, S)
            if u is not None and (best is None or u > best[0]):
                best = (u, S)
        if best is None:
            return None
        return self.inner.decode(best[1], state, symbols)

    def worst_case_cost(self):
        return self.inner.worst_case_cost()


def quorum_bridge(scheme: MvcScheme, c_w: int, c_r: int) -> QuorumBridge:
    """Wrap a subset-contract scheme for quorum-contract reads."""
    return QuorumBridge(scheme, c_w, c_r)


@dataclass(frozen=True)
class EpsilonEstimate:
    """Empirical decode-failure rate with a 95% Wilson score interval.

    In sampled mode ``trials`` counts drawn (tuple, state, subset) trials,
    vacuous guards passing.  In sweep mode every state and subset with a
    live guard is visited and ``trials`` counts the judged decode
    attempts; ``per_state_max`` then reflects the worst single state.
    """

    trials: int
    failures: int
    rate: float
    wilson_lower: float
    wilson_upper: float
    sweep: bool
    per_state_max: float


def _wilson_bounds(failures: int, trials: int) -> tuple[float, float]:
    if trials == 0:
        return (0.0, 1.0)
    z = _WILSON_Z
    phat = failures / trials
    denom = 1 + z * z / trials
    centre = phat + z * z / (2 * trials)
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials))
    # at the boundaries centre and half coincide exactly; keep them exact
    lower = 0.0 if failures == 0 else max(0.0, (centre - half) / denom)
    upper = 1.0 if failures == trials else min(1.0, (centre + half) / denom)
    return (lower, upper)


def estimate_epsilon(
    scheme: MvcScheme,
    trials: int = 1000,
    seed: int = 0,
    sweep_states: bool = False,
) -> EpsilonEstimate:
    """Estimate the subset-contract failure probability over random tuples.

    Sampled mode draws a fresh tuple, state, and subset per trial.  Sweep
    mode draws ``trials`` tuples once and judges them against every
    (state, subset) combination with a live guard.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    model = scheme.model
    n, c = scheme.n, scheme.c
    rng = random.Random(seed)
    if not sweep_states:
        failures = 0
        per_state: dict[tuple, list[int]] = {}
        for _ in range(trials):
            vt = sample_tuple(model, rng)
            state = _random_state(rng, n, model.nu, None)
            T = tuple(sorted(rng.sample(range(n), c)))
            record = per_state.setdefault(state.key(), [0, 0])
            record[0] += 1
            threshold = latest_common_version(state, T)
            if threshold is None:
                continue
            symbols = {
                t: scheme.encode(t, tuple(sorted(state.per_server[t])), vt)
                for t in T
            }
            if _judge(scheme, T, state, symbols, vt) < threshold:
                failures += 1
                record[1] += 1
        low, high = _wilson_bounds(failures, trials)
        worst = max((f / a for a, f in per_state.values()), default=0.0)
        return EpsilonEstimate(
            trials, failures, failures / trials, low, high, False, worst
        )

    tuples = [sample_tuple(model, rng) for _ in range(trials)]
    attempts = 0
    failures = 0
    worst = 0.0
    for state in _iter_states(n, model.nu):
        state_attempts = 0
        state_failures = 0
        for T in combinations(range(n), c):
            threshold = latest_common_version(state, T)
            if threshold is None:
                continue
            for vt in tuples:
                symbols = {
                    t: scheme.encode(t, tuple(sorted(state.per_server[t])), vt)
                    for t in T
                }
                if _judge(scheme, T, state, symbols, vt) < threshold:
                    state_failures += 1
                state_attempts += 1
        attempts += state_attempts
        failures += state_failures
        if state_attempts:
            worst = max(worst, state_failures / state_attempts)
    low, high = _wilson_bounds(failures, attempts)
    rate = failures / attempts if attempts else 0.0
    return EpsilonEstimate(attempts, failures, rate, low, high, True, worst)
