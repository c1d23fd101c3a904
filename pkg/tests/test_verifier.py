"""Verifier tests: exhaustive certification, quorum bridging, Monte-Carlo
estimation, and the frozen failure pattern of the latest-only strawman."""

import math
import random
from fractions import Fraction
from itertools import combinations, permutations

import pytest

from mvcode.model import (
    CorrelationModel,
    EnumerationCapExceeded,
    Message,
    SystemState,
    VersionTuple,
    latest_common_version,
    sample_tuple,
)
from mvcode.schemes import Decoded, DecodingError, MvcScheme, StoredSymbol, make_scheme
from mvcode.verifier import (
    EpsilonEstimate,
    QuorumBridge,
    VerificationReport,
    Witness,
    estimate_epsilon,
    quorum_bridge,
    verify_definition_2,
    verify_requirement_A,
)


def _mds_reference():
    return make_scheme("mds", CorrelationModel(8, 1, 2), 4, 2)


def _latest_only_small():
    return make_scheme("latest-only", CorrelationModel(6, 1, 2), 3, 2)


# ---------------------------------------------------------------------------
# Requirement A, exhaustive


def test_mds_exhaustive_counts_frozen():
    report = verify_requirement_A(_mds_reference())
    assert report.mode == "exhaustive"
    assert report.passed and report.failure_count == 0
    assert report.states_checked == 256
    assert report.subsets_checked == 6
    assert report.tuples_checked == 2304
    # 672 (state, subset) pairs share a version; each judged on every tuple
    assert report.attempts == 672 * 2304
    assert report.empirical_error == 0.0
    assert report.per_state_max_error == 0.0
    assert report.failures == ()


@pytest.mark.parametrize(
    "name,K,radius,nu,n,c",
    [
        ("replication", 6, 1, 2, 4, 2),
        ("delta", 8, 1, 2, 3, 2),
        ("rs-update", 6, 2, 2, 3, 2),
        ("mds", 5, 1, 3, 3, 2),
    ],
)
def test_zero_error_schemes_pass_exhaustively(name, K, radius, nu, n, c):
    scheme = make_scheme(name, CorrelationModel(K, radius, nu), n, c)
    report = verify_requirement_A(scheme)
    assert report.mode == "exhaustive"
    assert report.passed, report.failures[:3]


def test_latest_only_fails_exactly_at_mixed_newest_states():
    # Keeping only the newest symbol decodes iff everyone contacted agrees
    # on what the newest version is; every mixed cell fails on every tuple.
    scheme = _latest_only_small()
    report = verify_requirement_A(scheme, witness_cap=50)
    assert not report.passed

    model = scheme.model
    expected = 0
    for code in range(1 << (model.nu * scheme.n)):
        sets = []
        for i in range(scheme.n):
            block = code >> ((scheme.n - 1 - i) * model.nu)
            sets.append(
                frozenset(
                    u for u in range(1, model.nu + 1) if (block >> (u - 1)) & 1
                )
            )
        state = SystemState(tuple(sets))
        for T in combinations(range(scheme.n), scheme.c):
            if latest_common_version(state, T) is None:
                continue
            newest = {max(state.per_server[t]) for t in T}
            if len(newest) > 1:
                expected += model.tuple_count()
    assert report.failure_count == expected == 10752
    assert report.empirical_error == pytest.approx(10752 / 37632)
    assert report.per_state_max_error == 1.0
    assert report.state_averaged_error == pytest.approx(0.203125)

    assert len(report.failures) == 50
    for witness in report.failures:
        sets = [frozenset(s) for s in witness.state]
        rows = [sets[t] for t in witness.subset]
        assert frozenset.intersection(*rows)  # guard was live
        assert len({max(r) for r in rows}) > 1  # and the newest versions mix
        assert witness.reason == "returned NULL under a live guard"


def test_report_text_round_trips_the_verdict():
    report = verify_requirement_A(_latest_only_small(), witness_cap=3)
    text = report.to_text()
    lines = text.splitlines()
    assert lines[0] == "mvc-verification mode=exhaustive passed=no"
    assert "states=64 subsets=3 tuples=448" in lines[1]
    assert "failures=10752" in lines[2]
    witness_lines = [l for l in lines if l.startswith("witness ")]
    assert len(witness_lines) == 3
    assert all("reason=returned NULL" in l for l in witness_lines)
    # hex-encoded tuple content: two digits per version at K=6
    assert "versions=00,00" in witness_lines[0]

    clean = verify_requirement_A(_mds_reference()).to_text()
    assert clean.splitlines()[0] == "mvc-verification mode=exhaustive passed=yes"


def test_jobs_do_not_change_the_report():
    sequential = verify_requirement_A(_latest_only_small(), witness_cap=20, jobs=1)
    threaded = verify_requirement_A(_latest_only_small(), witness_cap=20, jobs=3)
    assert sequential == threaded


def test_states_parameter_restricts_the_sweep():
    scheme = _mds_reference()
    states = [
        SystemState((frozenset({1, 2}),) * 4),
        SystemState((frozenset({1}), frozenset({2}), frozenset(), frozenset())),
    ]
    report = verify_requirement_A(scheme, states=states)
    assert report.states_checked == 2
    # second state shares nothing anywhere: only the first contributes
    assert report.attempts == 6 * 2304
    assert report.passed


# ---------------------------------------------------------------------------
# Mode selection


def test_auto_switches_to_monte_carlo_over_the_cap():
    scheme = make_scheme("replication", CorrelationModel(12, 2, 3), 4, 2)
    with pytest.warns(RuntimeWarning, match="falling back to Monte-Carlo"):
        report = verify_requirement_A(scheme, trials=200, seed=2)
    assert report.mode == "monte-carlo"
    assert report.tuples_checked == 200
    assert report.passed


def test_exhaustive_over_the_cap_raises():
    scheme = make_scheme("replication", CorrelationModel(12, 2, 3), 4, 2)
    with pytest.raises(EnumerationCapExceeded):
        verify_requirement_A(scheme, mode="exhaustive")
    with pytest.raises(EnumerationCapExceeded):
        verify_requirement_A(_mds_reference(), mode="exhaustive", cap=100)


def test_explicit_monte_carlo_mode_and_rules():
    report = verify_requirement_A(
        _latest_only_small(), mode="monte-carlo", trials=500, seed=3
    )
    assert report.mode == "monte-carlo"
    assert report.tuples_checked == report.attempts == 500
    assert report.empirical_error == report.failure_count / 500
    assert 0 < report.failure_count < 500
    again = verify_requirement_A(
        _latest_only_small(), mode="monte-carlo", trials=500, seed=3
    )
    assert again == report
    with pytest.raises(ValueError):
        verify_requirement_A(_mds_reference(), mode="sideways")
    with pytest.raises(ValueError):
        verify_requirement_A(_mds_reference(), mode="monte-carlo", trials=0)


# ---------------------------------------------------------------------------
# Quorum contract and the bridge


def test_bridged_mds_passes_definition_2():
    inner = make_scheme("mds", CorrelationModel(6, 1, 2), 4, 2)
    report = verify_definition_2(quorum_bridge(inner, 3, 3), 3, 3)
    assert report.mode == "exhaustive"
    assert report.passed
    assert report.attempts == 540 * 448


def test_raw_subset_scheme_fails_definition_2():
    # Without the bridge, a contacted server that holds nothing starves the
    # whole read even though a complete version exists elsewhere.
    inner = make_scheme("mds", CorrelationModel(6, 1, 2), 4, 2)
    report = verify_definition_2(inner, 3, 3, witness_cap=10)
    assert not report.passed
    for witness in report.failures:
        sets = [frozenset(s) for s in witness.state]
        assert not frozenset.intersection(*(sets[t] for t in witness.subset))


def test_synchronous_quorums_are_trivial():
    scheme = make_scheme("replication", CorrelationModel(6, 1, 2), 3, 3)
    report = verify_definition_2(scheme, 3, 3)
    assert report.passed


def test_definition_2_monte_carlo_agrees():
    inner = make_scheme("mds", CorrelationModel(6, 1, 2), 4, 2)
    report = verify_definition_2(
        quorum_bridge(inner, 3, 3), 3, 3, mode="monte-carlo", trials=400, seed=9
    )
    assert report.mode == "monte-carlo"
    assert report.passed


def test_bridge_validation():
    inner = make_scheme("mds", CorrelationModel(6, 1, 2), 4, 2)
    with pytest.raises(ValueError):
        quorum_bridge(inner, 2, 2)  # c_w + c_r = n: no overlap
    with pytest.raises(ValueError):
        quorum_bridge(inner, 3, 2)  # overlap 1 below the scheme's subset size
    with pytest.raises(ValueError):
        quorum_bridge(inner, 5, 3)
    bridge = quorum_bridge(inner, 3, 3)
    assert bridge.overlap == 2
    assert bridge.c == 3  # decode contract takes read quorums
    assert bridge.name == "quorum-bridge(mds)"
    assert bridge.worst_case_cost() == inner.worst_case_cost()


def _fig1_state() -> SystemState:
    # A write of version 2 reached two servers and stalled; version 1 is
    # complete at five of six, one server has nothing yet.
    return SystemState(
        (frozenset({1}),) * 3 + (frozenset({1, 2}),) * 2 + (frozenset(),),
        c_w=5,
    )


def test_partial_write_replay_bridged_mds_decodes():
    model = CorrelationModel(6, 1, 2)
    report = verify_definition_2(
        quorum_bridge(make_scheme("mds", model, 6, 4), 5, 5), 5, 5,
        states=[_fig1_state()],
    )
    assert report.passed
    assert report.states_checked == 1
    assert report.attempts == 6 * 448


def test_partial_write_replay_latest_only_fails():
    model = CorrelationModel(6, 1, 2)
    report = verify_definition_2(
        quorum_bridge(make_scheme("latest-only", model, 6, 4), 5, 5), 5, 5,
        states=[_fig1_state()], witness_cap=4,
    )
    assert not report.passed
    assert report.failure_count == 6 * 448  # every read quorum, every tuple
    assert report.per_state_max_error == 1.0


def test_bridge_decode_delegates_to_the_best_subset():
    model = CorrelationModel(6, 1, 2)
    bridge = quorum_bridge(make_scheme("mds", model, 6, 4), 5, 5)
    state = _fig1_state()
    vt = VersionTuple((Message(0x2D, 6), Message(0x2F, 6)))
    T = (0, 1, 2, 3, 4)
    symbols = {
        t: bridge.encode(t, tuple(sorted(state.per_server[t])), vt) for t in T
    }
    decoded = bridge.decode(T, state, symbols)
    assert decoded is not None
    assert decoded.version >= 1
    assert decoded.message == vt.version(decoded.version)
    empty = SystemState((frozenset(),) * 6, c_w=5)
    assert bridge.decode(T, empty, {t: StoredSymbol.empty() for t in T}) is None


# ---------------------------------------------------------------------------
# Relabeling symmetry


class _Relabeled(MvcScheme):
    """Server i plays the inner scheme's role perm[i]."""

    def __init__(self, inner: MvcScheme, perm):
        super().__init__(inner.model, inner.n, inner.c)
        self.inner = inner
        self.perm = tuple(perm)
        self.name = inner.name + "-relabeled"

    def encode(self, server, received, versions):
        return self.inner.encode(self.perm[server], received, versions)

    def decode(self, T, state, symbols):
        per = [frozenset()] * self.n
        for i, row in enumerate(state.per_server):
            per[self.perm[i]] = row
        return self.inner.decode(
            tuple(sorted(self.perm[t] for t in T)),
            SystemState(tuple(per)),
            {self.perm[t]: symbols[t] for t in T},
        )


@pytest.mark.parametrize("perm", [(1, 2, 0), (2, 0, 1), (0, 2, 1)])
def test_relabeling_preserves_the_verdict(perm):
    base = verify_requirement_A(_latest_only_small(), witness_cap=30)
    moved = verify_requirement_A(
        _Relabeled(_latest_only_small(), perm), witness_cap=30
    )
    assert moved.failure_count == base.failure_count
    assert moved.empirical_error == base.empirical_error
    assert moved.per_state_max_error == base.per_state_max_error
    assert moved.state_averaged_error == base.state_averaged_error
    for witness in moved.failures:
        rows = [frozenset(witness.state[t]) for t in witness.subset]
        assert len({max(r) for r in rows}) > 1


def test_mds_passes_under_relabeling():
    scheme = _Relabeled(make_scheme("mds", CorrelationModel(6, 1, 2), 3, 2), (2, 0, 1))
    assert verify_requirement_A(scheme).passed


# ---------------------------------------------------------------------------
# Epsilon estimation


class _FlakyScheme(MvcScheme):
    """Synthetic scheme failing on a known quarter of the tuple space.

    Stores every received version verbatim; decoding raises whenever the
    target version's content is divisible by four, which a uniform
    marginal hits with probability exactly 1/4.
    """

    name = "flaky"

    def encode(self, server, received, versions):
        got = tuple(sorted(set(received)))
        payload = 0
        for slot, u in enumerate(got):
            payload |= versions.version(u).bits << (slot * self.model.K)
        return StoredSymbol(payload, len(got) * self.model.K)

    def decode(self, T, state, symbols):
        target = latest_common_version(state, T)
        if target is None:
            return None
        t = T[0]
        got = tuple(sorted(state.per_server[t]))
        slot = got.index(target)
        bits = (symbols[t].payload >> (slot * self.model.K)) & (
            (1 << self.model.K) - 1
        )
        if bits % 4 == 0:
            raise DecodingError("synthetic failure")
        return Decoded(target, Message(bits, self.model.K))


def test_estimator_covers_the_known_failure_rate():
    # Guard is live with probability 7/16 (two uniform version sets must
    # intersect), and a quarter of live trials fail: truth is 7/64.
    scheme = _FlakyScheme(CorrelationModel(6, 1, 2), 3, 2)
    estimate = estimate_epsilon(scheme, trials=4000, seed=5)
    truth = 7 / 64
    assert estimate.wilson_lower <= truth <= estimate.wilson_upper
    assert abs(estimate.rate - truth) <= 3 * math.sqrt(truth * (1 - truth) / 4000)
    assert estimate.trials == 4000
    assert estimate.failures == round(estimate.rate * 4000)
    assert not estimate.sweep


def test_monte_carlo_error_is_failures_over_trials():
    scheme = _FlakyScheme(CorrelationModel(6, 1, 2), 3, 2)
    report = verify_requirement_A(scheme, mode="monte-carlo", trials=600, seed=8)
    assert report.empirical_error == report.failure_count / 600
    assert report.failures[0].reason == "decode raised an error"


def test_zero_error_scheme_estimates_zero():
    estimate = estimate_epsilon(
        make_scheme("replication", CorrelationModel(6, 1, 2), 3, 2),
        trials=800,
        seed=1,
    )
    assert estimate.failures == 0 and estimate.rate == 0.0
    assert estimate.wilson_lower == 0.0
    assert estimate.wilson_upper < 0.006
    assert estimate.per_state_max == 0.0


def test_sweep_mode_matches_the_exhaustive_rate():
    # The latest-only strawman fails all tuples of a mixed cell and none
    # otherwise, so the sweep rate must equal the exhaustive rate exactly.
    scheme = _latest_only_small()
    estimate = estimate_epsilon(scheme, trials=40, seed=4, sweep_states=True)
    assert estimate.sweep
    assert estimate.trials == 84 * 40  # live cells x sampled tuples
    assert estimate.failures == 24 * 40  # mixed-newest cells fail throughout
    assert estimate.rate == pytest.approx(10752 / 37632)
    assert estimate.per_state_max == 1.0


def test_starved_binning_rates_fail_measurably():
    # Cutting six bits from every index drives the error rate far above
    # the budget the nominal allocation was sized for.
    from mvcode.binning import BinningScheme, RateAllocation

    class _Starved(RateAllocation):
        def index_bits(self, received, u):
            return max(1, super().index_bits(received, u) - 6)

    model = CorrelationModel(8, 1, 2)
    scheme = BinningScheme(model, 4, 2, epsilon=Fraction(1, 4), seed=0)
    scheme.allocation = _Starved(model, 4, 2, Fraction(1, 4))
    estimate = estimate_epsilon(scheme, trials=600, seed=7)
    assert estimate.wilson_lower > 0.25

    nominal = BinningScheme(model, 4, 2, epsilon=Fraction(1, 4), seed=0)
    clean = estimate_epsilon(nominal, trials=600, seed=7)
    assert clean.rate < 0.25


def test_trial_validation():
    with pytest.raises(ValueError):
        estimate_epsilon(_latest_only_small(), trials=0)
