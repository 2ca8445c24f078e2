import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pfd_cardinality.protocols import (ALPHA, BETA, SILENT, BBTrialResult, Outcome, bb_estimate,
                                       block_outcomes, lof_point_estimate, lof_slot_probs,
                                       read_trials_jsonl, resolve_block, resolve_slot, run_3ssbb,
                                       run_bb, run_lof, srcs_bb_length, srcs_frame,
                                       srcs_rough_estimate, symbol_pattern, write_trials_jsonl)


def lof_first_empty_pmf(n: int, l: int) -> np.ndarray:
    """Exact P(first empty slot = j), each node picking one slot from lof_slot_probs.

    Inclusion-exclusion over which of the earlier slots are also empty.
    """
    probs = lof_slot_probs(l)
    pmf = np.zeros(l)
    for j in range(1, l + 1):
        earlier = range(j - 1)
        total = 0.0
        for r in range(j):
            for subset in itertools.combinations(earlier, r):
                gone = sum(probs[i] for i in subset)
                if j < l:
                    gone += probs[j - 1]
                total += (-1) ** r * max(1.0 - gone, 0.0) ** n
        pmf[j - 1] = total
    return pmf


def test_lof_oracle_is_a_distribution():
    for n in (0, 1, 5, 32, 200):
        pmf = lof_first_empty_pmf(n, 8)
        assert np.all(pmf >= -1e-12)
        assert pmf.sum() == pytest.approx(1.0, abs=1e-12)


def test_lof_no_nodes():
    rng = np.random.default_rng(0)
    assert all(run_lof(0, 8, rng).first_empty_slot == 1 for _ in range(20))


def test_lof_deterministic():
    a = [run_lof(32, 8, np.random.default_rng(9)).first_empty_slot for _ in range(3)]
    assert len(set(a)) == 1


def test_lof_matches_exact_distribution():
    rng = np.random.default_rng(1)
    js = np.array([run_lof(32, 8, rng).first_empty_slot for _ in range(100_000)])
    emp = np.bincount(js, minlength=9)[1:] / len(js)
    assert 0.5 * np.abs(emp - lof_first_empty_pmf(32, 8)).sum() < 0.01


def test_lof_rough_estimate_calibration():
    # the 1.2897 constant calibrates the log-scale (geometric) mean
    rng = np.random.default_rng(2)
    js = np.array([run_lof(32, 8, rng).first_empty_slot for _ in range(100_000)])
    est = 1.2897 * 2.0 ** (js - 1)
    assert math.exp(np.mean(np.log(est))) == pytest.approx(32, rel=0.25)
    pmf = lof_first_empty_pmf(32, 8)
    exact_mean = float(np.sum(pmf * 1.2897 * 2.0 ** np.arange(8)))
    assert est.mean() == pytest.approx(exact_mean, rel=0.02)


@pytest.mark.xfail(reason="the arithmetic mean of 1.2897 * 2**(j-1) is about 1.33 n", strict=False)
def test_lof_rough_estimate_arithmetic_mean():
    rng = np.random.default_rng(2)
    js = np.array([run_lof(32, 8, rng).first_empty_slot for _ in range(100_000)])
    assert np.mean(1.2897 * 2.0 ** (js - 1)) == pytest.approx(32, rel=0.25)


def test_lof_saturates_at_last_slot():
    rng = np.random.default_rng(3)
    assert run_lof(10_000, 3, rng).first_empty_slot == 3


def test_lof_point_estimate():
    assert lof_point_estimate(1) == pytest.approx(2.5794)
    assert lof_point_estimate(5) == pytest.approx(41.2704)
    assert lof_point_estimate(6) == 2 * lof_point_estimate(5)
    with pytest.raises(ValueError):
        lof_point_estimate(0)


def test_srcs_rough_estimate():
    assert srcs_rough_estimate([1, 1, 1]) == pytest.approx(1.2897)
    assert srcs_rough_estimate([4, 5, 4]) == pytest.approx(1.2897 * 2 ** (10 / 3))
    assert srcs_rough_estimate([4, 5, 4]) == pytest.approx(12.999, abs=1e-3)
    for j in range(1, 9):
        assert srcs_rough_estimate([j] * 3) == pytest.approx(lof_point_estimate(j) / 2)
    with pytest.raises(ValueError):
        srcs_rough_estimate([])


def test_bb_no_nodes():
    trial = run_bb(0, 50, 10.0, np.random.default_rng(0))
    assert np.all(trial.outcomes == Outcome.EMPTY)
    assert np.all(trial.counts == 0)


def test_bb_empty_slot_occupancy():
    rng = np.random.default_rng(4)
    z = [run_bb(64, 100, 64.0, rng).num_empty for _ in range(10_000)]
    expected = 100 * (1 - 1 / 100) ** 64
    assert expected == pytest.approx(52.6, abs=0.05)
    assert np.mean(z) == pytest.approx(expected, rel=0.02)


def _consistent(trial: BBTrialResult, n: int) -> bool:
    c, o = trial.counts, trial.outcomes
    return (np.all((c == 0) == (o == Outcome.EMPTY)) and np.all((c == 1) == (o == Outcome.SINGLE))
            and np.all((c >= 2) == (o == Outcome.COLLISION)) and c.sum() <= n)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(0, 200), l=st.integers(1, 150), rough=st.floats(0.5, 500),
       seed=st.integers(0, 2**31))
def test_bb_counts_outcomes_consistent(n, l, rough, seed):
    trial = run_bb(n, l, rough, np.random.default_rng(seed))
    assert trial.length == l
    assert trial.participation_prob == pytest.approx(min(1.0, 1.6 * l / rough))
    assert _consistent(trial, n)


def test_bb_estimate_examples():
    assert bb_estimate(100, 100, 1.0, 5.0) == 0.0
    assert bb_estimate(0, 100, 1.0, 40.0) == 40.0
    assert bb_estimate(38, 76, 1.0, 0.0) == pytest.approx(math.log(0.5) / math.log(1 - 1 / 76))
    assert bb_estimate(38, 76, 1.0, 0.0) == pytest.approx(52.33, abs=0.01)
    assert bb_estimate(1, 100, 1.0, 0.0, n_max=64) == 64.0
    assert bb_estimate(0, 100, 1.0, 90.0, n_max=64) == 64.0
    with pytest.raises(ValueError):
        bb_estimate(3, 10, 0.0, 1.0)


@given(n=st.floats(0, 300), l=st.integers(2, 200), p=st.floats(0.01, 1.0))
def test_bb_estimate_inverts_expected_occupancy(n, l, p):
    z_star = l * (1 - p / l) ** n
    assert bb_estimate(z_star, l, p, 0.0) == pytest.approx(n, abs=1e-9 * max(1.0, n))


def test_srcs_frame_budget_and_zero():
    rng = np.random.default_rng(5)
    est, slots = srcs_frame(0, 3, 8, 76, rng)
    assert (est, slots) == (0.0, 100)


def test_srcs_frame_unbiased():
    rng = np.random.default_rng(6)
    est = [srcs_frame(32, 3, 8, 76, rng)[0] for _ in range(10_000)]
    assert np.mean(est) == pytest.approx(32, rel=0.10)


def test_srcs_bb_length():
    assert srcs_bb_length(1) == 71
    assert srcs_bb_length(0.5) == 102
    assert srcs_bb_length(50) == 65


def test_symbol_patterns():
    assert symbol_pattern(1, 4) == (ALPHA, ALPHA, ALPHA)
    assert symbol_pattern(2, 4) == (BETA, SILENT, SILENT)
    assert symbol_pattern(4, 4) == (SILENT, SILENT, BETA)
    with pytest.raises(ValueError):
        symbol_pattern(5, 4)
    with pytest.raises(ValueError):
        symbol_pattern(0, 4)


def test_patterns_distinguishable():
    for T in range(2, 8):
        pats = {symbol_pattern(b, T) for b in range(1, T + 1)}
        assert len(pats) == T


def test_resolve_slot():
    assert resolve_slot([]) == Outcome.EMPTY
    assert resolve_slot([ALPHA]) == Outcome.ALPHA
    assert resolve_slot([BETA]) == Outcome.BETA
    assert resolve_slot([BETA, BETA]) == Outcome.COLLISION
    assert resolve_slot([ALPHA, BETA]) == Outcome.COLLISION
    assert resolve_slot([SILENT, ALPHA, SILENT]) == Outcome.ALPHA


@given(st.lists(st.sampled_from([ALPHA, BETA, SILENT]), max_size=8), st.randoms())
def test_resolve_slot_symmetric(symbols, rnd: random.Random):
    shuffled = list(symbols)
    rnd.shuffle(shuffled)
    assert resolve_slot(symbols) == resolve_slot(shuffled)


@settings(max_examples=60, deadline=None)
@given(T=st.integers(2, 6), l=st.integers(1, 12), data=st.data())
def test_vectorised_blocks_match_superposition(T, l, data):
    counts = np.array(data.draw(st.lists(st.lists(st.integers(0, 3), min_size=T, max_size=T),
                                         min_size=l, max_size=l)))
    fast = block_outcomes(counts)
    slow = np.array([[int(o) for o in resolve_block(row, T)] for row in counts])
    np.testing.assert_array_equal(fast, slow)


def test_3ssbb_no_nodes():
    trial = run_3ssbb([0, 0, 0], 10, [5.0, 5.0, 5.0], np.random.default_rng(0))
    assert trial.outcomes.shape == (10, 2)
    assert np.all(trial.outcomes == Outcome.EMPTY)


def test_3ssbb_two_types_is_bb_with_symbols():
    rng = np.random.default_rng(7)
    for _ in range(50):
        trial = run_3ssbb([5, 7], 20, [10.0, 10.0], rng)
        assert trial.outcomes.shape == (20, 1)
        total = trial.type_counts.sum(axis=1)
        out = trial.outcomes[:, 0]
        assert np.all((total == 0) == (out == Outcome.EMPTY))
        assert np.all((total >= 2) == (out == Outcome.COLLISION))
        assert np.all((out == Outcome.ALPHA) == ((trial.type_counts[:, 0] == 1) & (total == 1)))
        assert np.all((out == Outcome.BETA) == ((trial.type_counts[:, 1] == 1) & (total == 1)))


@settings(max_examples=30, deadline=None)
@given(n=st.lists(st.integers(0, 80), min_size=2, max_size=5), l=st.integers(1, 60),
       seed=st.integers(0, 2**31))
def test_3ssbb_consistent_with_reference(n, l, seed):
    T = len(n)
    trial = run_3ssbb(n, l, [max(1.0, float(v)) for v in n], np.random.default_rng(seed))
    assert np.all(trial.type_counts.sum(axis=0) <= np.array(n))
    for block, row in zip(trial.outcomes, trial.type_counts):
        assert [int(o) for o in block] == [int(o) for o in resolve_block(row, T)]


def test_3ssbb_binomial_block_counts():
    rng = np.random.default_rng(8)
    l = 100
    counts = np.stack([run_3ssbb([64, 64, 64], l, [64.0, 64.0, 64.0], rng).type_counts
                       for _ in range(10_000)])
    # p_b = 1, so each block sees Binomial(64, 1/l) nodes of each type
    np.testing.assert_allclose(counts.mean(axis=(0, 1)), 64 / l, rtol=0.02)
    np.testing.assert_allclose(counts.var(axis=(0, 1)), 64 * (1 / l) * (1 - 1 / l), rtol=0.02)
    empty_blocks = (counts.sum(axis=2) == 0).mean()
    assert empty_blocks == pytest.approx((1 - 1 / l) ** 192, rel=0.02)


def test_trial_jsonl_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    trials = [run_bb(30, 40, 30.0, rng), run_3ssbb([4, 9, 2], 15, [4.0, 9.0, 2.0], rng)]
    write_trials_jsonl(trials, tmp_path / "t.jsonl")
    back = read_trials_jsonl(tmp_path / "t.jsonl")
    np.testing.assert_array_equal(back[0].outcomes, trials[0].outcomes)
    np.testing.assert_array_equal(back[0].counts, trials[0].counts)
    assert back[0].participation_prob == trials[0].participation_prob
    np.testing.assert_array_equal(back[1].outcomes, trials[1].outcomes)
    np.testing.assert_array_equal(back[1].type_counts, trials[1].type_counts)
