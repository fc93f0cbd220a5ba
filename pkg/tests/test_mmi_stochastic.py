import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from born_lab.frequency import SystemSpec
from born_lab.mmi_stochastic import (
    MindTally,
    SeededRng,
    history_support_bound,
    hulk_probability,
    iter_tallies,
    mode_tally,
    relative_fluctuation,
    sample_assignments,
    sample_minds,
    sample_tallies,
    tally_pmf,
)

import oracles

THIRD = SystemSpec.from_weights(["1/3", "2/3"])
HALF = SystemSpec.from_weights(["1/2", "1/2"])
CERTAIN = SystemSpec.from_weights([1, 0])


# --- SeededRng ---------------------------------------------------------------

def test_same_key_same_stream():
    a = SeededRng(5).stream(0, 3).random(10)
    b = SeededRng(5).stream(0, 3).random(10)
    assert np.array_equal(a, b)


def test_distinct_keys_differ():
    assert not np.array_equal(SeededRng(5).stream(0, 3).random(10), SeededRng(5).stream(0, 4).random(10))
    assert not np.array_equal(SeededRng(5).stream(0).random(10), SeededRng(6).stream(0).random(10))


def test_seed_range():
    with pytest.raises(ValueError):
        SeededRng(-1)
    with pytest.raises(ValueError):
        SeededRng(2**64)


# --- sampling ----------------------------------------------------------------

def test_single_mind_up_fraction():
    tallies = sample_tallies(THIRD, 1, 100_000, SeededRng(11))
    assert abs(tallies[:, 0].mean() - 1 / 3) < 0.01


def test_certain_outcome_always_wins():
    tallies = sample_tallies(CERTAIN, 17, 500, SeededRng(2))
    assert np.all(tallies[:, 0] == 17)
    assert sample_minds(CERTAIN, 9, SeededRng(0)).counts == (9, 0)


def test_sample_minds_is_reproducible():
    a = sample_minds(THIRD, 50, SeededRng(9), trial=4)
    b = sample_minds(THIRD, 50, SeededRng(9), trial=4)
    assert a == b and a.n == 50


def test_two_mind_ordered_alternatives():
    idx = sample_assignments(THIRD, 2, 100_000, SeededRng(3))
    codes = idx[:, 0] * 2 + idx[:, 1]  # (up,up), (up,down), (down,up), (down,down)
    observed = np.bincount(codes, minlength=4)
    expected = np.array([1, 2, 2, 4]) / 9 * len(codes)
    assert stats.chisquare(observed, expected).pvalue > 0.001


def test_tallies_agree_with_assignments():
    rng = SeededRng(77)
    idx = sample_assignments(THIRD, 40, 2500, rng)
    tallies = sample_tallies(THIRD, 40, 2500, rng)
    assert np.array_equal(tallies[:, 0], (idx == 0).sum(axis=1))
    assert np.all(tallies.sum(axis=1) == 40)


@pytest.mark.parametrize("weights,n", [(["1/3", "2/3"], 6), (["1/4", "1/4", "1/2"], 4), (["1/5", "2/5", "2/5"], 3)])
def test_sampler_matches_pmf(weights, n):
    spec = SystemSpec.from_weights(weights)
    tallies = sample_tallies(spec, n, 100_000, SeededRng(1234))
    support = list(iter_tallies(len(spec), n))
    pos = {t: i for i, t in enumerate(support)}
    observed = np.zeros(len(support))
    for row, c in zip(*np.unique(tallies, axis=0, return_counts=True)):
        observed[pos[tuple(row)]] = c
    expected = np.array([float(tally_pmf(spec, n, t)) for t in support]) * len(tallies)
    # oracle cross-check of the expected vector itself
    assert np.allclose(expected / len(tallies), [oracles.multinomial_pmf(t, spec.weights) for t in support])
    assert stats.chisquare(observed, expected).pvalue > 0.001


def test_concentration_at_ten_thousand_minds():
    n = 10_000
    tallies = sample_tallies(THIRD, n, 2000, SeededRng(8))
    w = 1 / 3
    band = 3 * math.sqrt(w * (1 - w) / n)
    outside = np.mean(np.abs(tallies[:, 0] / n - w) > band)
    assert outside < 0.01


# --- pmf ---------------------------------------------------------------------

def test_pmf_examples():
    assert tally_pmf(THIRD, 2, (0, 2)) == Fraction(4, 9)
    assert tally_pmf(THIRD, 2, (1, 1)) == Fraction(4, 9)
    assert tally_pmf(THIRD, 2, MindTally(("up", "down"), (2, 0))) == Fraction(1, 9)


def test_pmf_rejects_inconsistent_tally():
    with pytest.raises(ValueError):
        tally_pmf(THIRD, 3, (1, 1))


@st.composite
def rational_specs(draw):
    k = draw(st.integers(1, 4))
    den = draw(st.integers(1, 20))
    cuts = sorted(draw(st.lists(st.integers(0, den), min_size=k - 1, max_size=k - 1)))
    return SystemSpec.from_weights([Fraction(b - a, den) for a, b in zip([0] + cuts, cuts + [den])])


@settings(max_examples=30, deadline=None)
@given(rational_specs(), st.integers(1, 50))
def test_pmf_normalizes_exactly(spec, n):
    if len(spec) > 3 and n > 25:
        n = 25
    assert sum(tally_pmf(spec, n, t) for t in iter_tallies(len(spec), n)) == 1


def test_iter_tallies_order_and_count():
    ts = list(iter_tallies(3, 4))
    assert ts == sorted(ts)
    assert len(ts) == math.comb(6, 2)
    assert all(sum(t) == 4 for t in ts)


def test_float_pmf_matches_scipy():
    spec = SystemSpec.from_weights([0.2, 0.3, 0.5])
    assert abs(tally_pmf(spec, 10, (2, 3, 5)) - oracles.multinomial_pmf((2, 3, 5), spec.weights)) < 1e-12


# --- mode --------------------------------------------------------------------

def _mode_oracle(spec, n):
    probs = stats.binom.pmf(np.arange(n + 1), n, float(spec.weights[0]))
    k = int(np.argmax(probs))
    return (k, n - k)


def test_mode_examples():
    assert mode_tally(THIRD, 3).counts == (1, 2) == _mode_oracle(THIRD, 3)
    assert mode_tally(CERTAIN, 12).counts == (12, 0)
    assert mode_tally(THIRD, 300).counts == (100, 200) == _mode_oracle(THIRD, 300)


def test_mode_ties_go_lexicographically_smallest():
    # N=1, (1/2, 1/2): (0,1) and (1,0) tie
    assert mode_tally(HALF, 1).counts == (0, 1)


def test_mode_greedy_path_large_alphabet():
    spec = SystemSpec.from_weights(["1/10"] * 10)
    assert mode_tally(spec, 100).counts == (10,) * 10


# --- hulks, fluctuation, support --------------------------------------------

def test_hulk_probability_examples():
    assert hulk_probability(THIRD, 2, "up") == Fraction(4, 9)
    assert hulk_probability(CERTAIN, 5, "up") == 0
    value = hulk_probability(THIRD, 50, "up")
    assert value == Fraction(2**50, 3**50)
    assert abs(float(value) - 1.57e-9) < 0.01e-9


@pytest.mark.parametrize("n", [1, 2, 7, 20])
def test_hulk_equals_pmf_marginal(n):
    spec = SystemSpec.from_weights(["1/4", "1/4", "1/2"])
    marginal = sum((tally_pmf(spec, n, t) for t in iter_tallies(3, n) if t[1] == 0), Fraction(0))
    assert hulk_probability(spec, n, "o2") == marginal


def test_relative_fluctuation_against_binomial():
    assert abs(relative_fluctuation(HALF, 100, "up") - 0.1) < 1e-15
    assert abs(relative_fluctuation(THIRD, 100, "up") - oracles.binomial_relative_std(100, 1 / 3)) < 1e-12
    assert abs(relative_fluctuation(THIRD, 100, "up") / relative_fluctuation(THIRD, 400, "up") - 2) < 1e-12
    with pytest.raises(ValueError):
        relative_fluctuation(CERTAIN, 10, "down")


def test_history_support_bound():
    assert history_support_bound(10, HALF, ["up", "down"] * 5) == 1024
    assert history_support_bound(3, CERTAIN, ["up"] * 3) == 1
    assert history_support_bound(2, THIRD, ["down", "down"]) == 3
    with pytest.raises(ValueError, match="impossible history"):
        history_support_bound(2, CERTAIN, ["down", "up"])
