import math
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from born_lab.branch_state import (
    BranchLabel,
    BranchState,
    ExactAmplitude,
    LabelUnitary,
    apply,
    measure_of,
)
from born_lab.envariance import (
    FineGrainError,
    NotEnvariant,
    alex_state,
    coarse_probability,
    correlated_state,
    equiprobability_from_symmetry,
    fine_grain,
    fine_grain_map,
    rational_approximation,
    schmidt_state,
    strong_symmetry_check,
    verify_envariance,
    wallace_chain,
)
from born_lab.frequency import SystemSpec
from born_lab.mmi_unitary import ExperimentScenario, run_experiment

THIRD = SystemSpec.from_weights(["1/3", "2/3"])
HALF = SystemSpec.from_weights(["1/2", "1/2"])


def dense_swap_fidelity(amps):
    """|<psi| U_E U_S |psi>|^2 for sum_a amps[a] |a>|e_a> on an explicit T x T grid."""
    t = len(amps)
    psi = np.zeros((t, t), dtype=complex)
    for a, x in enumerate(amps):
        psi[a, a] = x
    out = psi[[1, 0] + list(range(2, t))][:, [1, 0] + list(range(2, t))]
    return abs(np.vdot(psi.ravel(), out.ravel())) ** 2


@st.composite
def rational_specs(draw, max_t=100, max_k=5):
    t = draw(st.integers(1, max_t))
    k = draw(st.integers(1, min(max_k, t)))
    cuts = sorted(draw(st.lists(st.integers(1, t - 1), min_size=k - 1, max_size=k - 1, unique=True))) if t > 1 else []
    return SystemSpec.from_weights([Fraction(b - a, t) for a, b in zip([0] + cuts, cuts + [t])])


# --- schmidt states ----------------------------------------------------------

def test_schmidt_two():
    s = schmidt_state(2)
    assert len(s) == 2
    assert all(abs(complex(a) - math.sqrt(0.5)) < 1e-15 for _, a in s)


@pytest.mark.parametrize("t", [2, 3, 5, 8])
def test_schmidt_branch_measures(t):
    s = schmidt_state(t)
    measures = {a: measure_of(s, lambda l, a=a: l.system == a) for a in {l.system for l in s.labels()}}
    assert set(measures.values()) == {Fraction(1, t)}


# --- envariance --------------------------------------------------------------

def test_schmidt_three_all_pairs_invariant():
    s = schmidt_state(3)
    for a, b in combinations(("o1", "o2", "o3"), 2):
        rep = verify_envariance(s, a, b)
        assert abs(rep.fidelity - 1) < 1e-12 and rep.invariant


def test_asymmetric_state_fidelity_is_eight_ninths():
    rep = verify_envariance(correlated_state(THIRD), "up", "down")
    expected = (2 * math.sqrt(1 / 3) * math.sqrt(2 / 3)) ** 2
    assert abs(rep.fidelity - 8 / 9) < 1e-12
    assert abs(rep.fidelity - expected) < 1e-12
    assert abs(rep.fidelity - dense_swap_fidelity([math.sqrt(1 / 3), math.sqrt(2 / 3)])) < 1e-12
    assert not rep.invariant


def test_swap_alone_changes_labels_but_not_measures():
    s = schmidt_state(2)
    swapped = apply(LabelUnitary.swap("system", "up", "down"), s)
    assert swapped != s
    assert sorted(a.weight for _, a in swapped) == sorted(a.weight for _, a in s)


def test_unknown_symbol_rejected():
    with pytest.raises(ValueError):
        verify_envariance(schmidt_state(2), "up", "sideways")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=2, max_size=6))
def test_envariance_iff_equal_amplitudes(raw):
    total = sum(raw)
    spec = SystemSpec.from_weights([Fraction(r, total) for r in raw])
    s = correlated_state(spec)
    a, b = spec.outcomes[0], spec.outcomes[1]
    rep = verify_envariance(s, a, b)
    assert rep.invariant == (raw[0] == raw[1])
    all_pairs = all(verify_envariance(s, x, y).invariant for x, y in combinations(spec.outcomes, 2))
    assert all_pairs == (len(set(raw)) == 1)
    amps = [math.sqrt(r / total) for r in raw]
    assert abs(rep.fidelity - dense_swap_fidelity(amps)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=2, max_size=5), st.data())
def test_no_signalling_for_env_predicates(raw, data):
    total = sum(raw)
    spec = SystemSpec.from_weights([Fraction(r, total) for r in raw])
    s = correlated_state(spec)
    perm = data.draw(st.permutations(spec.outcomes))
    u = LabelUnitary("system", dict(zip(spec.outcomes, perm)))
    moved = apply(u, s)
    for tag in {l.env for l in s.labels()}:
        assert measure_of(moved, lambda l: l.env == tag) == measure_of(s, lambda l: l.env == tag)


# --- strong symmetry ---------------------------------------------------------

@pytest.mark.parametrize("t", [2, 3, 6])
def test_strong_symmetry_holds_on_schmidt(t):
    s = schmidt_state(t)
    syms = sorted({l.system for l in s.labels()})
    for a, b in combinations(syms, 2):
        check = strong_symmetry_check(s, a, b)
        assert check and check.correlated


def test_strong_symmetry_product_state_flagged():
    r = ExactAmplitude(Fraction(1, 2))
    s = BranchState({BranchLabel("a", "eps"): r, BranchLabel("b", "eps"): r})
    check = strong_symmetry_check(s, "a", "b")
    assert check.holds
    assert not check.correlated


def test_strong_symmetry_fails_on_asymmetric_state():
    check = strong_symmetry_check(correlated_state(THIRD), "up", "down")
    assert not check


# --- equiprobability ---------------------------------------------------------

def test_equiprobability_four():
    assert equiprobability_from_symmetry(schmidt_state(4)) == {f"o{i}": Fraction(1, 4) for i in range(1, 5)}


def test_equiprobability_refuses_asymmetric():
    with pytest.raises(NotEnvariant, match="not envariant"):
        equiprobability_from_symmetry(correlated_state(THIRD))


def test_equiprobability_single_branch():
    assert equiprobability_from_symmetry(schmidt_state(1, ["only"])) == {"only": 1}


def test_equiprobability_requires_distinct_records():
    r = ExactAmplitude(Fraction(1, 2))
    s = BranchState({BranchLabel("a", "eps"): r, BranchLabel("b", "eps"): r})
    with pytest.raises(NotEnvariant):
        equiprobability_from_symmetry(s)


# --- fine graining -----------------------------------------------------------

def test_fine_grain_third():
    fmap, state = fine_grain(THIRD)
    assert fmap.t == 3 and fmap.sizes == (1, 2)
    assert all(a.weight == Fraction(1, 3) for _, a in state)


def test_fine_grain_half_is_identity():
    fmap, _ = fine_grain(HALF)
    assert fmap.t == 2 and fmap.fine_outcomes == HALF.outcomes


def test_fine_grain_quarter():
    fmap = fine_grain_map(SystemSpec.from_weights(["1/4", "1/4", "1/2"]))
    assert fmap.t == 4 and fmap.sizes == (1, 1, 2)


def test_fine_grain_rejects_floats_and_mismatch():
    with pytest.raises(FineGrainError, match="requires rational approximation"):
        fine_grain(SystemSpec.from_weights([0.25, 0.75]))
    with pytest.raises(FineGrainError, match="fine-graining mismatch"):
        fine_grain(THIRD, t=5)


def test_fine_grain_reconstructs_weights():
    spec = SystemSpec.from_weights(["1/6", "1/2", "1/3"])
    fmap, state = fine_grain(spec)
    for a, w in zip(spec.outcomes, spec.weights):
        assert measure_of(state, lambda l, a=a: fmap.coarse_of(l.system) == a) == w


def test_coarse_probability_examples():
    fmap = fine_grain_map(THIRD)
    fine = {f: Fraction(1, 3) for f in fmap.fine_outcomes}
    assert coarse_probability(fmap, fine) == {"up": Fraction(1, 3), "down": Fraction(2, 3)}
    ident = fine_grain_map(HALF)
    assert coarse_probability(ident, {"up": Fraction(1, 2), "down": Fraction(1, 2)}) == dict(zip(HALF.outcomes, HALF.weights))
    even = fine_grain_map(HALF, t=4)
    assert even.sizes == (2, 2)
    assert coarse_probability(even, {f: Fraction(1, 4) for f in even.fine_outcomes}) == {"up": Fraction(1, 2), "down": Fraction(1, 2)}
    with pytest.raises(ValueError, match="partition mismatch"):
        coarse_probability(fmap, {"up": Fraction(1)})


@settings(max_examples=60, deadline=None)
@given(rational_specs())
def test_round_trip(spec):
    fmap, state = fine_grain(spec)
    assert coarse_probability(fmap, equiprobability_from_symmetry(state)) == dict(zip(spec.outcomes, spec.weights))


def test_rational_approximation():
    approx = rational_approximation([1 / math.sqrt(2) ** 2, 1 - 0.5])
    assert approx == (Fraction(1, 2), Fraction(1, 2))
    w = [1 / math.pi, 1 - 1 / math.pi]
    approx = rational_approximation(w)
    assert sum(approx) == 1
    assert all(abs(float(a) - b) < 1e-6 for a, b in zip(approx, w))


def test_theoretical_table_matches_coarse_probability():
    sc = ExperimentScenario(THIRD, 30, 3, t=6, seed=0)
    report = run_experiment(sc)
    fmap = sc.grain()
    expected = coarse_probability(fmap, {f: Fraction(1, fmap.t) for f in fmap.fine_outcomes})
    assert report.theoretical() == expected


# --- wallace chain -----------------------------------------------------------

def test_wallace_equal_amplitudes():
    rep = wallace_chain(alex_state(HALF), "up", "down")
    assert rep.erased_identical and rep.equality
    assert rep.p_alpha == rep.p_beta == Fraction(1, 2)
    assert rep.verdict == "equal"


def test_wallace_unequal_amplitudes_flagged():
    rep = wallace_chain(alex_state(THIRD), "up", "down")
    assert rep.labels_match
    assert (rep.p_alpha, rep.p_beta) == (Fraction(1, 3), Fraction(2, 3))
    # the erased states share labels but carry swapped amplitudes
    assert abs(rep.max_difference - (math.sqrt(2 / 3) - math.sqrt(1 / 3))) < 1e-12
    assert not rep.equality
    assert rep.verdict == "indifference premise not met at equal-weight level"


def test_wallace_chain_twice_restores_original():
    s = alex_state(SystemSpec.from_weights(["1/4", "1/4", "1/2"]))
    first = wallace_chain(s, "o1", "o2")
    second = wallace_chain(first.counterswapped, "o1", "o2")
    assert second.counterswapped == s
    assert second.equality == first.equality


def test_wallace_needs_distinct_records():
    r = ExactAmplitude(Fraction(1, 2))
    s = BranchState({BranchLabel("a", "X"): r, BranchLabel("b", "X"): r})
    with pytest.raises(ValueError):
        wallace_chain(s, "a", "b")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 6), st.fractions(0, 1, max_denominator=6)), min_size=2, max_size=6))
def test_equiprobability_gate_agrees_with_full_envariance(entries):
    total = sum(r for r, _ in entries)
    spec = SystemSpec(tuple(f"o{i}" for i in range(len(entries))),
                      tuple(Fraction(r, total) for r, _ in entries),
                      tuple(p for _, p in entries))
    s = correlated_state(spec)
    full = all(verify_envariance(s, x, y).invariant for x, y in combinations(spec.outcomes, 2))
    try:
        equiprobability_from_symmetry(s)
        gate = True
    except NotEnvariant:
        gate = False
    assert gate == full
