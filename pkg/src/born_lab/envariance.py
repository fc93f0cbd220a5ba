"""Swap/counterswap symmetry of entangled system-environment states.

Probabilities here are assigned from symmetry: a branch set that is invariant
under every swap on S undone by a counterswap on E gets equal probabilities.
Amplitude-derived measures appear only as cross-checks. Rational weights are
reduced to that equal-weight case by fine-graining.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .branch_state import (
    TOLERANCE,
    BranchLabel,
    BranchState,
    ExactAmplitude,
    LabelUnitary,
    apply,
    erase,
    fidelity,
    max_amplitude_difference,
    measure_of,
)
from .frequency import SystemSpec, default_outcomes

FINE_GRAIN_CAP = 10**4
APPROXIMATION_TOLERANCE = 1e-6


class NotEnvariant(ValueError):
    pass


class FineGrainError(ValueError):
    pass


def env_tag(outcome: str, prefix: str = "eps") -> str:
    return f"{prefix}_{outcome}"


def schmidt_state(t: int, outcomes: Optional[Sequence[str]] = None, env_prefix: str = "eps") -> BranchState:
    """Equal-weight Schmidt state sum_a sqrt(1/T) |a>_S |eps_a>_E."""
    if t < 1:
        raise ValueError("T must be >= 1")
    outcomes = tuple(outcomes) if outcomes is not None else default_outcomes(t)
    if len(outcomes) != t:
        raise ValueError(f"need {t} outcome symbols, got {len(outcomes)}")
    amp = ExactAmplitude(Fraction(1, t))
    return BranchState((BranchLabel(system=a, env=env_tag(a, env_prefix)), amp) for a in outcomes)


def correlated_state(spec: SystemSpec, env_prefix: str = "eps") -> BranchState:
    """sum_a amp_a |a>_S |eps_a>_E with the spec's (possibly unequal) amplitudes."""
    return BranchState(
        (BranchLabel(system=a, env=env_tag(a, env_prefix)), spec.amplitude(a))
        for a in spec.outcomes
        if spec.weight(a) != 0
    )


def record_of(s: BranchState, outcome: str) -> Optional[str]:
    """The environment tag paired with ``outcome``, or None when it is not unique."""
    tags = {label.env for label, _ in s if label.system == outcome}
    return tags.pop() if len(tags) == 1 else None


def records_distinct(s: BranchState) -> bool:
    """True when each system symbol has one environment tag and no tag is shared."""
    tags: dict = {}
    for label, _ in s:
        tags.setdefault(label.system, set()).add(label.env)
    if any(len(t) != 1 for t in tags.values()):
        return False
    return len({t for ts in tags.values() for t in ts}) == len(tags)


@dataclass(frozen=True)
class EnvarianceReport:
    alpha: str
    beta: str
    swapped: BranchState
    counterswapped: BranchState
    fidelity: float
    correlated: bool

    @property
    def invariant(self) -> bool:
        return abs(1.0 - self.fidelity) < TOLERANCE


def system_swap(alpha: str, beta: str) -> LabelUnitary:
    return LabelUnitary.swap("system", alpha, beta)


def env_swap(s: BranchState, alpha: str, beta: str) -> LabelUnitary:
    ea, eb = record_of(s, alpha), record_of(s, beta)
    if ea is None or eb is None:
        # uncorrelated records: nothing to counterswap
        return LabelUnitary("env", {})
    return LabelUnitary.swap("env", ea, eb)


def verify_envariance(s: BranchState, alpha: str, beta: str) -> EnvarianceReport:
    """Swap alpha<->beta on S, counterswap their records on E, compare with s."""
    systems = {label.system for label, _ in s}
    for a in (alpha, beta):
        if a not in systems:
            raise ValueError(f"{a!r} is not a system symbol of the state")
    swapped = apply(system_swap(alpha, beta), s)
    counter = apply(env_swap(s, alpha, beta), swapped)
    return EnvarianceReport(alpha, beta, swapped, counter, fidelity(counter, s), records_distinct(s))


@dataclass(frozen=True)
class SymmetryCheck:
    holds: bool
    correlated: bool
    links: tuple

    def __bool__(self) -> bool:
        return self.holds


def strong_symmetry_check(s: BranchState, alpha: str, beta: str) -> SymmetryCheck:
    """Projector-expectation symmetry chained through swap, counterswap and envariance.

    For both ordered pairs (x, y) in {(alpha, beta), (beta, alpha)}:
      P_s(x, e_x) = P_{U_S s}(y, e_x)          swap on S moves the weight with the label
      P_{U_S s}(y, e_x) = P_{U_E U_S s}(y, e_y) counterswap on E
      P_{U_E U_S s}(y, e_y) = P_s(y, e_y)       global envariance
    Holds iff every link holds, which reduces to P_s(x, e_x) = P_s(y, e_y).
    """
    ea, eb = record_of(s, alpha), record_of(s, beta)
    correlated = records_distinct(s)
    if ea is None or eb is None:
        tags = {label.env for label, _ in s}
        ea = eb = min(tags) if tags else None

    def p(state, sys_sym, env_sym):
        return measure_of(state, lambda l: l.system == sys_sym and l.env == env_sym)

    us = apply(system_swap(alpha, beta), s)
    ue_us = apply(env_swap(s, alpha, beta), us)
    links = []
    for x, y, ex, ey in ((alpha, beta, ea, eb), (beta, alpha, eb, ea)):
        chain = (p(s, x, ex), p(us, y, ex), p(ue_us, y, ey), p(s, y, ey))
        links.append(tuple(_close(chain[i], chain[i + 1]) for i in range(3)))
    return SymmetryCheck(all(all(l) for l in links), correlated, tuple(links))


def _close(a, b, tol: float = TOLERANCE) -> bool:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return abs(float(a) - float(b)) < tol


def equiprobability_from_symmetry(s: BranchState) -> dict:
    """Assign 1/T to each of the T system symbols of an envariant state.

    Refuses unless every pair passes the swap/counterswap check with distinct
    environment records; amplitudes are never read off directly.
    """
    systems = sorted({label.system for label, _ in s})
    if not systems:
        raise NotEnvariant("not envariant: empty state")
    if not records_distinct(s):
        raise NotEnvariant("not envariant: system outcomes lack distinct environment records")
    by_system: dict = {}
    for label, amp in s:
        by_system.setdefault(label.system, []).append((label, complex(amp)))
    weights = {a: math.fsum(abs(x) ** 2 for _, x in bs) for a, bs in by_system.items()}
    total = math.fsum(weights.values())
    # transpositions (first, x) generate every permutation, so T-1 checks cover all pairs
    for a, b in ((systems[0], x) for x in systems[1:]):
        f = _pair_fidelity(s, by_system, weights, total, a, b)
        if abs(1.0 - f) >= TOLERANCE:
            raise NotEnvariant(f"not envariant: swap {a}<->{b} has fidelity {f:.12g}")
    return {a: Fraction(1, len(systems)) for a in systems}


def _pair_fidelity(s: BranchState, by_system: dict, weights: dict, total: float, a: str, b: str) -> float:
    """Fidelity of verify_envariance(s, a, b), touching only the a and b branches.

    With distinct records the swap/counterswap maps (a, e_a, rest) to
    (b, e_b, rest) and back, and fixes every other branch, so
    <s|U s> = (weight outside {a, b}) + sum over moved branches of conj(s(U l)) s(l).
    """
    ea, eb = by_system[a][0][0].env, by_system[b][0][0].env
    terms = [total - weights[a] - weights[b]]
    for label, x in by_system[a] + by_system[b]:
        moved = label.system == a
        image = BranchLabel(b if moved else a, eb if moved else ea, label.minds, label.qubits)
        terms.append(complex(s.amplitude(image)).conjugate() * x)
    overlap = complex(math.fsum(t.real for t in terms), math.fsum(t.imag for t in terms))
    return abs(overlap) ** 2


@dataclass(frozen=True)
class FineGrainMap:
    """Partition of T fine outcomes into one group per coarse outcome."""

    t: int
    groups: tuple  # ((coarse, (fine, ...)), ...)

    def __post_init__(self):
        fine = [f for _, fs in self.groups for f in fs]
        if len(fine) != self.t or len(set(fine)) != self.t:
            raise ValueError("groups must partition T distinct fine outcomes")

    @property
    def coarse_outcomes(self) -> tuple:
        return tuple(c for c, _ in self.groups)

    @property
    def fine_outcomes(self) -> tuple:
        return tuple(f for _, fs in self.groups for f in fs)

    @property
    def sizes(self) -> tuple:
        return tuple(len(fs) for _, fs in self.groups)

    def group(self, coarse: str) -> tuple:
        return dict(self.groups)[coarse]

    def coarse_of(self, fine: str) -> str:
        for c, fs in self.groups:
            if fine in fs:
                return c
        raise KeyError(fine)


def _fine_names(coarse: str, size: int) -> tuple:
    if size == 1:
        return (coarse,)
    return tuple(f"{coarse}.{j}" for j in range(1, size + 1))


def fine_grain_map(spec: SystemSpec, t: Optional[int] = None, cap: int = FINE_GRAIN_CAP) -> FineGrainMap:
    if not spec.exact:
        raise FineGrainError(
            "requires rational approximation: fine-graining needs rational weights "
            "(see rational_approximation)"
        )
    lcm = spec.common_denominator()
    t = lcm if t is None else t
    if t % lcm:
        raise FineGrainError(f"fine-graining mismatch: weights are not multiples of 1/{t}")
    if t > cap:
        raise FineGrainError(f"T={t} exceeds the fine-graining cap {cap}")
    groups = tuple((a, _fine_names(a, int(w * t))) for a, w in zip(spec.outcomes, spec.weights))
    return FineGrainMap(t, groups)


def coarse_entangled_state(spec: SystemSpec) -> BranchState:
    """sum_a sqrt(w_a) |a>_S |e_a>_E before fine-graining."""
    return correlated_state(spec, env_prefix="e")


def fine_grain(spec: SystemSpec, t: Optional[int] = None, cap: int = FINE_GRAIN_CAP):
    """Split each coarse outcome into T_a equal-weight fine outcomes.

    Returns the partition and the T-branch equal-weight Schmidt state obtained
    after relabeling each fine branch's record ``e_a`` to a fresh ``eps_f``.
    """
    fmap = fine_grain_map(spec, t, cap)
    amp = ExactAmplitude(Fraction(1, fmap.t))
    # |a> = T_a**-1/2 sum_{f in group a} |f>; each fine branch first carries e_a
    intermediate = BranchState(
        (BranchLabel(system=f, env=env_tag(c, "e")), amp) for c, fs in fmap.groups for f in fs
    )
    relabel = {f: env_tag(f) for f in fmap.fine_outcomes}
    state = intermediate.map_labels(lambda l: BranchLabel(system=l.system, env=relabel[l.system]))
    return fmap, state


def coarse_probability(fmap: FineGrainMap, fine_probs: Mapping) -> dict:
    """Sum fine-outcome probabilities over each coarse group."""
    if set(fine_probs) != set(fmap.fine_outcomes):
        raise ValueError("partition mismatch: fine probabilities do not cover the fine alphabet")
    total = sum(fine_probs.values())
    if abs(float(total) - 1.0) > TOLERANCE:
        raise ValueError("fine probabilities must sum to 1")
    return {c: sum((fine_probs[f] for f in fs), Fraction(0)) for c, fs in fmap.groups}


def rational_approximation(weights: Sequence[float], tol: float = APPROXIMATION_TOLERANCE,
                           cap: int = FINE_GRAIN_CAP) -> tuple:
    """Smallest-denominator rational weights summing to 1 within ``tol`` of ``weights``."""
    weights = [float(w) for w in weights]
    for t in range(1, cap + 1):
        scaled = [w * t for w in weights]
        counts = [math.floor(x) for x in scaled]
        # hand out the remaining units by largest remainder
        order = sorted(range(len(weights)), key=lambda i: (counts[i] - scaled[i], i))
        for i in order[: t - sum(counts)]:
            counts[i] += 1
        if all(abs(c / t - w) < tol for c, w in zip(counts, weights)):
            return tuple(Fraction(c, t) for c in counts)
    raise FineGrainError(f"no rational approximation within {tol} with denominator <= {cap}")


@dataclass(frozen=True)
class WallaceReport:
    alpha: str
    beta: str
    state: BranchState
    counterswapped: BranchState
    erased: BranchState
    erased_counterswapped: BranchState
    labels_match: bool
    max_difference: float
    p_alpha: object
    p_beta: object

    @property
    def erased_identical(self) -> bool:
        return self.labels_match and self.max_difference < TOLERANCE

    @property
    def equality(self) -> bool:
        """P(alpha, Alex_alpha) = P(beta, Alex_beta) follows from branch indifference."""
        return self.erased_identical

    @property
    def verdict(self) -> str:
        if self.equality:
            return "equal"
        return "indifference premise not met at equal-weight level"


def alex_state(spec: SystemSpec) -> BranchState:
    """sum_a amp_a |a>_S |Alex_a>_E: the observer's record is the environment."""
    return correlated_state(spec, env_prefix="Alex")


def wallace_chain(s: BranchState, alpha: str, beta: str) -> WallaceReport:
    """Counterswap the observer records, erase S, and compare the two erased states.

    Identical erased states (same labels, amplitudes within tolerance) are the
    operational content of branch indifference and give
    P(alpha, Alex_alpha) = P(beta, Alex_beta).
    """
    ea, eb = record_of(s, alpha), record_of(s, beta)
    if ea is None or eb is None or ea == eb:
        raise ValueError("wallace_chain needs distinct observer records for alpha and beta")
    counter = apply(LabelUnitary.swap("env", ea, eb), s)
    erased = erase(s, {alpha, beta})
    erased_counter = erase(counter, {alpha, beta})
    labels_match = set(erased.labels()) == set(erased_counter.labels())
    diff = max_amplitude_difference(erased, erased_counter)
    p_a = measure_of(s, lambda l: l.system == alpha and l.env == ea)
    p_b = measure_of(s, lambda l: l.system == beta and l.env == eb)
    return WallaceReport(alpha, beta, s, counter, erased, erased_counter, labels_match, diff, p_a, p_b)
