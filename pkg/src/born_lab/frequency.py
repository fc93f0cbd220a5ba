"""Long-run product states, histories and frequency operators.

For ``N`` repetitions of a measurement with outcome weights ``w`` the product
state decomposes into histories ``h``; each history carries the measure
``prod_a w_a**N_a(h)`` and is an eigenvector of the averaged projector
``Q_a`` with eigenvalue ``N_a(h)/N``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .branch_state import BranchLabel, BranchState, ExactAmplitude

Weight = Union[Fraction, float]
History = tuple

ENUMERATION_CAP = 2**20
WEIGHT_TOLERANCE = 1e-12
# float deviations within this of epsilon count as on the boundary (not maverick)
BOUNDARY_SLACK = 1e-12


def default_outcomes(k: int) -> tuple:
    if k == 2:
        return ("up", "down")
    return tuple(f"o{i}" for i in range(1, k + 1))


def parse_weight(text) -> Weight:
    """``"p/q"`` and integers parse exactly; decimals take the float path."""
    if isinstance(text, (Fraction, int)):
        return Fraction(text)
    if isinstance(text, float):
        return text
    s = str(text).strip()
    if not s:
        raise ValueError("empty weight")
    if "/" in s:
        num, den = s.split("/", 1)
        return Fraction(int(num), int(den))
    try:
        return Fraction(int(s))
    except ValueError:
        return float(s)


@dataclass(frozen=True)
class SystemSpec:
    """Outcome alphabet with Born weights and optional phases (in turns)."""

    outcomes: tuple
    weights: tuple
    phases: Optional[tuple] = None

    def __post_init__(self):
        outcomes = tuple(self.outcomes)
        weights = tuple(parse_weight(w) for w in self.weights)
        if len(outcomes) != len(weights):
            raise ValueError("outcomes and weights differ in length")
        if not outcomes:
            raise ValueError("empty outcome alphabet")
        if len(set(outcomes)) != len(outcomes):
            raise ValueError("duplicate outcome symbols")
        if any(w < 0 for w in weights):
            raise ValueError("weights must be non-negative")
        if all(isinstance(w, Fraction) for w in weights):
            if sum(weights) != 1:
                raise ValueError("weights must sum to 1")
        else:
            weights = tuple(float(w) for w in weights)
            if not all(math.isfinite(w) for w in weights) or abs(math.fsum(weights) - 1.0) > WEIGHT_TOLERANCE:
                raise ValueError("weights must sum to 1")
        if self.phases is not None and len(self.phases) != len(outcomes):
            raise ValueError("phases and outcomes differ in length")
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_weights(cls, weights: Sequence, outcomes: Optional[Sequence] = None) -> "SystemSpec":
        weights = [parse_weight(w) for w in weights]
        return cls(tuple(outcomes) if outcomes else default_outcomes(len(weights)), tuple(weights))

    @property
    def exact(self) -> bool:
        return all(isinstance(w, Fraction) for w in self.weights)

    def __len__(self) -> int:
        return len(self.outcomes)

    def index(self, outcome) -> int:
        try:
            return self.outcomes.index(outcome)
        except ValueError:
            raise ValueError(f"unknown outcome {outcome!r}") from None

    def weight(self, outcome) -> Weight:
        return self.weights[self.index(outcome)]

    def amplitude(self, outcome):
        i = self.index(outcome)
        phase = self.phases[i] if self.phases is not None else 0
        w = self.weights[i]
        if isinstance(w, Fraction) and isinstance(phase, (int, Fraction)):
            return ExactAmplitude(w, Fraction(phase))
        return math.sqrt(w) * complex(math.cos(2 * math.pi * phase), math.sin(2 * math.pi * phase))

    def state(self) -> BranchState:
        """sum_a amp_a |a> as a system-only branch state."""
        return BranchState((BranchLabel(system=a), self.amplitude(a)) for a in self.outcomes)

    def common_denominator(self) -> int:
        if not self.exact:
            raise ValueError("float weights have no common denominator")
        return math.lcm(*(w.denominator for w in self.weights))


@dataclass(frozen=True)
class HistoryStats:
    counts: dict
    measure: Weight
    n: int = field(default=0)

    def frequency(self, outcome) -> Fraction:
        return Fraction(self.counts.get(outcome, 0), self.n)


def _check_history(spec: SystemSpec, h: Sequence):
    known = set(spec.outcomes)
    for sym in h:
        if sym not in known:
            raise ValueError(f"unknown outcome {sym!r} in history")


def history_state(spec: SystemSpec, h: Sequence) -> HistoryStats:
    if len(h) < 1:
        raise ValueError("history must have at least one repetition")
    _check_history(spec, h)
    counts = {a: 0 for a in spec.outcomes}
    for sym in h:
        counts[sym] += 1
    if spec.exact:
        measure = math.prod((spec.weight(a) ** n for a, n in counts.items()), start=Fraction(1))
    else:
        measure = math.prod(spec.weight(a) ** n for a, n in counts.items())
    return HistoryStats(counts, measure, len(h))


def frequency_eigenvalue(h: Sequence, outcome) -> Fraction:
    """Eigenvalue N_a(h)/N of the frequency operator on history ``h``."""
    if len(h) == 0:
        raise ValueError("empty history")
    return Fraction(sum(1 for sym in h if sym == outcome), len(h))


def iter_histories(spec: SystemSpec, n: int) -> Iterator[tuple]:
    """All outcome sequences of length ``n`` in lexicographic alphabet order."""
    return product(spec.outcomes, repeat=n)


def _enumeration_size(spec: SystemSpec, n: int) -> int:
    return len(spec) ** n


def _outer(vec: np.ndarray, n: int, ufunc) -> np.ndarray:
    # ufunc.outer over n copies, flattened: entry r belongs to the r-th
    # history in lexicographic order (last position fastest)
    out = vec
    for _ in range(n - 1):
        out = ufunc.outer(out, vec).ravel()
    return out


def _enumerate(spec: SystemSpec, n: int):
    """(counts[K, H], measures[H]) over the full history space.

    Exact specs return integer measure numerators over ``D**n`` with ``D`` the
    common denominator; float specs return float measures.
    """
    k = len(spec)
    eye = np.eye(k, dtype=np.int64)
    counts = np.stack([_outer(eye[a], n, np.add) for a in range(k)])
    if spec.exact:
        d = spec.common_denominator()
        dtype = np.int64 if n * d**n < 2**62 else object
        nums = np.array([int(w * d) for w in spec.weights], dtype=dtype)
        return counts, _outer(nums, n, np.multiply), d**n
    return counts, _outer(np.array(spec.weights, dtype=float), n, np.multiply), None


def frequency_expectations(spec: SystemSpec, n: int, closed_form: bool = False) -> dict:
    """<Psi_N|Q_a|Psi_N> for every outcome, by summing over all histories.

    Above the enumeration cap the closed form (the weight itself, i.e. the
    binomial mean of N_a/N) is returned only when ``closed_form`` is set.
    """
    if n < 1:
        raise ValueError("N must be >= 1")
    if _enumeration_size(spec, n) > ENUMERATION_CAP:
        if not closed_form:
            raise ValueError(
                f"{len(spec)}**{n} histories exceed the enumeration cap {ENUMERATION_CAP}; "
                "pass closed_form=True"
            )
        return dict(zip(spec.outcomes, spec.weights))
    counts, measures, denom = _enumerate(spec, n)
    out = {}
    for a, row in zip(spec.outcomes, counts):
        if denom is not None:
            total = int((row.astype(measures.dtype) * measures).sum())
            out[a] = Fraction(total, n * denom)
        else:
            out[a] = math.fsum((row * measures).tolist()) / n
    return out


def frequency_expectation(spec: SystemSpec, n: int, outcome, closed_form: bool = False) -> Weight:
    spec.index(outcome)
    return frequency_expectations(spec, n, closed_form)[outcome]


def _as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


def _outside(freq: np.ndarray, w: float, eps: float) -> np.ndarray:
    return np.abs(freq - w) > eps + BOUNDARY_SLACK * max(1.0, abs(eps))


def _binomial_tail(n: int, w: Weight, eps, exact: bool):
    if exact:
        eps = _as_fraction(eps)
        q = 1 - w
        return sum(
            (math.comb(n, k) * w**k * q ** (n - k) for k in range(n + 1) if abs(Fraction(k, n) - w) > eps),
            Fraction(0),
        )
    ks = np.arange(n + 1)
    pmf = stats.binom.pmf(ks, n, w)
    return math.fsum(pmf[_outside(ks / n, w, eps)].tolist())


def maverick_measure(spec: SystemSpec, n: int, outcome, eps, method: str = "auto") -> Weight:
    """Total measure of histories whose frequency of ``outcome`` misses its
    weight by more than ``eps``.

    ``method`` is ``"enumerate"``, ``"closed"`` (binomial tail of the
    marginal count) or ``"auto"`` (enumerate under the cap).
    """
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    if n < 1:
        raise ValueError("N must be >= 1")
    a = spec.index(outcome)
    w = spec.weights[a]
    if method == "auto":
        method = "enumerate" if _enumeration_size(spec, n) <= ENUMERATION_CAP else "closed"
    if method == "closed":
        return _binomial_tail(n, w, eps, spec.exact)
    if method != "enumerate":
        raise ValueError(f"unknown method {method!r}")
    if _enumeration_size(spec, n) > ENUMERATION_CAP:
        raise ValueError("enumeration cap exceeded; use method='closed'")
    counts, measures, denom = _enumerate(spec, n)
    row = counts[a]
    if denom is not None:
        eps_q = _as_fraction(eps)
        bad = [k for k in range(n + 1) if abs(Fraction(k, n) - w) > eps_q]
        mask = np.isin(row, bad)
        return Fraction(int(measures[mask].sum()) if mask.any() else 0, denom)
    mask = _outside(row / n, w, eps)
    return math.fsum(measures[mask].tolist())


def typicality_error(spec: SystemSpec, n: int, outcome) -> float:
    """Expected relative spread of N_a for a typical history: sqrt((1-w)/w) / sqrt(N)."""
    w = spec.weight(outcome)
    if w == 0:
        raise ValueError(f"degenerate outcome {outcome!r}: zero weight")
    return math.sqrt((1 - float(w)) / float(w)) / math.sqrt(n)


def value_function(payoffs: Sequence, spec: SystemSpec) -> Weight:
    """Expected payoff sum_a x_a w_a."""
    if len(payoffs) != len(spec):
        raise ValueError(f"expected {len(spec)} payoffs, got {len(payoffs)}")
    if spec.exact and all(isinstance(x, (int, Fraction)) for x in payoffs):
        return sum((Fraction(x) * w for x, w in zip(payoffs, spec.weights)), Fraction(0))
    return math.fsum(float(x) * float(w) for x, w in zip(payoffs, spec.weights))
