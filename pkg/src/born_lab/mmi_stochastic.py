"""Stochastic many-minds model: each mind independently picks a branch.

Every mind lands in branch ``a`` with probability ``w_a``; the counts then
follow a multinomial law. This module samples that process mind by mind and
provides the exact distributions it is checked against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterator, Sequence

import numpy as np

from .frequency import SystemSpec, Weight

TRIALS_PER_BLOCK = 1024
MODE_ENUMERATION_CAP = 10**6

# spawn-key domains, so different consumers of one master seed never share a stream
STOCHASTIC_DOMAIN = 0
GAS_DOMAIN = 1


@dataclass(frozen=True)
class SeededRng:
    """Master seed from which independent numbered streams are derived.

    ``stream(*key)`` hashes ``(master, key)`` through numpy's SeedSequence, so
    the same key always yields the same generator regardless of call order.
    """

    master: int

    def __post_init__(self):
        if not 0 <= int(self.master) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def stream(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(int(self.master), spawn_key=tuple(key)))


@dataclass(frozen=True)
class MindTally:
    outcomes: tuple
    counts: tuple

    def __post_init__(self):
        if len(self.outcomes) != len(self.counts):
            raise ValueError("outcomes and counts differ in length")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def n(self) -> int:
        return sum(self.counts)

    def count(self, outcome) -> int:
        return self.counts[self.outcomes.index(outcome)]

    def fraction(self, outcome) -> Fraction:
        return Fraction(self.count(outcome), self.n)


def _cumulative(spec: SystemSpec) -> np.ndarray:
    cum = np.cumsum([float(w) for w in spec.weights])
    cum[-1] = 1.0
    return cum


def _assign(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    # outcome a is chosen when cum[a-1] <= u < cum[a]; zero-weight outcomes are never hit
    return np.searchsorted(cum, u, side="right")


def sample_minds(spec: SystemSpec, n: int, rng: SeededRng, trial: int = 0) -> MindTally:
    """One trial: draw an outcome for each of ``n`` minds and count them."""
    if n < 1:
        raise ValueError("N must be >= 1")
    u = rng.stream(STOCHASTIC_DOMAIN, 0, trial).random(n)
    idx = _assign(_cumulative(spec), u)
    return MindTally(spec.outcomes, tuple(np.bincount(idx, minlength=len(spec)).tolist()))


def _block(spec: SystemSpec, n: int, rows: int, rng: SeededRng, block: int) -> np.ndarray:
    u = rng.stream(STOCHASTIC_DOMAIN, 1, block).random((rows, n))
    return _assign(_cumulative(spec), u)


def sample_assignments(spec: SystemSpec, n: int, trials: int, rng: SeededRng) -> np.ndarray:
    """Per-mind outcome indices, shape ``(trials, n)``.

    Trials are generated in fixed-size blocks, each from its own derived
    stream, so the result does not depend on how blocks are scheduled.
    """
    out = np.empty((trials, n), dtype=np.intp)
    for b, start in enumerate(range(0, trials, TRIALS_PER_BLOCK)):
        rows = min(TRIALS_PER_BLOCK, trials - start)
        out[start:start + rows] = _block(spec, n, rows, rng, b)
    return out


def sample_tallies(spec: SystemSpec, n: int, trials: int, rng: SeededRng) -> np.ndarray:
    """Tally counts, shape ``(trials, K)``; same draws as :func:`sample_assignments`."""
    k = len(spec)
    out = np.empty((trials, k), dtype=np.int64)
    for b, start in enumerate(range(0, trials, TRIALS_PER_BLOCK)):
        rows = min(TRIALS_PER_BLOCK, trials - start)
        idx = _block(spec, n, rows, rng, b)
        for a in range(k):
            out[start:start + rows, a] = (idx == a).sum(axis=1)
    return out


def _counts(tally) -> tuple:
    return tally.counts if isinstance(tally, MindTally) else tuple(int(c) for c in tally)


def multinomial_coefficient(counts: Sequence[int]) -> int:
    out, total = 1, 0
    for c in counts:
        total += c
        out *= math.comb(total, c)
    return out


def tally_pmf(spec: SystemSpec, n: int, tally) -> Weight:
    """Multinomial probability N!/prod N_a! * prod w_a**N_a (unordered tally)."""
    counts = _counts(tally)
    if len(counts) != len(spec) or sum(counts) != n or any(c < 0 for c in counts):
        raise ValueError(f"tally {counts} inconsistent with N={n} and {len(spec)} outcomes")
    coeff = multinomial_coefficient(counts)
    if spec.exact:
        return coeff * math.prod((w**c for w, c in zip(spec.weights, counts)), start=Fraction(1))
    log_p = 0.0
    for w, c in zip(spec.weights, counts):
        if c:
            if w == 0:
                return 0.0
            log_p += c * math.log(w)
    return math.exp(math.log(coeff) + log_p)


def iter_tallies(k: int, n: int) -> Iterator[tuple]:
    """All count vectors of length ``k`` summing to ``n``, lexicographically ascending."""
    # stars and bars; bar positions b_i = c_0 + ... + c_i + i are lex-monotone in the counts
    for bars in combinations(range(n + k - 1), k - 1):
        prev, counts = -1, []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(n + k - 2 - prev)
        yield tuple(counts)


def _n_tallies(k: int, n: int) -> int:
    return math.comb(n + k - 1, k - 1)


def _log_pmf(spec: SystemSpec, counts) -> float:
    out = math.lgamma(sum(counts) + 1)
    for w, c in zip(spec.weights, counts):
        out -= math.lgamma(c + 1)
        if c:
            out += c * math.log(float(w)) if w > 0 else -math.inf
    return out


def _greedy_mode(spec: SystemSpec, n: int) -> tuple:
    # Finucan's procedure: start at floor(N w) and add the remaining minds one at a
    # time where the pmf ratio w_a / (n_a + 1) is largest.
    w = [float(x) for x in spec.weights]
    counts = [math.floor(n * x) for x in w]
    while sum(counts) < n:
        gains = [(x / (c + 1) if x > 0 else -1.0, -i) for i, (x, c) in enumerate(zip(w, counts))]
        _, neg_i = max(gains)
        counts[-neg_i] += 1
    return tuple(counts)


def mode_tally(spec: SystemSpec, n: int) -> MindTally:
    """A most likely tally; ties go to the lexicographically smallest counts."""
    if n < 1:
        raise ValueError("N must be >= 1")
    k = len(spec)
    if _n_tallies(k, n) > MODE_ENUMERATION_CAP:
        return MindTally(spec.outcomes, _greedy_mode(spec, n))
    best, best_p = None, None
    for counts in iter_tallies(k, n):
        if spec.exact:
            p = tally_pmf(spec, n, counts)
            better = best_p is None or p > best_p
        else:
            p = _log_pmf(spec, counts)
            better = best_p is None or p > best_p + 1e-12 * max(1.0, abs(best_p))
        if better:
            best, best_p = counts, p
    return MindTally(spec.outcomes, best)


def hulk_probability(spec: SystemSpec, n: int, outcome) -> Weight:
    """Probability that branch ``outcome`` receives no mind at all: (1 - w)**N."""
    w = spec.weight(outcome)
    return (1 - w) ** n


def relative_fluctuation(spec: SystemSpec, n: int, outcome) -> float:
    """std(N_a) / E[N_a] = sqrt((1 - w) / w) / sqrt(N)."""
    w = spec.weight(outcome)
    if w == 0:
        raise ValueError(f"zero weight for outcome {outcome!r}")
    return math.sqrt((1 - float(w)) / float(w)) / math.sqrt(n)


def history_support_bound(m: int, spec: SystemSpec, h: Sequence) -> int:
    """Smallest mind count N for which the expected number of minds that
    followed history ``h`` (N * P_h) reaches one."""
    if m < 1:
        raise ValueError("M must be >= 1")
    if len(h) != m:
        raise ValueError(f"history length {len(h)} does not match M={m}")
    if spec.exact:
        p = math.prod((spec.weight(a) for a in h), start=Fraction(1))
        if p == 0:
            raise ValueError("impossible history")
        inv = 1 / p
        return -(-inv.numerator // inv.denominator)
    p = math.prod(float(spec.weight(a)) for a in h)
    if p == 0:
        raise ValueError("impossible history")
    return math.ceil(1 / p)
