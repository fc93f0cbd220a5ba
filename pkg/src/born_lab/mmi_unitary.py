"""Deterministic, unitary many-minds model driven by a qubit gas.

Each mind i carries a driving qubit (a T-level system). The measurement
interaction is a fixed unitary: mind i becomes aware of outcome b in branch b
exactly when its qubit reads b, and is left empty in every other branch. All
randomness sits in the initial qubit values, drawn i.i.d. uniform from a
seeded source (molecular chaos); given the gas, evolution is a pure function.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from fractions import Fraction
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .branch_state import (
    EMPTY,
    READY,
    BranchLabel,
    BranchState,
    ExactAmplitude,
    aware,
)
from .envariance import FineGrainMap, fine_grain_map
from .frequency import SystemSpec, default_outcomes
from .mmi_stochastic import GAS_DOMAIN, SeededRng

EXACT_GAS_CAP = 2**20
MODES = ("exact", "monte-carlo")
SMALL_REGISTER = 64


def qubit_alphabet(t: int) -> tuple:
    if t == 2:
        return ("spade", "heart")
    return tuple(f"s{k}" for k in range(1, t + 1))


def env_of(outcome: str) -> str:
    return f"E_{outcome}"


@dataclass(frozen=True)
class QubitGas:
    """Qubit values ``values[i, k]`` (symbol indices) for mind family i, repetition k."""

    t: int
    values: np.ndarray
    seed: int

    @property
    def n_minds(self) -> int:
        return self.values.shape[0]

    @property
    def repetitions(self) -> int:
        return self.values.shape[1]

    @property
    def symbols(self) -> tuple:
        return qubit_alphabet(self.t)

    def column(self, k: int) -> np.ndarray:
        return self.values[:, k]

    def symbol_frequencies(self, family: Optional[int] = None) -> np.ndarray:
        """Relative frequency of each symbol, for one family or pooled."""
        data = self.values if family is None else self.values[family]
        return np.bincount(data.ravel(), minlength=self.t) / data.size


def gas_column(seed: int, t: int, n: int, k: int) -> np.ndarray:
    """Qubits met by the N minds in repetition k; a pure function of (seed, k)."""
    return SeededRng(seed).stream(GAS_DOMAIN, k).integers(0, t, size=n, dtype=np.int16)


def sample_gas(t: int, n: int, m: int, seed: int) -> QubitGas:
    if t < 2:
        raise ValueError("T must be >= 2")
    if n < 1 or m < 1:
        raise ValueError("N and M must be >= 1")
    values = np.column_stack([gas_column(seed, t, n, k) for k in range(m)])
    return QubitGas(t, values, seed)


def _symbol_indices(qubits, symbols: Sequence[str]) -> np.ndarray:
    if isinstance(qubits, np.ndarray) and qubits.dtype.kind in "iu":
        idx = qubits.astype(np.int64)
    else:
        lookup = {s: i for i, s in enumerate(symbols)}
        try:
            idx = np.array([lookup[q] if isinstance(q, str) else int(q) for q in qubits], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"qubit symbol {exc.args[0]!r} not in alphabet {symbols}") from None
    if idx.size and (idx.min() < 0 or idx.max() >= len(symbols)):
        raise ValueError(f"qubit index out of range for T={len(symbols)}")
    return idx


def initial_state(qubits, t: int = 2, system: str = "Psi0") -> BranchState:
    """|Psi_0> |E_0, ready...> |qubits> before the measurement interaction."""
    symbols = qubit_alphabet(t)
    idx = _symbol_indices(qubits, symbols)
    label = BranchLabel(system=system, env="E_0", minds=(READY,) * len(idx),
                        qubits=tuple(symbols[i] for i in idx))
    return BranchState({label: ExactAmplitude(Fraction(1))})


@lru_cache(maxsize=None)
def _branch_amplitude(t: int) -> ExactAmplitude:
    return ExactAmplitude(Fraction(1, t))


def evolve_many_minds(t: int, qubits, outcomes: Optional[Sequence[str]] = None) -> BranchState:
    """Post-measurement state for N minds with the given driving qubits.

    T branches of amplitude sqrt(1/T); in branch b mind i is aware(b) iff its
    qubit is symbol b, otherwise empty. ``qubits`` may be symbols or indices.
    """
    outcomes = tuple(outcomes) if outcomes is not None else default_outcomes(t)
    if len(outcomes) != t:
        raise ValueError(f"need {t} branch outcomes, got {len(outcomes)}")
    symbols = qubit_alphabet(t)
    idx = _symbol_indices(qubits, symbols)
    if idx.size < 1:
        raise ValueError("need at least one mind")
    amp = _branch_amplitude(t)
    branches = []
    if idx.size <= SMALL_REGISTER:
        # numpy call overhead dominates for a handful of minds
        picks = idx.tolist()
        qubit_labels = tuple(symbols[i] for i in picks)
        for b, outcome in enumerate(outcomes):
            slot = aware(outcome)
            minds = tuple(slot if i == b else EMPTY for i in picks)
            branches.append((BranchLabel(outcome, env_of(outcome), minds, qubit_labels), amp))
        return BranchState(branches)
    qubit_labels = tuple(np.array(symbols, dtype=object)[idx])
    for b, outcome in enumerate(outcomes):
        slots = np.array([EMPTY, aware(outcome)], dtype=object)
        minds = tuple(slots[(idx == b).astype(np.int8)])
        branches.append((BranchLabel(system=outcome, env=env_of(outcome), minds=minds, qubits=qubit_labels), amp))
    return BranchState(branches)


def evolve_t_level(t: int, qubit, outcomes: Optional[Sequence[str]] = None) -> BranchState:
    """Single mind driven by a T-level qubit: aware only in the branch its qubit selects."""
    return evolve_many_minds(t, [qubit], outcomes)


def evolve_single_mind(qubit, spec: Optional[SystemSpec] = None) -> BranchState:
    """Symmetric two-outcome measurement with one mind and a spade/heart qubit."""
    outcomes = None
    if spec is not None:
        if len(spec) != 2 or any(w != Fraction(1, 2) and w != 0.5 for w in spec.weights):
            raise ValueError("single-mind evolution needs a symmetric two-outcome spec")
        outcomes = spec.outcomes
    if isinstance(qubit, str) and qubit not in qubit_alphabet(2):
        raise ValueError(f"wrong alphabet: {qubit!r} is not one of {qubit_alphabet(2)}")
    return evolve_many_minds(2, [qubit], outcomes)


def branch_tallies(state: BranchState) -> dict:
    """Number of aware minds in each branch, keyed by the branch's system symbol."""
    return {label.system: label.minds.count(aware(label.system)) for label, _ in state}


def check_mind_partition(state: BranchState) -> None:
    """Raise unless every mind is aware in exactly one branch and empty elsewhere."""
    labels = state.labels()
    if labels and len(labels[0].minds) <= SMALL_REGISTER:
        totals = [0] * len(labels[0].minds)
        for label in labels:
            slot = aware(label.system)
            for i, m in enumerate(label.minds):
                if m == slot:
                    totals[i] += 1
                elif m != EMPTY:
                    raise AssertionError(f"unexpected slot state in branch {label.system}")
        if any(c != 1 for c in totals):
            raise AssertionError("a mind is not aware in exactly one branch")
        return
    totals = None
    for label, _ in state:
        minds = np.array(label.minds, dtype=object)
        is_aware = minds == aware(label.system)
        if not np.all(is_aware | (minds == EMPTY)):
            raise AssertionError(f"unexpected slot state in branch {label.system}")
        totals = is_aware.astype(np.int64) if totals is None else totals + is_aware
    if totals is None or not np.all(totals == 1):
        raise AssertionError("a mind is not aware in exactly one branch")


@dataclass(frozen=True)
class ExperimentScenario:
    spec: SystemSpec
    n: int
    m: int = 1
    t: Optional[int] = None
    seed: int = 0
    mode: str = "monte-carlo"

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("N and M must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        SeededRng(self.seed)
        self.grain()

    def grain(self) -> FineGrainMap:
        return fine_grain_map(self.spec, self.t)

    @property
    def levels(self) -> int:
        return self.grain().t


@dataclass
class ConvergenceReport:
    scenario: ExperimentScenario
    fine_map: FineGrainMap
    fine_tallies: np.ndarray  # (repetitions, T)
    tallies: np.ndarray  # (repetitions, K), coarse
    hulk_counts: dict = field(default_factory=dict)
    fine_hulk_events: int = 0

    @property
    def outcomes(self) -> tuple:
        return self.scenario.spec.outcomes

    @property
    def repetitions(self) -> int:
        return self.tallies.shape[0]

    @property
    def n(self) -> int:
        return self.scenario.n

    def fractions(self) -> np.ndarray:
        return self.tallies / self.n

    def mean_fractions(self) -> dict:
        return dict(zip(self.outcomes, self.fractions().mean(axis=0).tolist()))

    def theoretical(self) -> dict:
        return {a: Fraction(len(fs), self.fine_map.t) for a, fs in self.fine_map.groups}

    def predicted_fluctuation(self) -> dict:
        """(1/sqrt N) sqrt((1-P)/P) for each outcome with P > 0."""
        return {a: math.sqrt((1 - float(p)) / float(p)) / math.sqrt(self.n)
                for a, p in self.theoretical().items() if p > 0}

    def observed_fluctuation(self) -> dict:
        """std(N_a) / mean(N_a) across repetitions."""
        out = {}
        for j, a in enumerate(self.outcomes):
            col = self.tallies[:, j].astype(float)
            if col.mean() > 0 and self.repetitions > 1:
                out[a] = float(col.std(ddof=1) / col.mean())
        return out

    @property
    def hulk_events(self) -> int:
        """Repetitions in which some existing coarse branch held no aware mind."""
        existing = [j for j, a in enumerate(self.outcomes) if self.fine_map.group(a)]
        if not existing:
            return 0
        return int(np.any(self.tallies[:, existing] == 0, axis=1).sum())


def _coarse(fine: np.ndarray, fmap: FineGrainMap) -> np.ndarray:
    cols, start = [], 0
    for size in fmap.sizes:
        cols.append(fine[:, start:start + size].sum(axis=1))
        start += size
    return np.stack(cols, axis=1)


def _run_column(col: np.ndarray, fmap: FineGrainMap, fine: Optional[tuple] = None) -> list:
    fine = fine if fine is not None else fmap.fine_outcomes
    state = evolve_many_minds(fmap.t, col, fine)
    check_mind_partition(state)
    counts = branch_tallies(state)
    return [counts[f] for f in fine]


def _workers(requested: Optional[int]) -> int:
    if requested is None:
        requested = int(os.environ.get("BORN_LAB_THREADS", "1") or 1)
    return requested if requested > 0 else (os.cpu_count() or 1)


def run_experiment(sc: ExperimentScenario, workers: Optional[int] = None) -> ConvergenceReport:
    """Evolve every repetition and tally aware minds per coarse outcome.

    Monte-Carlo mode takes gas column k from the seeded source for each of M
    repetitions. Exact mode evolves every one of the T**N gas assignments
    once, so averages over its rows are exact ensemble averages.
    """
    fmap = sc.grain()
    t = fmap.t
    if sc.mode == "exact":
        if t**sc.n > EXACT_GAS_CAP:
            raise ValueError(f"T**N = {t}**{sc.n} exceeds the exact-enumeration cap {EXACT_GAS_CAP}")
        cols = (np.array(a, dtype=np.int16) for a in product(range(t), repeat=sc.n))
        names = fmap.fine_outcomes
        fine = np.array([_run_column(c, fmap, names) for c in cols], dtype=np.int64)
    else:
        def job(k):
            return _run_column(gas_column(sc.seed, t, sc.n, k), fmap)

        n_workers = _workers(workers)
        if n_workers == 1:
            rows = [job(k) for k in range(sc.m)]
        else:
            with ThreadPoolExecutor(n_workers) as pool:
                rows = list(pool.map(job, range(sc.m)))
        fine = np.array(rows, dtype=np.int64)
    coarse = _coarse(fine, fmap)
    hulks = {a: int((coarse[:, j] == 0).sum()) if fmap.group(a) else 0
             for j, a in enumerate(sc.spec.outcomes)}
    return ConvergenceReport(sc, fmap, fine, coarse, hulks, int(np.any(fine == 0, axis=1).sum()))


def exact_tally_distribution(sc: ExperimentScenario) -> dict:
    """Exact law of the coarse tally over all equally likely gas assignments."""
    report = run_experiment(ExperimentScenario(sc.spec, sc.n, 1, sc.t, sc.seed, "exact"))
    total = report.repetitions
    dist: dict = {}
    for row in report.tallies.tolist():
        dist[tuple(row)] = dist.get(tuple(row), 0) + 1
    return {k: Fraction(v, total) for k, v in sorted(dist.items())}


@dataclass(frozen=True)
class MindProbability:
    theoretical: Fraction
    empirical: float


def mind_probability_table(sc: ExperimentScenario, report: Optional[ConvergenceReport] = None) -> dict:
    """Probability that a given mind records each outcome.

    Theoretical: |group_a| / T. Empirical: relative frequency of the gas
    symbols that route a mind into group a, pooled over minds and repetitions.
    """
    report = report if report is not None else run_experiment(sc)
    pooled = report.fine_tallies.sum(axis=0) / (report.n * report.repetitions)
    out, start = {}, 0
    for (a, fs), p in zip(report.fine_map.groups, report.theoretical().values()):
        out[a] = MindProbability(p, float(pooled[start:start + len(fs)].sum()))
        start += len(fs)
    return out


def joint_symbol_counts(gas: QubitGas, i: int, j: int) -> np.ndarray:
    """T x T contingency table of (qubit of mind i, qubit of mind j) over repetitions."""
    table = np.zeros((gas.t, gas.t), dtype=np.int64)
    np.add.at(table, (gas.values[i], gas.values[j]), 1)
    return table
