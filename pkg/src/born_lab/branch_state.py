"""Sparse symbolic superpositions.

A state is a finite map from :class:`BranchLabel` to an amplitude. The formal
Hilbert space (outcomes x environment x 2**N qubits x mind slots) is never
materialized; only occupied branches are stored.

Amplitudes come in two flavours:

* ``complex`` -- the general floating-point path.
* :class:`ExactAmplitude` -- an exact rational squared magnitude plus a
  rational phase (in turns). Products stay exact, so measures computed from
  exact amplitudes are exact :class:`~fractions.Fraction` values.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache, total_ordering
from typing import Callable, Iterable, Iterator, Mapping, Optional, Union

TOLERANCE = 1e-12

ERASED = "∅"
READY = "ready"
EMPTY = "empty"
_AWARE = "aware:"

FIELDS = ("system", "env", "minds", "qubits")


class SchemaError(ValueError):
    pass


class NonUnitaryCollision(ValueError):
    """A label rewrite would merge two distinct branches."""


def aware(outcome: str) -> str:
    """Mind-slot state of a mind that recorded ``outcome``."""
    return _AWARE + outcome


def is_aware(slot: str) -> bool:
    return slot.startswith(_AWARE)


def aware_outcome(slot: str) -> Optional[str]:
    return slot[len(_AWARE):] if slot.startswith(_AWARE) else None


def _exact_sqrt(q: Fraction) -> Optional[Fraction]:
    if q < 0:
        return None
    n, d = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if n * n == q.numerator and d * d == q.denominator:
        return Fraction(n, d)
    return None


@dataclass(frozen=True)
class ExactAmplitude:
    """Amplitude sqrt(weight) * exp(2*pi*i*phase) with rational weight and phase."""

    weight: Fraction
    phase: Fraction = Fraction(0)

    def __post_init__(self):
        w = Fraction(self.weight)
        if w < 0:
            raise ValueError("squared magnitude must be non-negative")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "phase", Fraction(self.phase) % 1)

    def __complex__(self) -> complex:
        mag = math.sqrt(self.weight)
        if self.phase == 0:
            return complex(mag, 0.0)
        if self.phase == Fraction(1, 2):
            return complex(-mag, 0.0)
        return mag * cmath.exp(2j * math.pi * float(self.phase))

    def __abs__(self) -> float:
        return math.sqrt(self.weight)

    def __mul__(self, other):
        if isinstance(other, ExactAmplitude):
            return ExactAmplitude(self.weight * other.weight, self.phase + other.phase)
        return complex(self) * complex(other)

    __rmul__ = __mul__

    def conjugate(self) -> "ExactAmplitude":
        return ExactAmplitude(self.weight, -self.phase)


Amplitude = Union[complex, ExactAmplitude]


def as_amplitude(value) -> Amplitude:
    if isinstance(value, ExactAmplitude):
        return value
    z = complex(value)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ValueError(f"amplitude must be finite, got {value!r}")
    return z


def _weight(a: Amplitude):
    return a.weight if isinstance(a, ExactAmplitude) else abs(a) ** 2


def _add(amps: list) -> Amplitude:
    if len(amps) == 1:
        return amps[0]
    if all(isinstance(a, ExactAmplitude) for a in amps):
        # Stay exact when every term is real up to a common phase and has a
        # rational magnitude relative to the first term.
        base = amps[0]
        total = Fraction(0)
        for a in amps:
            ratio = _exact_sqrt(a.weight / base.weight) if base.weight else None
            dphase = (a.phase - base.phase) % 1
            if ratio is None or dphase not in (0, Fraction(1, 2)):
                break
            total += ratio if dphase == 0 else -ratio
        else:
            phase = base.phase if total >= 0 else base.phase + Fraction(1, 2)
            return ExactAmplitude(base.weight * total * total, phase)
    zs = [complex(a) for a in amps]
    return complex(math.fsum(z.real for z in zs), math.fsum(z.imag for z in zs))


@total_ordering
@dataclass(frozen=True, eq=True)
class BranchLabel:
    """Composite branch label.

    ``system`` and ``env`` are single symbols (``None`` when the field is not
    part of the state). ``minds`` holds one slot state per mind and ``qubits``
    one driving-qubit symbol per mind family.
    """

    system: Optional[str] = None
    env: Optional[str] = None
    minds: tuple = ()
    qubits: tuple = ()

    def __post_init__(self):
        if not isinstance(self.minds, tuple):
            object.__setattr__(self, "minds", tuple(self.minds))
        if not isinstance(self.qubits, tuple):
            object.__setattr__(self, "qubits", tuple(self.qubits))
        if self.minds and self.qubits and len(self.minds) != len(self.qubits):
            raise SchemaError("one qubit family per mind: minds and qubits lengths differ")
        # labels are hashed and compared constantly; compute both once
        key = (
            (self.system is not None, self.system or ""),
            (self.env is not None, self.env or ""),
            self.minds,
            self.qubits,
        )
        object.__setattr__(self, "_sort_key", key)
        object.__setattr__(self, "_hash", hash(key))

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if not isinstance(other, BranchLabel):
            return NotImplemented
        return self._hash == other._hash and self._sort_key == other._sort_key

    def _key(self):
        return self._sort_key

    def __lt__(self, other: "BranchLabel") -> bool:
        if not isinstance(other, BranchLabel):
            return NotImplemented
        return self._key() < other._key()

    @property
    def schema(self) -> tuple:
        return (self.system is not None, self.env is not None, len(self.minds), len(self.qubits))

    def __str__(self) -> str:
        parts = []
        if self.system is not None:
            parts.append(self.system)
        if self.env is not None:
            parts.append(self.env)
        if self.minds:
            parts.append(",".join(self.minds))
        if self.qubits:
            parts.append(",".join(self.qubits))
        return "|" + "; ".join(parts) + ">"


@lru_cache(maxsize=None)
def _squared_cutoff(tolerance: float) -> Fraction:
    return Fraction(tolerance) ** 2


class BranchState:
    """Immutable superposition of labeled branches.

    Entries sharing a label are merged on construction; entries with
    ``|a| < tolerance`` are pruned. Iteration follows the canonical label
    order, so two states built from the same multiset of branches compare
    and print identically.
    """

    __slots__ = ("_items", "_index", "tolerance", "schema")

    def __init__(self, branches: Union[Mapping, Iterable] = (), tolerance: float = TOLERANCE):
        pairs = branches.items() if isinstance(branches, Mapping) else branches
        grouped: dict = {}
        for label, amp in pairs:
            if not isinstance(label, BranchLabel):
                raise TypeError(f"expected BranchLabel, got {type(label).__name__}")
            grouped.setdefault(label, []).append(as_amplitude(amp))
        schemas = {label.schema for label in grouped}
        if len(schemas) > 1:
            raise SchemaError(f"mixed label schemas: {sorted(schemas)}")
        items = []
        cutoff = _squared_cutoff(tolerance)
        for label in sorted(grouped, key=BranchLabel._key):
            amp = _add(grouped[label])
            if (amp.weight >= cutoff) if isinstance(amp, ExactAmplitude) else (abs(amp) >= tolerance):
                items.append((label, amp))
        self._items = tuple(items)
        self._index = dict(items)
        self.tolerance = tolerance
        self.schema = schemas.pop() if schemas else None

    def __iter__(self) -> Iterator:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, label) -> bool:
        return label in self._index

    def __eq__(self, other) -> bool:
        if not isinstance(other, BranchState):
            return NotImplemented
        return self._items == other._items

    def __hash__(self) -> int:
        return hash(self._items)

    def __repr__(self) -> str:
        terms = " + ".join(f"({complex(a):.6g}){label}" for label, a in self._items)
        return f"BranchState({terms or '0'})"

    def items(self) -> tuple:
        return self._items

    def labels(self) -> tuple:
        return tuple(label for label, _ in self._items)

    def amplitude(self, label: BranchLabel) -> Amplitude:
        return self._index.get(label, 0j)

    @property
    def is_exact(self) -> bool:
        return all(isinstance(a, ExactAmplitude) for _, a in self._items)

    def norm_squared(self):
        return measure_of(self, lambda label: True)

    def is_normalized(self) -> bool:
        return abs(float(self.norm_squared()) - 1.0) < self.tolerance

    def map_labels(self, fn: Callable[[BranchLabel], BranchLabel]) -> "BranchState":
        return BranchState(((fn(label), a) for label, a in self._items), self.tolerance)


def _phase_factor(phase) -> Amplitude:
    if isinstance(phase, Fraction) or isinstance(phase, int):
        return ExactAmplitude(Fraction(1), Fraction(phase))
    return cmath.exp(2j * math.pi * float(phase))


@dataclass(frozen=True)
class LabelUnitary:
    """Permutation of the symbols of one label field, with optional phases.

    Symbols absent from ``mapping`` are left untouched, which plays the role of
    the identity remainder of a two-symbol swap. For the list-valued fields
    (``minds``, ``qubits``) the map acts on position ``index`` or, when
    ``index`` is None, on every position.
    """

    field: str
    mapping: Mapping
    phases: Mapping = None
    index: Optional[int] = None

    def __post_init__(self):
        if self.field not in FIELDS:
            raise ValueError(f"unknown label field {self.field!r}; expected one of {FIELDS}")
        mapping = dict(self.mapping)
        if set(mapping.values()) != set(mapping) or len(set(mapping.values())) != len(mapping):
            raise ValueError("mapping is not a bijection on its symbol set")
        object.__setattr__(self, "mapping", mapping)
        object.__setattr__(self, "phases", dict(self.phases or {}))

    @classmethod
    def swap(cls, field: str, a: str, b: str, index: Optional[int] = None) -> "LabelUnitary":
        return cls(field, {a: b, b: a} if a != b else {a: a}, index=index)

    def inverse(self) -> "LabelUnitary":
        inv = {v: k for k, v in self.mapping.items()}
        phases = {self.mapping.get(k, k): -Fraction(p) if isinstance(p, (int, Fraction)) else -p
                  for k, p in self.phases.items()}
        return LabelUnitary(self.field, inv, phases, self.index)

    def _rewrite_symbol(self, symbol):
        return self.mapping.get(symbol, symbol), self.phases.get(symbol)

    def __call__(self, label: BranchLabel):
        """Return (new label, phase factor or None)."""
        phases = []
        if self.field == "system":
            new, ph = self._rewrite_symbol(label.system)
            if ph is not None:
                phases.append(ph)
            return BranchLabel(new, label.env, label.minds, label.qubits), phases
        if self.field == "env":
            new, ph = self._rewrite_symbol(label.env)
            if ph is not None:
                phases.append(ph)
            return BranchLabel(label.system, new, label.minds, label.qubits), phases
        values = list(getattr(label, self.field))
        positions = range(len(values)) if self.index is None else [self.index]
        for i in positions:
            values[i], ph = self._rewrite_symbol(values[i])
            if ph is not None:
                phases.append(ph)
        return replace(label, **{self.field: tuple(values)}), phases


def _require_field(state: BranchState, field: str, index: Optional[int] = None):
    if state.schema is None:
        return
    has_system, has_env, n_minds, n_qubits = state.schema
    present = {"system": has_system, "env": has_env, "minds": n_minds > 0, "qubits": n_qubits > 0}
    if not present[field]:
        raise SchemaError(f"state has no {field!r} field")
    if index is not None:
        size = n_minds if field == "minds" else n_qubits
        if not 0 <= index < size:
            raise SchemaError(f"{field} index {index} out of range for {size} slots")


def apply(u: LabelUnitary, s: BranchState) -> BranchState:
    """Apply a label permutation to every branch of ``s``."""
    _require_field(s, u.field, u.index)
    out = []
    for label, amp in s:
        new, phases = u(label)
        for ph in phases:
            amp = amp * _phase_factor(ph)
        out.append((new, amp))
    return BranchState(out, s.tolerance)


def tensor(a: BranchState, b: BranchState) -> BranchState:
    """Product state.

    ``system`` and ``env`` may be supplied by at most one factor. Mind slots
    and qubit families concatenate, so tensoring single-mind states builds a
    multi-mind register.
    """
    if a.schema is not None and b.schema is not None:
        if (a.schema[0] and b.schema[0]) or (a.schema[1] and b.schema[1]):
            raise SchemaError("incompatible label schemas")
    out = []
    for la, xa in a:
        for lb, xb in b:
            label = BranchLabel(
                system=la.system if la.system is not None else lb.system,
                env=la.env if la.env is not None else lb.env,
                minds=la.minds + lb.minds,
                qubits=la.qubits + lb.qubits,
            )
            out.append((label, xa * xb))
    return BranchState(out, min(a.tolerance, b.tolerance))


def erase(s: BranchState, targets: Iterable[str]) -> BranchState:
    """Send every system symbol in ``targets`` to the ground symbol ``ERASED``.

    The rewrite is only unitary while the remaining fields keep branches
    apart; a merge raises :class:`NonUnitaryCollision`.
    """
    targets = set(targets)
    _require_field(s, "system")
    out = {}
    for label, amp in s:
        new = replace(label, system=ERASED) if label.system in targets else label
        if new in out:
            raise NonUnitaryCollision(f"non-unitary collision: erasure merges branches onto {new}")
        out[new] = amp
    return BranchState(out, s.tolerance)


def permute_minds(s: BranchState, perm) -> BranchState:
    """Reorder mind slots (and their qubit families): new slot j is old slot perm[j]."""
    perm = tuple(perm)
    if sorted(perm) != list(range(len(perm))):
        raise ValueError("perm must be a permutation of range(N)")

    def relabel(label: BranchLabel) -> BranchLabel:
        if len(label.minds) != len(perm):
            raise SchemaError("permutation length does not match mind count")
        qubits = tuple(label.qubits[i] for i in perm) if label.qubits else ()
        return replace(label, minds=tuple(label.minds[i] for i in perm), qubits=qubits)

    return s.map_labels(relabel)


def _check_schema(a: BranchState, b: BranchState):
    if a.schema is not None and b.schema is not None and a.schema != b.schema:
        raise SchemaError(f"schema mismatch: {a.schema} vs {b.schema}")


def inner_product(a: BranchState, b: BranchState) -> complex:
    """<a|b> = sum over shared labels of conj(a) * b."""
    _check_schema(a, b)
    small, large, flip = (a, b, False) if len(a) <= len(b) else (b, a, True)
    terms = []
    for label, x in small:
        if label in large:
            y = large.amplitude(label)
            terms.append(complex(y).conjugate() * complex(x) if flip else complex(x).conjugate() * complex(y))
    return complex(math.fsum(t.real for t in terms), math.fsum(t.imag for t in terms))


def fidelity(a: BranchState, b: BranchState) -> float:
    return abs(inner_product(a, b)) ** 2


def measure_of(s: BranchState, predicate: Callable[[BranchLabel], bool]):
    """Total squared amplitude of branches satisfying ``predicate``.

    Exact (Fraction) when every selected amplitude is exact.
    """
    selected = [a for label, a in s if predicate(label)]
    if all(isinstance(a, ExactAmplitude) for a in selected):
        return sum((a.weight for a in selected), Fraction(0))
    return math.fsum(float(_weight(a)) for a in selected)


def max_amplitude_difference(a: BranchState, b: BranchState) -> float:
    """Largest |a(l) - b(l)| over the union of labels."""
    labels = set(a.labels()) | set(b.labels())
    return max((abs(complex(a.amplitude(l)) - complex(b.amplitude(l))) for l in labels), default=0.0)
