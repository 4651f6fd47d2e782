"""Value model: scalars, buffers with undefined cells, lazy MDA views, combine operators.

Dimensions are numbered from 1 throughout the package, so ``concat(a, b, 2)``
joins two matrices column-wise.  Index sets are normally half-open
:class:`IndexRange` values; :class:`IndexSet` only appears when two
non-adjacent ranges are joined, which happens inside re-composition when
outer partitioning layers are combined before inner ones.
"""

from __future__ import annotations

import enum
import itertools
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, Union

import numpy as np

from .errors import (
    DimNotCollapsed,
    MixedVariantError,
    NonMatchingRanges,
    OverlappingDimRanges,
    ParseError,
    RangeMismatch,
    RangesNotAPartition,
    RangesNotOrdered,
    UndefinedCellRead,
)

ScalarValue = Union[int, float, tuple]

_I64_MOD = 1 << 64
_I64_HALF = 1 << 63


class ElemType(str, enum.Enum):
    INT64 = "int64"
    FLOAT64 = "float64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)

    @property
    def c_type(self) -> str:
        return "int64_t" if self is ElemType.INT64 else "double"

    @classmethod
    def parse(cls, text: str) -> "ElemType":
        key = str(text).strip().lower()
        aliases = {"int": "int64", "i64": "int64", "long": "int64", "float": "float64",
                   "double": "float64", "f64": "float64"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ParseError(f"unknown element type {text!r}") from None


def wrap_i64(x: int) -> int:
    """Two's-complement wrap of a Python int to the signed 64-bit range."""
    x = (int(x) + _I64_HALF) % _I64_MOD
    return x - _I64_HALF


def variant_of(v: ScalarValue) -> str:
    if isinstance(v, tuple):
        return "tuple"
    if isinstance(v, (bool, np.bool_)):
        return "int"
    if isinstance(v, (int, np.integer)):
        return "int"
    if isinstance(v, (float, np.floating)):
        return "float"
    raise MixedVariantError(f"not a scalar value: {v!r}")


def same_variant(a: ScalarValue, b: ScalarValue) -> str:
    va, vb = variant_of(a), variant_of(b)
    if va != vb:
        raise MixedVariantError(f"cannot combine {va} with {vb}")
    if va == "tuple" and len(a) != len(b):
        raise MixedVariantError(f"tuple arity {len(a)} vs {len(b)}")
    return va


# ---------------------------------------------------------------------------
# binary operators used by point-wise and prefix-sum combination
# ---------------------------------------------------------------------------
_ATOMIC_OPS = ("+", "*", "max", "min")


def _atomic_scalar(op: str, a, b):
    kind = same_variant(a, b)
    if op == "+":
        r = a + b
    elif op == "*":
        r = a * b
    elif op == "max":
        r = a if a >= b else b
    elif op == "min":
        r = a if a <= b else b
    else:  # pragma: no cover - guarded by BinaryExpr.parse
        raise ValueError(op)
    return wrap_i64(r) if kind == "int" else float(r)


def _atomic_array(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.dtype != b.dtype:
        raise MixedVariantError(f"cannot combine {a.dtype} with {b.dtype}")
    with np.errstate(over="ignore"):
        if op == "+":
            return a + b
        if op == "*":
            return a * b
        if op == "max":
            return np.maximum(a, b)
        if op == "min":
            return np.minimum(a, b)
    raise ValueError(op)  # pragma: no cover


@dataclass(frozen=True)
class BinaryExpr:
    """A named associative and commutative binary operator.

    ``ops`` holds one atomic operator (``+``, ``*``, ``max``, ``min``) per
    tuple component, or the single entry ``argmax`` which acts on
    ``(value, key)`` pairs: the larger value wins and ties keep the smaller key.
    """

    ops: tuple[str, ...]

    @classmethod
    def parse(cls, text: str) -> "BinaryExpr":
        t = str(text).strip().replace(" ", "")
        if t == "argmax":
            return cls(("argmax",))
        if t.startswith("(") and t.endswith(")"):
            parts = tuple(p for p in t[1:-1].split(","))
        else:
            parts = (t,)
        for p in parts:
            if p not in _ATOMIC_OPS:
                raise ParseError(f"unknown binary operator {p!r} in {text!r}")
        return cls(parts)

    @property
    def name(self) -> str:
        return self.ops[0] if len(self.ops) == 1 else "(" + ",".join(self.ops) + ")"

    @property
    def arity(self) -> int | None:
        """Required tuple arity of operands; None means a bare scalar."""
        if self.ops == ("argmax",):
            return 2
        return len(self.ops) if len(self.ops) > 1 else None

    @property
    def declared_assoc_comm(self) -> bool:
        # Every operator expressible here is associative and commutative.
        return True

    def apply(self, a: ScalarValue, b: ScalarValue) -> ScalarValue:
        if self.ops == ("argmax",):
            same_variant(a, b)
            if len(a) != 2:
                raise MixedVariantError("argmax expects (value, key) pairs")
            (va, ka), (vb, kb) = a, b
            same_variant(va, vb)
            if va > vb or (va == vb and ka <= kb):
                return a
            return b
        if len(self.ops) == 1:
            if isinstance(a, tuple) or isinstance(b, tuple):
                if not (isinstance(a, tuple) and isinstance(b, tuple)) or len(a) != len(b):
                    raise MixedVariantError("tuple/scalar mismatch")
                return tuple(_atomic_scalar(self.ops[0], x, y) for x, y in zip(a, b))
            return _atomic_scalar(self.ops[0], a, b)
        if not (isinstance(a, tuple) and isinstance(b, tuple)):
            raise MixedVariantError(f"{self.name} expects tuples")
        if len(a) != len(self.ops) or len(b) != len(self.ops):
            raise MixedVariantError(f"{self.name} expects {len(self.ops)}-tuples")
        return tuple(_atomic_scalar(op, x, y) for op, x, y in zip(self.ops, a, b))

    def apply_arrays(self, a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Vectorised form: ``a`` and ``b`` are lists of component arrays."""
        if self.ops == ("argmax",):
            va, ka = a
            vb, kb = b
            take_a = (va > vb) | ((va == vb) & (ka <= kb))
            return [np.where(take_a, va, vb), np.where(take_a, ka, kb)]
        if len(self.ops) == 1:
            return [_atomic_array(self.ops[0], x, y) for x, y in zip(a, b)]
        if len(a) != len(self.ops):
            raise MixedVariantError(f"{self.name} expects {len(self.ops)} components")
        return [_atomic_array(op, x, y) for op, x, y in zip(self.ops, a, b)]


def check_binop_laws(binop: BinaryExpr, elem_types: Sequence[ElemType], trials: int = 1000,
                     seed: int = 0) -> list[str]:
    """Empirically test associativity and commutativity; returns failure descriptions.

    Int64 must hold exactly, Float64 within 1e-12 relative.
    """
    rng = np.random.default_rng(seed)
    width = binop.arity or 1
    types = list(elem_types) * width if len(elem_types) == 1 else list(elem_types)
    if len(types) != width:
        raise ValueError(f"{binop.name} needs {width} element types, got {len(elem_types)}")

    def draw():
        comps = []
        for t in types:
            if t is ElemType.INT64:
                comps.append(int(rng.integers(-1000, 1000)))
            else:
                comps.append(float(rng.uniform(-100.0, 100.0)))
        if binop.ops == ("argmax",):
            comps[0] = type(comps[0])(rng.integers(-3, 3))  # force frequent ties
        return comps[0] if width == 1 and binop.arity is None else tuple(comps)

    def close(x, y) -> bool:
        xs = x if isinstance(x, tuple) else (x,)
        ys = y if isinstance(y, tuple) else (y,)
        for u, v in zip(xs, ys):
            if isinstance(u, int) and isinstance(v, int):
                if u != v:
                    return False
            elif not math.isclose(u, v, rel_tol=1e-12, abs_tol=1e-300):
                return False
        return True

    failures = []
    for t in range(trials):
        a, b, c = draw(), draw(), draw()
        if not close(binop.apply(binop.apply(a, b), c), binop.apply(a, binop.apply(b, c))):
            failures.append(f"associativity fails on {a!r}, {b!r}, {c!r}")
        if not close(binop.apply(a, b), binop.apply(b, a)):
            failures.append(f"commutativity fails on {a!r}, {b!r}")
    return failures


# ---------------------------------------------------------------------------
# index sets
# ---------------------------------------------------------------------------
@dataclass(frozen=True, order=True)
class IndexRange:
    """Half-open contiguous index set ``[lo, hi)``."""

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo < 0 or self.hi < self.lo:
            raise ValueError(f"invalid range [{self.lo},{self.hi})")

    @property
    def size(self) -> int:
        return self.hi - self.lo

    def indices(self) -> tuple[int, ...]:
        return tuple(range(self.lo, self.hi))

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.lo, self.hi))

    def __len__(self) -> int:
        return self.size

    def __contains__(self, i) -> bool:
        return self.lo <= i < self.hi

    @property
    def first(self) -> int | None:
        return self.lo if self.size else None

    @property
    def last(self) -> int | None:
        return self.hi - 1 if self.size else None

    def pred(self, i: int) -> int | None:
        """Largest member strictly smaller than ``i``."""
        if self.size == 0 or i <= self.lo:
            return None
        return min(i - 1, self.hi - 1)

    def __repr__(self) -> str:
        return f"[{self.lo},{self.hi})"


@dataclass(frozen=True)
class IndexSet:
    """Finite, possibly non-contiguous index set (sorted, duplicate-free)."""

    members: tuple[int, ...]

    def __post_init__(self):
        if any(m < 0 for m in self.members) or list(self.members) != sorted(set(self.members)):
            raise ValueError("IndexSet members must be sorted, unique and non-negative")

    @property
    def size(self) -> int:
        return len(self.members)

    def indices(self) -> tuple[int, ...]:
        return self.members

    def __iter__(self) -> Iterator[int]:
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, i) -> bool:
        k = bisect_left(self.members, i)
        return k < len(self.members) and self.members[k] == i

    @property
    def first(self) -> int | None:
        return self.members[0] if self.members else None

    @property
    def last(self) -> int | None:
        return self.members[-1] if self.members else None

    def pred(self, i: int) -> int | None:
        k = bisect_left(self.members, i)
        return self.members[k - 1] if k > 0 else None

    def __repr__(self) -> str:
        return "{" + ",".join(map(str, self.members)) + "}"


AnyIndexSet = Union[IndexRange, IndexSet]


def make_index_set(members) -> AnyIndexSet:
    """Canonical index set: an IndexRange whenever the members are contiguous."""
    ms = sorted(set(int(m) for m in members))
    if not ms:
        return IndexRange(0, 0)
    if ms[-1] - ms[0] + 1 == len(ms):
        return IndexRange(ms[0], ms[-1] + 1)
    return IndexSet(tuple(ms))


def same_set(a: AnyIndexSet, b: AnyIndexSet) -> bool:
    if a.size == 0 and b.size == 0:
        return True
    return a.indices() == b.indices()


# ---------------------------------------------------------------------------
# buffers
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Buffer:
    """Dense zero-based storage; ``defined`` marks which cells hold a value."""

    data: np.ndarray
    defined: np.ndarray
    elem_type: ElemType

    def __post_init__(self):
        if self.data.shape != self.defined.shape:
            raise ValueError("data and defined mask must have the same shape")
        if self.data.dtype != self.elem_type.dtype:
            raise ValueError(f"data dtype {self.data.dtype} does not match {self.elem_type.value}")
        self.data.flags.writeable = False
        self.defined.flags.writeable = False

    @classmethod
    def from_array(cls, arr, elem_type: ElemType | str | None = None,
                   defined: np.ndarray | None = None) -> "Buffer":
        a = np.asarray(arr)
        if elem_type is None:
            elem_type = ElemType.FLOAT64 if a.dtype.kind == "f" else ElemType.INT64
        elem_type = ElemType(elem_type) if not isinstance(elem_type, ElemType) else elem_type
        a = np.array(a, dtype=elem_type.dtype, copy=True)
        d = np.ones(a.shape, dtype=bool) if defined is None else np.array(defined, dtype=bool)
        return cls(a, d, elem_type)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    def __getitem__(self, idx) -> ScalarValue:
        idx = (idx,) if isinstance(idx, (int, np.integer)) else tuple(idx)
        if not self.defined[idx]:
            raise UndefinedCellRead(f"read of undefined cell {idx}")
        v = self.data[idx]
        return int(v) if self.elem_type is ElemType.INT64 else float(v)

    def equals(self, other: "Buffer", rel_tol: float = 0.0) -> bool:
        if self.dims != other.dims or not np.array_equal(self.defined, other.defined):
            return False
        m = self.defined
        if self.elem_type is ElemType.INT64 and other.elem_type is ElemType.INT64:
            return bool(np.array_equal(self.data[m], other.data[m]))
        return bool(np.allclose(self.data[m], other.data[m], rtol=rel_tol, atol=rel_tol))

    def __repr__(self) -> str:
        return f"Buffer({self.elem_type.value}, dims={self.dims}, defined={int(self.defined.sum())})"


# ---------------------------------------------------------------------------
# lazy multi-dimensional arrays
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class MdaView:
    """A lazy MDA: an element function over the cross product of index sets."""

    ranges: tuple[AnyIndexSet, ...]
    elem: Callable[[tuple[int, ...]], ScalarValue] = field(repr=False)

    @property
    def ndim(self) -> int:
        return len(self.ranges)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(r.size for r in self.ranges)

    @property
    def is_empty(self) -> bool:
        return any(r.size == 0 for r in self.ranges)

    def __getitem__(self, idx) -> ScalarValue:
        idx = tuple(int(i) for i in idx)
        if len(idx) != self.ndim or any(i not in r for i, r in zip(idx, self.ranges)):
            raise IndexError(f"index {idx} outside {self.ranges}")
        return self.elem(idx)

    def index_tuples(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(*(r.indices() for r in self.ranges))

    def cells(self) -> Iterator[tuple[tuple[int, ...], ScalarValue]]:
        for idx in self.index_tuples():
            yield idx, self.elem(idx)

    def restrict(self, dim: int, rng: AnyIndexSet) -> "MdaView":
        k = _dim_pos(dim, self.ndim)
        if not set(rng.indices()) <= set(self.ranges[k].indices()):
            raise RangesNotAPartition(f"{rng} is not inside {self.ranges[k]}")
        ranges = self.ranges[:k] + (rng,) + self.ranges[k + 1:]
        return MdaView(ranges, self.elem)

    def materialize(self) -> dict[tuple[int, ...], ScalarValue]:
        return dict(self.cells())

    def equals(self, other: "MdaView", rel_tol: float = 0.0) -> bool:
        if self.ndim != other.ndim or not all(same_set(a, b) for a, b in zip(self.ranges, other.ranges)):
            return False
        return all(values_close(v, other.elem(idx), rel_tol) for idx, v in self.cells())

    @classmethod
    def from_array(cls, arr, offsets: Sequence[int] | None = None) -> "MdaView":
        """Wrap a numpy array (or nested list); ``offsets`` shift each dimension's range."""
        a = np.asarray(arr)
        off = tuple(offsets) if offsets is not None else (0,) * a.ndim
        ranges = tuple(IndexRange(o, o + n) for o, n in zip(off, a.shape))
        is_int = a.dtype.kind in "iub"

        def elem(idx):
            v = a[tuple(i - o for i, o in zip(idx, off))]
            return int(v) if is_int else float(v)

        return cls(ranges, elem)

    @classmethod
    def empty(cls, ranges: Sequence[AnyIndexSet]) -> "MdaView":
        def elem(idx):  # pragma: no cover - an empty MDA has no cells
            raise IndexError("empty MDA")

        return cls(tuple(ranges), elem)


def values_close(a: ScalarValue, b: ScalarValue, rel_tol: float = 0.0) -> bool:
    if isinstance(a, tuple) or isinstance(b, tuple):
        if not (isinstance(a, tuple) and isinstance(b, tuple)) or len(a) != len(b):
            return False
        return all(values_close(x, y, rel_tol) for x, y in zip(a, b))
    if isinstance(a, int) and isinstance(b, int):
        return a == b
    if rel_tol == 0.0:
        return a == b
    return math.isclose(a, b, rel_tol=rel_tol, abs_tol=rel_tol)


def _dim_pos(dim: int, ndim: int) -> int:
    if not 1 <= dim <= ndim:
        raise IndexError(f"dimension {dim} outside 1..{ndim}")
    return dim - 1


def _check_other_dims(lhs: MdaView, rhs: MdaView, k: int, exc=NonMatchingRanges) -> None:
    if lhs.ndim != rhs.ndim:
        raise exc(f"rank {lhs.ndim} vs {rhs.ndim}")
    for j, (a, b) in enumerate(zip(lhs.ranges, rhs.ranges)):
        if j != k and not same_set(a, b):
            raise exc(f"dimension {j + 1}: {a} vs {b}")


def _check_other_dims_soft(lhs: MdaView, rhs: MdaView, k: int) -> bool:
    """Empty operands are neutral, so their other-dimension sets need not match."""
    return lhs.is_empty and lhs.ranges[k].size == 0 or rhs.is_empty and rhs.ranges[k].size == 0


# ---------------------------------------------------------------------------
# combine operators
# ---------------------------------------------------------------------------
class CombineKind(str, enum.Enum):
    CONCAT = "cc"
    POINTWISE = "pw"
    PREFIX_SUM = "ps"


@dataclass(frozen=True)
class CombineOpSpec:
    kind: CombineKind
    binop: BinaryExpr | None = None

    def __post_init__(self):
        if (self.kind is CombineKind.CONCAT) != (self.binop is None):
            raise ValueError("concatenation takes no binary operator; the others require one")

    @property
    def index_set_fn(self) -> str:
        return "ConstZero" if self.kind is CombineKind.POINTWISE else "Identity"

    @classmethod
    def parse(cls, text: str) -> "CombineOpSpec":
        t = str(text).strip()
        if t == "cc":
            return cls(CombineKind.CONCAT)
        head, sep, tail = t.partition(":")
        if not sep or head not in ("pw", "ps"):
            raise ParseError(f"combine operator must be 'cc', 'pw:<op>' or 'ps:<op>', got {text!r}")
        return cls(CombineKind(head), BinaryExpr.parse(tail))

    def to_text(self) -> str:
        return "cc" if self.binop is None else f"{self.kind.value}:{self.binop.name}"

    def label(self) -> str:
        return "cc" if self.binop is None else f"{self.kind.value}({self.binop.name})"


CONCAT = CombineOpSpec(CombineKind.CONCAT)


def concat(lhs: MdaView, rhs: MdaView, dim: int) -> MdaView:
    """Concatenation along ``dim``; the operand index sets need only be disjoint."""
    k = _dim_pos(dim, lhs.ndim)
    if _check_other_dims_soft(lhs, rhs, k):
        return rhs if lhs.ranges[k].size == 0 else lhs
    _check_other_dims(lhs, rhs, k)
    a, b = lhs.ranges[k], rhs.ranges[k]
    if set(a.indices()) & set(b.indices()):
        raise OverlappingDimRanges(f"dimension {dim}: {a} and {b} overlap")
    union = make_index_set(a.indices() + b.indices())
    ranges = lhs.ranges[:k] + (union,) + lhs.ranges[k + 1:]

    def elem(idx):
        return lhs.elem(idx) if idx[k] in a else rhs.elem(idx)

    return MdaView(ranges, elem)


def concat_inverse(mda: MdaView, dim: int, split_ranges: tuple[AnyIndexSet, AnyIndexSet]
                   ) -> tuple[MdaView, MdaView]:
    k = _dim_pos(dim, mda.ndim)
    r1, r2 = split_ranges
    s1, s2 = set(r1.indices()), set(r2.indices())
    if s1 & s2 or (s1 | s2) != set(mda.ranges[k].indices()):
        raise RangesNotAPartition(f"{r1} and {r2} do not partition {mda.ranges[k]}")
    return mda.restrict(dim, r1), mda.restrict(dim, r2)


def pointwise(binop: BinaryExpr, lhs: MdaView, rhs: MdaView, dim: int) -> MdaView:
    k = _dim_pos(dim, lhs.ndim)
    for side in (lhs, rhs):
        if not same_set(side.ranges[k], IndexRange(0, 1)):
            raise DimNotCollapsed(f"dimension {dim} has index set {side.ranges[k]}, expected [0,1)")
    _check_other_dims(lhs, rhs, k, exc=RangeMismatch)

    def elem(idx):
        return binop.apply(lhs.elem(idx), rhs.elem(idx))

    return MdaView(lhs.ranges, elem)


def prefix_sum_combine(binop: BinaryExpr, lhs: MdaView, rhs: MdaView, dim: int) -> MdaView:
    """Prefix-sum combination where every index of ``lhs`` precedes every index of ``rhs``.

    The boundary context is the last cell of ``lhs`` along ``dim``; it is
    derived from the operands rather than passed in.
    """
    k = _dim_pos(dim, lhs.ndim)
    a, b = lhs.ranges[k], rhs.ranges[k]
    if a.size and b.size and not a.last < b.first:
        raise RangesNotOrdered(f"dimension {dim}: {a} does not precede {b}")
    return prefix_sum_interleaved(binop, lhs, rhs, dim)


def prefix_sum_interleaved(binop: BinaryExpr, lhs: MdaView, rhs: MdaView, dim: int) -> MdaView:
    """General prefix-sum combination of two disjoint, possibly interleaved index sets.

    A cell at index ``i`` of one operand is combined with the other operand's
    cell at its largest index below ``i``, the earlier value on the left.
    """
    k = _dim_pos(dim, lhs.ndim)
    if _check_other_dims_soft(lhs, rhs, k):
        return rhs if lhs.ranges[k].size == 0 else lhs
    _check_other_dims(lhs, rhs, k)
    a, b = lhs.ranges[k], rhs.ranges[k]
    if set(a.indices()) & set(b.indices()):
        raise OverlappingDimRanges(f"dimension {dim}: {a} and {b} overlap")
    union = make_index_set(a.indices() + b.indices())
    ranges = lhs.ranges[:k] + (union,) + lhs.ranges[k + 1:]

    def elem(idx):
        own, other, own_set, other_set = (lhs, rhs, a, b) if idx[k] in a else (rhs, lhs, b, a)
        v = own.elem(idx)
        j = other_set.pred(idx[k])
        if j is None:
            return v
        return binop.apply(other.elem(idx[:k] + (j,) + idx[k + 1:]), v)

    return MdaView(ranges, elem)


def combine(op: CombineOpSpec, lhs: MdaView, rhs: MdaView, dim: int) -> MdaView:
    if op.kind is CombineKind.CONCAT:
        return concat(lhs, rhs, dim)
    if op.kind is CombineKind.POINTWISE:
        return pointwise(op.binop, lhs, rhs, dim)
    return prefix_sum_interleaved(op.binop, lhs, rhs, dim)
