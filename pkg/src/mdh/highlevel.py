"""High-level expressions: input view, ``md_hom`` and output view.

The module holds the builders and validators, buffer-size inference, and two
reference evaluators.  :func:`reference_execute` is vectorised and serves as
the oracle for lowered programs.  :func:`reference_execute_literal` folds
singleton MDAs with the combine operators of :mod:`mdh.core` and is only
meant for tiny sizes, where it cross-checks the vectorised oracle.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import core
from .core import (
    AnyIndexSet,
    Buffer,
    CombineKind,
    CombineOpSpec,
    ElemType,
    IndexRange,
    MdaView,
)
from .errors import (
    InconsistentNonInjectiveWrite,
    MixedIncompatibleOperators,
    MixedVariantError,
    NegativeIndexReachable,
    ParseError,
    UndefinedCellRead,
)
from .expr import IndexFn, In, Idx, ScalarFunction, evaluate, evaluate_scalar, infer_type, parse_scalar


@dataclass(frozen=True)
class BufferDecl:
    name: str
    elem_type: ElemType
    rank: int
    accesses: tuple[IndexFn, ...]
    value_range: tuple[float, float] | None = None  # sampling hint for random inputs

    def __post_init__(self):
        if not self.accesses:
            raise ValueError(f"buffer {self.name} needs at least one access")
        for a in self.accesses:
            if a.rank != self.rank:
                raise ValueError(f"buffer {self.name}: access of rank {a.rank}, declared rank {self.rank}")


@dataclass(frozen=True)
class ViewSpec:
    buffers: tuple[BufferDecl, ...]

    def __post_init__(self):
        names = [b.name for b in self.buffers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate buffer names in view: {names}")
        dims = {a.ndim for b in self.buffers for a in b.accesses}
        if len(dims) > 1:
            raise ValueError("all index functions of a view must share the MDA rank")

    def __getitem__(self, name: str) -> BufferDecl:
        for b in self.buffers:
            if b.name == name:
                return b
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.buffers]

    def slots(self) -> list[tuple[str, int]]:
        """(buffer, access) pairs in declaration order: the tuple layout of MDA cells."""
        return [(b.name, a) for b in self.buffers for a in range(len(b.accesses))]


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[tuple[str, str], ...] = ()  # (rule id, message)

    @property
    def accepted(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.accepted

    def rule_ids(self) -> set[str]:
        return {r for r, _ in self.violations}

    def __str__(self) -> str:
        if self.accepted:
            return "ACCEPT"
        return "REJECT\n" + "\n".join(f"  [{r}] {m}" for r, m in self.violations)


@dataclass(frozen=True)
class HighLevelExpr:
    name: str
    dims: tuple[str, ...]
    sizes: tuple[int, ...]
    input_view: ViewSpec
    scalar: ScalarFunction
    combine_ops: tuple[CombineOpSpec, ...]
    output_view: ViewSpec
    description: str = ""
    example: Mapping[str, Any] | None = field(default=None, compare=False, repr=False)

    @property
    def D(self) -> int:
        return len(self.dims)

    def with_sizes(self, sizes: Sequence[int]) -> "HighLevelExpr":
        return replace(self, sizes=tuple(int(s) for s in sizes))

    def input_types(self) -> dict[str, ElemType]:
        return {b.name: b.elem_type for b in self.input_view.buffers}

    def input_ranges(self) -> tuple[IndexRange, ...]:
        return tuple(IndexRange(0, n) for n in self.sizes)

    def output_ranges(self) -> tuple[IndexRange, ...]:
        """Index sets of the result MDA: point-wise dimensions collapse to [0,1)."""
        return tuple(IndexRange(0, 1) if op.kind is CombineKind.POINTWISE else IndexRange(0, n)
                     for op, n in zip(self.combine_ops, self.sizes))

    def shared_binop(self):
        ops = [op.binop for op in self.combine_ops if op.binop is not None]
        return ops[0] if ops else None

    def ordered_assignments(self):
        """Scalar-function assignments in output-slot order."""
        by_target = {(a.buf, a.access): a for a in self.scalar.assignments}
        return [by_target[s] for s in self.output_view.slots()]


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def validate_md_hom(expr: HighLevelExpr) -> ValidationReport:
    """Well-definedness check of the ``md_hom`` instance plus structural sanity checks."""
    v: list[tuple[str, str]] = []
    if len(expr.sizes) != expr.D or len(expr.combine_ops) != expr.D:
        v.append(("structure", f"{expr.D} dimensions but {len(expr.sizes)} sizes and "
                               f"{len(expr.combine_ops)} combine operators"))
        return ValidationReport(tuple(v))
    for d, n in enumerate(expr.sizes, 1):
        if n < 1:
            v.append(("sizes", f"dimension {d} has size {n} < 1"))
    non_cc = [(d, op) for d, op in enumerate(expr.combine_ops, 1) if op.kind is not CombineKind.CONCAT]
    for (d1, o1), (d2, o2) in itertools.combinations(non_cc, 2):
        if o1.binop != o2.binop:
            v.append(("mixed-operators", f"dimensions ({d1},{d2}) combine with {o1.binop.name} and "
                                         f"{o2.binop.name}"))
            break
    for d, op in non_cc:
        if not op.binop.declared_assoc_comm:  # pragma: no cover - all built-ins are
            v.append(("binop-laws", f"dimension {d}: {op.binop.name} is not associative and commutative"))
    # scalar function typing and output arity
    try:
        types = expr.input_types()
        for a in expr.scalar.assignments:
            t = infer_type(a.value, types)
            declared = expr.output_view[a.buf].elem_type.value
            if t != declared:
                v.append(("scalar-type", f"{a.buf}[{a.access}] computes {t} but is declared {declared}"))
    except MixedVariantError as e:
        v.append(("scalar-type", str(e)))
    binop = expr.shared_binop()
    n_out = len(expr.output_view.slots())
    if binop is not None and binop.arity is not None and binop.arity != n_out:
        v.append(("binop-arity", f"{binop.name} combines {binop.arity}-tuples but there are {n_out} "
                                 f"output accesses"))
    for view in (expr.input_view, expr.output_view):
        for b in view.buffers:
            for a in b.accesses:
                if a.ndim != expr.D:
                    v.append(("structure", f"buffer {b.name}: index function over {a.ndim} dims"))
    if not v:
        try:
            infer_buffer_sizes(expr.input_view, expr.input_ranges())
            infer_buffer_sizes(expr.output_view, expr.output_ranges())
        except NegativeIndexReachable as e:
            v.append(("negative-index", str(e)))
    return ValidationReport(tuple(v))


def ensure_md_hom(expr: HighLevelExpr) -> None:
    """Raise :class:`MixedIncompatibleOperators` (or ValueError) if ``expr`` is rejected."""
    rep = validate_md_hom(expr)
    if rep.accepted:
        return
    for rule, msg in rep.violations:
        if rule == "mixed-operators":
            dims = tuple(int(x) for x in msg[msg.index("(") + 1: msg.index(")")].split(","))
            raise MixedIncompatibleOperators(msg, dims)
    raise ValueError(str(rep))


# ---------------------------------------------------------------------------
# buffer sizes
# ---------------------------------------------------------------------------


def _box(ranges: Sequence[AnyIndexSet]) -> tuple[list[int], list[int]]:
    return [r.first for r in ranges], [r.last for r in ranges]


def infer_buffer_sizes(view: ViewSpec, ranges: Sequence[AnyIndexSet]) -> dict[str, tuple[int, ...]]:
    """``N^b_d = 1 + max`` of coordinate ``d`` over all accesses, in closed form."""
    if any(r.size == 0 for r in ranges):
        raise ValueError("buffer sizes are only defined for non-empty index sets")
    lows, highs = _box(ranges)
    out = {}
    for b in view.buffers:
        top = [0] * b.rank
        for a in b.accesses:
            for d, (lo, hi) in enumerate(a.bounds(lows, highs)):
                if lo < 0:
                    raise NegativeIndexReachable(f"{b.name} coordinate {d + 1} reaches {lo}")
                top[d] = max(top[d], hi)
        out[b.name] = tuple(t + 1 for t in top)
    return out


def infer_buffer_sizes_brute(view: ViewSpec, ranges: Sequence[AnyIndexSet]) -> dict[str, tuple[int, ...]]:
    """Enumerate every index tuple (test oracle for :func:`infer_buffer_sizes`)."""
    out = {}
    for b in view.buffers:
        top = [-1] * b.rank
        for idx in itertools.product(*(r.indices() for r in ranges)):
            for a in b.accesses:
                for d, x in enumerate(a.at(idx)):
                    if x < 0:
                        raise NegativeIndexReachable(f"{b.name} coordinate {d + 1} reaches {x}")
                    top[d] = max(top[d], x)
        out[b.name] = tuple(t + 1 for t in top)
    return out


# ---------------------------------------------------------------------------
# views
# ---------------------------------------------------------------------------


def _check_sizes(view: ViewSpec, buffers: Mapping[str, Buffer], ranges) -> None:
    need = infer_buffer_sizes(view, ranges)
    for name, dims in need.items():
        if name not in buffers:
            raise KeyError(f"missing buffer {name}")
        have = buffers[name].dims
        if len(have) != len(dims) or any(h < n for h, n in zip(have, dims)):
            raise ValueError(f"buffer {name} has dims {have}, needs at least {dims}")


def apply_input_view(view: ViewSpec, buffers: Mapping[str, Buffer],
                     ranges: Sequence[AnyIndexSet]) -> MdaView:
    """Lazy input MDA whose cells are tuples over all (buffer, access) slots."""
    _check_sizes(view, buffers, ranges)
    decls = [(buffers[b.name], a) for b in view.buffers for a in b.accesses]

    def elem(idx):
        return tuple(buf[fn.at(idx)] for buf, fn in decls)

    return MdaView(tuple(ranges), elem)


def apply_output_view(view: ViewSpec, mda: MdaView,
                      sizes: Mapping[str, tuple[int, ...]] | None = None) -> dict[str, Buffer]:
    """Write every MDA cell through the output index functions; unwritten cells stay undefined."""
    slots = view.slots()
    sizes = dict(sizes) if sizes is not None else infer_buffer_sizes(view, mda.ranges)
    data = {b.name: np.zeros(sizes[b.name], dtype=b.elem_type.dtype) for b in view.buffers}
    defined = {b.name: np.zeros(sizes[b.name], dtype=bool) for b in view.buffers}
    fns = {(b.name, k): a for b in view.buffers for k, a in enumerate(b.accesses)}
    for idx, cell in mda.cells():
        if not isinstance(cell, tuple) or len(cell) != len(slots):
            raise MixedVariantError(f"output MDA cell {cell!r} does not match {len(slots)} slots")
        for (name, k), value in zip(slots, cell):
            pos = fns[(name, k)].at(idx)
            if defined[name][pos]:
                if data[name][pos] != value:
                    raise InconsistentNonInjectiveWrite(
                        f"{name}{list(pos)} written with {data[name][pos]!r} and {value!r}")
            else:
                data[name][pos] = value
                defined[name][pos] = True
    return {b.name: Buffer(data[b.name], defined[b.name], b.elem_type) for b in view.buffers}


def mda_grids(ranges: Sequence[AnyIndexSet]) -> list[np.ndarray]:
    """Open (broadcastable) index grids over the given index sets."""
    D = len(ranges)
    grids = []
    for d, r in enumerate(ranges):
        shape = [1] * D
        shape[d] = r.size
        grids.append(np.asarray(r.indices(), dtype=np.int64).reshape(shape))
    return grids


def gather_inputs(view: ViewSpec, buffers: Mapping[str, Buffer],
                  grids: Sequence[np.ndarray]) -> dict[In, np.ndarray]:
    """Vectorised input view: one broadcastable array per (buffer, access)."""
    env: dict[In, np.ndarray] = {}
    for b in view.buffers:
        buf = buffers[b.name]
        for k, fn in enumerate(b.accesses):
            pos = fn.at_arrays(grids)
            if b.rank == 0:
                if not buf.defined[()]:
                    raise UndefinedCellRead(f"{b.name} is undefined")
                env[In(b.name, k)] = np.asarray(buf.data[()])
                continue
            pos = np.broadcast_arrays(*pos)
            if not np.all(buf.defined[pos]):
                raise UndefinedCellRead(f"input view reads undefined cells of {b.name}")
            env[In(b.name, k)] = buf.data[pos]
    return env


def scatter_outputs(view: ViewSpec, components: Sequence[np.ndarray], grids: Sequence[np.ndarray],
                    sizes: Mapping[str, tuple[int, ...]]) -> dict[str, Buffer]:
    """Vectorised output view with the same collision semantics as :func:`apply_output_view`."""
    shape = np.broadcast_shapes(*(g.shape for g in grids)) if grids else ()
    out = {}
    it = iter(components)
    for b in view.buffers:
        n = int(np.prod(sizes[b.name], dtype=np.int64))
        lin_parts, val_parts = [], []
        for fn in b.accesses:
            vals = np.broadcast_to(next(it), shape).reshape(-1)
            if b.rank == 0:
                lin = np.zeros(vals.shape, dtype=np.int64)
            else:
                pos = [np.broadcast_to(p, shape).reshape(-1) for p in fn.at_arrays(grids)]
                lin = np.ravel_multi_index(pos, sizes[b.name])
            lin_parts.append(lin)
            val_parts.append(vals.astype(b.elem_type.dtype, copy=False))
        lin = np.concatenate(lin_parts)
        vals = np.concatenate(val_parts)
        order = np.argsort(lin, kind="stable")
        lin_s, vals_s = lin[order], vals[order]
        same = lin_s[1:] == lin_s[:-1]
        clash = same & (vals_s[1:] != vals_s[:-1])
        if b.elem_type is ElemType.FLOAT64:
            clash &= ~(np.isnan(vals_s[1:]) & np.isnan(vals_s[:-1]))
        if np.any(clash):
            k = int(np.argmax(clash))
            raise InconsistentNonInjectiveWrite(
                f"{b.name} flat cell {int(lin_s[k])} written with {vals_s[k]!r} and {vals_s[k + 1]!r}")
        data = np.zeros(n, dtype=b.elem_type.dtype)
        defined = np.zeros(n, dtype=bool)
        data[lin_s] = vals_s
        defined[lin_s] = True
        out[b.name] = Buffer(data.reshape(sizes[b.name]), defined.reshape(sizes[b.name]), b.elem_type)
    return out


# ---------------------------------------------------------------------------
# reference evaluation
# ---------------------------------------------------------------------------


def scalar_phase(expr: HighLevelExpr, inputs: Mapping[str, Buffer],
                 grids: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Apply the scalar function on every cell of the given grids; one full array per output slot."""
    env: dict[object, np.ndarray] = dict(gather_inputs(expr.input_view, inputs, grids))
    for d, g in enumerate(grids, 1):
        env[Idx(d, expr.dims[d - 1])] = g
    shape = np.broadcast_shapes(*(g.shape for g in grids)) if grids else ()
    comps = []
    for a in expr.ordered_assignments():
        dtype = expr.output_view[a.buf].elem_type.dtype
        comps.append(np.array(np.broadcast_to(evaluate(a.value, env), shape), dtype=dtype))
    return comps


def fold_pointwise(binop, comps: list[np.ndarray], axis: int) -> list[np.ndarray]:
    """Literal left fold along ``axis``; the axis is kept with size 1."""
    n = comps[0].shape[axis]
    acc = [np.take(c, [0], axis=axis) for c in comps]
    for k in range(1, n):
        acc = binop.apply_arrays(acc, [np.take(c, [k], axis=axis) for c in comps])
    return acc


def scan_prefix(binop, comps: list[np.ndarray], axis: int) -> list[np.ndarray]:
    """Literal sequential inclusive scan along ``axis``."""
    n = comps[0].shape[axis]
    outs = [np.array(c, copy=True) for c in comps]
    idx = [slice(None)] * comps[0].ndim
    for k in range(1, n):
        prev, cur = list(idx), list(idx)
        prev[axis], cur[axis] = k - 1, k
        new = binop.apply_arrays([o[tuple(prev)] for o in outs], [o[tuple(cur)] for o in outs])
        for o, v in zip(outs, new):
            o[tuple(cur)] = v
    return outs


def reference_execute(expr: HighLevelExpr, inputs: Mapping[str, Buffer]) -> dict[str, Buffer]:
    """Canonical evaluation: scalar function on every cell, then fold dimension D down to 1."""
    rep = validate_md_hom(expr)
    if not rep.accepted:
        ensure_md_hom(expr)
    ranges = expr.input_ranges()
    _check_sizes(expr.input_view, inputs, ranges)
    comps = scalar_phase(expr, inputs, mda_grids(ranges))
    for d in range(expr.D, 0, -1):
        op = expr.combine_ops[d - 1]
        if op.kind is CombineKind.POINTWISE:
            comps = fold_pointwise(op.binop, comps, d - 1)
        elif op.kind is CombineKind.PREFIX_SUM:
            comps = scan_prefix(op.binop, comps, d - 1)
    out_ranges = expr.output_ranges()
    sizes = infer_buffer_sizes(expr.output_view, out_ranges)
    return scatter_outputs(expr.output_view, comps, mda_grids(out_ranges), sizes)


def reference_execute_literal(expr: HighLevelExpr, inputs: Mapping[str, Buffer]) -> dict[str, Buffer]:
    """Evaluate by combining singleton MDAs with :mod:`mdh.core` operators (tiny sizes only)."""
    ensure_md_hom(expr)
    ranges = expr.input_ranges()
    inp = apply_input_view(expr.input_view, inputs, ranges)
    slots = expr.input_view.slots()
    assigns = expr.ordered_assignments()

    def f(idx):
        env: dict[object, Any] = {In(b, a): v for (b, a), v in zip(slots, inp[idx])}
        for d, i in enumerate(idx, 1):
            env[Idx(d, expr.dims[d - 1])] = i
        out = []
        for a in assigns:
            v = evaluate_scalar(a.value, env)
            out.append(float(v) if expr.output_view[a.buf].elem_type is ElemType.FLOAT64 else int(v))
        return tuple(out)

    def singleton(idx):
        rs = tuple(IndexRange(0, 1) if op.kind is CombineKind.POINTWISE else IndexRange(i, i + 1)
                   for op, i in zip(expr.combine_ops, idx))
        value = f(idx)
        return MdaView(rs, lambda _i, _v=value: _v)

    def frozen(m: MdaView) -> MdaView:
        cells = m.materialize()
        return MdaView(m.ranges, cells.__getitem__)

    parts: dict[tuple[int, ...], MdaView] = {idx: singleton(idx) for idx in inp.index_tuples()}
    for d in range(expr.D, 0, -1):
        op = expr.combine_ops[d - 1]
        grouped: dict[tuple[int, ...], MdaView] = {}
        for key in sorted(parts):
            prefix = key[:d - 1]
            if prefix in grouped:
                grouped[prefix] = frozen(core.combine(op, grouped[prefix], parts[key], d))
            else:
                grouped[prefix] = parts[key]
        parts = grouped
    (result,) = parts.values()
    return apply_output_view(expr.output_view, result)


# ---------------------------------------------------------------------------
# spec files
# ---------------------------------------------------------------------------


def _parse_view(entries, dims, kind: str) -> ViewSpec:
    decls = []
    for e in entries:
        try:
            name = e["name"]
            accesses = e["accesses"]
        except (KeyError, TypeError):
            raise ParseError(f"{kind} entry {e!r} needs 'name' and 'accesses'") from None
        fns = tuple(IndexFn.parse(a, dims) for a in accesses)
        rank = int(e.get("rank", fns[0].rank if fns else 0))
        vr = e.get("range")
        try:
            decls.append(BufferDecl(name, ElemType.parse(e.get("type", "int64")), rank, fns,
                                    tuple(vr) if vr is not None else None))
        except ValueError as err:
            raise ParseError(f"{kind} {name}: {err}") from None
    try:
        return ViewSpec(tuple(decls))
    except ValueError as err:
        raise ParseError(str(err)) from None


def spec_from_dict(d: Mapping[str, Any]) -> HighLevelExpr:
    try:
        dims = tuple(d["dims"])
        sizes = tuple(int(s) for s in d["sizes"])
        combine = tuple(CombineOpSpec.parse(c) for c in d["combine"])
        iv = _parse_view(d["inputs"], dims, "input")
        ov = _parse_view(d["outputs"], dims, "output")
        scalar_text = d["scalar"]
    except KeyError as e:
        raise ParseError(f"spec is missing field {e.args[0]!r}") from None
    scalar = parse_scalar(scalar_text, {b.name: len(b.accesses) for b in iv.buffers},
                          {b.name: len(b.accesses) for b in ov.buffers}, dims)
    return HighLevelExpr(d.get("name", "unnamed"), dims, sizes, iv, scalar, combine, ov,
                         d.get("description", ""), d.get("example"))


def spec_to_dict(expr: HighLevelExpr) -> dict[str, Any]:
    def view(v: ViewSpec):
        out = []
        for b in v.buffers:
            e = {"name": b.name, "type": b.elem_type.value, "rank": b.rank,
                 "accesses": [a.to_text(expr.dims) for a in b.accesses]}
            if b.value_range is not None:
                e["range"] = list(b.value_range)
            out.append(e)
        return out

    d = {"name": expr.name, "description": expr.description, "dims": list(expr.dims),
         "sizes": list(expr.sizes), "inputs": view(expr.input_view), "outputs": view(expr.output_view),
         "scalar": expr.scalar.source, "combine": [op.to_text() for op in expr.combine_ops]}
    if expr.example is not None:
        d["example"] = expr.example
    return d


def parse_spec_text(text: str) -> HighLevelExpr:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", e.lineno, e.colno) from None
    if not isinstance(d, dict):
        raise ParseError("spec must be a JSON object", 1, 1)
    return spec_from_dict(d)


def load_spec(path: str | Path) -> HighLevelExpr:
    return parse_spec_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------


def random_inputs(expr: HighLevelExpr, seed: int | np.random.Generator = 0) -> dict[str, Buffer]:
    """Random input buffers of exactly the inferred sizes."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sizes = infer_buffer_sizes(expr.input_view, expr.input_ranges())
    out = {}
    for b in expr.input_view.buffers:
        shape = sizes[b.name]
        if b.elem_type is ElemType.INT64:
            lo, hi = b.value_range or (-9, 10)
            arr = rng.integers(int(lo), int(hi), size=shape, dtype=np.int64)
        else:
            lo, hi = b.value_range or (-1.0, 1.0)
            arr = rng.uniform(float(lo), float(hi), size=shape)
        out[b.name] = Buffer.from_array(arr, b.elem_type)
    return out


def buffers_from_lists(view: ViewSpec, values: Mapping[str, Any]) -> dict[str, Buffer]:
    return {b.name: Buffer.from_array(np.asarray(values[b.name]), b.elem_type) for b in view.buffers}


def outputs_match(actual: Mapping[str, Buffer], expected: Mapping[str, Buffer], rel_tol: float = 1e-6
                  ) -> list[str]:
    """Names of output buffers that differ (Int64 exact, Float64 within ``rel_tol``)."""
    bad = []
    for name, exp in expected.items():
        got = actual.get(name)
        tol = 0.0 if exp.elem_type is ElemType.INT64 else rel_tol
        if got is None or not got.equals(exp, rel_tol=tol):
            bad.append(name)
    return bad
