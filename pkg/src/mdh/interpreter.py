"""Reference interpreter for lowered expressions, plus an analytic cost trace.

Values are held as numpy arrays with one axis per MDH level.  A dimension of
size N split into part counts P1..PL becomes L axes, and the leaf with part
indices p1..pL holds MDA index sum(p_l * N / (P1*...*Pl)).  The
de-composition lays the axes out in ``ord_de`` order, the scalar step in
``ord_scalar`` order, and the re-composition in ``ord_re`` order.  Levels are
then combined innermost first, one literal sequential fold per step.
Combines on core layers also run sequentially here.  Their parallelism only
shows up in the trace's ``parallel_depth``.

The trace depends on the lowered program alone, not on the input values.
It is computed by :func:`simulate`, which the autotuner also calls directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .asm import AsmModel, LevelKind, MdhLevel, level_kind
from .core import Buffer, CombineKind
from .errors import MissingWeight
from .expr import Idx, evaluate
from .highlevel import (
    HighLevelExpr,
    _check_sizes,
    gather_inputs,
    infer_buffer_sizes,
    mda_grids,
    scatter_outputs,
)
from .lowering import LowLevelExpr

# ---------------------------------------------------------------------------
# level-axis bookkeeping
# ---------------------------------------------------------------------------


def _canonical_levels(L: int, D: int) -> list[MdhLevel]:
    """Axis order right after splitting: dimension-major, outer layer first."""
    return [MdhLevel(l, d) for d in range(1, D + 1) for l in range(1, L + 1)]


def _split_axes(arr: np.ndarray, counts: Sequence[Sequence[int]]) -> np.ndarray:
    """Reshape a D-dimensional (possibly broadcast) array into L*D level axes."""
    shape = []
    for d, c in enumerate(counts):
        if arr.shape[d] == 1:
            shape.extend([1] * len(c))
        else:
            shape.extend(c)
    return arr.reshape(shape)


def _permute(arr: np.ndarray, current: list[MdhLevel], target: Sequence[MdhLevel]) -> np.ndarray:
    return np.transpose(arr, [current.index(lv) for lv in target])


def _index_grid(scheme, dim: int, axes: Sequence[MdhLevel]) -> np.ndarray:
    """MDA index of dimension ``dim`` as a broadcastable array over the level axes."""
    L = scheme.L
    n = scheme.sizes[dim - 1]
    counts = scheme.counts[dim - 1]
    acc = np.zeros([1] * len(axes), dtype=np.int64)
    stride = n
    for l in range(1, L + 1):
        stride //= counts[l - 1]
        pos = axes.index(MdhLevel(l, dim))
        shape = [1] * len(axes)
        shape[pos] = counts[l - 1]
        acc = acc + (np.arange(counts[l - 1], dtype=np.int64) * stride).reshape(shape)
    return acc


# ---------------------------------------------------------------------------
# prefix-sum combination of interleaved parts
# ---------------------------------------------------------------------------


def _ps_combine_level(binop, comps: list[np.ndarray], axes: list[MdhLevel], lv: MdhLevel,
                      combined: set[MdhLevel], scheme) -> list[np.ndarray]:
    """Fold the parts of level ``lv`` with the prefix-sum operator.

    Members of the parts being merged are enumerated by the digits of the
    already-combined levels of the same dimension plus ``lv``.  Part k is
    merged into the accumulated union of parts 0..k-1: each side's cell at
    index i takes the other side's value at its largest index below i.
    """
    d = lv.dim
    group = [m for m in axes if m.dim == d and (m in combined or m == lv)]
    others = [m for m in axes if m not in group]
    order = others + group
    comps = [np.transpose(c, [axes.index(m) for m in order]) for c in comps]
    lead = comps[0].shape[:len(others)]
    gshape = [scheme.counts[d - 1][m.layer - 1] for m in group]
    M = int(np.prod(gshape)) if gshape else 1
    flat = [c.reshape(lead + (M,)) for c in comps]

    # offsets of each member within its MDA (the uncombined digits are shared)
    digits = np.array(np.unravel_index(np.arange(M), gshape)).reshape(len(group), M)
    n = scheme.sizes[d - 1]
    strides = []
    for m in group:
        strides.append(n // math.prod(scheme.counts[d - 1][:m.layer]))
    off = (digits * np.array(strides, dtype=np.int64)[:, None]).sum(axis=0)
    k_of = digits[group.index(lv)]
    P = gshape[group.index(lv)]

    def pred(mask_src: np.ndarray) -> np.ndarray:
        """For every member, the source member (from ``mask_src``) with the largest offset below it."""
        out = np.full(M, -1, dtype=np.int64)
        src = np.nonzero(mask_src)[0]
        if src.size == 0:
            return out
        src = src[np.argsort(off[src], kind="stable")]
        pos = np.searchsorted(off[src], off, side="left") - 1
        ok = pos >= 0
        out[ok] = src[pos[ok]]
        return out

    for k in range(1, P):
        p_acc = pred(k_of < k)
        p_new = pred(k_of == k)
        upd_new = np.nonzero((k_of == k) & (p_acc >= 0))[0]
        upd_acc = np.nonzero((k_of < k) & (p_new >= 0))[0]
        new = [f.copy() for f in flat]
        if upd_new.size:
            vals = binop.apply_arrays([f[..., p_acc[upd_new]] for f in flat], [f[..., upd_new] for f in flat])
            for t, v in zip(new, vals):
                t[..., upd_new] = v
        if upd_acc.size:
            vals = binop.apply_arrays([f[..., p_new[upd_acc]] for f in flat], [f[..., upd_acc] for f in flat])
            for t, v in zip(new, vals):
                t[..., upd_acc] = v
        flat = new

    back = [f.reshape(lead + tuple(gshape)) for f in flat]
    inv = [order.index(m) for m in axes]
    return [np.transpose(b, inv) for b in back]


def _pw_fold(binop, comps: list[np.ndarray], axis: int) -> list[np.ndarray]:
    n = comps[0].shape[axis]
    acc = [np.take(c, [0], axis=axis) for c in comps]
    for k in range(1, n):
        acc = binop.apply_arrays(acc, [np.take(c, [k], axis=axis) for c in comps])
    return acc


# ---------------------------------------------------------------------------
# interpretation
# ---------------------------------------------------------------------------


def interpret(ll: LowLevelExpr, expr: HighLevelExpr, inputs: Mapping[str, Buffer]
              ) -> tuple[dict[str, Buffer], "ExecTrace"]:
    if tuple(expr.sizes) != tuple(ll.sizes):
        raise ValueError(f"lowered program is for sizes {ll.sizes}, expression has {expr.sizes}")
    L, D = ll.L, ll.D
    scheme = ll.scheme()
    counts = scheme.counts
    ranges = expr.input_ranges()
    _check_sizes(expr.input_view, inputs, ranges)

    # step inp_view: the input MDA as one broadcastable array per (buffer, access)
    env_full = gather_inputs(expr.input_view, inputs, mda_grids(ranges))
    canon = _canonical_levels(L, D)
    # de-composition: split every dimension into its level axes, laid out in ord_de order
    de_axes = list(ll.ord_de)
    leaves = {k: _permute(_split_axes(np.asarray(v).reshape(_bshape(v, D)), counts), canon, de_axes)
              for k, v in env_full.items()}

    # scalar step, evaluated with the axes in ord_scalar order
    sc_axes = list(ll.scalar_step.order)
    env: dict[object, np.ndarray] = {k: _permute(v, de_axes, sc_axes) for k, v in leaves.items()}
    for d in range(1, D + 1):
        env[Idx(d, expr.dims[d - 1])] = _index_grid(scheme, d, sc_axes)
    full_shape = tuple(counts[lv.dim - 1][lv.layer - 1] for lv in sc_axes)
    comps = []
    for a in expr.ordered_assignments():
        dtype = expr.output_view[a.buf].elem_type.dtype
        comps.append(np.array(np.broadcast_to(evaluate(a.value, env), full_shape), dtype=dtype))

    # re-composition: axes in ord_re order, levels combined innermost first
    re_axes = list(ll.ord_re)
    comps = [_permute(c, sc_axes, re_axes) for c in comps]
    combined: set[MdhLevel] = set()
    for step in ll.level_steps("re"):
        lv = step.level
        op = expr.combine_ops[lv.dim - 1]
        if op.kind is CombineKind.POINTWISE:
            comps = _pw_fold(op.binop, comps, re_axes.index(lv))
        elif op.kind is CombineKind.PREFIX_SUM:
            comps = _ps_combine_level(op.binop, comps, re_axes, lv, combined, scheme)
        combined.add(lv)

    # step out_view: back to canonical axis order, merge level axes, write buffers
    comps = [_permute(c, re_axes, canon) for c in comps]
    out_shape = tuple(1 if op.kind is CombineKind.POINTWISE else n
                      for op, n in zip(expr.combine_ops, expr.sizes))
    comps = [c.reshape(out_shape) for c in comps]
    out_ranges = expr.output_ranges()
    sizes = infer_buffer_sizes(expr.output_view, out_ranges)
    outputs = scatter_outputs(expr.output_view, comps, mda_grids(out_ranges), sizes)
    return outputs, simulate(ll, expr)


def _bshape(v, D: int) -> tuple[int, ...]:
    a = np.asarray(v)
    return a.shape if a.ndim == D else (1,) * D


# ---------------------------------------------------------------------------
# analytic trace and cost
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepTrace:
    index: int
    phase: str
    op: str
    level: tuple[int, int] | None
    elements_read: int
    elements_written: int
    traffic: Mapping[int, int]  # region id -> elements moved (read + written)
    depth: int  # critical-path factor contributed by this step


@dataclass(frozen=True)
class ExecTrace:
    steps: tuple[StepTrace, ...]
    phase_depth: Mapping[str, int]
    region_names: Mapping[int, str] = field(default_factory=dict)

    @property
    def parallel_depth(self) -> int:
        return int(sum(self.phase_depth.values()))

    @property
    def elements_read(self) -> int:
        return sum(s.elements_read for s in self.steps)

    @property
    def elements_written(self) -> int:
        return sum(s.elements_written for s in self.steps)

    def traffic(self) -> dict[int, int]:
        tot: dict[int, int] = {r: 0 for r in self.region_names}
        for s in self.steps:
            for r, n in s.traffic.items():
                tot[r] = tot.get(r, 0) + n
        return tot

    def to_dict(self) -> dict:
        name = lambda r: self.region_names.get(r, str(r))  # noqa: E731
        return {
            "parallel_depth": self.parallel_depth,
            "phase_depth": dict(self.phase_depth),
            "elements_read": self.elements_read,
            "elements_written": self.elements_written,
            "traffic": {name(r): n for r, n in sorted(self.traffic().items())},
            "steps": {str(s.index): {"phase": s.phase, "op": s.op,
                                     "level": list(s.level) if s.level else None,
                                     "elements_read": s.elements_read,
                                     "elements_written": s.elements_written,
                                     "traffic": {name(r): n for r, n in sorted(s.traffic.items())},
                                     "depth": s.depth}
                      for s in self.steps},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _footprint(view, extents: Sequence[int], buf_sizes: Mapping[str, tuple[int, ...]], name: str) -> int:
    """Cells of buffer ``name`` touched by a part whose MDA box has the given extents."""
    b = view[name]
    lows = [0] * len(extents)
    highs = [e - 1 for e in extents]
    total = 1
    for c in range(b.rank):
        lo = min(a.forms[c].bounds(lows, highs)[0] for a in b.accesses)
        hi = max(a.forms[c].bounds(lows, highs)[1] for a in b.accesses)
        total *= min(hi - lo + 1, buf_sizes[name][c])
    return total


def _add(t: dict[int, int], r: int, n: int) -> None:
    if n:
        t[r] = t.get(r, 0) + n


def simulate(ll: LowLevelExpr, expr: HighLevelExpr) -> ExecTrace:
    """Count reads, writes, per-region traffic and critical-path depth of every step.

    A step whose buffers keep the region and layout of the previous step
    moves nothing (the buffer of the upper level is re-used).
    Memory-tagged levels are sequential loops.  Core-tagged levels are
    parallel; in re-composition a core-tagged point-wise or prefix-sum level
    costs ``ceil(log2 P)`` for its combining tree.
    """
    model: AsmModel = ll.model
    L, D = ll.L, ll.D
    N = ll.sizes
    parts = ll.num_parts()
    iv, ov = expr.input_view, expr.output_view
    in_sizes = infer_buffer_sizes(iv, expr.input_ranges())
    out_sizes = infer_buffer_sizes(ov, expr.output_ranges())
    leaves = math.prod(N)
    steps: list[StepTrace] = []
    depth = {"de": 1, "scalar": 1, "re": 1}

    def is_mem(tag) -> bool:
        return level_kind(model, tag.layer) is LevelKind.MEMORY

    # -- de-composition -----------------------------------------------------
    view_step = ll.de_steps[0]
    total_in = sum(math.prod(s) for s in in_sizes.values())
    steps.append(StepTrace(view_step.index, "de", view_step.op, None, total_in, 0, {1: total_in}, 1))
    state = {b: (r, lay) for (b, r), (_, lay) in zip(view_step.mem, view_step.layout)}
    done: list[MdhLevel] = []
    for s in ll.level_steps("de"):
        done.append(s.level)
        inst = math.prod(parts[lv] for lv in done)
        ext = [N[d - 1] // math.prod(parts[lv] for lv in done if lv.dim == d) for d in range(1, D + 1)]
        t: dict[int, int] = {}
        rd = wr = 0
        for (b, r), (_, lay) in zip(s.mem, s.layout):
            if state[b] != (r, lay):
                moved = inst * _footprint(iv, ext, in_sizes, b)
                _add(t, state[b][0], moved)
                _add(t, r, moved)
                rd += moved
                wr += moved
            state[b] = (r, lay)
        f = s.parts if is_mem(s.tag) else 1
        depth["de"] *= f
        steps.append(StepTrace(s.index, "de", s.op, tuple(s.level), rd, wr, t, f))

    # -- scalar step ----------------------------------------------------------
    sc = ll.scalar_step
    t = {}
    rd = wr = 0
    for (b, r), (_, lay) in zip(sc.mem_in, sc.layout_in):
        n_acc = len(iv[b].accesses)
        if state[b] != (r, lay):
            moved = leaves * _footprint(iv, [1] * D, in_sizes, b)
            _add(t, state[b][0], moved)
            _add(t, r, moved)
            rd += moved
            wr += moved
        _add(t, r, leaves * n_acc)
        rd += leaves * n_acc
    out_state = {}
    for (b, r), (_, lay) in zip(sc.mem_out, sc.layout_out):
        n_acc = len(ov[b].accesses)
        _add(t, r, leaves * n_acc)
        wr += leaves * n_acc
        out_state[b] = (r, lay)
    for lv, tag in zip(sc.order, sc.tags):
        if is_mem(tag):
            depth["scalar"] *= parts[lv]
    steps.append(StepTrace(sc.index, "scalar", "f", None, rd, wr, t, depth["scalar"]))

    # -- re-composition -------------------------------------------------------
    pending = set(parts)
    kinds = [op for op in expr.combine_ops]

    def out_ext(levels):
        return [1 if kinds[d - 1].kind is CombineKind.POINTWISE
                else N[d - 1] // math.prod(parts[lv] for lv in levels if lv.dim == d)
                for d in range(1, D + 1)]

    for s in ll.level_steps("re"):
        before = out_ext(pending)
        inst_before = math.prod(parts[lv] for lv in pending)
        pending.discard(s.level)
        after = out_ext(pending)
        inst_after = inst_before // s.parts
        is_cc = kinds[s.level.dim - 1].kind is CombineKind.CONCAT
        t = {}
        rd = wr = 0
        for (b, r), (_, lay) in zip(s.mem, s.layout):
            if is_cc and out_state[b] == (r, lay):
                continue
            g_rd = inst_before * _footprint(ov, before, out_sizes, b)
            g_wr = inst_after * _footprint(ov, after, out_sizes, b)
            _add(t, out_state[b][0], g_rd)
            _add(t, r, g_wr)
            rd += g_rd
            wr += g_wr
            out_state[b] = (r, lay)
        if is_mem(s.tag):
            f = s.parts
        elif not is_cc and s.parts > 1:
            f = math.ceil(math.log2(s.parts))
        else:
            f = 1
        depth["re"] *= f
        steps.append(StepTrace(s.index, "re", s.op, tuple(s.level), rd, wr, t, f))
    view_out = ll.re_steps[-1]
    t = {}
    rd = wr = 0
    for (b, r), (_, lay) in zip(view_out.mem, view_out.layout):
        if out_state[b] != (r, lay):
            n = math.prod(out_sizes[b])
            _add(t, out_state[b][0], n)
            _add(t, r, n)
            rd += n
            wr += n
    steps.append(StepTrace(view_out.index, "re", view_out.op, None, rd, wr, t, 1))
    names = {r: model.layer_name(r) for r in range(1, model.num_mem + 1)}
    return ExecTrace(tuple(steps), depth, names)


def default_weights(model: AsmModel) -> dict[str, float]:
    """Outer memory regions are slower: weight ``2**(M - r)`` for region id r of M."""
    M = model.num_mem
    return {model.layer_name(r): float(2 ** (M - r)) for r in range(1, M + 1)}


def cost(trace: ExecTrace, model: AsmModel, weights: Mapping[str | int, float] | None = None,
         alpha: float = 1.0) -> float:
    """``sum(weight[r] * traffic[r]) + alpha * parallel_depth``."""
    weights = default_weights(model) if weights is None else weights
    total = 0.0
    for r, n in sorted(trace.traffic().items()):
        name = model.layer_name(r)
        if name in weights:
            w = weights[name]
        elif r in weights:
            w = weights[r]
        else:
            raise MissingWeight(f"no cost weight for region {name}")
        if not w > 0:
            raise ValueError(f"weight for {name} must be positive, got {w}")
        total += float(w) * n
    return total + float(alpha) * trace.parallel_depth
