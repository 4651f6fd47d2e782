"""C + OpenMP code emission for lowered expressions.

The emitted translation unit has a preparation section followed by the
loop nests:

* Preparation:
  - sizes and part counts
  - the scalar function ``mdh_f`` and the in-place combine ``mdh_combine``
  - index-function and layout macros
  - staging buffers
* The de-composition nest copies every leaf's inputs, the scalar nest
  applies ``mdh_f``, and the re-composition nest combines the results.

Loops that every phase visits in the same order, with the same assignment,
are fused into one shared outer nest; when all orders coincide the whole
program is a single nest.  A level with one part becomes the constant 0.

Core-tagged loops carry ``#pragma omp parallel for`` (outermost only).
Parallel point-wise combination writes into per-slot accumulators, one slot
per part of the core-tagged point-wise levels.  The slots are merged in
slot order afterwards, so results do not depend on thread scheduling.
Prefix-sum dimensions are combined like concatenation in the nest, then
scanned sequentially in a post-pass.

Several buffers appear in more than one access, so the emitted code walks
buffers in declaration order, and within a buffer, accesses in declaration
order.
"""

from __future__ import annotations

import math
import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .asm import LevelKind, MdhLevel, level_kind
from .core import Buffer, CombineKind, ElemType
from .errors import CompilerUnavailable, Mismatch, UnsupportedScalarOp
from .expr import Bin, Cmp, Const, Idx, In, Node, Select, Unary, infer_type
from .highlevel import BufferDecl, HighLevelExpr, infer_buffer_sizes
from .lowering import LowLevelExpr


@dataclass(frozen=True)
class CodegenOptions:
    fuse: bool = True  # fuse the common loop prefix of the three phases
    parallel: bool = True  # emit OpenMP pragmas on core-tagged loops
    driver: bool = False  # append a main() that reads/writes raw binary buffers
    comments: bool = True


# ---------------------------------------------------------------------------
# optimisation analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReducedBuffer:
    """Staging-buffer geometry after stripping common offsets and strides."""

    name: str
    offset: tuple[int, ...]
    stride: tuple[int, ...]
    full_dims: tuple[int, ...]  # 1 + max per coordinate
    reduced_dims: tuple[int, ...]

    @property
    def full_size(self) -> int:
        return math.prod(self.full_dims)

    @property
    def reduced_size(self) -> int:
        return math.prod(self.reduced_dims)


@dataclass(frozen=True)
class OptimizationReport:
    fused_prefix: tuple[MdhLevel, ...]
    nests: tuple[tuple[str, tuple[MdhLevel, ...]], ...]  # (phase, loop levels) inside the prefix
    elided: tuple[tuple[str, str, tuple[int, int] | None], ...]  # (phase, buffer, level)
    materialized: tuple[tuple[str, str, tuple[int, int] | None], ...]
    reduced: Mapping[str, ReducedBuffer]
    constants: tuple[MdhLevel, ...]

    @property
    def fully_fused(self) -> bool:
        return not self.nests

    def fused_depth(self) -> int:
        """Number of real loops (one-part levels excluded) in the fused prefix."""
        return len([lv for lv in self.fused_prefix if lv not in self.constants])


def fusion_prefix(ll: LowLevelExpr) -> tuple[MdhLevel, ...]:
    """Longest common prefix of the three phase orders with equal assignments."""
    ass = [ll.ass("de"), ll.ass("scalar"), ll.ass("re")]
    out = []
    for a, b, c in zip(ll.ord_de, ll.scalar_step.order, ll.ord_re):
        if not (a == b == c) or not (ass[0][a] == ass[1][a] == ass[2][a]):
            break
        out.append(a)
    return tuple(out)


def reduce_buffer(decl: BufferDecl, ranges) -> ReducedBuffer:
    """Offsets and strides shared by every access of ``decl`` over the MDA box."""
    lows = [r.first for r in ranges]
    highs = [r.last for r in ranges]
    offs, strides, full, red = [], [], [], []
    for c in range(decl.rank):
        forms = [a.forms[c] for a in decl.accesses]
        lo = min(f.bounds(lows, highs)[0] for f in forms)
        hi = max(f.bounds(lows, highs)[1] for f in forms)
        g = 0
        for f in forms:
            for k in f.coeffs:
                g = math.gcd(g, k)
            g = math.gcd(g, f.const - lo)
        g = g or 1
        offs.append(lo)
        strides.append(g)
        full.append(hi + 1)
        red.append((hi - lo) // g + 1)
    return ReducedBuffer(decl.name, tuple(offs), tuple(strides), tuple(full), tuple(red))


def optimize(ll: LowLevelExpr, expr: HighLevelExpr, options: CodegenOptions | None = None
             ) -> OptimizationReport:
    options = options or CodegenOptions()
    prefix = fusion_prefix(ll) if options.fuse else ()
    rest = {
        "de": tuple(lv for lv in ll.ord_de if lv not in prefix),
        "scalar": tuple(lv for lv in ll.scalar_step.order if lv not in prefix),
        "re": tuple(lv for lv in ll.ord_re if lv not in prefix),
    }
    nests = tuple((ph, lv) for ph, lv in rest.items() if lv)
    elided, materialized = [], []
    for phase, steps in (("de", ll.de_steps), ("re", ll.re_steps)):
        prev: dict[str, tuple] = {}
        if phase == "re":
            prev = {b: (r, lay) for (b, r), (_, lay) in zip(ll.scalar_step.mem_out, ll.scalar_step.layout_out)}
        for s in steps:
            for (b, r), (_, lay) in zip(s.mem, s.layout):
                key = (phase, b, tuple(s.level) if s.level else None)
                if prev.get(b) == (r, lay):
                    elided.append(key)
                else:
                    materialized.append(key)
                prev[b] = (r, lay)
    reduced = {b.name: reduce_buffer(b, expr.input_ranges()) for b in expr.input_view.buffers}
    constants = tuple(lv for lv, p in sorted(ll.num_parts().items()) if p == 1)
    return OptimizationReport(prefix, nests, tuple(elided), tuple(materialized), reduced, constants)


# ---------------------------------------------------------------------------
# C rendering helpers
# ---------------------------------------------------------------------------


def _c_lit(v) -> str:
    if isinstance(v, int):
        return f"INT64_C({v})"
    r = repr(float(v))
    if r in ("inf", "-inf", "nan"):
        raise UnsupportedScalarOp(f"non-finite literal {r}")
    return r if any(ch in r for ch in ".e") else r + ".0"


def _slot_var(buf: str, acc: int) -> str:
    return f"in_{buf}_{acc}"


def render_node(node: Node, types: Mapping[str, ElemType]) -> str:
    if isinstance(node, Const):
        return _c_lit(node.value)
    if isinstance(node, In):
        return _slot_var(node.buf, node.access)
    if isinstance(node, Idx):
        return f"i_{node.dim}"
    if isinstance(node, Unary):
        a = render_node(node.arg, types)
        if node.op == "-":
            return f"(-{a})"
        fn = "mdh_abs_i64" if infer_type(node.arg, types) == "int64" else "fabs"
        return f"{fn}({a})"
    if isinstance(node, Bin):
        a, b = render_node(node.lhs, types), render_node(node.rhs, types)
        if node.op in "+-*":
            return f"({a} {node.op} {b})"
        t = infer_type(node.lhs, types)
        suffix = "i64" if t == "int64" else "f64"
        if node.op == "/":
            return f"({a} / {b})"
        if node.op in ("min", "max"):
            return f"mdh_{node.op}_{suffix}({a}, {b})"
    if isinstance(node, Cmp):
        return f"({render_node(node.lhs, types)} {node.op} {render_node(node.rhs, types)})"
    if isinstance(node, Select):
        return (f"({render_node(node.cond, types)} ? {render_node(node.if_true, types)} : "
                f"{render_node(node.if_false, types)})")
    raise UnsupportedScalarOp(f"no C rendering for {node!r}")


def _affine_c(form, names: Sequence[str]) -> str:
    terms = []
    for c, n in zip(form.coeffs, names):
        if c == 1:
            terms.append(n)
        elif c:
            terms.append(f"{c}*{n}")
    if form.const or not terms:
        terms.append(str(form.const))
    return "(" + " + ".join(terms) + ")"


class _Writer:
    def __init__(self):
        self.lines: list[str] = []
        self.depth = 0

    def __call__(self, line: str = "") -> None:
        self.lines.append(("    " * self.depth + line) if line else "")

    def open(self, line: str) -> None:
        self(line + " {")
        self.depth += 1

    def block(self) -> None:
        self("{")
        self.depth += 1

    def close(self, suffix: str = "") -> None:
        self.depth -= 1
        self("}" + suffix)

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def emit(ll: LowLevelExpr, expr: HighLevelExpr, options: CodegenOptions | None = None) -> str:
    options = options or CodegenOptions()
    if tuple(ll.sizes) != tuple(expr.sizes):
        raise ValueError(f"lowered program is for sizes {ll.sizes}, expression has {expr.sizes}")
    return _Emitter(ll, expr, options).run()


def _g(b: str) -> str:
    """C identifier of the user buffer ``b`` (prefixed so it cannot clash with locals)."""
    return f"g_{b}"


def _s(b: str) -> str:
    """C identifier of the staging copy of ``b``."""
    return f"s_{b}"


class _Emitter:
    def __init__(self, ll: LowLevelExpr, expr: HighLevelExpr, options: CodegenOptions):
        self.ll, self.expr, self.opt = ll, expr, options
        self.w = _Writer()
        self.report = optimize(ll, expr, options)
        self.parts = ll.num_parts()
        self.L, self.D = ll.L, ll.D
        self.in_types = expr.input_types()
        self.in_sizes = infer_buffer_sizes(expr.input_view, expr.input_ranges())
        self.out_sizes = infer_buffer_sizes(expr.output_view, expr.output_ranges())
        self.kinds = [op.kind for op in expr.combine_ops]
        self.all_cc = all(k is CombineKind.CONCAT for k in self.kinds)
        self.binop = expr.shared_binop()
        self.out_slots = expr.output_view.slots()
        self.out_types = [expr.output_view[b].elem_type for b, _ in self.out_slots]
        self.in_slots = expr.input_view.slots()
        # staged inputs: scalar-phase region/layout differs from the user buffer
        sc = ll.scalar_step
        self.staged: dict[str, tuple[int, tuple[int, ...]]] = {}
        for (b, r), (_, lay) in zip(sc.mem_in, sc.layout_in):
            rank = expr.input_view[b].rank
            if rank and (r, tuple(lay)) != (1, tuple(range(1, rank + 1))):
                self.staged[b] = (r, tuple(lay))
        ass_re = ll.ass("re")
        self.slot_levels = [lv for lv in ll.ord_re
                            if self.kinds[lv.dim - 1] is CombineKind.POINTWISE and self.parts[lv] > 1
                            and level_kind(ll.model, ass_re[lv].layer) is LevelKind.CORE]
        prefix_dims = {lv.dim for lv in self.report.fused_prefix if self.parts[lv] > 1}
        # dead-dimension rule: per input access, dimensions it never references (and whose
        # levels all run inside the de nest) are copied only once
        self.dead: dict[tuple[str, int], list[int]] = {}
        for b, a in self.in_slots:
            ref = expr.input_view[b].accesses[a].referenced_dims()
            self.dead[(b, a)] = [d for d in range(1, self.D + 1) if d not in ref and d not in prefix_dims]

    # -- helpers ------------------------------------------------------------
    def is_core(self, lv: MdhLevel, phase: str) -> bool:
        return level_kind(self.ll.model, self.ll.ass(phase)[lv].layer) is LevelKind.CORE

    def tag_name(self, lv: MdhLevel, phase: str) -> str:
        t = self.ll.ass(phase)[lv]
        return f"{self.ll.model.layer_name(t.layer)},{t.dim}"

    def leaf_args(self) -> str:
        return ",".join(f"I_{d}" for d in range(1, self.D + 1))

    # -- top level ----------------------------------------------------------
    def run(self) -> str:
        w = self.w
        w(f"/* {self.expr.name}: generated by mdh for system model {self.ll.model.name} */")
        if self.opt.driver:
            w("#define _POSIX_C_SOURCE 199309L")
            w("#include <time.h>")
        w("#include <stdint.h>")
        w("#include <stdlib.h>")
        w("#include <stdio.h>")
        w("#include <math.h>")
        w("#ifdef _OPENMP")
        w("#include <omp.h>")
        w("#endif")
        w()
        w("#define MDH_APPLY(m, args) m args")
        w()
        self.emit_sizes()
        self.emit_helpers()
        self.emit_scalar_function()
        if not self.all_cc:
            self.emit_combine()
        self.emit_index_functions()
        self.emit_kernel()
        if self.opt.driver:
            self.emit_driver()
        return w.text()

    def emit_sizes(self):
        w, ll = self.w, self.ll
        w("/* ---- preparation: sizes and partitioning ---- */")
        for d, n in enumerate(ll.sizes, 1):
            w(f"#define N_{d} INT64_C({n})")
        for lv in sorted(self.parts):
            w(f"#define P_{lv.layer}_{lv.dim} INT64_C({self.parts[lv]})")
        scheme = ll.scheme()
        for d in range(1, self.D + 1):
            stride = ll.sizes[d - 1]
            for l in range(1, self.L + 1):
                stride //= scheme.counts[d - 1][l - 1]
                w(f"#define S_{l}_{d} INT64_C({stride})")
        for d in range(1, self.D + 1):
            terms = " + ".join(f"p_{l}_{d}*S_{l}_{d}" for l in range(1, self.L + 1))
            w(f"#define I_{d} ({terms})")
        w(f"#define NLEAF INT64_C({math.prod(ll.sizes)})")
        leaf = None
        for d in range(1, self.D + 1):
            leaf = f"I_{d}" if leaf is None else f"({leaf})*N_{d} + I_{d}"
        w(f"#define LEAF ({leaf})")
        out_ext = [1 if k is CombineKind.POINTWISE else n for k, n in zip(self.kinds, ll.sizes)]
        w(f"#define NOUT INT64_C({math.prod(out_ext)})")
        o = None
        for d in range(1, self.D + 1):
            if self.kinds[d - 1] is CombineKind.POINTWISE:
                continue
            o = f"I_{d}" if o is None else f"({o})*N_{d} + I_{d}"
        w(f"#define OUT ({o or '0'})")
        if not self.all_cc:
            nslot = math.prod(self.parts[lv] for lv in self.slot_levels)
            w(f"#define NSLOT INT64_C({nslot})")
            s = None
            for lv in self.slot_levels:
                v = f"p_{lv.layer}_{lv.dim}"
                s = v if s is None else f"({s})*P_{lv.layer}_{lv.dim} + {v}"
            w(f"#define SLOT ({s or '0'})")
        w()

    def emit_helpers(self):
        w = self.w
        w("static inline int64_t mdh_abs_i64(int64_t a) { return a < 0 ? -a : a; }")
        w("static inline int64_t mdh_min_i64(int64_t a, int64_t b) { return a < b ? a : b; }")
        w("static inline int64_t mdh_max_i64(int64_t a, int64_t b) { return a > b ? a : b; }")
        w("static inline double mdh_min_f64(double a, double b) { return a < b ? a : b; }")
        w("static inline double mdh_max_f64(double a, double b) { return a > b ? a : b; }")
        w()

    def emit_scalar_function(self):
        w, expr = self.w, self.expr
        params = [f"const {self.in_types[b].c_type} {_slot_var(b, a)}" for b, a in self.in_slots]
        params += [f"const int64_t i_{d}" for d in range(1, self.D + 1)]
        params += [f"{t.c_type} *out_{k}" for k, t in enumerate(self.out_types)]
        w("/* scalar function */")
        w.open(f"static inline void mdh_f({', '.join(params)})")
        for d in range(1, self.D + 1):
            w(f"(void)i_{d};")
        for k, a in enumerate(expr.ordered_assignments()):
            w(f"*out_{k} = {render_node(a.value, self.in_types)};  /* {a.buf}[{a.access}] */")
        w.close()
        w()

    def emit_combine(self):
        w = self.w
        binop = self.binop
        params = [f"{t.c_type} *a_{k}" for k, t in enumerate(self.out_types)]
        params += [f"const {t.c_type} b_{k}" for k, t in enumerate(self.out_types)]
        w(f"/* combine operator {binop.name}: a := a (+) b */")
        w.open(f"static inline void mdh_combine({', '.join(params)})")
        if binop.ops == ("argmax",):
            w("if (b_0 > *a_0 || (b_0 == *a_0 && b_1 < *a_1)) { *a_0 = b_0; *a_1 = b_1; }")
        else:
            ops = binop.ops if len(binop.ops) > 1 else binop.ops * len(self.out_types)
            for k, op in enumerate(ops):
                if op in ("+", "*"):
                    w(f"*a_{k} = *a_{k} {op} b_{k};")
                elif op == "max":
                    w(f"if (b_{k} > *a_{k}) *a_{k} = b_{k};")
                elif op == "min":
                    w(f"if (b_{k} < *a_{k}) *a_{k} = b_{k};")
                else:  # pragma: no cover - BinaryExpr.parse rejects other names
                    raise UnsupportedScalarOp(f"no C rendering for combine operator {op}")
        w.close()
        w()

    def emit_index_functions(self):
        w, expr = self.w, self.expr
        names = [f"(i{d})" for d in range(1, self.D + 1)]
        args = ",".join(f"i{d}" for d in range(1, self.D + 1))
        w("/* ---- index functions, layouts and MDA aliases ---- */")
        for view, sizes in ((expr.input_view, self.in_sizes), (expr.output_view, self.out_sizes)):
            for b in view.buffers:
                g = _g(b.name)
                for c, n in enumerate(sizes[b.name], 1):
                    w(f"#define {g}_N{c} INT64_C({n})")
                cargs = ",".join(f"c{c}" for c in range(1, b.rank + 1))
                lin = "0"
                for c in range(1, b.rank + 1):
                    lin = f"(c{c})" if c == 1 else f"({lin})*{g}_N{c} + (c{c})"
                w(f"#define {g}_AT({cargs}) {g}[{lin}]")
                for k, fn in enumerate(b.accesses):
                    coords = ", ".join(_affine_c(f, names) for f in fn.forms)
                    w(f"#define IDX_{b.name}_{k}({args}) ({coords})")
        for b, (region, lay) in self.staged.items():
            red = self.report.reduced[b]
            rank = expr.input_view[b].rank
            s = _s(b)
            for c in range(1, rank + 1):
                w(f"#define {s}_N{c} INT64_C({red.reduced_dims[c - 1]})")
            cargs = ",".join(f"c{c}" for c in range(1, rank + 1))
            rc = [f"(((c{c}) - ({red.offset[c - 1]})) / {red.stride[c - 1]})" for c in range(1, rank + 1)]
            lin = None
            for c in lay:  # the layout lists buffer dimensions outermost first
                lin = rc[c - 1] if lin is None else f"({lin})*{s}_N{c} + {rc[c - 1]}"
            w(f"/* {b}: staged in {self.ll.model.layer_name(region)} with layout {list(lay)}, "
              f"{red.reduced_size} of {red.full_size} cells after size reduction */")
            w(f"#define {s}_AT({cargs}) {s}[{lin}]")
        # MDA aliases: the value of access (b, a) at the current leaf
        for b, a in self.in_slots:
            if expr.input_view[b].rank == 0:
                src = f"{_g(b)}[0]"
            else:
                at = f"{_s(b)}_AT" if b in self.staged else f"{_g(b)}_AT"
                src = f"MDH_APPLY({at}, IDX_{b}_{a}({self.leaf_args()}))"
            w(f"#define MDA_{b}_{a} ({src})")
        w()

    # -- loop nests -----------------------------------------------------------
    def loops(self, levels: Sequence[MdhLevel], phase: str, parallel_ok: bool) -> int:
        """Open loops for ``levels`` and return how many blocks were opened."""
        w = self.w
        opened = 0
        placed = not (parallel_ok and self.opt.parallel)
        for lv in levels:
            v = f"p_{lv.layer}_{lv.dim}"
            tag = self.tag_name(lv, phase)
            if self.parts[lv] == 1:
                w(f"const int64_t {v} = 0;  /* one part on ({tag}) */")
                w(f"(void){v};")
                continue
            if not placed and self.is_core(lv, phase):
                w("#pragma omp parallel for")
                placed = True
            w(f"for (int64_t {v} = 0; {v} < P_{lv.layer}_{lv.dim}; ++{v}) {{  /* ({tag}) */")
            w.depth += 1
            opened += 1
        return opened

    def close(self, n: int):
        for _ in range(n):
            self.w.close()

    def has_parallel(self, levels: Sequence[MdhLevel], phase: str) -> bool:
        return self.opt.parallel and any(self.parts[lv] > 1 and self.is_core(lv, phase) for lv in levels)

    def body_de(self):
        w = self.w
        for b, a in self.in_slots:
            store = f"ll_inp_{b}_{a}[LEAF_{b}_{a}] = MDA_{b}_{a};"
            guard = " && ".join(f"p_{l}_{d} == 0" for d in self.dead[(b, a)] for l in range(1, self.L + 1)
                                if self.parts[MdhLevel(l, d)] > 1)
            w(f"if ({guard}) {store}" if guard else store)

    def body_scalar(self, from_leaves: bool, to_leaves: bool):
        w = self.w
        if from_leaves:
            args = [f"ll_inp_{b}_{a}[LEAF_{b}_{a}]" for b, a in self.in_slots]
        else:
            args = [f"MDA_{b}_{a}" for b, a in self.in_slots]
        args += [f"I_{d}" for d in range(1, self.D + 1)]
        if to_leaves:
            outs = [f"&ll_out_{k}[LEAF]" for k in range(len(self.out_types))]
            w(f"mdh_f({', '.join(args + outs)});")
            return
        w.block()
        for k, t in enumerate(self.out_types):
            w(f"{t.c_type} r_{k};")
        w(f"mdh_f({', '.join(args + [f'&r_{k}' for k in range(len(self.out_types))])});")
        self.body_re([f"r_{k}" for k in range(len(self.out_types))])
        w.close()

    def body_re(self, values: Sequence[str]):
        w = self.w
        if self.all_cc:
            self.write_outputs(values, self.leaf_args())
            return
        w("const int64_t at = OUT * NSLOT + SLOT;")
        w.open("if (!has[at])")
        for k, v in enumerate(values):
            w(f"acc_{k}[at] = {v};")
        w("has[at] = 1;")
        w.close()
        args = [f"&acc_{k}[at]" for k in range(len(values))] + list(values)
        w(f"else mdh_combine({', '.join(args)});")

    def write_outputs(self, values: Sequence[str], idx: str):
        w = self.w
        for (b, a), v in zip(self.out_slots, values):
            if self.expr.output_view[b].rank == 0:
                w(f"{_g(b)}[0] = {v};")
            else:
                w(f"MDH_APPLY({_g(b)}_AT, IDX_{b}_{a}({idx})) = {v};")

    def emit_kernel(self):
        w, ll, expr = self.w, self.ll, self.expr
        rep = self.report
        fused = rep.fully_fused
        params = [f"const {b.elem_type.c_type} *restrict {_g(b.name)}" for b in expr.input_view.buffers]
        params += [f"{b.elem_type.c_type} *restrict {_g(b.name)}" for b in expr.output_view.buffers]
        w("/* ---- kernel ---- */")
        w.open(f"void mdh_kernel({', '.join(params)})")
        if self.opt.comments:
            w(f"/* fused prefix: {len(rep.fused_prefix)} levels; separate nests: "
              f"{', '.join(ph for ph, _ in rep.nests) or 'none'} */")
            for phase, b, lvl in rep.materialized:
                if lvl is not None:
                    w(f"/* BUF {b} at level {lvl} ({phase}) changes region or layout; "
                      f"host memory backs every region here */")
        for b, (region, lay) in self.staged.items():
            red = rep.reduced[b]
            s, g = _s(b), _g(b)
            ct = expr.input_view[b].elem_type.c_type
            rank = expr.input_view[b].rank
            w(f"{ct} *{s} = ({ct} *)malloc(sizeof({ct}) * INT64_C({red.reduced_size}));")
            for c in range(1, rank + 1):
                w.open(f"for (int64_t r{c} = 0; r{c} < {s}_N{c}; ++r{c})")
            orig = ",".join(f"({red.offset[c - 1]} + {red.stride[c - 1]}*r{c})" for c in range(1, rank + 1))
            w(f"{s}_AT({orig}) = {g}_AT({orig});")
            self.close(rank)
        if not fused:
            for b, a in self.in_slots:
                t = self.in_types[b].c_type
                live = [d for d in range(1, self.D + 1) if d not in self.dead[(b, a)]]
                lin = None
                for d in live:
                    lin = f"I_{d}" if lin is None else f"({lin})*N_{d} + I_{d}"
                n = math.prod(ll.sizes[d - 1] for d in live)
                w(f"#define LEAF_{b}_{a} ({lin or '0'})")
                w(f"{t} *ll_inp_{b}_{a} = ({t} *)malloc(sizeof({t}) * INT64_C({n}));")
            for k, t in enumerate(self.out_types):
                w(f"{t.c_type} *ll_out_{k} = ({t.c_type} *)malloc(sizeof({t.c_type}) * NLEAF);")
        if not self.all_cc:
            for k, t in enumerate(self.out_types):
                w(f"{t.c_type} *acc_{k} = ({t.c_type} *)malloc(sizeof({t.c_type}) * NOUT * NSLOT);")
            w("unsigned char *has = (unsigned char *)calloc((size_t)(NOUT * NSLOT), 1);")

        w("/* ---- de-composition, scalar and re-composition ---- */")
        w.block()
        n_prefix = self.loops(rep.fused_prefix, "de", parallel_ok=True)
        prefix_parallel = self.has_parallel(rep.fused_prefix, "de")
        if fused:
            self.body_scalar(from_leaves=False, to_leaves=False)
        else:
            for phase, levels in rep.nests:
                w.block()
                w(f"/* {phase} nest */")
                opened = self.loops(levels, phase, parallel_ok=not prefix_parallel)
                if phase == "de":
                    self.body_de()
                elif phase == "scalar":
                    self.body_scalar(from_leaves=True, to_leaves=True)
                else:
                    self.body_re([f"ll_out_{k}[LEAF]" for k in range(len(self.out_types))])
                self.close(opened)
                w.close()
        self.close(n_prefix)
        w.close()
        if not self.all_cc:
            self.emit_merge()
        for b in self.staged:
            w(f"free({_s(b)});")
        if not fused:
            for b, a in self.in_slots:
                w(f"free(ll_inp_{b}_{a});")
                w(f"#undef LEAF_{b}_{a}")
            for k in range(len(self.out_types)):
                w(f"free(ll_out_{k});")
        if not self.all_cc:
            for k in range(len(self.out_types)):
                w(f"free(acc_{k});")
            w("free(has);")
        w.close()
        w()

    def emit_merge(self):
        """Reduction merge block: slots in order, prefix-sum post-pass, output view."""
        w = self.w
        nk = len(self.out_types)
        w("/* ---- reduction merge: per-slot accumulators combined in slot order ---- */")
        for k, t in enumerate(self.out_types):
            w(f"{t.c_type} *res_{k} = ({t.c_type} *)malloc(sizeof({t.c_type}) * NOUT);")
        w.open("for (int64_t o = 0; o < NOUT; ++o)")
        w("int first = 1;")
        w.open("for (int64_t s = 0; s < NSLOT; ++s)")
        w("const int64_t at = o * NSLOT + s;")
        w("if (!has[at]) continue;")
        w.open("if (first)")
        for k in range(nk):
            w(f"res_{k}[o] = acc_{k}[at];")
        w("first = 0;")
        w.close()
        w(f"else mdh_combine({', '.join([f'&res_{k}[o]' for k in range(nk)] + [f'acc_{k}[at]' for k in range(nk)])});")
        w.close()
        w.close()
        ext = [1 if k is CombineKind.POINTWISE else n for k, n in zip(self.kinds, self.ll.sizes)]
        strides = [math.prod(ext[d:]) for d in range(1, self.D + 1)]
        for d in range(1, self.D + 1):
            if self.kinds[d - 1] is not CombineKind.PREFIX_SUM:
                continue
            w(f"/* prefix-sum post-pass along dimension {d} */")
            w.open("for (int64_t o = 0; o < NOUT; ++o)")
            w(f"if ((o / INT64_C({strides[d - 1]})) % INT64_C({ext[d - 1]}) == 0) continue;")
            prev = f"o - INT64_C({strides[d - 1]})"
            args = [f"&res_{k}[o]" for k in range(nk)] + [f"res_{k}[{prev}]" for k in range(nk)]
            w(f"mdh_combine({', '.join(args)});")
            w.close()
        w("/* output view */")
        w.open("for (int64_t o = 0; o < NOUT; ++o)")
        for d in range(1, self.D + 1):
            w(f"const int64_t o_{d} = (o / INT64_C({strides[d - 1]})) % INT64_C({ext[d - 1]});")
            w(f"(void)o_{d};")
        self.write_outputs([f"res_{k}[o]" for k in range(nk)], ",".join(f"o_{d}" for d in range(1, self.D + 1)))
        w.close()
        for k in range(nk):
            w(f"free(res_{k});")

    def emit_driver(self):
        w, expr = self.w, self.expr
        w("/* ---- test driver: raw native-endian buffers DIR/NAME.bin -> DIR/NAME.out.bin ---- */")
        w.open("static void *mdh_read(const char *dir, const char *name, size_t bytes)")
        w("char path[4096]; snprintf(path, sizeof path, \"%s/%s.bin\", dir, name);")
        w("FILE *f = fopen(path, \"rb\"); if (!f) { perror(path); exit(1); }")
        w("void *p = malloc(bytes ? bytes : 1);")
        w("if (fread(p, 1, bytes, f) != bytes) { fprintf(stderr, \"short read %s\\n\", path); exit(1); }")
        w("fclose(f); return p;")
        w.close()
        w.open("static void mdh_write(const char *dir, const char *name, const void *p, size_t bytes)")
        w("char path[4096]; snprintf(path, sizeof path, \"%s/%s.out.bin\", dir, name);")
        w("FILE *f = fopen(path, \"wb\"); if (!f) { perror(path); exit(1); }")
        w("if (fwrite(p, 1, bytes, f) != bytes) { fprintf(stderr, \"short write %s\\n\", path); exit(1); }")
        w("fclose(f);")
        w.close()
        w.open("int main(int argc, char **argv)")
        w("if (argc != 2) { fprintf(stderr, \"usage: %s DIR\\n\", argv[0]); return 2; }")
        for b in expr.input_view.buffers:
            n = math.prod(self.in_sizes[b.name])
            t = b.elem_type.c_type
            w(f"{t} *{_g(b.name)} = ({t} *)mdh_read(argv[1], \"{b.name}\", sizeof({t}) * {n});")
        for b in expr.output_view.buffers:
            n = math.prod(self.out_sizes[b.name])
            t = b.elem_type.c_type
            w(f"{t} *{_g(b.name)} = ({t} *)calloc({max(n, 1)}, sizeof({t}));")
        names = [_g(b.name) for b in expr.input_view.buffers + expr.output_view.buffers]
        w("struct timespec t0, t1;")
        w("clock_gettime(CLOCK_MONOTONIC, &t0);")
        w(f"mdh_kernel({', '.join(names)});")
        w("clock_gettime(CLOCK_MONOTONIC, &t1);")
        w('printf("mdh_kernel_seconds=%.9f\\n", '
          '(double)(t1.tv_sec - t0.tv_sec) + 1e-9 * (double)(t1.tv_nsec - t0.tv_nsec));')
        for b in expr.output_view.buffers:
            n = math.prod(self.out_sizes[b.name])
            w(f"mdh_write(argv[1], \"{b.name}\", {_g(b.name)}, sizeof(*{_g(b.name)}) * {n});")
        for n in names:
            w(f"free({n});")
        w("return 0;")
        w.close()


# ---------------------------------------------------------------------------
# compile-and-compare
# ---------------------------------------------------------------------------


def find_compiler() -> str | None:
    for cc in (os.environ.get("CC"), "cc", "gcc", "clang"):
        if cc and shutil.which(cc):
            return shutil.which(cc)
    return None


@dataclass(frozen=True)
class VerifyResult:
    passed: bool
    message: str
    mismatched: tuple[str, ...] = ()
    openmp: bool = True


def compile_c(source: str, workdir: Path) -> tuple[Path, bool]:
    cc = find_compiler()
    if cc is None:
        raise CompilerUnavailable("no C compiler found (set CC)")
    src = workdir / "kernel.c"
    exe = workdir / "kernel"
    src.write_text(source)
    base = [cc, "-O2", "-std=c99", "-fwrapv", "-o", str(exe), str(src), "-lm"]
    r = subprocess.run(base[:2] + ["-fopenmp"] + base[2:], capture_output=True, text=True)
    if r.returncode == 0:
        return exe, True
    r2 = subprocess.run(base, capture_output=True, text=True)
    if r2.returncode != 0:
        raise Mismatch(f"emitted code does not compile:\n{r2.stderr[-4000:]}")
    return exe, False


def verify_emitted(source: str, expr: HighLevelExpr, inputs: Mapping[str, Buffer],
                   expected: Mapping[str, Buffer], rel_tol: float = 1e-6, threads: int | None = None,
                   raise_on_mismatch: bool = False) -> VerifyResult:
    """Compile ``source`` (emitted with ``driver=True``), run it, compare defined output cells."""
    if "int main(" not in source:
        raise ValueError("source has no driver; emit with CodegenOptions(driver=True)")
    with tempfile.TemporaryDirectory(prefix="mdh-") as tmp:
        work = Path(tmp)
        exe, has_omp = compile_c(source, work)
        for name, buf in inputs.items():
            np.ascontiguousarray(buf.data).tofile(work / f"{name}.bin")
        env = dict(os.environ)
        if threads is not None:
            env["OMP_NUM_THREADS"] = str(threads)
        r = subprocess.run([str(exe), str(work)], capture_output=True, text=True, env=env, timeout=600)
        if r.returncode != 0:
            raise Mismatch(f"emitted program failed ({r.returncode}): {r.stderr[-2000:]}")
        bad = []
        for name, exp in expected.items():
            got = np.fromfile(work / f"{name}.out.bin", dtype=exp.elem_type.dtype).reshape(exp.dims)
            m = exp.defined
            if exp.elem_type is ElemType.INT64:
                ok = np.array_equal(got[m], exp.data[m])
            else:
                ok = np.allclose(got[m], exp.data[m], rtol=rel_tol, atol=rel_tol)
            if not ok:
                bad.append(name)
    res = VerifyResult(not bad, "match" if not bad else f"mismatch in {', '.join(bad)}", tuple(bad), has_omp)
    if bad and raise_on_mismatch:
        raise Mismatch(res.message)
    return res


def time_emitted(source: str, inputs: Mapping[str, Buffer], repeats: int = 5,
                 threads: int | None = None) -> float:
    """Median kernel wall time (seconds) of ``repeats`` runs of a driver-enabled emission."""
    if "int main(" not in source:
        raise ValueError("source has no driver; emit with CodegenOptions(driver=True)")
    with tempfile.TemporaryDirectory(prefix="mdh-") as tmp:
        work = Path(tmp)
        exe, _ = compile_c(source, work)
        for name, buf in inputs.items():
            np.ascontiguousarray(buf.data).tofile(work / f"{name}.bin")
        env = dict(os.environ)
        if threads is not None:
            env["OMP_NUM_THREADS"] = str(threads)
        times = []
        for _ in range(repeats):
            r = subprocess.run([str(exe), str(work)], capture_output=True, text=True, env=env, timeout=600)
            if r.returncode != 0:
                raise Mismatch(f"emitted program failed ({r.returncode}): {r.stderr[-2000:]}")
            line = next(ln for ln in r.stdout.splitlines() if ln.startswith("mdh_kernel_seconds="))
            times.append(float(line.split("=", 1)[1]))
    return float(np.median(times))
