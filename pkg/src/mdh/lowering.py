"""Lowering of a high-level expression to the three-phase low-level form.

The low-level form is a flat step list:

* de-composition: one ``inp_view`` step, then one inverse-concatenation step
  per MDH level in ``ord_de`` order;
* one scalar step;
* re-composition: one combine step per MDH level, applied in reverse
  ``ord_re`` order (the level listed last in ``ord_re`` is the innermost loop
  and is combined first), then one ``out_view`` step.

Steps are numbered globally from 1, so a computation with L layers and D
dimensions has ``2*L*D + 3`` steps.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .asm import AsmLevel, AsmModel, MdhLevel
from .core import IndexRange, MdaView, concat, concat_inverse, make_index_set
from .errors import InvalidConfig, NonDivisible, ParseError
from .highlevel import HighLevelExpr, ensure_md_hom
from .tuning import ModelConstraintSet, TuningConfig, validate

# ---------------------------------------------------------------------------
# uniform partitioning
# ---------------------------------------------------------------------------


def partition_range(n: int, counts: Sequence[int], p: Sequence[int]) -> IndexRange:
    """Range of the part with indices ``p`` (one per layer, outermost first, possibly a prefix).

    The offset is ``sum_l p_l * n / prod_{l' <= l} counts_l'`` and the size is
    ``n / prod_{l <= len(p)} counts_l``.
    """
    total = math.prod(counts)
    if total == 0 or n % total:
        raise NonDivisible(f"part counts {tuple(counts)} do not divide {n}")
    if len(p) > len(counts):
        raise ValueError("more part indices than layers")
    os_, div = 0, 1
    for c, pi in zip(counts, p):
        if not 0 <= pi < c:
            raise IndexError(f"part index {pi} outside 0..{c - 1}")
        div *= c
        os_ += pi * (n // div)
    return IndexRange(os_, os_ + n // div)


@dataclass(frozen=True)
class PartitionScheme:
    """Per-dimension part counts of an L-layer uniform partitioning."""

    sizes: tuple[int, ...]
    counts: tuple[tuple[int, ...], ...]  # counts[d-1][l-1]

    def __post_init__(self):
        for n, c in zip(self.sizes, self.counts):
            if n % math.prod(c):
                raise NonDivisible(f"part counts {c} do not divide {n}")

    @classmethod
    def from_config(cls, sizes: Sequence[int], cfg: TuningConfig) -> "PartitionScheme":
        return cls(tuple(sizes), tuple(tuple(cfg.parts_of_dim(d)) for d in range(1, cfg.D + 1)))

    @property
    def L(self) -> int:
        return len(self.counts[0]) if self.counts else 0

    def part_range(self, dim: int, p: Sequence[int]) -> IndexRange:
        return partition_range(self.sizes[dim - 1], self.counts[dim - 1], p)

    def children(self, dim: int, prefix: Sequence[int]) -> list[IndexRange]:
        c = self.counts[dim - 1][len(prefix)]
        return [self.part_range(dim, tuple(prefix) + (k,)) for k in range(c)]

    def leaf_index(self, dim: int, p: Sequence[int]) -> int:
        r = self.part_range(dim, p)
        return r.lo

    def is_full(self) -> bool:
        return all(math.prod(c) == n for n, c in zip(self.sizes, self.counts))

    def leaves(self, dim: int) -> list[tuple[tuple[int, ...], IndexRange]]:
        c = self.counts[dim - 1]
        return [(p, self.part_range(dim, p)) for p in itertools.product(*(range(k) for k in c))]


# ---------------------------------------------------------------------------
# low-level IR
# ---------------------------------------------------------------------------

_DIM_TAGS = ("x", "y", "z")


def dim_tag(d: int) -> str:
    return _DIM_TAGS[d - 1] if d <= len(_DIM_TAGS) else f"d{d}"


def parse_dim_tag(s: str) -> int:
    if s in _DIM_TAGS:
        return _DIM_TAGS.index(s) + 1
    if s.startswith("d") and s[1:].isdigit():
        return int(s[1:])
    raise ParseError(f"bad dimension tag {s!r}")


@dataclass(frozen=True)
class Step:
    index: int
    phase: str  # "de" | "re"
    kind: str  # "view" | "level"
    level: MdhLevel | None
    tag: AsmLevel | None
    op: str  # inp_view, cc_inv, out_view, or a combine label such as cc, pw(+), ps(+)
    parts: int
    mem: tuple[tuple[str, int], ...]
    layout: tuple[tuple[str, tuple[int, ...]], ...]


@dataclass(frozen=True)
class ScalarStep:
    index: int
    order: tuple[MdhLevel, ...]
    tags: tuple[AsmLevel, ...]  # tag of each level in ``order``
    mem_in: tuple[tuple[str, int], ...]
    layout_in: tuple[tuple[str, tuple[int, ...]], ...]
    mem_out: tuple[tuple[str, int], ...]
    layout_out: tuple[tuple[str, tuple[int, ...]], ...]


@dataclass(frozen=True)
class LowLevelExpr:
    name: str
    sizes: tuple[int, ...]
    model: AsmModel
    combine: tuple[str, ...]  # combine label per dimension
    de_steps: tuple[Step, ...]
    scalar_step: ScalarStep
    re_steps: tuple[Step, ...]
    c_dev: int = field(default=1024, compare=False)

    @property
    def D(self) -> int:
        return len(self.sizes)

    @property
    def L(self) -> int:
        return self.model.L

    def level_steps(self, phase: str) -> list[Step]:
        steps = self.de_steps if phase == "de" else self.re_steps
        return [s for s in steps if s.kind == "level"]

    def num_parts(self) -> dict[MdhLevel, int]:
        return {s.level: s.parts for s in self.level_steps("de")}

    def scheme(self) -> PartitionScheme:
        np_ = self.num_parts()
        return PartitionScheme(self.sizes, tuple(tuple(np_[MdhLevel(l, d)] for l in range(1, self.L + 1))
                                                 for d in range(1, self.D + 1)))

    @property
    def ord_de(self) -> tuple[MdhLevel, ...]:
        return tuple(s.level for s in self.level_steps("de"))

    @property
    def ord_re(self) -> tuple[MdhLevel, ...]:
        """Loop order of the re-composition nest (outermost first)."""
        return tuple(s.level for s in reversed(self.level_steps("re")))

    def ass(self, phase: str) -> dict[MdhLevel, AsmLevel]:
        if phase == "scalar":
            return dict(zip(self.scalar_step.order, self.scalar_step.tags))
        return {s.level: s.tag for s in self.level_steps(phase)}

    def pretty(self) -> str:
        return pretty(self)

    def all_steps(self):
        return list(self.de_steps) + [self.scalar_step] + list(self.re_steps)


def _annot(view, mem_map, lay_map, lv) -> tuple[tuple, tuple]:
    mem = tuple((b.name, mem_map[b.name][lv]) for b in view.buffers)
    lay = tuple((b.name, tuple(lay_map[b.name][lv])) for b in view.buffers)
    return mem, lay


def lower(expr: HighLevelExpr, model: AsmModel, config: TuningConfig,
          constraints: ModelConstraintSet | None = None) -> LowLevelExpr:
    ensure_md_hom(expr)
    rep = validate(config, expr, model, constraints)
    if not rep.accepted:
        raise InvalidConfig(f"cannot lower {expr.name}: {rep}", rep.violations)
    iv, ov = expr.input_view, expr.output_view
    ident_in = tuple((b.name, tuple(range(1, b.rank + 1))) for b in iv.buffers)
    ident_out = tuple((b.name, tuple(range(1, b.rank + 1))) for b in ov.buffers)
    idx = itertools.count(1)

    de = [Step(next(idx), "de", "view", None, None, "inp_view", 1,
               tuple((b.name, 1) for b in iv.buffers), ident_in)]
    for lv in config.ord_de:
        mem, lay = _annot(iv, config.mem_de, config.layout_de, lv)
        de.append(Step(next(idx), "de", "level", lv, config.ass_de[lv], "cc_inv", config.num_parts[lv],
                       mem, lay))
    sc = ScalarStep(next(idx), tuple(config.ord_scalar), tuple(config.ass_scalar[lv] for lv in config.ord_scalar),
                    tuple((b.name, config.mem_scalar_in[b.name]) for b in iv.buffers),
                    tuple((b.name, tuple(config.layout_scalar_in[b.name])) for b in iv.buffers),
                    tuple((b.name, config.mem_scalar_out[b.name]) for b in ov.buffers),
                    tuple((b.name, tuple(config.layout_scalar_out[b.name])) for b in ov.buffers))
    re_ = []
    for lv in reversed(config.ord_re):
        mem, lay = _annot(ov, config.mem_re, config.layout_re, lv)
        re_.append(Step(next(idx), "re", "level", lv, config.ass_re[lv],
                        expr.combine_ops[lv.dim - 1].label(), config.num_parts[lv], mem, lay))
    re_.append(Step(next(idx), "re", "view", None, None, "out_view", 1,
                    tuple((b.name, 1) for b in ov.buffers), ident_out))
    return LowLevelExpr(expr.name, tuple(expr.sizes), model, tuple(op.label() for op in expr.combine_ops),
                        tuple(de), sc, tuple(re_), config.c_dev)


# ---------------------------------------------------------------------------
# pretty printing and parsing
# ---------------------------------------------------------------------------


def _fmt_tag(model: AsmModel, t: AsmLevel | None) -> str:
    return "-" if t is None else f"({model.layer_name(t.layer)},{dim_tag(t.dim)})"


def _fmt_mem(model: AsmModel, mem) -> str:
    return ",".join(f"{b}:{model.layer_name(r)}" for b, r in mem)


def _fmt_lay(lay) -> str:
    return ",".join(f"{b}:[{','.join(map(str, p))}]" for b, p in lay)


def _fmt_level(lv: MdhLevel | None) -> str:
    return "bot" if lv is None else f"({lv.layer},{lv.dim})"


def pretty(ll: LowLevelExpr) -> str:
    m = ll.model
    lines = [f"# lowered {ll.name} sizes={'x'.join(map(str, ll.sizes))} "
             f"model={m.name} mem={','.join(m.mem_layers)} core={','.join(m.core_layers)} "
             f"combine={';'.join(ll.combine)}"]
    for s in ll.de_steps:
        lines.append(_fmt_step(m, s))
    sc = ll.scalar_step
    lines.append(
        f"{sc.index} scalar level=all tag=- op=f "
        f"mem={_fmt_mem(m, sc.mem_in)}->{_fmt_mem(m, sc.mem_out)} "
        f"layout={_fmt_lay(sc.layout_in)}->{_fmt_lay(sc.layout_out)} "
        f"ord={';'.join(_fmt_level(lv) for lv in sc.order)} "
        f"ass={';'.join(_fmt_tag(m, t) for t in sc.tags)}")
    for s in ll.re_steps:
        lines.append(_fmt_step(m, s))
    return "\n".join(lines) + "\n"


def _fmt_step(m: AsmModel, s: Step) -> str:
    parts = f" parts={s.parts}" if s.kind == "level" else ""
    return (f"{s.index} {s.phase} level={_fmt_level(s.level)} tag={_fmt_tag(m, s.tag)} op={s.op}{parts} "
            f"mem={_fmt_mem(m, s.mem)} layout={_fmt_lay(s.layout)}")


_FIELD = re.compile(r"(\w+)=(\S+)")


def _parse_level_txt(s: str) -> MdhLevel | None:
    if s == "bot":
        return None
    m = re.fullmatch(r"\((\d+),(\d+)\)", s)
    if not m:
        raise ParseError(f"bad level {s!r}")
    return MdhLevel(int(m.group(1)), int(m.group(2)))


def _parse_tag(model: AsmModel, s: str) -> AsmLevel | None:
    if s == "-":
        return None
    m = re.fullmatch(r"\((\w+),(\w+)\)", s)
    if not m:
        raise ParseError(f"bad tag {s!r}")
    return AsmLevel(model.layer_id(m.group(1)), parse_dim_tag(m.group(2)))


def _parse_mem(model, s):
    if not s:
        return ()
    return tuple((b, model.region_id(r)) for b, r in (x.split(":") for x in s.split(",")))


def _parse_lay(s):
    return tuple((b, tuple(int(x) for x in p.strip("[]").split(",") if x))
                 for b, p in re.findall(r"(\w+):(\[[\d,]*\])", s))


def parse_lowered(text: str) -> LowLevelExpr:
    """Inverse of :func:`pretty`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# lowered "):
        raise ParseError("missing '# lowered' header", 1, 1)
    head = lines[0].split()
    name = head[2]
    hf = dict(_FIELD.findall(lines[0]))
    model = AsmModel(hf.get("model", "custom"), tuple(hf["mem"].split(",")), tuple(hf["core"].split(",")))
    sizes = tuple(int(x) for x in hf["sizes"].split("x"))
    combine = tuple(hf["combine"].split(";"))
    de, re_, sc = [], [], None
    for lineno, ln in enumerate(lines[1:], 2):
        toks = ln.split()
        try:
            index, phase = int(toks[0]), toks[1]
            f = dict(_FIELD.findall(ln))
            if phase == "scalar":
                mi, mo = f["mem"].split("->")
                li, lo = f["layout"].split("->")
                sc = ScalarStep(index, tuple(_parse_level_txt(x) for x in f["ord"].split(";")),
                                tuple(_parse_tag(model, x) for x in f["ass"].split(";")),
                                _parse_mem(model, mi), _parse_lay(li), _parse_mem(model, mo), _parse_lay(lo))
                continue
            lv = _parse_level_txt(f["level"])
            step = Step(index, phase, "view" if lv is None else "level", lv, _parse_tag(model, f["tag"]),
                        f["op"], int(f.get("parts", 1)), _parse_mem(model, f["mem"]), _parse_lay(f["layout"]))
        except (KeyError, ValueError, IndexError) as e:
            raise ParseError(f"malformed step line: {e}", lineno, 1) from None
        (de if phase == "de" else re_).append(step)
    if sc is None:
        raise ParseError("missing scalar step")
    return LowLevelExpr(name, sizes, model, combine, tuple(de), sc, tuple(re_))


# ---------------------------------------------------------------------------
# literal de-composition with core operators (tiny sizes; used by tests)
# ---------------------------------------------------------------------------


def literal_decompose(ll: LowLevelExpr, mda: MdaView) -> dict[tuple[tuple[int, ...], ...], MdaView]:
    """Apply the de-composition steps with ``concat_inverse``.

    Returns the leaves keyed by their part indices, ``key[d-1][l-1] = p^l_d``.
    """
    scheme = ll.scheme()
    L, D = ll.L, ll.D
    # a part is identified by the partial part-index assignment made so far
    parts: dict[tuple, MdaView] = {(): mda}
    for step in ll.level_steps("de"):
        lv = step.level
        nxt = {}
        for key, view in parts.items():
            chunks = []
            rest = view
            for k in range(step.parts):
                members = [i for i in rest.ranges[lv.dim - 1].indices()
                           if _digit(scheme, lv.dim, i, lv.layer) == k]
                piece = make_index_set(members)
                taken = set(members)
                remaining = make_index_set([i for i in rest.ranges[lv.dim - 1].indices() if i not in taken])
                a, rest = concat_inverse(rest, lv.dim, (piece, remaining))
                chunks.append(a)
            for k, a in enumerate(chunks):
                nxt[tuple(sorted(key + (((lv.layer, lv.dim), k),)))] = a
        parts = nxt
    out = {}
    for key, view in parts.items():
        assigned = dict(key)
        out[tuple(tuple(assigned[(l, d)] for l in range(1, L + 1)) for d in range(1, D + 1))] = view
    return out


def _digit(scheme: PartitionScheme, dim: int, i: int, layer: int) -> int:
    """Part index at ``layer`` of the leaf holding index ``i`` (mixed-radix digit)."""
    counts = scheme.counts[dim - 1]
    n = scheme.sizes[dim - 1]
    stride = n // math.prod(counts[:layer])
    return (i // stride) % counts[layer - 1]


def literal_recompose(leaves: Mapping[tuple, MdaView], D: int) -> MdaView:
    """Concatenate leaves back together in canonical order."""
    views = list(leaves.items())
    cur = {k: v for k, v in views}
    for d in range(D, 0, -1):
        grouped: dict = {}
        for key in sorted(cur):
            gk = key[:d - 1]
            grouped[gk] = concat(grouped[gk], cur[key], d) if gk in grouped else cur[key]
        cur = grouped
    (only,) = cur.values()
    return only


def leaf_key_to_index(scheme: PartitionScheme, key) -> tuple[int, ...]:
    return tuple(scheme.part_range(d, p).lo for d, p in enumerate(key, 1))
