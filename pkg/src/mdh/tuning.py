"""Tuning configurations: partition counts, phase orders, system-model assignments,
memory regions and memory layouts, plus validation, model constraint sets,
random sampling, the reduced search space and the bundled fixtures.

Configurations serialise to JSON with level keys written ``"l,d"``.  When
reading, a key ``"l,*"`` stands for every dimension of layer ``l``, and
regions and system layers may be given by name (``"SM"``) or id.  An
assignment value that names only a layer keeps the level's own dimension as
its tag.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .asm import AsmLevel, AsmModel, MdhLevel
from .asm import from_json as asm_from_json
from .core import CombineKind
from .errors import InvalidConfig, NoValidConfigFound, OutOfRange, ParseError, UnknownFixture
from .highlevel import HighLevelExpr, ValidationReport

Layout = tuple[int, ...]


def all_levels(L: int, D: int) -> list[MdhLevel]:
    return [MdhLevel(l, d) for l in range(1, L + 1) for d in range(1, D + 1)]


@dataclass(frozen=True, eq=True)
class TuningConfig:
    L: int
    D: int
    num_parts: Mapping[MdhLevel, int]
    ord_de: tuple[MdhLevel, ...]
    ord_scalar: tuple[MdhLevel, ...]
    ord_re: tuple[MdhLevel, ...]
    ass_de: Mapping[MdhLevel, AsmLevel]
    ass_scalar: Mapping[MdhLevel, AsmLevel]
    ass_re: Mapping[MdhLevel, AsmLevel]
    mem_de: Mapping[str, Mapping[MdhLevel, int]]
    layout_de: Mapping[str, Mapping[MdhLevel, Layout]]
    mem_scalar_in: Mapping[str, int]
    layout_scalar_in: Mapping[str, Layout]
    mem_scalar_out: Mapping[str, int]
    layout_scalar_out: Mapping[str, Layout]
    mem_re: Mapping[str, Mapping[MdhLevel, int]]
    layout_re: Mapping[str, Mapping[MdhLevel, Layout]]
    c_dev: int = 1024

    __hash__ = None  # mappings inside; use config_hash() for identity

    def parts(self, layer: int, dim: int) -> int:
        return self.num_parts[MdhLevel(layer, dim)]

    def parts_of_dim(self, dim: int) -> list[int]:
        return [self.num_parts[MdhLevel(l, dim)] for l in range(1, self.L + 1)]

    def levels(self) -> list[MdhLevel]:
        return all_levels(self.L, self.D)

    # -- serialisation ------------------------------------------------------
    def to_dict(self, model: AsmModel | None = None) -> dict[str, Any]:
        key = _level_key
        reg = (lambda r: model.layer_name(r)) if model is not None else (lambda r: r)

        def ass(m):
            return {key(k): [(model.layer_name(v.layer) if model else v.layer), v.dim]
                    for k, v in sorted(m.items())}

        def per_level(m, f):
            return {b: {key(k): f(v) for k, v in sorted(mm.items())} for b, mm in m.items()}

        return {
            "L": self.L, "D": self.D,
            "num_parts": {key(k): v for k, v in sorted(self.num_parts.items())},
            "ord_de": [key(k) for k in self.ord_de],
            "ord_scalar": [key(k) for k in self.ord_scalar],
            "ord_re": [key(k) for k in self.ord_re],
            "ass_de": ass(self.ass_de), "ass_scalar": ass(self.ass_scalar), "ass_re": ass(self.ass_re),
            "mem_de": per_level(self.mem_de, reg),
            "layout_de": per_level(self.layout_de, list),
            "mem_scalar_in": {b: reg(v) for b, v in self.mem_scalar_in.items()},
            "layout_scalar_in": {b: list(v) for b, v in self.layout_scalar_in.items()},
            "mem_scalar_out": {b: reg(v) for b, v in self.mem_scalar_out.items()},
            "layout_scalar_out": {b: list(v) for b, v in self.layout_scalar_out.items()},
            "mem_re": per_level(self.mem_re, reg),
            "layout_re": per_level(self.layout_re, list),
            "c_dev": self.c_dev,
        }

    def to_json(self, model: AsmModel | None = None) -> str:
        return json.dumps(self.to_dict(model), indent=1, sort_keys=False)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(None), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], model: AsmModel, expr: HighLevelExpr) -> "TuningConfig":
        return config_from_dict(d, model, expr)


def _level_key(lv: MdhLevel) -> str:
    return f"{lv.layer},{lv.dim}"


def _parse_level(s: Any) -> MdhLevel:
    try:
        if isinstance(s, str):
            l, d = s.split(",")
            return MdhLevel(int(l), int(d))
        l, d = s
        return MdhLevel(int(l), int(d))
    except (ValueError, TypeError):
        raise ParseError(f"bad level key {s!r}; expected 'l,d'") from None


def _expand(m: Mapping[str, Any], L: int, D: int, what: str) -> dict[MdhLevel, Any]:
    """Expand ``"l,*"``, ``"*,d"`` and ``"*"`` wildcard keys; explicit keys win."""
    out: dict[MdhLevel, Any] = {}
    explicit = {}
    for k, v in m.items():
        ks = str(k).replace(" ", "")
        if ks == "*":
            for lv in all_levels(L, D):
                out.setdefault(lv, v)
        elif "*" in ks:
            l, d = ks.split(",")
            for lv in all_levels(L, D):
                if (l == "*" or int(l) == lv.layer) and (d == "*" or int(d) == lv.dim):
                    out[lv] = v
        else:
            explicit[_parse_level(ks)] = v
    out.update(explicit)
    return out


def config_from_dict(d: Mapping[str, Any], model: AsmModel, expr: HighLevelExpr) -> TuningConfig:
    L, D = int(d.get("L", model.L)), int(d.get("D", expr.D))

    def reg(v):
        # ids pass through unchecked so that validate() reports them; names must exist
        if isinstance(v, int) or (isinstance(v, str) and v.isdigit()):
            return int(v)
        return model.layer_id(v)

    def layer(v):
        return int(v) if isinstance(v, int) or str(v).isdigit() else model.layer_id(v)

    try:
        num_parts = {k: int(v) for k, v in _expand(d["num_parts"], L, D, "num_parts").items()}

        def order(name):
            return tuple(_parse_level(x) for x in d[name])

        def ass(name):
            out = {}
            for k, v in _expand(d[name], L, D, name).items():
                if isinstance(v, (str, int)) and "," not in str(v):
                    lay, dim = v, k.dim  # bare layer: the dimension tag follows the level
                else:
                    lay, dim = (v.split(",") if isinstance(v, str) else v)
                out[k] = AsmLevel(layer(lay), int(dim))
            return out

        def regions(name):
            return {b: {k: reg(v) for k, v in _expand(m, L, D, name).items()}
                    for b, m in d[name].items()}

        def layouts(name):
            return {b: {k: tuple(int(x) for x in v) for k, v in _expand(m, L, D, name).items()}
                    for b, m in d[name].items()}

        return TuningConfig(
            L, D, num_parts, order("ord_de"), order("ord_scalar"), order("ord_re"),
            ass("ass_de"), ass("ass_scalar"), ass("ass_re"),
            regions("mem_de"), layouts("layout_de"),
            {b: reg(v) for b, v in d["mem_scalar_in"].items()},
            {b: tuple(v) for b, v in d["layout_scalar_in"].items()},
            {b: reg(v) for b, v in d["mem_scalar_out"].items()},
            {b: tuple(v) for b, v in d["layout_scalar_out"].items()},
            regions("mem_re"), layouts("layout_re"),
            int(d.get("c_dev", 1024)),
        )
    except KeyError as e:
        raise ParseError(f"config is missing field {e.args[0]!r}") from None
    except (TypeError, ValueError, AttributeError, OutOfRange) as e:
        raise ParseError(f"malformed config: {e}") from None


def config_from_json(text: str, model: AsmModel, expr: HighLevelExpr) -> TuningConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", e.lineno, e.colno) from None
    if not isinstance(d, dict):
        raise ParseError("config must be a JSON object", 1, 1)
    return config_from_dict(d, model, expr)


# ---------------------------------------------------------------------------
# model constraint sets
# ---------------------------------------------------------------------------

Check = Callable[[TuningConfig, HighLevelExpr, AsmModel], list[str]]


@dataclass(frozen=True)
class Rule:
    id: str
    title: str
    check: Check = field(repr=False, compare=False)


@dataclass(frozen=True)
class ModelConstraintSet:
    name: str
    rules: tuple[Rule, ...] = ()

    def violations(self, config: TuningConfig, expr: HighLevelExpr, model: AsmModel
                   ) -> list[tuple[str, str]]:
        out = []
        for rule in self.rules:
            for msg in rule.check(config, expr, model):
                out.append((rule.id, f"{rule.title}: {msg}"))
        return out


def _inverse(ass: Mapping[MdhLevel, AsmLevel]) -> dict[AsmLevel, MdhLevel]:
    return {v: k for k, v in ass.items()}


def _core_count_rule(rule_id: str, layer_name: str, bound: Callable[[TuningConfig], int]) -> Rule:
    def check(cfg: TuningConfig, expr: HighLevelExpr, model: AsmModel) -> list[str]:
        if layer_name not in model.layer_names:
            return [f"model {model.name} has no {layer_name} layer"]
        layer = model.layer_id(layer_name)
        msgs = []
        for phase in ("de", "scalar", "re"):
            inv = _inverse(getattr(cfg, f"ass_{phase}"))
            count = 1
            for d in range(1, cfg.D + 1):
                lv = inv.get(AsmLevel(layer, d))
                if lv is not None:
                    count *= cfg.num_parts.get(lv, 1)
            if count > bound(cfg):
                msgs.append(f"{phase} phase uses {count} {layer_name}s, limit {bound(cfg)}")
        return msgs

    return Rule(rule_id, f"Number of {layer_name}s limited", check)


def _combine_region_rule(rule_id: str, layer_name: str, allowed: Sequence[str]) -> Rule:
    def check(cfg: TuningConfig, expr: HighLevelExpr, model: AsmModel) -> list[str]:
        if layer_name not in model.layer_names:
            return [f"model {model.name} has no {layer_name} layer"]
        layer = model.layer_id(layer_name)
        ok = {model.region_id(a) for a in allowed}
        msgs = []
        for lv, al in sorted(cfg.ass_re.items()):
            if al.layer != layer or cfg.num_parts.get(lv, 1) <= 1:
                continue
            if expr.combine_ops[lv.dim - 1].kind is CombineKind.CONCAT:
                continue
            for b, regs in cfg.mem_re.items():
                r = regs.get(lv)
                if r not in ok:
                    rname = model.layer_name(r) if r and 1 <= r <= model.num_mem else r
                    msgs.append(f"{b} at level {tuple(lv)} combined by {layer_name} in {rname}, "
                                f"allowed {'/'.join(allowed)}")
        return msgs

    return Rule(rule_id, f"{layer_name}s combine in {'/'.join(allowed)}", check)


def constraint_set(name: str | None) -> ModelConstraintSet:
    key = "None" if name in (None, "", "none", "None") else name
    if key == "None":
        return ModelConstraintSet("None")
    if key == "CUDA":
        return ModelConstraintSet("CUDA", (
            _core_count_rule("cc-count", "CC", lambda c: 1024),
            _combine_region_rule("smx-combine-dm", "SMX", ["DM"]),
            _combine_region_rule("cc-combine-dm-sm", "CC", ["DM", "SM"]),
        ))
    if key == "CUDA+WRP":
        return ModelConstraintSet("CUDA+WRP", (
            _core_count_rule("cc-count", "CC", lambda c: 1024),
            _combine_region_rule("smx-combine-dm", "SMX", ["DM"]),
            _combine_region_rule("wrp-combine-dm-sm", "WRP", ["DM", "SM"]),
        ))
    if key == "OpenCL":
        return ModelConstraintSet("OpenCL", (
            _core_count_rule("pe-count", "PE", lambda c: c.c_dev),
            _combine_region_rule("cu-combine-gm", "CU", ["GM"]),
            _combine_region_rule("pe-combine-gm-lm", "PE", ["GM", "LM"]),
        ))
    raise KeyError(f"unknown constraint set {name!r}; known: None, CUDA, CUDA+WRP, OpenCL")


CONSTRAINT_SET_NAMES = ("None", "CUDA", "CUDA+WRP", "OpenCL")


def default_constraints(model: AsmModel) -> ModelConstraintSet:
    return constraint_set(model.name if model.name in CONSTRAINT_SET_NAMES else None)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _is_perm(seq: Sequence[int], n: int) -> bool:
    return sorted(seq) == list(range(1, n + 1))


def validate(config: TuningConfig, expr: HighLevelExpr, model: AsmModel,
             constraints: ModelConstraintSet | None = None) -> ValidationReport:
    v: list[tuple[str, str]] = []
    L, D = model.L, expr.D
    levels = all_levels(L, D)
    if (config.L, config.D) != (L, D):
        return ValidationReport((("structure", f"config is for (L,D)=({config.L},{config.D}), "
                                               f"expected ({L},{D})"),))
    level_set = set(levels)
    if set(config.num_parts) != level_set:
        v.append(("structure", "num_parts must cover every level exactly"))
    else:
        for lv, p in config.num_parts.items():
            if p < 1:
                v.append(("full-partitioning", f"level {tuple(lv)} has {p} parts"))
        for d in range(1, D + 1):
            prod = math.prod(config.parts_of_dim(d))
            if prod != expr.sizes[d - 1]:
                v.append(("full-partitioning", f"dimension {d}: parts multiply to {prod}, "
                                               f"size is {expr.sizes[d - 1]}"))
    for name in ("ord_de", "ord_scalar", "ord_re"):
        o = getattr(config, name)
        if len(o) != len(levels) or set(o) != level_set:
            v.append(("order-permutation", f"{name} is not a permutation of the {len(levels)} levels"))
    asm_levels = {AsmLevel(l, d) for l in range(1, L + 1) for d in range(1, D + 1)}
    for name in ("ass_de", "ass_scalar", "ass_re"):
        a = getattr(config, name)
        if set(a) != level_set or set(a.values()) != asm_levels:
            v.append(("assignment-bijection", f"{name} is not a bijection onto the system levels"))
    M = model.num_mem

    def check_region(where, r):
        if not isinstance(r, int) or not 1 <= r <= M:
            v.append(("region-range", f"{where}: region {r} outside 1..{M}"))

    def check_layout(where, lay, rank):
        if not _is_perm(lay, rank):
            v.append(("layout-permutation", f"{where}: {list(lay)} is not a permutation of 1..{rank}"))

    for view, mem, lay, mem_s, lay_s, tag in (
            (expr.input_view, config.mem_de, config.layout_de, config.mem_scalar_in,
             config.layout_scalar_in, "de"),
            (expr.output_view, config.mem_re, config.layout_re, config.mem_scalar_out,
             config.layout_scalar_out, "re")):
        for b in view.buffers:
            if b.name not in mem or b.name not in lay or b.name not in mem_s or b.name not in lay_s:
                v.append(("structure", f"buffer {b.name} lacks regions or layouts"))
                continue
            if set(mem[b.name]) != level_set or set(lay[b.name]) != level_set:
                v.append(("structure", f"mem_{tag}/layout_{tag} of {b.name} must cover every level"))
                continue
            for lv in levels:
                check_region(f"mem_{tag}[{b.name}]{tuple(lv)}", mem[b.name][lv])
                check_layout(f"layout_{tag}[{b.name}]{tuple(lv)}", lay[b.name][lv], b.rank)
            check_region(f"scalar region of {b.name}", mem_s[b.name])
            check_layout(f"scalar layout of {b.name}", lay_s[b.name], b.rank)
    if not v and constraints is not None:
        v.extend(constraints.violations(config, expr, model))
    return ValidationReport(tuple(v))


def ensure_valid(config, expr, model, constraints=None) -> None:
    rep = validate(config, expr, model, constraints)
    if not rep.accepted:
        raise InvalidConfig(str(rep), rep.violations)


# ---------------------------------------------------------------------------
# construction helpers
# ---------------------------------------------------------------------------


def _identity(n: int) -> Layout:
    return tuple(range(1, n + 1))


def make_config(expr: HighLevelExpr, model: AsmModel, num_parts: Mapping[MdhLevel, int], *,
                order: Sequence[MdhLevel] | None = None,
                layer_map: Sequence[int] | None = None,
                in_regions: Mapping[str, Sequence[int]] | int = 1,
                out_regions: Mapping[str, Sequence[int]] | int = 1,
                scalar_in: Mapping[str, int] | int = 1, scalar_out: Mapping[str, int] | int = 1,
                c_dev: int = 1024) -> TuningConfig:
    """Build a config with one order for all phases and ``ass(l,d) = (layer_map[l-1], d)``.

    Regions may be a single id, or per buffer a sequence indexed by layer.
    """
    L, D = model.L, expr.D
    levels = all_levels(L, D)
    order = tuple(order) if order is not None else tuple(levels)
    layer_map = tuple(layer_map) if layer_map is not None else tuple(range(1, L + 1))
    ass = {lv: AsmLevel(layer_map[lv.layer - 1], lv.dim) for lv in levels}

    def regs(spec, name):
        if isinstance(spec, int):
            return {lv: spec for lv in levels}
        return {lv: int(spec[name][lv.layer - 1]) for lv in levels}

    def single(spec, name):
        return spec if isinstance(spec, int) else int(spec[name])

    ins, outs = expr.input_view.buffers, expr.output_view.buffers
    return TuningConfig(
        L, D, dict(num_parts), order, order, order, dict(ass), dict(ass), dict(ass),
        {b.name: regs(in_regions, b.name) for b in ins},
        {b.name: {lv: _identity(b.rank) for lv in levels} for b in ins},
        {b.name: single(scalar_in, b.name) for b in ins},
        {b.name: _identity(b.rank) for b in ins},
        {b.name: single(scalar_out, b.name) for b in outs},
        {b.name: _identity(b.rank) for b in outs},
        {b.name: regs(out_regions, b.name) for b in outs},
        {b.name: {lv: _identity(b.rank) for lv in levels} for b in outs},
        c_dev,
    )


def sequential_config(expr: HighLevelExpr, model: AsmModel, layer: int = 1) -> TuningConfig:
    """All parts on one MDH layer (identity orders and assignments, outermost region everywhere)."""
    parts = {lv: (expr.sizes[lv.dim - 1] if lv.layer == layer else 1) for lv in all_levels(model.L, expr.D)}
    return make_config(expr, model, parts)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def factorize(n: int) -> dict[int, int]:
    out: dict[int, int] = {}
    p = 2
    while p * p <= n:
        while n % p == 0:
            out[p] = out.get(p, 0) + 1
            n //= p
        p += 1
    if n > 1:
        out[n] = out.get(n, 0) + 1
    return out


def count_ordered_factorizations(n: int, k: int) -> int:
    return math.prod(math.comb(e + k - 1, k - 1) for e in factorize(n).values())


def ordered_factorizations(n: int, k: int) -> list[tuple[int, ...]]:
    """All ways to write ``n`` as an ordered product of ``k`` positive factors."""
    if k == 1:
        return [(n,)]
    out = []
    for f in range(1, n + 1):
        if n % f == 0:
            out.extend((f,) + rest for rest in ordered_factorizations(n // f, k - 1))
    return out


def sample_factorization(n: int, k: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform over ordered factorizations: stars and bars independently per prime."""
    factors = [1] * k
    for p, e in sorted(factorize(n).items()):
        bars = sorted(rng.choice(e + k - 1, size=k - 1, replace=False).tolist()) if k > 1 else []
        prev = -1
        for j, b in enumerate(bars + [e + k - 1]):
            factors[j] *= p ** (b - prev - 1)
            prev = b
    return tuple(factors)


def _perm(rng, items):
    items = list(items)
    return [items[i] for i in rng.permutation(len(items))]


def _random_config(expr: HighLevelExpr, model: AsmModel, rng: np.random.Generator) -> TuningConfig:
    L, D, M = model.L, expr.D, model.num_mem
    levels = all_levels(L, D)
    parts = {}
    for d in range(1, D + 1):
        for l, f in enumerate(sample_factorization(expr.sizes[d - 1], L, rng), 1):
            parts[MdhLevel(l, d)] = f
    asm_levels = [AsmLevel(l, d) for l in range(1, L + 1) for d in range(1, D + 1)]

    def bij():
        return dict(zip(levels, _perm(rng, asm_levels)))

    def layout(rank):
        return tuple(int(x) + 1 for x in rng.permutation(rank))

    def reg():
        return int(rng.integers(1, M + 1))

    ins, outs = expr.input_view.buffers, expr.output_view.buffers
    return TuningConfig(
        L, D, parts, tuple(_perm(rng, levels)), tuple(_perm(rng, levels)), tuple(_perm(rng, levels)),
        bij(), bij(), bij(),
        {b.name: {lv: reg() for lv in levels} for b in ins},
        {b.name: {lv: layout(b.rank) for lv in levels} for b in ins},
        {b.name: reg() for b in ins}, {b.name: layout(b.rank) for b in ins},
        {b.name: reg() for b in outs}, {b.name: layout(b.rank) for b in outs},
        {b.name: {lv: reg() for lv in levels} for b in outs},
        {b.name: {lv: layout(b.rank) for lv in levels} for b in outs},
    )


MAX_ATTEMPTS = 10_000


def sample(expr: HighLevelExpr, model: AsmModel, constraints: ModelConstraintSet | None = None,
           rng_seed: int | np.random.Generator = 0, max_attempts: int = MAX_ATTEMPTS) -> TuningConfig:
    """Draw random configs from the full space until one validates."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    for _ in range(max_attempts):
        cfg = _random_config(expr, model, rng)
        if validate(cfg, expr, model, constraints).accepted:
            return cfg
    raise NoValidConfigFound(f"no valid config for {expr.name} on {model.name} after {max_attempts} draws")


# ---------------------------------------------------------------------------
# reduced search space
# ---------------------------------------------------------------------------


def assignment_candidates(model: AsmModel, L: int | None = None) -> list[tuple[str, tuple[int, ...]]]:
    """Layer maps (MDH layer -> system layer) that put the cores on the outermost or innermost layers."""
    mem = list(range(1, model.num_mem + 1))
    cores = list(range(model.num_mem + 1, model.L + 1))
    cands = [("blocked", tuple(cores + mem)), ("strided", tuple(mem + cores))]
    seen, out = set(), []
    for name, lm in cands:
        if lm not in seen:
            seen.add(lm)
            out.append((name, lm))
    return out


def full_space_size(expr: HighLevelExpr, model: AsmModel) -> int:
    """Size of the unconstrained config space for ``expr`` on ``model``."""
    L, D, M = model.L, expr.D, model.num_mem
    n = L * D
    bufs = list(expr.input_view.buffers) + list(expr.output_view.buffers)
    size = math.prod(count_ordered_factorizations(s, L) for s in expr.sizes)
    size *= math.factorial(n) ** 3 * math.factorial(n) ** 3
    size *= M ** (len(bufs) * (n + 1))
    size *= math.prod(math.factorial(b.rank) ** (n + 1) for b in bufs)
    return size


@dataclass(frozen=True)
class ReducedSpace:
    """Configs with one shared order and layer map for all phases, and per-layer regions.

    The layer map is either ``blocked`` (core layers take the outermost MDH
    layers) or ``strided`` (core layers take the innermost ones); dimension
    tags are the identity.  Layouts remain free per level.
    """

    expr: HighLevelExpr
    model: AsmModel
    constraints: ModelConstraintSet | None = None

    @property
    def candidates(self) -> list[tuple[str, tuple[int, ...]]]:
        return assignment_candidates(self.model)

    def cardinality(self) -> int:
        L, D, M = self.model.L, self.expr.D, self.model.num_mem
        n = L * D
        bufs = list(self.expr.input_view.buffers) + list(self.expr.output_view.buffers)
        size = math.prod(count_ordered_factorizations(s, L) for s in self.expr.sizes)
        size *= math.factorial(n) * len(self.candidates)
        size *= M ** (len(bufs) * (L + 1))
        size *= math.prod(math.factorial(b.rank) ** (n + 1) for b in bufs)
        return size

    def full_cardinality(self) -> int:
        return full_space_size(self.expr, self.model)

    def _build(self, parts, order, layer_map, in_regs, out_regs, s_in, s_out, layouts) -> TuningConfig:
        L, D = self.model.L, self.expr.D
        levels = all_levels(L, D)
        ass = {lv: AsmLevel(layer_map[lv.layer - 1], lv.dim) for lv in levels}
        ins, outs = self.expr.input_view.buffers, self.expr.output_view.buffers
        lay_de, lay_s_in, lay_s_out, lay_re = layouts
        return TuningConfig(
            L, D, dict(parts), tuple(order), tuple(order), tuple(order), ass, dict(ass), dict(ass),
            {b.name: {lv: in_regs[b.name][lv.layer - 1] for lv in levels} for b in ins}, lay_de,
            dict(s_in), lay_s_in, dict(s_out), lay_s_out,
            {b.name: {lv: out_regs[b.name][lv.layer - 1] for lv in levels} for b in outs}, lay_re,
        )

    def _random(self, rng: np.random.Generator) -> TuningConfig:
        L, D, M = self.model.L, self.expr.D, self.model.num_mem
        levels = all_levels(L, D)
        parts = {}
        for d in range(1, D + 1):
            for l, f in enumerate(sample_factorization(self.expr.sizes[d - 1], L, rng), 1):
                parts[MdhLevel(l, d)] = f
        order = _perm(rng, levels)
        cands = self.candidates
        layer_map = cands[int(rng.integers(len(cands)))][1]
        ins, outs = self.expr.input_view.buffers, self.expr.output_view.buffers

        def regs():
            return [int(rng.integers(1, M + 1)) for _ in range(L)]

        def layout(rank):
            return tuple(int(x) + 1 for x in rng.permutation(rank))

        in_regs = {b.name: regs() for b in ins}
        out_regs = {b.name: regs() for b in outs}
        s_in = {b.name: int(rng.integers(1, M + 1)) for b in ins}
        s_out = {b.name: int(rng.integers(1, M + 1)) for b in outs}
        layouts = ({b.name: {lv: layout(b.rank) for lv in levels} for b in ins},
                   {b.name: layout(b.rank) for b in ins}, {b.name: layout(b.rank) for b in outs},
                   {b.name: {lv: layout(b.rank) for lv in levels} for b in outs})
        return self._build(parts, order, layer_map, in_regs, out_regs, s_in, s_out, layouts)

    def sample(self, rng: int | np.random.Generator = 0, max_attempts: int = MAX_ATTEMPTS) -> TuningConfig:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        for _ in range(max_attempts):
            cfg = self._random(rng)
            if validate(cfg, self.expr, self.model, self.constraints).accepted:
                return cfg
        raise NoValidConfigFound(f"no valid reduced config for {self.expr.name} on {self.model.name}")

    def contains(self, cfg: TuningConfig) -> bool:
        if not (cfg.ord_de == cfg.ord_scalar == cfg.ord_re):
            return False
        if not (cfg.ass_de == cfg.ass_scalar == cfg.ass_re):
            return False
        maps = {lm for _, lm in self.candidates}
        lm = tuple(cfg.ass_de[MdhLevel(l, 1)].layer for l in range(1, cfg.L + 1))
        if lm not in maps:
            return False
        if any(cfg.ass_de[lv] != AsmLevel(lm[lv.layer - 1], lv.dim) for lv in cfg.levels()):
            return False
        for regs in list(cfg.mem_de.values()) + list(cfg.mem_re.values()):
            for lv in cfg.levels():
                if regs[lv] != regs[MdhLevel(lv.layer, 1)]:
                    return False
        return True

    def neighbors(self, cfg: TuningConfig) -> list[TuningConfig]:
        """Single-parameter mutations that stay inside the reduced space and validate."""
        out: list[TuningConfig] = []
        L, D, M = cfg.L, cfg.D, self.model.num_mem
        # move one prime factor between adjacent layers of a dimension
        for d in range(1, D + 1):
            for l in range(1, L):
                a, b = MdhLevel(l, d), MdhLevel(l + 1, d)
                for src, dst in ((a, b), (b, a)):
                    for p in sorted(factorize(cfg.num_parts[src])):
                        parts = dict(cfg.num_parts)
                        parts[src] //= p
                        parts[dst] *= p
                        out.append(replace(cfg, num_parts=parts))
        # transpose two adjacent positions of the shared order
        for i in range(len(cfg.ord_de) - 1):
            o = list(cfg.ord_de)
            o[i], o[i + 1] = o[i + 1], o[i]
            o = tuple(o)
            out.append(replace(cfg, ord_de=o, ord_scalar=o, ord_re=o))
        # switch between the blocked and strided layer maps
        current = tuple(cfg.ass_de[MdhLevel(l, 1)].layer for l in range(1, L + 1))
        for _, lm in self.candidates:
            if lm != current:
                ass = {lv: AsmLevel(lm[lv.layer - 1], lv.dim) for lv in cfg.levels()}
                out.append(replace(cfg, ass_de=ass, ass_scalar=dict(ass), ass_re=dict(ass)))
        # change one region (per buffer and layer, or a scalar-phase region)
        for field_name in ("mem_de", "mem_re"):
            m = getattr(cfg, field_name)
            for bname in m:
                for l in range(1, L + 1):
                    cur = m[bname][MdhLevel(l, 1)]
                    for r in range(1, M + 1):
                        if r == cur:
                            continue
                        new = {k: dict(v) for k, v in m.items()}
                        for d in range(1, D + 1):
                            new[bname][MdhLevel(l, d)] = r
                        out.append(replace(cfg, **{field_name: new}))
        for field_name in ("mem_scalar_in", "mem_scalar_out"):
            m = getattr(cfg, field_name)
            for bname, cur in m.items():
                for r in range(1, M + 1):
                    if r != cur:
                        out.append(replace(cfg, **{field_name: {**m, bname: r}}))
        return [c for c in out if validate(c, self.expr, self.model, self.constraints).accepted]


def reduce_space(expr: HighLevelExpr, model: AsmModel,
                 constraints: ModelConstraintSet | None = None) -> ReducedSpace:
    return ReducedSpace(expr, model, constraints)


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------

FIXTURE_NAMES = ("TVM-GPU", "TVM-CPU", "PPCG-GPU", "Pluto-CPU")


@dataclass(frozen=True)
class Fixture:
    name: str
    config: TuningConfig
    model: AsmModel
    sizes: tuple[int, ...]
    constraints: ModelConstraintSet
    spec: str
    reconstructed: tuple[str, ...]
    note: str = ""


def _data_text(*parts: str) -> str:
    return resources.files("mdh").joinpath("data", *parts).read_text()


def fixture(name: str) -> Fixture:
    if name not in FIXTURE_NAMES:
        raise UnknownFixture(f"unknown fixture {name!r}; known: {', '.join(FIXTURE_NAMES)}")
    from .catalog import load_bundled  # local import: catalog depends on highlevel only

    d = json.loads(_data_text("fixtures", f"{name}.json"))
    model = asm_from_json(d["model"])
    expr = load_bundled(d["spec"]).with_sizes(d["sizes"])
    cfg = config_from_dict(d["config"], model, expr)
    return Fixture(name, cfg, model, tuple(d["sizes"]), constraint_set(d["constraints"]), d["spec"],
                   tuple(d.get("reconstructed", ())), d.get("note", ""))
