"""Shared builders for the test suite."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from mdh.codegen import find_compiler
from mdh.core import ElemType
from mdh.expr import AffineForm, IndexFn
from mdh.highlevel import BufferDecl, ViewSpec, spec_from_dict

requires_cc = pytest.mark.skipif(find_compiler() is None, reason="no C compiler on PATH")


def spec(dims, sizes, inputs, outputs, scalar, combine, name="t"):
    """Build an expression from compact input/output tuples ``(name, type, [accesses])``."""

    def view(entries):
        return [{"name": n, "type": t, "rank": len(acc[0].split(",")) if acc[0] else 0, "accesses": acc}
                for n, t, acc in entries]

    return spec_from_dict({"name": name, "dims": list(dims), "sizes": list(sizes), "inputs": view(inputs),
                           "outputs": view(outputs), "scalar": scalar, "combine": list(combine)})


def random_affine_view(rng: np.random.Generator, D: int, sizes, n_buffers: int = 2,
                       max_accesses: int = 2, injective: bool = False) -> ViewSpec:
    """Random affine view over the box ``[0, sizes)``; offsets keep every index non-negative.

    With ``injective=True`` every buffer's accesses map distinct MDA cells to
    distinct buffer cells (no two (cell, access) pairs share a target), which
    is what makes the output view total on its image and invertible.
    """
    highs = [n - 1 for n in sizes]
    while True:
        decls = []
        for b in range(n_buffers):
            rank = int(rng.integers(1, 4))
            accesses = []
            for _ in range(int(rng.integers(1, max_accesses + 1))):
                forms = []
                for _c in range(rank):
                    coeffs = tuple(int(x) for x in rng.integers(-2, 4, D))
                    lo, _ = AffineForm(0, coeffs).bounds([0] * D, highs)
                    forms.append(AffineForm(-lo + int(rng.integers(0, 3)), coeffs))
                accesses.append(IndexFn(tuple(forms), D))
            decls.append(BufferDecl(f"b{b}", ElemType.INT64, rank, tuple(accesses)))
        view = ViewSpec(tuple(decls))
        if not injective or all(_injective(d, sizes) for d in decls):
            return view


def _injective(decl: BufferDecl, sizes) -> bool:
    seen = set()
    for idx in itertools.product(*(range(n) for n in sizes)):
        for a in decl.accesses:
            t = a.at(idx)
            if t in seen:
                return False
            seen.add(t)
    return True


# -- hand-built constraint-table cases ---------------------------------------------

# rule id -> (system model, constraint set, core layer the rule is about, kind, allowed regions)
CONSTRAINT_RULES = {
    "cc-count": ("CUDA", "CUDA", "CC", "count", None),
    "smx-combine-dm": ("CUDA", "CUDA", "SMX", "region", ("DM",)),
    "cc-combine-dm-sm": ("CUDA", "CUDA", "CC", "region", ("DM", "SM")),
    "wrp-combine-dm-sm": ("CUDA+WRP", "CUDA+WRP", "WRP", "region", ("DM", "SM")),
    "pe-count": ("OpenCL", "OpenCL", "PE", "count", None),
    "cu-combine-gm": ("OpenCL", "OpenCL", "CU", "region", ("GM",)),
    "pe-combine-gm-lm": ("OpenCL", "OpenCL", "PE", "region", ("GM", "LM")),
}


def constraint_case(rule: str, violate: bool, rng: np.random.Generator):
    """A MatMul config that breaks exactly ``rule`` (or sits on the compliant side of it).

    Identity layer map and phase orders; dimension 3 is the point-wise one.
    Returns ``(expr, model, constraints, config)``.
    """
    from mdh.asm import MdhLevel, preset
    from mdh.catalog import load_bundled
    from mdh.tuning import constraint_set, make_config

    model_name, cons_name, layer_name, kind, allowed = CONSTRAINT_RULES[rule]
    model = preset(model_name)
    layer = model.layer_id(layer_name)
    L = model.L
    parts = {MdhLevel(l, d): 1 for l in range(1, L + 1) for d in (1, 2, 3)}
    c_dev = 1024
    regions = [1] * L  # outermost memory region everywhere: always allowed
    if kind == "count":
        c_dev = int(rng.choice([64, 256, 1024])) if model_name == "OpenCL" else 1024
        while True:
            p = [2 ** int(rng.integers(0, 8)) for _ in range(3)]
            total = p[0] * p[1] * p[2]
            if (total > c_dev) == violate and total <= 4 * c_dev:
                break
        for d in (1, 2, 3):
            parts[MdhLevel(layer, d)] = p[d - 1]
        # point-wise parts on a core layer are combined in region 1, which every rule allows
    else:
        parts[MdhLevel(layer, 3)] = int(rng.choice([2, 4, 8]))
        parts[MdhLevel(layer, int(rng.integers(1, 3)))] = int(rng.choice([1, 2, 4]))
        names = model.mem_layers
        pool = [n for n in names if (n in allowed) != violate]
        regions[layer - 1] = model.layer_id(str(rng.choice(pool)))
    sizes = []
    for d in (1, 2, 3):
        extra = 2 ** int(rng.integers(0, 3))
        parts[MdhLevel(1, d)] *= extra  # layer 1 is memory: carries no rule
        sizes.append(int(np.prod([parts[MdhLevel(l, d)] for l in range(1, L + 1)])))
    expr = load_bundled("matmul").with_sizes(sizes)
    cfg = make_config(expr, model, parts, out_regions={"C": regions}, c_dev=c_dev)
    return expr, model, constraint_set(cons_name), cfg


# -- acceptance bookkeeping --------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, str, str]] = {}  # criterion -> (status, title, detail)


def criterion(number: int, title: str):
    """Record a PASS/FAIL line for an acceptance test; the wrapped test may return a detail string."""
    import functools
    import time

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
            except pytest.skip.Exception:
                ACCEPTANCE[number] = ("SKIP", title, "")
                raise
            except BaseException as e:
                ACCEPTANCE[number] = ("FAIL", title, f"{type(e).__name__}: {str(e).splitlines()[0][:160]}"
                                      if str(e) else type(e).__name__)
                print(f"criterion {number}: FAIL {title}")
                raise
            detail = f"{detail}; {time.perf_counter() - t0:.1f}s" if detail else f"{time.perf_counter() - t0:.1f}s"
            ACCEPTANCE[number] = ("PASS", title, detail)
            print(f"criterion {number}: PASS {title} ({detail})")

        return wrapper

    return deco
