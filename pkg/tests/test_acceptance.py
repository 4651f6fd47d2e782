"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line; the same lines are
repeated in the pytest terminal summary.
"""

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from helpers import CONSTRAINT_RULES, constraint_case, criterion, random_affine_view
from mdh.asm import AsmLevel, MdhLevel, preset
from mdh.autotuner import history_prefix_consistent, tune
from mdh.catalog import bundled_names, load_bundled, load_bundled_config
from mdh.codegen import CodegenOptions, emit, find_compiler, optimize, verify_emitted
from mdh.core import Buffer, CombineKind, ElemType, IndexRange, MdaView
from mdh.highlevel import (apply_input_view, apply_output_view, infer_buffer_sizes, infer_buffer_sizes_brute,
                           outputs_match, random_inputs, reference_execute)
from mdh.interpreter import interpret
from mdh.lowering import PartitionScheme, dim_tag, lower
from mdh.tuning import (FIXTURE_NAMES, ReducedSpace, all_levels, default_constraints, fixture,
                        sample, sample_factorization, validate)

GOLDEN = Path(__file__).parent / "golden"
MODELS = ("OpenMP", "CUDA", "CUDA+WRP", "OpenCL", "Artificial2+1", "MultiGPU")


def _float_tol(expr):
    return 1e-6 if any(b.elem_type is ElemType.FLOAT64 for b in expr.output_view.buffers) else 0.0


@criterion(1, "oracle equivalence, 100 random configs per bundled computation")
def test_criterion_1_oracle_equivalence():
    names = bundled_names()
    assert len(names) >= 16
    failures = []
    total = 0
    for name in names:
        expr = load_bundled(name)
        assert max(expr.sizes) <= 16
        inputs = random_inputs(expr, 1)
        expected = reference_execute(expr, inputs)
        tol = _float_tol(expr)
        for k in range(100):
            model = preset(MODELS[k % len(MODELS)])
            cfg = sample(expr, model, default_constraints(model), 1000 + k)
            out, _ = interpret(lower(expr, model, cfg), expr, inputs)
            bad = outputs_match(out, expected, rel_tol=tol)
            total += 1
            if bad:
                failures.append((name, model.name, k, bad))
    assert not failures, failures[:5]
    return f"{total} configs over {len(names)} computations"


# -- criterion 2 -------------------------------------------------------------------

INT_SPECS = [n for n in bundled_names()
             if all(b.elem_type is ElemType.INT64 for b in load_bundled(n).output_view.buffers)]


def _permute_concat_positions(order, expr, rng):
    pos = [i for i, lv in enumerate(order) if expr.combine_ops[lv.dim - 1].kind is CombineKind.CONCAT]
    moved = [order[pos[i]] for i in rng.permutation(len(pos))]
    out = list(order)
    for p, lv in zip(pos, moved):
        out[p] = lv
    return tuple(out)


def _variant(rule, cfg, expr, model, rng):
    L, D, M = model.L, expr.D, model.num_mem
    levels = all_levels(L, D)
    if rule == "concat-orders":
        return replace(cfg, ord_de=_permute_concat_positions(cfg.ord_de, expr, rng),
                       ord_re=_permute_concat_positions(cfg.ord_re, expr, rng))
    if rule == "scalar-order":
        return replace(cfg, ord_scalar=tuple(levels[i] for i in rng.permutation(len(levels))))
    if rule == "assignments-regions-layouts":
        asm = [AsmLevel(l, d) for l in range(1, L + 1) for d in range(1, D + 1)]

        def bij():
            return {lv: asm[i] for lv, i in zip(levels, rng.permutation(len(asm)))}

        def lay(rank):
            return tuple(int(x) + 1 for x in rng.permutation(rank))

        def reg():
            return int(rng.integers(1, M + 1))

        ins, outs = expr.input_view.buffers, expr.output_view.buffers
        return replace(
            cfg, ass_de=bij(), ass_scalar=bij(), ass_re=bij(),
            mem_de={b.name: {lv: reg() for lv in levels} for b in ins},
            layout_de={b.name: {lv: lay(b.rank) for lv in levels} for b in ins},
            mem_scalar_in={b.name: reg() for b in ins}, layout_scalar_in={b.name: lay(b.rank) for b in ins},
            mem_scalar_out={b.name: reg() for b in outs}, layout_scalar_out={b.name: lay(b.rank) for b in outs},
            mem_re={b.name: {lv: reg() for lv in levels} for b in outs},
            layout_re={b.name: {lv: lay(b.rank) for lv in levels} for b in outs})
    if rule == "refactor-parts":
        parts = {}
        for d in range(1, D + 1):
            for l, f in enumerate(sample_factorization(expr.sizes[d - 1], L, rng), 1):
                parts[MdhLevel(l, d)] = f
        return replace(cfg, num_parts=parts)
    raise ValueError(rule)


@criterion(2, "lowering-soundness invariances, 50 paired trials per rule")
def test_criterion_2_invariances():
    rng = np.random.default_rng(2)
    rules = ("concat-orders", "scalar-order", "assignments-regions-layouts", "refactor-parts")
    changed = {r: 0 for r in rules}
    for rule in rules:
        for trial in range(50):
            name = INT_SPECS[trial % len(INT_SPECS)]
            expr = load_bundled(name)
            model = preset(MODELS[trial % len(MODELS)])
            base = sample(expr, model, None, rng)
            var = _variant(rule, base, expr, model, rng)
            assert validate(var, expr, model).accepted, (rule, name)
            changed[rule] += var.config_hash() != base.config_hash()
            inputs = random_inputs(expr, rng)
            a, _ = interpret(lower(expr, model, base), expr, inputs)
            b, _ = interpret(lower(expr, model, var), expr, inputs)
            assert outputs_match(a, b, rel_tol=0.0) == [], (rule, name, trial)
    assert all(c >= 25 for c in changed.values()), changed  # the variants really differ
    return ", ".join(f"{r}: {changed[r]}/50 changed" for r in rules)


@criterion(3, "bundled MatVec reference configuration reproduction")
def test_criterion_3_matvec_reference():
    sc = load_bundled_config("fig14_matvec")
    expr = load_bundled(sc.spec).with_sizes(sc.sizes)
    assert sc.sizes == (512, 4096) and sc.model.counts == (2, 1)
    assert [sc.config.parts_of_dim(d) for d in (1, 2)] == [[2, 8, 32], [4, 16, 64]]
    assert validate(sc.config, expr, sc.model, sc.constraints).accepted
    ll = lower(expr, sc.model, sc.config)
    assert (len(ll.de_steps), 1, len(ll.re_steps)) == (7, 1, 7)
    tags = [(sc.model.layer_name(s.tag.layer), dim_tag(s.tag.dim)) for s in ll.level_steps("de")]
    assert tags == [("HM", "x"), ("HM", "y"), ("COR", "x"), ("COR", "y"), ("L1", "x"), ("L1", "y")]
    assert [(sc.model.layer_name(s.tag.layer), dim_tag(s.tag.dim)) for s in ll.level_steps("re")] == tags[::-1]
    assert ll.pretty() == (GOLDEN / "fig14_matvec.txt").read_text()
    return "7+1+7 steps, golden text identical"


@criterion(4, "named MatMul fixtures at full size")
def test_criterion_4_fixtures():
    t0 = time.perf_counter()
    for name in FIXTURE_NAMES:
        fx = fixture(name)
        expr = load_bundled(fx.spec).with_sizes(fx.sizes)
        assert math.prod(fx.sizes) == 16 * 1000 * 2048
        assert validate(fx.config, expr, fx.model, fx.constraints).accepted, name
        if name == "TVM-GPU":
            assert [fx.config.parts(1, d) for d in (1, 2, 3)] == [2, 50, 1]
            assert [fx.config.parts(3, d) for d in (1, 2, 3)] == [4, 20, 1]
            assert fx.config.ord_de == fx.config.ord_scalar == fx.config.ord_re
        inputs = random_inputs(expr, 4)
        expected = reference_execute(expr, inputs)
        out, _ = interpret(lower(expr, fx.model, fx.config, fx.constraints), expr, inputs)
        assert outputs_match(out, expected, rel_tol=0.0) == [], name
    elapsed = time.perf_counter() - t0
    assert elapsed < 120, f"{elapsed:.1f}s"
    return f"4 fixtures interpreted at 16x1000x2048 in {elapsed:.1f}s"


@criterion(5, "view round-trip on 100 random injective affine views")
def test_criterion_5_view_roundtrip():
    rng = np.random.default_rng(5)
    for _ in range(100):
        D = int(rng.integers(1, 4))
        sizes = [int(x) for x in rng.integers(1, 9, D)]
        view = random_affine_view(rng, D, sizes, injective=True)
        assert all(b.rank <= 3 for b in view.buffers)
        ranges = [IndexRange(0, n) for n in sizes]
        # iv . ov = id on MDAs
        vals = rng.integers(-50, 50, sizes + [len(view.slots())])
        mda = MdaView(tuple(ranges), lambda idx, v=vals: tuple(int(x) for x in v[idx]))
        assert apply_input_view(view, apply_output_view(view, mda), ranges).equals(mda)
        # ov . iv = id on the defined cells of the buffers
        bsizes = infer_buffer_sizes(view, ranges)
        bufs = {b.name: Buffer.from_array(rng.integers(-50, 50, bsizes[b.name]), ElemType.INT64)
                for b in view.buffers}
        back = apply_output_view(view, apply_input_view(view, bufs, ranges), bsizes)
        for b in view.buffers:
            m = back[b.name].defined
            assert m.any() and np.array_equal(back[b.name].data[m], bufs[b.name].data[m])
    return "100 views, both compositions"


@criterion(6, "closed-form buffer sizes equal brute force on 200 random views")
def test_criterion_6_buffer_sizes():
    rng = np.random.default_rng(6)
    for _ in range(200):
        D = int(rng.integers(1, 4))
        sizes = [int(x) for x in rng.integers(1, 7, D)]
        lows = [int(x) for x in rng.integers(0, 3, D)]
        view = random_affine_view(rng, D, [lo + n for lo, n in zip(lows, sizes)], n_buffers=3, max_accesses=3)
        ranges = [IndexRange(lo, lo + n) for lo, n in zip(lows, sizes)]
        assert infer_buffer_sizes(view, ranges) == infer_buffer_sizes_brute(view, ranges)
    return "200 views"


@criterion(7, "constraint tables: 20 violating and 20 compliant configs per rule")
def test_criterion_7_constraints():
    rng = np.random.default_rng(7)
    for rule in CONSTRAINT_RULES:
        for _ in range(20):
            expr, model, cons, cfg = constraint_case(rule, True, rng)
            rep = validate(cfg, expr, model, cons)
            assert not rep.accepted and rep.rule_ids() == {rule}, (rule, str(rep))
            expr, model, cons, cfg = constraint_case(rule, False, rng)
            assert validate(cfg, expr, model, cons).accepted, rule
    return f"{len(CONSTRAINT_RULES)} rules: {', '.join(CONSTRAINT_RULES)}"


@criterion(8, "partitioning is disjoint, contiguous and exhaustive")
def test_criterion_8_partitioning():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n = int(rng.integers(1, 400))
        k = int(rng.integers(1, 6))
        counts = sample_factorization(n, k, rng)
        scheme = PartitionScheme((n,), (counts,))
        leaves = [r for _, r in scheme.leaves(1)]
        assert len(leaves) == n
        assert all(r.size == 1 for r in leaves)
        cells = [i for r in leaves for i in r.indices()]
        assert sorted(cells) == list(range(n)) and len(set(cells)) == n
        for depth in range(k + 1):
            parts = [scheme.part_range(1, p) for p in np.ndindex(*counts[:depth])]
            assert [r.lo for r in parts] == sorted(r.lo for r in parts)
            assert all(a.hi == b.lo for a, b in zip(parts, parts[1:]))  # contiguous tiling
            assert parts[0].lo == 0 and parts[-1].hi == n
    return "100 (N, factorization) pairs"


@criterion(9, "emitted C matches the oracle")
def test_criterion_9_codegen():
    # structural checks run everywhere
    sc = load_bundled_config("fig14_matvec")
    expr = load_bundled(sc.spec).with_sizes(sc.sizes)
    ll = lower(expr, sc.model, sc.config)
    assert emit(ll, expr) == (GOLDEN / "fig14_matvec.c").read_text()
    assert optimize(ll, expr).fused_depth() == 6
    if find_compiler() is None:
        return "structural golden checks only: no C compiler"
    cases = {"dot": [64], "matvec": [16, 32], "matmul": [8, 8, 8], "jacobi1d": [64], "conv2d": [8, 8, 3, 3],
             "histo": [8, 64], "scan": [64]}
    runs = 0
    for name, sizes in cases.items():
        expr = load_bundled(name).with_sizes(sizes)
        inputs = random_inputs(expr, 9)
        expected = reference_execute(expr, inputs)
        for model_name in ("OpenMP", "CUDA"):
            model = preset(model_name)
            space = ReducedSpace(expr, model)
            for k, cfg in enumerate([space.sample(k) for k in range(2)] + [sample(expr, model, None, 90)]):
                src = emit(lower(expr, model, cfg), expr, CodegenOptions(driver=True))
                res = verify_emitted(src, expr, inputs, expected, rel_tol=1e-6, threads=4)
                assert res.passed, (name, model_name, k, res.message)
                runs += 1
    return f"{runs} compiled programs"


@criterion(10, "autotuner determinism and budget monotonicity")
def test_criterion_10_autotuner():
    expr = load_bundled("matmul").with_sizes([16, 16, 16])
    model = preset("OpenMP")
    a = tune(expr, model, budget=40, seed=11)
    b = tune(expr, model, budget=40, seed=11)
    assert a.best == b.best and a.to_csv() == b.to_csv()
    gaps = []
    for seed in range(5):
        short = tune(expr, model, budget=20, seed=seed)
        long = tune(expr, model, budget=200, seed=seed)
        assert long.best_objective <= short.best_objective, seed
        assert history_prefix_consistent(short.history, long.history)
        gaps.append(short.best_objective - long.best_objective)
    return "best(200) <= best(20) for seeds 0-4; improvements " + ", ".join(f"{g:g}" for g in gaps)
