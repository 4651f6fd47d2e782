import re
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from helpers import requires_cc, spec
from mdh.asm import MdhLevel, preset
from mdh.catalog import load_bundled, load_bundled_config
from mdh.codegen import (CodegenOptions, emit, fusion_prefix, optimize, reduce_buffer, render_node,
                         verify_emitted)
from mdh.core import Buffer, ElemType
from mdh.errors import Mismatch, UnsupportedScalarOp
from mdh.expr import Bin, Const, In
from mdh.highlevel import random_inputs, reference_execute
from mdh.lowering import lower
from mdh.tuning import ReducedSpace, all_levels, fixture, make_config, sample, sequential_config

GOLDEN = Path(__file__).parent / "golden"
LOOP = re.compile(r"for \(int64_t (p_\d+_\d+) = 0; \1 < (P_\d+_\d+); \+\+\1\)")
DEFINE = re.compile(r"#define (P_\d+_\d+) INT64_C\((\d+)\)")


def fig14():
    sc = load_bundled_config("fig14_matvec")
    expr = load_bundled(sc.spec).with_sizes(sc.sizes)
    return expr, lower(expr, sc.model, sc.config)


def loop_bounds(src):
    parts = dict(DEFINE.findall(src))
    return [int(parts[bound]) for _, bound in LOOP.findall(src)]


# -- structure (no compiler needed) ------------------------------------------------


def test_fig14_emission_matches_golden():
    expr, ll = fig14()
    assert emit(ll, expr) == (GOLDEN / "fig14_matvec.c").read_text()


def test_fig14_single_fused_nest():
    expr, ll = fig14()
    rep = optimize(ll, expr)
    assert rep.fully_fused and rep.fused_depth() == 6
    src = emit(ll, expr)
    assert loop_bounds(src) == [2, 4, 8, 16, 32, 64]
    assert src.count("#pragma omp parallel for") == 1
    pragma_next = src.split("#pragma omp parallel for", 1)[1].splitlines()[1]
    assert "(COR,1)" in pragma_next


def test_emission_is_deterministic():
    expr, model = load_bundled("conv2d"), preset("CUDA")
    ll = lower(expr, model, sample(expr, model, None, 4))
    assert emit(ll, expr) == emit(ll, expr)


def test_map_has_no_reduction():
    expr, model = load_bundled("map"), preset("OpenMP")
    for seed in range(5):
        src = emit(lower(expr, model, sample(expr, model, None, seed)), expr)
        assert "reduction merge" not in src and "acc_" not in src and "NSLOT" not in src
        assert src.count("mdh_f(MDA_") + src.count("mdh_f(ll_inp_") == 1


def test_reductions_use_slot_merge():
    expr, model = load_bundled("reduce"), preset("OpenMP")
    cfg = sequential_config(expr, model, layer=model.L)  # all parts on the core layer
    src = emit(lower(expr, model, cfg), expr)
    assert "reduction merge" in src and "#define NSLOT INT64_C(16)" in src
    assert "atomic" not in src


def test_tvm_gpu_fixture_is_fully_fused():
    fx = fixture("TVM-GPU")
    expr = load_bundled(fx.spec).with_sizes(fx.sizes)
    rep = optimize(lower(expr, fx.model, fx.config, fx.constraints), expr)
    assert fx.config.ord_de == fx.config.ord_scalar == fx.config.ord_re
    assert rep.fully_fused


def test_unfused_emission_has_three_nests():
    expr, ll = fig14()
    rep = optimize(ll, expr, CodegenOptions(fuse=False))
    assert rep.fused_prefix == () and [ph for ph, _ in rep.nests] == ["de", "scalar", "re"]
    src = emit(ll, expr, CodegenOptions(fuse=False))
    assert loop_bounds(src) == [2, 4, 8, 16, 32, 64] * 3


def test_partial_fusion_prefix():
    expr, model = load_bundled("matvec"), preset("OpenMP")
    cfg = sequential_config(expr, model)
    levels = list(cfg.ord_de)
    swapped = tuple(levels[:2] + [levels[3], levels[2]] + levels[4:])
    cfg = replace(cfg, ord_re=swapped)
    ll = lower(expr, model, cfg)
    assert fusion_prefix(ll) == tuple(levels[:2])
    assert not optimize(ll, expr).fully_fused


def test_one_part_levels_become_constants():
    expr, ll = fig14()
    assert optimize(ll, expr).constants == ()
    e2, model = load_bundled("matvec"), preset("OpenMP")
    ll2 = lower(e2, model, sequential_config(e2, model, layer=2))
    rep = optimize(ll2, e2)
    assert set(rep.constants) == {lv for lv in all_levels(4, 2) if lv.layer != 2}
    src = emit(ll2, e2)
    assert "const int64_t p_1_1 = 0;" in src and "const int64_t p_2_1 = 0;" not in src
    assert rep.fused_depth() == 2


def test_buffer_elimination_report():
    expr, ll = fig14()
    rep = optimize(ll, expr)
    # v moves to L1 at the first de-composition level, w back to HM on the way out
    assert ("de", "v", (1, 1)) in rep.materialized
    assert ("de", "M", (1, 1)) in rep.elided
    assert ("re", "w", (1, 2)) in rep.materialized


def test_stride_two_dot_size_reduction():
    e = spec(["k"], [8], [("x", "int64", ["2*k"]), ("y", "int64", ["k"])], [("r", "int64", [""])],
             "r = x * y", ["pw:+"])
    red = reduce_buffer(e.input_view["x"], e.input_ranges())
    assert red.stride == (2,) and red.offset == (0,)
    assert red.full_dims == (15,) and red.reduced_dims == (8,)
    assert reduce_buffer(e.input_view["y"], e.input_ranges()).reduced_dims == (8,)
    shifted = spec(["i"], [6], [("v", "int64", ["i+3"])], [("o", "int64", ["i"])], "o = v", ["cc"])
    r2 = reduce_buffer(shifted.input_view["v"], shifted.input_ranges())
    assert (r2.offset, r2.full_dims, r2.reduced_dims) == ((3,), (9,), (6,))


def test_no_pragmas_without_core_loops_or_when_disabled():
    expr, model = load_bundled("matmul"), preset("OpenMP")
    seq = emit(lower(expr, model, sequential_config(expr, model, 1)), expr)
    assert "#pragma omp" not in seq
    par = lower(expr, model, sequential_config(expr, model, model.L))
    assert "#pragma omp parallel for" in emit(par, expr)
    assert "#pragma omp" not in emit(par, expr, CodegenOptions(parallel=False))


def test_render_node():
    types = {"a": ElemType.INT64, "x": ElemType.FLOAT64}
    assert render_node(Bin("max", In("a", 0), Const(2)), types) == "mdh_max_i64(in_a_0, INT64_C(2))"
    assert render_node(Bin("*", In("x", 0), Const(0.5)), types) == "(in_x_0 * 0.5)"
    with pytest.raises(UnsupportedScalarOp):
        render_node(Const(float("inf")), types)


def test_emit_requires_matching_sizes():
    expr, ll = fig14()
    with pytest.raises(ValueError):
        emit(ll, expr.with_sizes([8, 8]))


def test_verify_requires_driver():
    expr, ll = fig14()
    with pytest.raises(ValueError):
        verify_emitted(emit(ll, expr), expr, {}, {})


def test_driver_entry_points():
    expr, ll = fig14()
    src = emit(ll, expr, CodegenOptions(driver=True))
    assert "void mdh_kernel(" in src and "int main(" in src and "mdh_kernel_seconds" in src


# -- compiled (needs a C compiler) -------------------------------------------------


def _check(expr, model, cfg, seed=0, fuse=True, threads=None):
    inputs = random_inputs(expr, seed)
    expected = reference_execute(expr, inputs)
    src = emit(lower(expr, model, cfg), expr, CodegenOptions(driver=True, fuse=fuse))
    return verify_emitted(src, expr, inputs, expected, threads=threads)


@requires_cc
@pytest.mark.parametrize("name,sizes", [
    ("dot", [64]), ("matvec", [16, 32]), ("matmul", [8, 8, 8]), ("jacobi1d", [64]), ("conv2d", [6, 6, 3, 3]),
    ("histo", [4, 32]), ("scan", [32]),
])
def test_compiled_matches_oracle(name, sizes):
    expr, model = load_bundled(name).with_sizes(sizes), preset("OpenMP")
    space = ReducedSpace(expr, model)
    for seed in range(3):
        res = _check(expr, model, space.sample(seed), seed, threads=4)
        assert res.passed, res.message
    res = _check(expr, model, sample(expr, model, None, 99), 99)
    assert res.passed, res.message


@requires_cc
@pytest.mark.parametrize("name", ["matmul", "prl", "double_reduce", "mbbs", "genhisto"])
def test_degenerate_all_ones_sizes(name):
    expr = load_bundled(name)
    expr = expr.with_sizes([1] * expr.D)
    model = preset("OpenMP")
    res = _check(expr, model, sequential_config(expr, model))
    assert res.passed, res.message


@requires_cc
@pytest.mark.parametrize("name", ["matvec", "mbbs", "jacobi3d", "double_reduce"])
def test_fused_equals_unfused(name):
    expr, model = load_bundled(name), preset("CUDA")
    space = ReducedSpace(expr, model)
    for seed in range(2):
        cfg = space.sample(seed)
        a, b = _check(expr, model, cfg, seed, fuse=True), _check(expr, model, cfg, seed, fuse=False)
        assert a.passed and b.passed, (a.message, b.message)


@requires_cc
def test_verify_reports_mismatch():
    expr, model = load_bundled("matvec"), preset("OpenMP")
    inputs = random_inputs(expr, 0)
    expected = reference_execute(expr, inputs)
    wrong = {"w": Buffer(expected["w"].data + 1, expected["w"].defined, ElemType.INT64)}
    src = emit(lower(expr, model, sequential_config(expr, model)), expr, CodegenOptions(driver=True))
    res = verify_emitted(src, expr, inputs, wrong)
    assert not res.passed and res.mismatched == ("w",)
    with pytest.raises(Mismatch):
        verify_emitted(src, expr, inputs, wrong, raise_on_mismatch=True)


@requires_cc
def test_broken_source_is_a_mismatch():
    expr, _ = fig14()
    with pytest.raises(Mismatch, match="does not compile"):
        verify_emitted("int main( { }", expr, {}, {})
