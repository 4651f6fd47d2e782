import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import CONSTRAINT_RULES, constraint_case
from mdh.asm import AsmLevel, MdhLevel, preset
from mdh.catalog import load_bundled, load_bundled_config
from mdh.errors import NoValidConfigFound, ParseError, UnknownFixture
from mdh.tuning import (FIXTURE_NAMES, ReducedSpace, all_levels, assignment_candidates, config_from_dict,
                        config_from_json, constraint_set, count_ordered_factorizations, default_constraints,
                        factorize, fixture, make_config, ordered_factorizations, sample, sample_factorization,
                        sequential_config, validate)


def matvec(sizes=(8, 8)):
    return load_bundled("matvec").with_sizes(list(sizes))


# -- validation --------------------------------------------------------------------


def test_fig14_config_accepted():
    sc = load_bundled_config("fig14_matvec")
    expr = load_bundled(sc.spec).with_sizes(sc.sizes)
    assert sc.sizes == (512, 4096)
    assert [sc.config.parts_of_dim(d) for d in (1, 2)] == [[2, 8, 32], [4, 16, 64]]
    assert validate(sc.config, expr, sc.model, sc.constraints).accepted


def test_non_dividing_partition_rejected():
    sc = load_bundled_config("fig14_matvec")
    expr = load_bundled(sc.spec).with_sizes(sc.sizes)
    parts = dict(sc.config.num_parts)
    parts[MdhLevel(3, 1)] = 31  # 2*8*31 = 496
    rep = validate(replace(sc.config, num_parts=parts), expr, sc.model)
    assert rep.rule_ids() == {"full-partitioning"}
    bad = expr.with_sizes([511, 4096])
    assert validate(sc.config, bad, sc.model).rule_ids() == {"full-partitioning"}


def test_cuda_thread_limit():
    expr = load_bundled("matmul").with_sizes([64, 32, 4])
    model = preset("CUDA")
    parts = {lv: 1 for lv in all_levels(model.L, 3)}
    parts.update({MdhLevel(5, 1): 64, MdhLevel(5, 2): 32, MdhLevel(1, 3): 4})  # 2048 CCs
    rep = validate(make_config(expr, model, parts), expr, model, constraint_set("CUDA"))
    assert rep.rule_ids() == {"cc-count"}
    assert "Number of CCs limited" in str(rep)
    assert validate(make_config(expr, model, parts), expr, model, constraint_set("None")).accepted


@pytest.mark.parametrize("rule", sorted(CONSTRAINT_RULES))
def test_constraint_rules_fire_exactly(rule):
    rng = np.random.default_rng(abs(hash(rule)) % 2**32)
    for _ in range(5):
        expr, model, cons, cfg = constraint_case(rule, True, rng)
        assert validate(cfg, expr, model, cons).rule_ids() == {rule}
        expr, model, cons, cfg = constraint_case(rule, False, rng)
        assert validate(cfg, expr, model, cons).accepted


def test_concat_dimensions_are_exempt_from_region_rules():
    expr = load_bundled("matmul").with_sizes([4, 4, 1])
    model = preset("CUDA")
    parts = {lv: 1 for lv in all_levels(model.L, 3)}
    parts.update({MdhLevel(4, 1): 4, MdhLevel(5, 2): 4})
    cfg = make_config(expr, model, parts, out_regions=3)  # RM everywhere
    assert validate(cfg, expr, model, constraint_set("CUDA")).accepted


def test_structural_rules():
    expr, model = matvec(), preset("OpenMP")
    cfg = sequential_config(expr, model)
    assert validate(cfg, expr, model).accepted
    levels = all_levels(model.L, 2)
    rotated = levels[1:] + levels[:1]
    assert validate(replace(cfg, ord_re=tuple(levels[:-1])), expr, model).rule_ids() == {"order-permutation"}
    dup = dict(cfg.ass_de)
    dup[levels[0]] = dup[levels[1]]
    assert validate(replace(cfg, ass_de=dup), expr, model).rule_ids() == {"assignment-bijection"}
    assert validate(replace(cfg, ord_scalar=tuple(rotated)), expr, model).accepted
    assert validate(replace(cfg, mem_scalar_in={"M": 9, "v": 1}), expr, model).rule_ids() == {"region-range"}
    assert validate(replace(cfg, layout_scalar_in={"M": (1, 1), "v": (1,)}), expr, model).rule_ids() == {
        "layout-permutation"}
    other = load_bundled("matmul")
    assert validate(sequential_config(other, model), expr, model).rule_ids() == {"structure"}


def test_validate_is_pure():
    expr, model = load_bundled("matmul"), preset("CUDA")
    cfg = sample(expr, model, constraint_set("CUDA"), 3)
    assert validate(cfg, expr, model, constraint_set("CUDA")) == validate(cfg, expr, model, constraint_set("CUDA"))


def test_default_constraints_follow_model_name():
    assert default_constraints(preset("CUDA")).name == "CUDA"
    assert default_constraints(preset("OpenMP")).name == "None"
    with pytest.raises(KeyError):
        constraint_set("Vulkan")


# -- factorizations and sampling ---------------------------------------------------


@given(st.integers(1, 400), st.integers(1, 4))
def test_ordered_factorization_count(n, k):
    facts = ordered_factorizations(n, k)
    assert len(facts) == len(set(facts)) == count_ordered_factorizations(n, k)
    assert all(math.prod(f) == n for f in facts)


def test_factorize():
    assert factorize(360) == {2: 3, 3: 2, 5: 1}
    assert factorize(1) == {}


def test_sample_factorization_is_uniform():
    rng = np.random.default_rng(0)
    facts = ordered_factorizations(12, 3)
    counts = {f: 0 for f in facts}
    for _ in range(9000):
        counts[sample_factorization(12, 3, rng)] += 1
    expected = 9000 / len(facts)
    assert all(abs(c - expected) < 0.2 * expected for c in counts.values())


def test_sample_matvec_seed0_validates():
    expr, model = matvec(), preset("Artificial2+1")
    cfg = sample(expr, model, None, 0)
    assert validate(cfg, expr, model).accepted
    assert sample(expr, model, None, 0) == cfg


def test_all_ones_partitioning():
    expr = matvec((1, 1))
    for name in ("OpenMP", "CUDA", "Artificial2+1"):
        cfg = sample(expr, preset(name), None, 5)
        assert set(cfg.num_parts.values()) == {1}


def test_cuda_samples_all_validate():
    expr, model, cons = load_bundled("matmul"), preset("CUDA"), constraint_set("CUDA")
    for seed in range(1000):
        assert validate(sample(expr, model, cons, seed), expr, model, cons).accepted


def test_no_valid_config_found():
    # the CUDA rules need a CC layer, which the OpenMP model lacks, so no draw can validate
    expr = load_bundled("matmul")
    with pytest.raises(NoValidConfigFound):
        sample(expr, preset("OpenMP"), constraint_set("CUDA"), 0, max_attempts=20)


# -- config serialisation ----------------------------------------------------------


@settings(max_examples=25)
@given(st.sampled_from(["matvec", "conv2d", "prl", "double_reduce"]), st.integers(0, 10**6))
def test_config_json_roundtrip(name, seed):
    expr, model = load_bundled(name), preset("CUDA")
    cfg = sample(expr, model, None, seed)
    assert config_from_json(cfg.to_json(model), model, expr) == cfg
    assert config_from_json(cfg.to_json(), model, expr) == cfg
    assert config_from_json(cfg.to_json(model), model, expr).config_hash() == cfg.config_hash()


def test_config_wildcards():
    sc = load_bundled_config("fig14_matvec")
    cfg = sc.config
    assert cfg.ass_de[MdhLevel(2, 1)] == AsmLevel(3, 1)  # COR
    assert cfg.mem_re["w"][MdhLevel(1, 2)] == 1 and cfg.mem_re["w"][MdhLevel(3, 1)] == 2


def test_config_parse_errors():
    expr, model = matvec(), preset("OpenMP")
    with pytest.raises(ParseError):
        config_from_json("[1, 2]", model, expr)
    with pytest.raises(ParseError) as e:
        config_from_json('{"num_parts": {', model, expr)
    assert e.value.line == 1
    with pytest.raises(ParseError, match="ord_de"):
        config_from_dict({"num_parts": {"*": 1}}, model, expr)


# -- fixtures ----------------------------------------------------------------------


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_fixture_validates(name):
    fx = fixture(name)
    expr = load_bundled(fx.spec).with_sizes(fx.sizes)
    assert sorted(fx.sizes) == [16, 1000, 2048]
    assert validate(fx.config, expr, fx.model, fx.constraints).accepted


def test_tvm_gpu_fixture_shape():
    fx = fixture("TVM-GPU")
    cfg = fx.config
    assert [cfg.parts(1, d) for d in (1, 2, 3)] == [2, 50, 1]
    assert [cfg.parts(3, d) for d in (1, 2, 3)] == [4, 20, 1]
    assert cfg.ord_de == cfg.ord_scalar == cfg.ord_re
    assert fx.model.name == "CUDA" and fx.constraints.name == "CUDA"


def test_unknown_fixture():
    with pytest.raises(UnknownFixture):
        fixture("Halide")


# -- reduced space -----------------------------------------------------------------


def test_reduced_space_smaller_than_full():
    expr, model = matvec(), preset("Artificial2+1")
    space = ReducedSpace(expr, model)
    assert space.cardinality() < space.full_cardinality()


def _brute_full_space(expr, model):
    """Enumerate the whole config space of a tiny case (one memory region, rank <= 1 buffers)."""
    L, D = model.L, expr.D
    levels = all_levels(L, D)
    asm = [AsmLevel(l, d) for l in range(1, L + 1) for d in range(1, D + 1)]
    parts = [dict(zip([MdhLevel(l, d) for l in range(1, L + 1)], f))
             for d in range(1, D + 1) for f in ordered_factorizations(expr.sizes[d - 1], L)]
    assert D == 1
    perms = list(itertools.permutations(levels))
    bijs = [dict(zip(levels, p)) for p in itertools.permutations(asm)]
    base = make_config(expr, model, parts[0])
    seen = set()
    for p, o1, o2, o3, a1, a2, a3 in itertools.product(parts, perms, perms, perms, bijs, bijs, bijs):
        cfg = replace(base, num_parts=p, ord_de=o1, ord_scalar=o2, ord_re=o3, ass_de=a1, ass_scalar=a2,
                      ass_re=a3)
        assert validate(cfg, expr, model).accepted
        seen.add(cfg.config_hash())
    return len(seen)


def test_full_cardinality_matches_enumeration():
    from mdh.asm import AsmModel

    expr = load_bundled("dot").with_sizes([4])
    model = AsmModel("tiny", ("M",), ("C",))
    assert ReducedSpace(expr, model).full_cardinality() == _brute_full_space(expr, model) == 3 * 2**6


def test_reduced_space_candidates_stay_distinct_for_one_dimension():
    # blocked and strided maps put the core layer on different MDH layers, even when D = 1
    expr = load_bundled("reduce")
    cands = assignment_candidates(preset("OpenMP"))
    assert [n for n, _ in cands] == ["blocked", "strided"]
    assert cands[0][1] == (4, 1, 2, 3) and cands[1][1] == (1, 2, 3, 4)
    assert ReducedSpace(expr, preset("OpenMP")).cardinality() > 0


@pytest.mark.parametrize("model_name,cons", [("OpenMP", None), ("CUDA", "CUDA"), ("OpenCL", "OpenCL")])
def test_reduced_samples_validate_and_are_contained(model_name, cons):
    expr, model = load_bundled("matmul"), preset(model_name)
    space = ReducedSpace(expr, model, constraint_set(cons))
    for seed in range(50):
        cfg = space.sample(seed)
        assert space.contains(cfg)
        assert validate(cfg, expr, model, space.constraints).accepted


def test_reduced_neighbors_are_single_mutations_inside_the_space():
    expr, model = matvec(), preset("OpenMP")
    space = ReducedSpace(expr, model)
    cfg = space.sample(1)
    nbrs = space.neighbors(cfg)
    assert nbrs
    for n in nbrs:
        assert space.contains(n) and validate(n, expr, model).accepted
        assert n.config_hash() != cfg.config_hash()
        changed = [f for f in ("num_parts", "ord_de", "ass_de", "mem_de", "mem_re", "mem_scalar_in",
                               "mem_scalar_out") if getattr(n, f) != getattr(cfg, f)]
        assert len(changed) == 1


def test_full_sample_rarely_lands_in_reduced_space():
    expr, model = matvec(), preset("OpenMP")
    space = ReducedSpace(expr, model)
    assert not any(space.contains(sample(expr, model, None, s)) for s in range(20))
