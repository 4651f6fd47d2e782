import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdh.asm import AsmLevel, MdhLevel, preset
from mdh.catalog import bundled_names, load_bundled, load_bundled_config
from mdh.core import IndexRange, MdaView
from mdh.errors import InvalidConfig, MixedIncompatibleOperators, NonDivisible, ParseError
from mdh.lowering import (PartitionScheme, dim_tag, literal_decompose, literal_recompose, lower,
                          parse_dim_tag, parse_lowered, partition_range, pretty)
from mdh.tuning import all_levels, constraint_set, make_config, sample, sequential_config

GOLDEN = Path(__file__).parent / "golden"


def fig14():
    sc = load_bundled_config("fig14_matvec")
    expr = load_bundled(sc.spec).with_sizes(sc.sizes)
    return expr, sc.model, sc.config


# -- partitioning ------------------------------------------------------------------


def test_partition_range_examples():
    assert partition_range(16, (2, 4, 2), (1,)) == IndexRange(8, 16)
    assert partition_range(16, (2, 4, 2), (1, 3)) == IndexRange(14, 16)
    assert partition_range(16, (2, 4, 2), (1, 3, 1)) == IndexRange(15, 16)
    assert partition_range(16, (2, 4, 2), ()) == IndexRange(0, 16)


def test_partition_range_errors():
    with pytest.raises(NonDivisible):
        partition_range(10, (4,), (0,))
    with pytest.raises(IndexError):
        partition_range(8, (2, 2), (2,))


@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.integers(1, 3))
def test_partitioning_is_a_tiling(counts, extra):
    n = math.prod(counts) * extra
    scheme = PartitionScheme((n,), (tuple(counts),))
    leaves = [r for _, r in scheme.leaves(1)]
    assert len(leaves) == math.prod(counts)
    cells = [i for r in leaves for i in r.indices()]
    assert cells == list(range(n))  # disjoint, contiguous, exhaustive and in row-major order
    for prefix_len in range(len(counts)):
        p = tuple(0 for _ in range(prefix_len))
        kids = scheme.children(1, p)
        assert kids[0].lo == scheme.part_range(1, p).lo and kids[-1].hi == scheme.part_range(1, p).hi


# -- lowering ----------------------------------------------------------------------


def test_fig14_step_structure():
    expr, model, cfg = fig14()
    ll = lower(expr, model, cfg)
    assert (len(ll.de_steps), len(ll.re_steps)) == (7, 7)
    assert len(ll.all_steps()) == 15
    assert [s.index for s in ll.all_steps()] == list(range(1, 16))
    tags = [(model.layer_name(s.tag.layer), dim_tag(s.tag.dim)) for s in ll.level_steps("de")]
    assert tags == [("HM", "x"), ("HM", "y"), ("COR", "x"), ("COR", "y"), ("L1", "x"), ("L1", "y")]
    re_tags = [(model.layer_name(s.tag.layer), dim_tag(s.tag.dim)) for s in ll.level_steps("re")]
    assert re_tags == tags[::-1]
    assert [s.op for s in ll.level_steps("re")] == ["pw(+)", "cc"] * 3
    assert ll.de_steps[0].op == "inp_view" and ll.re_steps[-1].op == "out_view"
    assert [s.parts for s in ll.level_steps("de")] == [2, 4, 8, 16, 32, 64]


def test_fig14_golden():
    expr, model, cfg = fig14()
    assert lower(expr, model, cfg).pretty() == (GOLDEN / "fig14_matvec.txt").read_text()


def test_pretty_parse_roundtrip_fig14():
    expr, model, cfg = fig14()
    ll = lower(expr, model, cfg)
    back = parse_lowered(pretty(ll))
    assert back == ll
    assert pretty(back) == pretty(ll)


@pytest.mark.parametrize("name", bundled_names())
def test_pretty_parse_roundtrip_random(name):
    expr, model = load_bundled(name), preset("CUDA+WRP")
    for seed in range(3):
        ll = lower(expr, model, sample(expr, model, None, seed))
        assert parse_lowered(pretty(ll)) == ll


def test_parse_lowered_errors():
    with pytest.raises(ParseError):
        parse_lowered("not a lowered program")
    with pytest.raises(ParseError):
        parse_dim_tag("w")
    assert parse_dim_tag("d7") == 7 and dim_tag(7) == "d7"


def test_lower_rejects_invalid_config():
    expr, model, cfg = fig14()
    with pytest.raises(InvalidConfig) as e:
        lower(expr.with_sizes([256, 4096]), model, cfg)
    assert "full-partitioning" in {r for r, _ in e.value.violations}


def test_lower_rejects_ill_defined_expression():
    from helpers import spec

    e = spec(["i", "k"], [2, 2], [("a", "int64", ["i,k"])], [("o", "int64", [""])], "o = a", ["pw:+", "pw:*"])
    model = preset("OpenMP")
    with pytest.raises(MixedIncompatibleOperators):
        lower(e, model, sequential_config(e, model))


def test_lower_respects_phase_orders_and_assignments():
    expr, model = load_bundled("matmul"), preset("CUDA")
    cfg = sample(expr, model, constraint_set("CUDA"), 11)
    ll = lower(expr, model, cfg)
    assert ll.ord_de == cfg.ord_de
    assert ll.scalar_step.order == cfg.ord_scalar
    assert ll.ord_re == cfg.ord_re
    assert [s.level for s in ll.level_steps("re")] == list(reversed(cfg.ord_re))
    for phase in ("de", "scalar", "re"):
        assert ll.ass(phase) == dict(getattr(cfg, f"ass_{phase}"))
    assert ll.num_parts() == dict(cfg.num_parts)


# -- literal de-composition --------------------------------------------------------


@given(st.integers(0, 10**6))
def test_literal_decompose_recompose_roundtrip(seed):
    expr = load_bundled("matvec").with_sizes([4, 6])
    model = preset("Artificial2+1")
    ll = lower(expr, model, sample(expr, model, None, seed))
    rng = np.random.default_rng(seed)
    arr = rng.integers(-9, 9, (4, 6))
    mda = MdaView.from_array(arr)
    leaves = literal_decompose(ll, mda)
    assert len(leaves) == 24
    for key, leaf in leaves.items():
        idx = tuple(ll.scheme().part_range(d, p).lo for d, p in enumerate(key, 1))
        assert leaf.shape == (1, 1) and leaf[idx] == arr[idx]
    assert literal_recompose(leaves, 2).equals(mda)
