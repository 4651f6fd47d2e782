"""Bundled example computations (JSON specs shipped inside the package)."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .highlevel import HighLevelExpr, buffers_from_lists, load_spec, spec_from_dict

_SPEC_DIR = ("data", "specs")


def bundled_names() -> list[str]:
    root = resources.files("mdh").joinpath(*_SPEC_DIR)
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_text(name: str) -> str:
    return resources.files("mdh").joinpath(*_SPEC_DIR, f"{name}.json").read_text()


def load_bundled(name: str) -> HighLevelExpr:
    if name not in bundled_names():
        raise KeyError(f"no bundled spec {name!r}; known: {', '.join(bundled_names())}")
    return spec_from_dict(json.loads(bundled_text(name)))


def resolve_spec(name_or_path: str) -> HighLevelExpr:
    """A bundled spec name, or a path to a spec JSON file."""
    p = Path(name_or_path)
    if p.suffix == ".json" or p.exists():
        return load_spec(p)
    return load_bundled(name_or_path)


def example_pair(expr: HighLevelExpr):
    """The frozen (sized expression, inputs, expected outputs) triple shipped with a spec."""
    ex = expr.example
    if ex is None:
        raise KeyError(f"{expr.name} has no example")
    sized = expr.with_sizes(ex["sizes"])
    return (sized, buffers_from_lists(sized.input_view, ex["inputs"]),
            buffers_from_lists(sized.output_view, ex["outputs"]))


_CONFIG_DIR = ("data", "configs")


def bundled_config_names() -> list[str]:
    root = resources.files("mdh").joinpath(*_CONFIG_DIR)
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_bundled_config(name: str):
    """A shipped (expression, model, config) scenario, returned as a :class:`~mdh.tuning.Fixture`."""
    from .asm import from_json as asm_from_json
    from .tuning import Fixture, config_from_dict, constraint_set

    if name not in bundled_config_names():
        raise KeyError(f"no bundled config {name!r}; known: {', '.join(bundled_config_names())}")
    d = json.loads(resources.files("mdh").joinpath(*_CONFIG_DIR, f"{name}.json").read_text())
    model = asm_from_json(d["model"])
    expr = load_bundled(d["spec"]).with_sizes(d["sizes"])
    cfg = config_from_dict(d["config"], model, expr)
    return Fixture(name, cfg, model, tuple(d["sizes"]), constraint_set(d.get("constraints")), d["spec"],
                   tuple(d.get("reconstructed", ())), d.get("note", ""))
