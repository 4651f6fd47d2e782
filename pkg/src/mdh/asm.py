"""Abstract system models: named memory layers followed by named core layers.

Layer ids run from 1 to L in declaration order, memory layers first, so in
the CUDA model DM=1, SM=2, RM=3, SMX=4 and CC=5.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

from .errors import OutOfRange, ParseError, UnknownPreset


class LevelKind(str, enum.Enum):
    MEMORY = "memory"
    CORE = "core"


class MdhLevel(NamedTuple):
    """A (partitioning layer, MDA dimension) pair, both 1-based."""

    layer: int
    dim: int


class AsmLevel(NamedTuple):
    """A (system layer, dimension tag) pair, both 1-based."""

    layer: int
    dim: int


@dataclass(frozen=True)
class AsmModel:
    name: str
    mem_layers: tuple[str, ...]
    core_layers: tuple[str, ...]

    def __post_init__(self):
        names = self.mem_layers + self.core_layers
        if not self.mem_layers or not self.core_layers:
            raise ValueError("a system model needs at least one memory layer and one core layer")
        if len(set(names)) != len(names):
            raise ValueError(f"layer names must be unique: {names}")

    @property
    def L(self) -> int:
        return len(self.mem_layers) + len(self.core_layers)

    @property
    def num_mem(self) -> int:
        return len(self.mem_layers)

    @property
    def num_core(self) -> int:
        return len(self.core_layers)

    @property
    def counts(self) -> tuple[int, int]:
        return (self.num_mem, self.num_core)

    @property
    def layer_names(self) -> tuple[str, ...]:
        return self.mem_layers + self.core_layers

    def layer_name(self, layer: int) -> str:
        if not 1 <= layer <= self.L:
            raise OutOfRange(f"layer {layer} outside 1..{self.L} of {self.name}")
        return self.layer_names[layer - 1]

    def layer_id(self, name_or_id: str | int) -> int:
        if isinstance(name_or_id, int):
            self.layer_name(name_or_id)
            return name_or_id
        s = str(name_or_id)
        if s.isdigit():
            return self.layer_id(int(s))
        try:
            return self.layer_names.index(s) + 1
        except ValueError:
            raise OutOfRange(f"{self.name} has no layer {s!r}") from None

    def region_id(self, name_or_id: str | int) -> int:
        r = self.layer_id(name_or_id)
        if r > self.num_mem:
            raise OutOfRange(f"{self.layer_name(r)} is a core layer, not a memory region")
        return r

    def to_dict(self) -> dict:
        return {"name": self.name, "mem": list(self.mem_layers), "core": list(self.core_layers)}


def level_kind(model: AsmModel, layer: int) -> LevelKind:
    if not 1 <= layer <= model.L:
        raise OutOfRange(f"layer {layer} outside 1..{model.L} of {model.name}")
    return LevelKind.MEMORY if layer <= model.num_mem else LevelKind.CORE


_PRESETS: dict[str, tuple[Sequence[str], Sequence[str]]] = {
    "OpenMP": (("MM", "L2", "L1"), ("COR",)),
    "OpenMP+L3": (("MM", "L3", "L2", "L1"), ("COR",)),
    "OpenMP+L3+SIMD": (("MM", "L3", "L2", "L1"), ("COR", "SIMD")),
    "CUDA": (("DM", "SM", "RM"), ("SMX", "CC")),
    "CUDA+WRP": (("DM", "SM", "RM"), ("SMX", "WRP", "CC")),
    "OpenCL": (("GM", "LM", "PM"), ("CU", "PE")),
    "MultiGPU": (("HM", "DM", "SM", "RM"), ("GPU", "SMX", "CC")),
    "MultiNodeMultiGPU": (("NM", "HM", "DM", "SM", "RM"), ("NOD", "GPU", "SMX", "CC")),
    "Artificial2+1": (("HM", "L1"), ("COR",)),
}
_ALIASES = {"Artificial": "Artificial2+1"}

PRESET_NAMES: tuple[str, ...] = tuple(_PRESETS)


def preset(name: str) -> AsmModel:
    key = _ALIASES.get(name, name)
    if key not in _PRESETS:
        raise UnknownPreset(f"unknown system model {name!r}; known: {', '.join(PRESET_NAMES)}")
    mem, cores = _PRESETS[key]
    return AsmModel(key, tuple(mem), tuple(cores))


def from_json(obj: str | Mapping) -> AsmModel:
    """Accept a preset name, a JSON object string, or a mapping with ``mem`` and ``core`` lists."""
    if isinstance(obj, str):
        s = obj.strip()
        if not s.startswith("{"):
            return preset(s)
        try:
            obj = json.loads(s)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid system model JSON: {e.msg}", e.lineno, e.colno) from None
    try:
        return AsmModel(str(obj.get("name", "custom")), tuple(obj["mem"]), tuple(obj["core"]))
    except KeyError as e:
        raise ParseError(f"system model is missing {e.args[0]!r}") from None
    except ValueError as e:
        raise ParseError(str(e)) from None
