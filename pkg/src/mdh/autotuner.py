"""Budgeted search for a good tuning configuration.

The search draws a few random configurations from the reduced space and then
hill-climbs from the best one seen so far.  When a climb reaches a point with
no improving neighbour, it restarts from a fresh random sample.  Each
evaluation costs one unit of budget.

The sequence of evaluated configurations depends only on the seed and on the
objective values already observed, never on the budget.  A run with budget B
is therefore a prefix of a run with any larger budget, and the best value
found can only improve as the budget grows.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .asm import AsmModel
from .errors import CompilerUnavailable, Mismatch, NoValidConfigFound
from .highlevel import HighLevelExpr, random_inputs
from .interpreter import cost, simulate
from .lowering import lower
from .tuning import ModelConstraintSet, ReducedSpace, TuningConfig, default_constraints, validate

Objective = Callable[[TuningConfig], float]

OBJECTIVES = ("SimCost", "CompiledTime")


@dataclass(frozen=True)
class Evaluation:
    eval_index: int
    config_hash: str
    objective: float
    valid: bool
    config: TuningConfig = field(repr=False, compare=False)


@dataclass
class TuneResult:
    best: TuningConfig
    best_objective: float
    history: list[Evaluation]

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["eval_index", "config_hash", "objective", "valid"])
        for e in self.history:
            wr.writerow([e.eval_index, e.config_hash, repr(e.objective), str(e.valid).lower()])
        return buf.getvalue()


def sim_cost_objective(expr: HighLevelExpr, model: AsmModel, weights=None, alpha: float = 1.0,
                       constraints: ModelConstraintSet | None = None) -> Objective:
    """Analytic cost of the lowered program (deterministic)."""

    def f(cfg: TuningConfig) -> float:
        return cost(simulate(lower(expr, model, cfg, constraints), expr), model, weights, alpha)

    return f


def compiled_time_objective(expr: HighLevelExpr, model: AsmModel, repeats: int = 5, seed: int = 0,
                            constraints: ModelConstraintSet | None = None) -> Objective:
    """Median wall time of the emitted C kernel; needs a C compiler."""
    from .codegen import CodegenOptions, emit, find_compiler, time_emitted

    if find_compiler() is None:
        raise CompilerUnavailable("the CompiledTime objective needs a C compiler")
    inputs = random_inputs(expr, seed)

    def f(cfg: TuningConfig) -> float:
        src = emit(lower(expr, model, cfg, constraints), expr, CodegenOptions(driver=True))
        return time_emitted(src, inputs, repeats=repeats)

    return f


def make_objective(name: str, expr: HighLevelExpr, model: AsmModel,
                   constraints: ModelConstraintSet | None = None) -> Objective:
    if name == "SimCost":
        return sim_cost_objective(expr, model, constraints=constraints)
    if name == "CompiledTime":
        return compiled_time_objective(expr, model, constraints=constraints)
    raise ValueError(f"unknown objective {name!r}; choose from {', '.join(OBJECTIVES)}")


def _better(a: tuple[float, str], b: tuple[float, str] | None) -> bool:
    """Lexicographic (objective, hash) comparison: ties go to the lowest hash."""
    return b is None or a < b


def hill_climb(start: TuningConfig, neighborhood: Callable[[TuningConfig], Iterable[TuningConfig]],
               steps: int, objective: Objective,
               path: list[tuple[str, float]] | None = None) -> TuningConfig:
    """Steepest descent for at most ``steps`` moves.

    Each move goes to the best strictly improving neighbour (ties go to the
    lowest hash).  The climb stops early when no neighbour improves.  The
    visited configurations are appended to ``path`` as (hash, objective).
    """
    cur, cur_val = start, objective(start)
    if path is not None:
        path.append((cur.config_hash(), cur_val))
    for _ in range(steps):
        best: tuple[float, str] | None = None
        best_cfg = None
        for nb in neighborhood(cur):
            key = (objective(nb), nb.config_hash())
            if _better(key, best):
                best, best_cfg = key, nb
        if best is None or best[0] >= cur_val:
            break
        cur, cur_val = best_cfg, best[0]
        if path is not None:
            path.append((cur.config_hash(), cur_val))
    return cur


def tune(expr: HighLevelExpr, model: AsmModel, constraints: ModelConstraintSet | None = None,
         budget: int = 50, objective: str | Objective = "SimCost", seed: int = 0,
         n_initial: int = 8, space: ReducedSpace | None = None) -> TuneResult:
    """Search ``budget`` distinct configurations and return the best one with the full history."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    constraints = constraints if constraints is not None else default_constraints(model)
    space = space or ReducedSpace(expr, model, constraints)
    obj = make_objective(objective, expr, model, constraints) if isinstance(objective, str) else objective
    rng = np.random.default_rng(seed)

    history: list[Evaluation] = []
    seen: dict[str, float] = {}
    best: tuple[float, str] | None = None
    best_cfg: TuningConfig | None = None

    def evaluate(cfg: TuningConfig) -> float:
        nonlocal best, best_cfg
        h = cfg.config_hash()
        if h in seen:
            return seen[h]
        valid = validate(cfg, expr, model, constraints).accepted
        try:
            val = obj(cfg) if valid else math.inf
        except (Mismatch, CompilerUnavailable):
            if not isinstance(objective, str) or objective != "CompiledTime":
                raise
            val, valid = math.inf, False
        seen[h] = val
        history.append(Evaluation(len(history), h, val, valid, cfg))
        if valid and _better((val, h), best):
            best, best_cfg = (val, h), cfg
        return val

    def fresh(max_draws: int = 64) -> TuningConfig | None:
        for _ in range(max_draws):
            try:
                cfg = space.sample(rng)
            except NoValidConfigFound:
                return None
            if cfg.config_hash() not in seen:
                return cfg
        return None

    # phase 1: random samples
    for _ in range(min(n_initial, budget)):
        cfg = fresh()
        if cfg is None:
            break
        evaluate(cfg)
    if best_cfg is None:
        raise NoValidConfigFound(f"no valid configuration found for {expr.name} on {model.name}")

    # phase 2: first-improvement hill climbing with random restarts
    cur, cur_val = best_cfg, best[0]
    while len(history) < budget:
        nbs = [nb for nb in space.neighbors(cur) if nb.config_hash() not in seen]
        order = rng.permutation(len(nbs)) if nbs else []
        moved = False
        for k in order:
            if len(history) >= budget:
                break
            val = evaluate(nbs[int(k)])
            if val < cur_val:
                cur, cur_val, moved = nbs[int(k)], val, True
                break
        if len(history) >= budget or moved:
            continue
        restart = fresh()
        if restart is None:
            break  # the reachable space is exhausted
        cur, cur_val = restart, evaluate(restart)
    return TuneResult(best_cfg, best[0], history)


def history_prefix_consistent(short: Sequence[Evaluation], long: Sequence[Evaluation]) -> bool:
    """True when ``short`` is a prefix of ``long`` (same hashes and objectives)."""
    return len(short) <= len(long) and all(
        (a.config_hash, a.objective) == (b.config_hash, b.objective) for a, b in zip(short, long))
