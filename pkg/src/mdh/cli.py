"""Command-line interface: ``mdh {examples,verify,lower,emit,tune}``.

Exit codes: 0 success, 1 internal error, 2 validation or verification
failure, 3 parse or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import __version__
from .asm import AsmModel, from_json as asm_from_json
from .catalog import (bundled_config_names, bundled_names, load_bundled, load_bundled_config,
                      resolve_spec)
from .errors import (CompilerUnavailable, InvalidConfig, Mismatch, MdhError, ParseError, UnknownFixture,
                     UnknownPreset)
from .highlevel import HighLevelExpr, outputs_match, random_inputs, reference_execute
from .tuning import (FIXTURE_NAMES, ModelConstraintSet, TuningConfig, config_from_dict, constraint_set,
                     default_constraints, fixture, sample, validate)

EXIT_OK, EXIT_INTERNAL, EXIT_FAILED, EXIT_PARSE = 0, 1, 2, 3


class _InputError(Exception):
    """Bad command-line input (mapped to the parse-error exit code)."""


@dataclass
class _Job:
    expr: HighLevelExpr
    model: AsmModel
    constraints: ModelConstraintSet
    configs: list[tuple[str, TuningConfig]]


def _model(text: str | None, default: str | None = None) -> AsmModel:
    text = text or default or "OpenMP"
    p = Path(text)
    if p.suffix == ".json" and p.exists():
        text = p.read_text()
    return asm_from_json(text)


def _sized(expr: HighLevelExpr, sizes: str | None) -> HighLevelExpr:
    if not sizes:
        return expr
    try:
        return expr.with_sizes([int(x) for x in sizes.split(",")])
    except ValueError as e:
        raise _InputError(f"bad --sizes {sizes!r}: {e}") from None


def _config_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise _InputError(f"cannot read config {path}: {e.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid config JSON in {path}: {e.msg}", e.lineno, e.colno) from None


def _job(args, need_config: bool = True, default_random: int = 0) -> _Job:
    """Resolve --spec/--asm/--config/--fixture/--random into an expression, model and configs."""
    scenario = None
    if getattr(args, "fixture", None):
        scenario = fixture(args.fixture)
    elif getattr(args, "config", None):
        if args.config in bundled_config_names() and not Path(args.config).exists():
            scenario = load_bundled_config(args.config)
    if scenario is not None:
        expr = resolve_spec(args.spec) if args.spec else load_bundled(scenario.spec)
        expr = _sized(expr.with_sizes(scenario.sizes), args.sizes)
        model = _model(args.asm) if args.asm else scenario.model
        cons = constraint_set(args.constraints) if args.constraints else scenario.constraints
        return _Job(expr, model, cons, [(scenario.name, scenario.config)])
    if not args.spec:
        raise _InputError("--spec is required unless --fixture or a bundled --config is given")
    expr = _sized(resolve_spec(args.spec), args.sizes)
    model = _model(args.asm)
    cons = constraint_set(args.constraints) if args.constraints else default_constraints(model)
    configs: list[tuple[str, TuningConfig]] = []
    if getattr(args, "config", None):
        d = _config_file(args.config)
        d = d.get("config", d)
        try:
            configs.append((args.config, config_from_dict(d, model, expr)))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed config {args.config}: {e}") from None
    else:
        n = getattr(args, "random", None) or default_random
        if n <= 0 and need_config:
            raise _InputError("give --config FILE, --fixture NAME or --random N")
        for k in range(n):
            configs.append((f"random:{k}", sample(expr, model, cons, args.seed + k)))
    return _Job(expr, model, cons, configs)


def _write(out: str | None, text: str) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_examples(args) -> int:
    for name in bundled_names():
        e = load_bundled(name)
        ops = ";".join(op.label() for op in e.combine_ops)
        sizes = "x".join(map(str, e.sizes))
        print(f"{name:14s} D={e.D} sizes={sizes:14s} combine={ops:24s} {e.description}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .interpreter import interpret
    from .lowering import lower

    job = _job(args, default_random=0)
    inputs = random_inputs(job.expr, args.seed)
    expected = reference_execute(job.expr, inputs)
    report = []
    failures = 0
    t0 = time.perf_counter()
    for label, cfg in job.configs:
        entry = {"config": label, "hash": cfg.config_hash()}
        rep = validate(cfg, job.expr, job.model, job.constraints)
        if not rep.accepted:
            entry.update(status="REJECT", violations=[f"{r}: {m}" for r, m in rep.violations])
            failures += 1
            print(f"{label}: {rep}")
            report.append(entry)
            continue
        ll = lower(job.expr, job.model, cfg, job.constraints)
        out, _ = interpret(ll, job.expr, inputs)
        bad = outputs_match(out, expected)
        entry["interpreter"] = "pass" if not bad else f"mismatch in {', '.join(bad)}"
        ok = not bad
        if args.gate_compile:
            from .codegen import CodegenOptions, emit, verify_emitted
            try:
                vr = verify_emitted(emit(ll, job.expr, CodegenOptions(driver=True)), job.expr, inputs, expected)
                entry["compiled"] = "pass" if vr.passed else vr.message
                ok = ok and vr.passed
            except CompilerUnavailable as e:
                entry["compiled"] = f"skipped ({e})"
            except Mismatch as e:
                entry["compiled"] = f"error ({e})"
                ok = False
        entry["status"] = "pass" if ok else "FAIL"
        failures += not ok
        extra = f" compiled={entry['compiled']}" if "compiled" in entry else ""
        print(f"{label}: {entry['status']} interpreter={entry['interpreter']}{extra}")
        report.append(entry)
    n = len(job.configs)
    print(f"{job.expr.name} on {job.model.name}: {n - failures}/{n} pass "
          f"({time.perf_counter() - t0:.1f}s)")
    if args.out:
        Path(args.out).write_text(json.dumps({"spec": job.expr.name, "model": job.model.name,
                                              "results": report}, indent=1) + "\n")
    return EXIT_OK if failures == 0 else EXIT_FAILED


def _single(args) -> tuple[_Job, TuningConfig]:
    job = _job(args, default_random=0)
    if len(job.configs) != 1:
        raise _InputError("this command takes exactly one config (use --random 1 for a random one)")
    label, cfg = job.configs[0]
    rep = validate(cfg, job.expr, job.model, job.constraints)
    if not rep.accepted:
        raise InvalidConfig(f"{label}: {rep}", rep.violations)
    return job, cfg


def cmd_lower(args) -> int:
    from .lowering import lower

    job, cfg = _single(args)
    _write(args.out, lower(job.expr, job.model, cfg, job.constraints).pretty())
    return EXIT_OK


def cmd_emit(args) -> int:
    from .codegen import CodegenOptions, emit
    from .lowering import lower

    job, cfg = _single(args)
    ll = lower(job.expr, job.model, cfg, job.constraints)
    opts = CodegenOptions(fuse=not args.no_fuse, driver=args.driver)
    _write(args.out, emit(ll, job.expr, opts))
    return EXIT_OK


def cmd_tune(args) -> int:
    from .autotuner import tune

    job = _job(args, need_config=False)
    res = tune(job.expr, job.model, job.constraints, budget=args.budget, objective=args.objective,
               seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "best_config.json").write_text(res.best.to_json(job.model) + "\n")
    (out / "history.csv").write_text(res.to_csv())
    print(f"best {res.best.config_hash()} objective={res.best_objective!r} "
          f"after {len(res.history)} evaluations; wrote {out / 'best_config.json'} and {out / 'history.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdh", description="Lower, interpret, emit and tune data-parallel "
                                                         "computations given as multi-dimensional homomorphisms.")
    p.add_argument("--version", action="version", version=f"mdh {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_sources: bool = True):
        sp.add_argument("--spec", help="bundled spec name or path to a spec JSON file")
        sp.add_argument("--asm", help="system model: preset name, JSON text or JSON file (default OpenMP)")
        sp.add_argument("--sizes", help="comma-separated input sizes overriding the spec's")
        sp.add_argument("--constraints", help="constraint set: None, CUDA, CUDA+WRP or OpenCL "
                                              "(default: the model's own)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="output file (directory for tune); default stdout")
        if config_sources:
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--config", help="config JSON file or bundled config name "
                                            f"({', '.join(bundled_config_names())})")
            g.add_argument("--random", type=int, metavar="N", help="N random valid configs")
            g.add_argument("--fixture", help=f"named fixture ({', '.join(FIXTURE_NAMES)})")

    sp = sub.add_parser("examples", help="list bundled computations")
    sp.set_defaults(func=cmd_examples)

    sp = sub.add_parser("verify", help="check interpreter (and optionally compiled code) against the oracle")
    common(sp)
    sp.add_argument("--gate-compile", action="store_true", help="also compile and run the emitted C")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("lower", help="print the lowered program")
    common(sp)
    sp.set_defaults(func=cmd_lower)

    sp = sub.add_parser("emit", help="emit C + OpenMP source")
    common(sp)
    sp.add_argument("--driver", action="store_true", help="append a main() for standalone runs")
    sp.add_argument("--no-fuse", action="store_true", help="keep the three phases in separate nests")
    sp.set_defaults(func=cmd_emit)

    sp = sub.add_parser("tune", help="search for a good configuration")
    common(sp, config_sources=False)
    sp.add_argument("--budget", type=int, default=50)
    sp.add_argument("--objective", choices=("SimCost", "CompiledTime"), default="SimCost")
    sp.set_defaults(func=cmd_tune, out=".")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "tune" and args.out is None:
        args.out = "."
    try:
        return args.func(args)
    except (ParseError, _InputError, UnknownPreset, UnknownFixture, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"mdh: error: {msg}", file=sys.stderr)
        return EXIT_PARSE
    except (InvalidConfig, Mismatch) as e:
        print(f"mdh: {e}", file=sys.stderr)
        return EXIT_FAILED
    except MdhError as e:
        print(f"mdh: error: {e}", file=sys.stderr)
        return EXIT_FAILED
    except Exception as e:  # noqa: BLE001 - top-level guard maps crashes to exit 1
        print(f"mdh: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
