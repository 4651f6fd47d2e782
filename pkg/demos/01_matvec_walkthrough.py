"""Walk through one computation end to end: spec, config, lowering, interpretation, C.

Run from the repository root after installing:  python3 demos/01_matvec_walkthrough.py
"""

import numpy as np

from mdh.asm import preset
from mdh.catalog import load_bundled
from mdh.codegen import emit, find_compiler, verify_emitted, CodegenOptions
from mdh.highlevel import random_inputs, reference_execute
from mdh.interpreter import interpret
from mdh.lowering import lower
from mdh.tuning import default_constraints, sample, validate

# a small matrix-vector product: dimension 1 is concatenated, dimension 2 summed
expr = load_bundled("matvec").with_sizes([8, 16])
print(expr.name, "sizes", expr.sizes, "combine", [op.label() for op in expr.combine_ops])

# a two-layer CPU model (cores + threads) and a random config that satisfies it
model = preset("OpenMP")
cons = default_constraints(model)
cfg = sample(expr, model, cons, 3)
print(validate(cfg, expr, model, cons))   # ACCEPT

# the lowered program: de-composition steps, scalar step, re-composition steps
ll = lower(expr, model, cfg, cons)
print(ll.pretty())

# run it on random inputs and compare against the direct oracle
inputs = random_inputs(expr, seed=0)
out, _trace = interpret(ll, expr, inputs)
expected = reference_execute(expr, inputs)
print("interpreter matches oracle:", np.array_equal(out["w"].data, expected["w"].data))

# emit C; compile and run it if a compiler is around
src = emit(ll, expr, CodegenOptions(driver=True))
print(src.count("\n"), "lines of C")
if find_compiler() is not None:
    print(verify_emitted(src, expr, inputs, expected).message)
