"""Show how hardware constraint sets accept or reject configurations.

python3 demos/02_constraints.py
"""

from mdh.asm import preset
from mdh.catalog import load_bundled
from mdh.tuning import constraint_set, sample, validate

expr = load_bundled("matmul")
cuda = preset("CUDA")
rules = constraint_set("CUDA")

# with no constraints most random configs break at least one CUDA rule
free = [sample(expr, cuda, None, s) for s in range(200)]
rejected = {}
for cfg in free:
    rep = validate(cfg, expr, cuda, rules)
    for rule in rep.rule_ids():
        rejected[rule] = rejected.get(rule, 0) + 1
print("unconstrained samples breaking each CUDA rule (of 200):", rejected)

# sampling under the constraint set only returns compliant configs
ok = [sample(expr, cuda, rules, s) for s in range(50)]
print("constrained samples accepted:",
      sum(validate(c, expr, cuda, rules).accepted for c in ok), "of", len(ok))
