"""Tune a 16^3 matrix product with the simulated cost model and inspect the search.

python3 demos/03_autotune.py
"""

from mdh.asm import preset
from mdh.autotuner import tune
from mdh.catalog import load_bundled

expr = load_bundled("matmul").with_sizes([16, 16, 16])
model = preset("OpenMP")

for budget in (10, 50, 200):
    res = tune(expr, model, budget=budget, seed=0)
    print(f"budget {budget:4d}: best objective {res.best_objective:g}  config {res.best.config_hash()}")

# the history is a prefix of any longer run with the same seed
res = tune(expr, model, budget=30, seed=0)
print(res.to_csv().splitlines()[0])
for line in res.to_csv().splitlines()[1:6]:
    print(line)
print("per-dimension parts of the best config:",
      [res.best.parts_of_dim(d) for d in range(1, expr.D + 1)])
