"""Regenerate the bundled computation specs and their frozen example pairs.

Each example output is computed here with a direct numpy formula that does
not go through the package, then written into the spec file.  The test
suite checks that the package's oracle reproduces these frozen values.

Run from the repository root:  python3 tools/build_catalog.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "mdh" / "data" / "specs"


def buf(name, accesses, type_="int64", rank=None, range_=None):
    d = {"name": name, "type": type_,
         "rank": rank if rank is not None else (0 if accesses[0] == "" else accesses[0].count(",") + 1),
         "accesses": accesses}
    if range_ is not None:
        d["range"] = range_
    return d


SPECS = []


def spec(name, description, dims, sizes, inputs, outputs, scalar, combine, example_sizes, oracle):
    SPECS.append(dict(name=name, description=description, dims=dims, sizes=sizes, inputs=inputs,
                      outputs=outputs, scalar=scalar, combine=combine,
                      _example_sizes=example_sizes, _oracle=oracle))


spec("dot", "Dot product of two vectors.", ["k"], [16],
     [buf("x", ["k"]), buf("y", ["k"])], [buf("r", [""])], "r = x * y", ["pw:+"], [3],
     lambda s, x, y: {"r": np.int64(np.dot(x, y))})
spec("matvec", "Matrix-vector multiplication.", ["i", "k"], [8, 16],
     [buf("M", ["i,k"]), buf("v", ["k"])], [buf("w", ["i"])], "w = M * v", ["cc", "pw:+"], [2, 3],
     lambda s, M, v: {"w": M @ v})
spec("matmul", "Matrix multiplication.", ["i", "j", "k"], [8, 8, 8],
     [buf("A", ["i,k"]), buf("B", ["k,j"])], [buf("C", ["i,j"])], "C = A * B", ["cc", "cc", "pw:+"],
     [2, 2, 3], lambda s, A, B: {"C": A @ B})
spec("matmul_t", "Matrix multiplication on transposed inputs, result stored transposed.",
     ["i", "j", "k"], [4, 6, 8],
     [buf("A", ["k,i"]), buf("B", ["j,k"])], [buf("C", ["j,i"])], "C = A * B", ["cc", "cc", "pw:+"],
     [2, 3, 2], lambda s, A, B: {"C": (A.T @ B.T).T})
spec("bmatmul", "Batched matrix multiplication.", ["b", "i", "j", "k"], [2, 4, 4, 4],
     [buf("A", ["b,i,k"]), buf("B", ["b,k,j"])], [buf("C", ["b,i,j"])], "C = A * B",
     ["cc", "cc", "cc", "pw:+"], [2, 2, 2, 2], lambda s, A, B: {"C": np.einsum("bik,bkj->bij", A, B)})


def conv2d(s, I, F):
    P, Q, R, S = s
    O = np.zeros((P, Q), dtype=np.int64)
    for p in range(P):
        for q in range(Q):
            O[p, q] = np.sum(I[p:p + R, q:q + S] * F)
    return {"O": O}


spec("conv2d", "Two-dimensional convolution without padding.", ["p", "q", "r", "s"], [6, 6, 3, 3],
     [buf("I", ["p+r,q+s"]), buf("F", ["r,s"])], [buf("O", ["p,q"])], "O = I * F",
     ["cc", "cc", "pw:+", "pw:+"], [2, 2, 2, 2], conv2d)


def mcc(s, I, F):
    N, P, Q, K, R, S, C = s
    O = np.zeros((N, P, Q, K), dtype=np.int64)
    for p in range(P):
        for q in range(Q):
            O[:, p, q, :] = np.einsum("nrsc,krsc->nk", I[:, p:p + R, q:q + S, :], F)
    return {"O": O}


spec("mcc", "Multi-channel convolution (NHWC input, KRSC filter), small sizes.",
     ["n", "p", "q", "k", "r", "s", "c"], [1, 4, 4, 2, 3, 3, 2],
     [buf("I", ["n,p+r,q+s,c"]), buf("F", ["k,r,s,c"])], [buf("O", ["n,p,q,k"])], "O = I * F",
     ["cc", "cc", "cc", "cc", "pw:+", "pw:+", "pw:+"], [1, 2, 2, 2, 2, 1, 2], mcc)
spec("jacobi1d", "Three-point Jacobi stencil.", ["i"], [14],
     [buf("v", ["i", "i+1", "i+2"], "float64")], [buf("w", ["i"], "float64")],
     "w = (v[0] + v[1] + v[2]) / 3.0", ["cc"], [4],
     lambda s, v: {"w": (v[:-2] + v[1:-1] + v[2:]) / 3.0})


def jacobi3d(s, u):
    I, J, K = s
    c = u[1:I + 1, 1:J + 1, 1:K + 1]
    nb = (u[1:I + 1, 1:J + 1, 0:K] + u[1:I + 1, 1:J + 1, 2:K + 2] + u[1:I + 1, 0:J, 1:K + 1]
          + u[1:I + 1, 2:J + 2, 1:K + 1] + u[0:I, 1:J + 1, 1:K + 1] + u[2:I + 2, 1:J + 1, 1:K + 1])
    return {"w": 0.5 * c + nb / 12.0}


spec("jacobi3d", "Seven-point Jacobi stencil in three dimensions.", ["i", "j", "k"], [4, 4, 4],
     [buf("u", ["i+1,j+1,k+1", "i+1,j+1,k", "i+1,j+1,k+2", "i+1,j,k+1", "i+1,j+2,k+1",
                "i,j+1,k+1", "i+2,j+1,k+1"], "float64")],
     [buf("w", ["i,j,k"], "float64")],
     "w = 0.5 * u[0] + (u[1] + u[2] + u[3] + u[4] + u[5] + u[6]) / 12.0", ["cc", "cc", "cc"], [2, 2, 2],
     jacobi3d)


def prl(s, n, d):
    I, J = s
    W = np.zeros(I, dtype=np.int64)
    Jx = np.zeros(I, dtype=np.int64)
    for i in range(I):
        best, arg = None, None
        for j in range(J):
            w = 10 if n[i] == d[j] else (5 if abs(n[i] - d[j]) <= 1 else 0)
            if best is None or w > best:
                best, arg = w, j
        W[i], Jx[i] = best, arg
    return {"W": W, "J": Jx}


spec("prl", "Record linkage: best-matching record per query by a select-based weight "
            "(ties keep the smallest record index).",
     ["i", "j"], [8, 8],
     [buf("n", ["i"], range_=[0, 6]), buf("d", ["j"], range_=[0, 6])],
     [buf("W", ["i"]), buf("J", ["i"])],
     "W = select(n == d, 10, select(abs(n - d) <= 1, 5, 0)); J = j", ["cc", "pw:argmax"], [3, 4], prl)
spec("histo", "Histogram: count the elements equal to each bin index.", ["b", "e"], [4, 16],
     [buf("data", ["e"], range_=[0, 4])], [buf("H", ["b"])], "H = select(data == b, 1, 0)",
     ["cc", "pw:+"], [4, 4], lambda s, data: {"H": np.bincount(data, minlength=s[0])[:s[0]]})
spec("genhisto", "Generalised histogram: per bin, the largest weight of an element in that bin "
                 "(0 for empty bins).",
     ["b", "e"], [4, 16],
     [buf("data", ["e"], range_=[0, 4]), buf("wt", ["e"], range_=[0, 100])], [buf("H", ["b"])],
     "H = select(data == b, wt, 0)", ["cc", "pw:max"], [3, 5],
     lambda s, data, wt: {"H": np.array([max([0] + [int(w) for x, w in zip(data, wt) if x == b])
                                         for b in range(s[0])], dtype=np.int64)})
spec("map", "Element-wise map x*x+1.", ["i", "j"], [8, 8],
     [buf("x", ["i,j"])], [buf("y", ["i,j"])], "y = x * x + 1", ["cc", "cc"], [2, 3],
     lambda s, x: {"y": x * x + 1})
spec("reduce", "Sum of a vector.", ["i"], [16],
     [buf("x", ["i"])], [buf("r", [""])], "r = x", ["pw:+"], [5], lambda s, x: {"r": np.int64(x.sum())})
spec("double_reduce", "Sum and maximum of a vector in one pass, stored as two scalars.", ["i"], [16],
     [buf("x", ["i"])], [buf("O1", [""]), buf("O2", [""])], "O1 = x; O2 = x", ["pw:(+,max)"], [5],
     lambda s, x: {"O1": np.int64(x.sum()), "O2": np.int64(x.max())})
spec("scan", "Inclusive prefix sum.", ["i"], [16],
     [buf("x", ["i"])], [buf("y", ["i"])], "y = x", ["ps:+"], [5], lambda s, x: {"y": np.cumsum(x)})
spec("mbbs", "Bottom-box sums: prefix sums over rows of the row totals; their maximum is the "
             "maximum bottom box sum.",
     ["i", "j"], [8, 4],
     [buf("a", ["i,j"])], [buf("s", ["i"])], "s = a", ["ps:+", "pw:+"], [3, 2],
     lambda s, a: {"s": np.cumsum(a.sum(axis=1))})


def input_shape(b, sizes, dims):
    # 1 + max of every affine coordinate, evaluated by brute force over the box
    import itertools
    env_names = dims
    top = None
    for idx in itertools.product(*(range(n) for n in sizes)):
        env = dict(zip(env_names, idx))
        for a in b["accesses"]:
            if a == "":
                coords = ()
            else:
                coords = tuple(eval(part, {}, env) for part in a.split(","))
            top = coords if top is None else tuple(max(x, y) for x, y in zip(top, coords))
    return tuple(t + 1 for t in top)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20241016)
    for s in SPECS:
        ex_sizes = s.pop("_example_sizes")
        oracle = s.pop("_oracle")
        ins = {}
        for b in s["inputs"]:
            shape = input_shape(b, ex_sizes, s["dims"])
            if b["type"] == "int64":
                lo, hi = b.get("range", [-9, 10])
                ins[b["name"]] = rng.integers(lo, hi, size=shape, dtype=np.int64)
            else:
                ins[b["name"]] = np.round(rng.uniform(-1, 1, size=shape), 3)
        outs = oracle(ex_sizes, *ins.values())
        s["example"] = {"sizes": ex_sizes,
                        "inputs": {k: v.tolist() for k, v in ins.items()},
                        "outputs": {k: np.asarray(v).tolist() for k, v in outs.items()}}
        (OUT / f"{s['name']}.json").write_text(json.dumps(s, indent=2) + "\n")
        print("wrote", s["name"])


if __name__ == "__main__":
    main()
