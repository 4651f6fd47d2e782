"""Scalar-function expression trees and affine index functions.

Both are parsed from small Python-like strings with the standard ``ast``
module, for example ``"w = M * v"``, ``"O1 = x; O2 = x"``,
``"H = select(data == b, 1, 0)"`` for scalar functions and ``"i+1,k"`` for
index functions.  In a scalar function a bare buffer name denotes its first
access, ``v[2]`` its third access, and a dimension name the current MDA index.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .core import ElemType, MixedVariantError, wrap_i64
from .errors import NegativeIndexReachable, ParseError

# ---------------------------------------------------------------------------
# scalar expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: Union[int, float]


@dataclass(frozen=True)
class In:
    buf: str
    access: int


@dataclass(frozen=True)
class Idx:
    dim: int  # 1-based
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "-" or "abs"
    arg: "Node"


@dataclass(frozen=True)
class Bin:
    op: str  # + - * / min max
    lhs: "Node"
    rhs: "Node"


@dataclass(frozen=True)
class Cmp:
    op: str  # == != < <= > >=
    lhs: "Node"
    rhs: "Node"


@dataclass(frozen=True)
class Select:
    cond: "Node"
    if_true: "Node"
    if_false: "Node"


Node = Union[Const, In, Idx, Unary, Bin, Cmp, Select]


@dataclass(frozen=True)
class Assign:
    buf: str
    access: int
    value: Node


@dataclass(frozen=True)
class ScalarFunction:
    """One assignment per output-buffer access, in textual order."""

    assignments: tuple[Assign, ...]
    source: str = ""

    def targets(self) -> list[tuple[str, int]]:
        return [(a.buf, a.access) for a in self.assignments]


_BIN = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/"}
_CMP = {ast.Eq: "==", ast.NotEq: "!=", ast.Lt: "<", ast.LtE: "<=", ast.Gt: ">", ast.GtE: ">="}


def _err(msg: str, node: ast.AST | None) -> ParseError:
    return ParseError(msg, getattr(node, "lineno", None), getattr(node, "col_offset", None))


def parse_scalar(text: str, inputs: Mapping[str, int], outputs: Mapping[str, int],
                 dims: Sequence[str]) -> ScalarFunction:
    """Parse a scalar function.

    ``inputs``/``outputs`` map buffer names to their number of accesses.
    """
    try:
        tree = ast.parse("\n".join(s.strip() for s in text.replace(";", "\n").splitlines()), mode="exec")
    except SyntaxError as e:
        raise ParseError(f"scalar function: {e.msg}", e.lineno, e.offset) from None
    dim_pos = {n: k + 1 for k, n in enumerate(dims)}

    def conv(n: ast.AST) -> Node:
        if isinstance(n, ast.Constant) and isinstance(n.value, (int, float)) and not isinstance(n.value, bool):
            return Const(n.value)
        if isinstance(n, ast.Name):
            if n.id in inputs:
                return In(n.id, 0)
            if n.id in dim_pos:
                return Idx(dim_pos[n.id], n.id)
            raise _err(f"unknown name {n.id!r}", n)
        if isinstance(n, ast.Subscript) and isinstance(n.value, ast.Name) and n.value.id in inputs:
            k = n.slice
            if not (isinstance(k, ast.Constant) and isinstance(k.value, int)):
                raise _err("access selector must be an integer literal", n)
            if not 0 <= k.value < inputs[n.value.id]:
                raise _err(f"{n.value.id} has no access {k.value}", n)
            return In(n.value.id, k.value)
        if isinstance(n, ast.UnaryOp) and isinstance(n.op, ast.USub):
            inner = conv(n.operand)
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Unary("-", inner)
        if isinstance(n, ast.UnaryOp) and isinstance(n.op, ast.UAdd):
            return conv(n.operand)
        if isinstance(n, ast.BinOp) and type(n.op) in _BIN:
            return Bin(_BIN[type(n.op)], conv(n.left), conv(n.right))
        if isinstance(n, ast.Compare):
            if len(n.ops) != 1 or type(n.ops[0]) not in _CMP:
                raise _err("only single comparisons are supported", n)
            return Cmp(_CMP[type(n.ops[0])], conv(n.left), conv(n.comparators[0]))
        if isinstance(n, ast.IfExp):
            return Select(conv(n.test), conv(n.body), conv(n.orelse))
        if isinstance(n, ast.Call) and isinstance(n.func, ast.Name) and not n.keywords:
            f, args = n.func.id, [conv(a) for a in n.args]
            if f in ("min", "max") and len(args) == 2:
                return Bin(f, *args)
            if f == "abs" and len(args) == 1:
                return Unary("abs", args[0])
            if f == "select" and len(args) == 3:
                return Select(*args)
            raise _err(f"unsupported call {f}/{len(args)}", n)
        raise _err(f"unsupported syntax {type(n).__name__}", n)

    assigns: list[Assign] = []
    for stmt in tree.body:
        if not isinstance(stmt, ast.Assign) or len(stmt.targets) != 1:
            raise _err("each statement must be a single assignment", stmt)
        t = stmt.targets[0]
        if isinstance(t, ast.Name):
            buf, acc = t.id, 0
        elif (isinstance(t, ast.Subscript) and isinstance(t.value, ast.Name)
              and isinstance(t.slice, ast.Constant) and isinstance(t.slice.value, int)):
            buf, acc = t.value.id, t.slice.value
        else:
            raise _err("assignment target must be a name or name[k]", t)
        if buf not in outputs or not 0 <= acc < outputs[buf]:
            raise _err(f"{buf}[{acc}] is not a declared output access", t)
        assigns.append(Assign(buf, acc, conv(stmt.value)))
    seen = [(a.buf, a.access) for a in assigns]
    expected = [(b, k) for b, n in outputs.items() for k in range(n)]
    if sorted(seen) != sorted(expected) or len(set(seen)) != len(seen):
        raise ParseError(f"scalar function must assign every output access exactly once; "
                         f"assigned {seen}, expected {expected}")
    return ScalarFunction(tuple(assigns), text)


def infer_type(node: Node, input_types: Mapping[str, ElemType]) -> str:
    """Static type of ``node``: ``"int64"``, ``"float64"`` or ``"bool"``; mixing is rejected."""
    if isinstance(node, Const):
        return "int64" if isinstance(node.value, int) else "float64"
    if isinstance(node, In):
        return input_types[node.buf].value
    if isinstance(node, Idx):
        return "int64"
    if isinstance(node, Unary):
        t = infer_type(node.arg, input_types)
        if t == "bool":
            raise MixedVariantError(f"{node.op} applied to a comparison")
        return t
    if isinstance(node, Bin):
        a, b = infer_type(node.lhs, input_types), infer_type(node.rhs, input_types)
        if a != b or a == "bool":
            raise MixedVariantError(f"operator {node.op} on {a} and {b}")
        return a
    if isinstance(node, Cmp):
        a, b = infer_type(node.lhs, input_types), infer_type(node.rhs, input_types)
        if a != b or a == "bool":
            raise MixedVariantError(f"comparison {node.op} on {a} and {b}")
        return "bool"
    if isinstance(node, Select):
        if infer_type(node.cond, input_types) != "bool":
            raise MixedVariantError("select condition must be a comparison")
        a, b = infer_type(node.if_true, input_types), infer_type(node.if_false, input_types)
        if a != b or a == "bool":
            raise MixedVariantError(f"select branches of type {a} and {b}")
        return a
    raise TypeError(node)  # pragma: no cover


def _c_div_int(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if np.any(b == 0):
        raise ZeroDivisionError("integer division by zero in scalar function")
    q = np.abs(a) // np.abs(b)
    return np.where((a < 0) != (b < 0), -q, q)


def evaluate(node: Node, env: Mapping[object, np.ndarray]) -> np.ndarray:
    """Vectorised evaluation; ``env`` maps ``In``/``Idx`` leaves to broadcastable arrays."""
    if isinstance(node, Const):
        return np.asarray(node.value, dtype=np.int64 if isinstance(node.value, int) else np.float64)
    if isinstance(node, (In, Idx)):
        return env[node]
    with np.errstate(over="ignore"):
        if isinstance(node, Unary):
            x = evaluate(node.arg, env)
            return -x if node.op == "-" else np.abs(x)
        if isinstance(node, Bin):
            a, b = evaluate(node.lhs, env), evaluate(node.rhs, env)
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if node.op == "/":
                if a.dtype.kind == "i":
                    return _c_div_int(a, b)
                return a / b
            if node.op == "min":
                return np.minimum(a, b)
            if node.op == "max":
                return np.maximum(a, b)
        if isinstance(node, Cmp):
            a, b = evaluate(node.lhs, env), evaluate(node.rhs, env)
            return {"==": np.equal, "!=": np.not_equal, "<": np.less, "<=": np.less_equal,
                    ">": np.greater, ">=": np.greater_equal}[node.op](a, b)
        if isinstance(node, Select):
            return np.where(evaluate(node.cond, env), evaluate(node.if_true, env),
                            evaluate(node.if_false, env))
    raise TypeError(node)  # pragma: no cover


def evaluate_scalar(node: Node, env: Mapping[object, Union[int, float]]):
    """Cell-at-a-time evaluation with Python numbers (used by the literal oracle)."""
    if isinstance(node, Const):
        return node.value
    if isinstance(node, (In, Idx)):
        return env[node]
    if isinstance(node, Unary):
        x = evaluate_scalar(node.arg, env)
        r = -x if node.op == "-" else abs(x)
        return wrap_i64(r) if isinstance(r, int) else r
    if isinstance(node, Bin):
        a, b = evaluate_scalar(node.lhs, env), evaluate_scalar(node.rhs, env)
        if isinstance(a, int) != isinstance(b, int):
            raise MixedVariantError(f"operator {node.op} on mixed operands")
        if node.op == "min":
            return min(a, b)
        if node.op == "max":
            return max(a, b)
        if node.op == "/":
            if isinstance(a, int):
                if b == 0:
                    raise ZeroDivisionError("integer division by zero in scalar function")
                q = abs(a) // abs(b)
                return wrap_i64(-q if (a < 0) != (b < 0) else q)
            return a / b
        r = {"+": a + b, "-": a - b, "*": a * b}[node.op]
        return wrap_i64(r) if isinstance(r, int) else r
    if isinstance(node, Cmp):
        a, b = evaluate_scalar(node.lhs, env), evaluate_scalar(node.rhs, env)
        return {"==": a == b, "!=": a != b, "<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[node.op]
    if isinstance(node, Select):
        c = evaluate_scalar(node.cond, env)
        return evaluate_scalar(node.if_true if c else node.if_false, env)
    raise TypeError(node)  # pragma: no cover


def leaves(node: Node) -> list[Node]:
    if isinstance(node, (Const, In, Idx)):
        return [node]
    if isinstance(node, Unary):
        return leaves(node.arg)
    if isinstance(node, (Bin, Cmp)):
        return leaves(node.lhs) + leaves(node.rhs)
    if isinstance(node, Select):
        return leaves(node.cond) + leaves(node.if_true) + leaves(node.if_false)
    raise TypeError(node)  # pragma: no cover


# ---------------------------------------------------------------------------
# affine index functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineForm:
    """``const + sum(coeffs[j] * i_{j+1})``."""

    const: int
    coeffs: tuple[int, ...]

    def at(self, idx: Sequence[int]) -> int:
        return self.const + sum(c * i for c, i in zip(self.coeffs, idx))

    def bounds(self, lows: Sequence[int], highs: Sequence[int]) -> tuple[int, int]:
        """Min and max over the box ``lows[j] <= i_j <= highs[j]`` (inclusive, attained at a corner)."""
        lo = hi = self.const
        for c, a, b in zip(self.coeffs, lows, highs):
            lo += c * (a if c >= 0 else b)
            hi += c * (b if c >= 0 else a)
        return lo, hi

    def to_text(self, names: Sequence[str]) -> str:
        terms = []
        for c, n in zip(self.coeffs, names):
            if c == 0:
                continue
            mag = "" if abs(c) == 1 else f"{abs(c)}*"
            terms.append(("-" if c < 0 else "+") + mag + n)
        if self.const or not terms:
            terms.append(("-" if self.const < 0 else "+") + str(abs(self.const)))
        s = "".join(terms)
        return s[1:] if s.startswith("+") else s


@dataclass(frozen=True)
class IndexFn:
    """Maps an MDA index tuple to a buffer index tuple, one affine form per buffer dimension."""

    forms: tuple[AffineForm, ...]
    ndim: int  # number of MDA dimensions D

    @property
    def rank(self) -> int:
        return len(self.forms)

    @classmethod
    def parse(cls, text: str, dims: Sequence[str]) -> "IndexFn":
        text = text.strip()
        if not text:
            return cls((), len(dims))
        pos = {n: k for k, n in enumerate(dims)}
        try:
            tree = ast.parse(f"({text},)", mode="eval").body
        except SyntaxError as e:
            raise ParseError(f"index function {text!r}: {e.msg}", e.lineno, e.offset) from None

        def lin(n) -> tuple[int, list[int]]:
            if isinstance(n, ast.Constant) and isinstance(n.value, int) and not isinstance(n.value, bool):
                return n.value, [0] * len(dims)
            if isinstance(n, ast.Name):
                if n.id not in pos:
                    raise _err(f"unknown index {n.id!r} in {text!r}", n)
                co = [0] * len(dims)
                co[pos[n.id]] = 1
                return 0, co
            if isinstance(n, ast.UnaryOp) and isinstance(n.op, (ast.USub, ast.UAdd)):
                c, co = lin(n.operand)
                s = -1 if isinstance(n.op, ast.USub) else 1
                return s * c, [s * x for x in co]
            if isinstance(n, ast.BinOp) and isinstance(n.op, (ast.Add, ast.Sub)):
                (c1, a1), (c2, a2) = lin(n.left), lin(n.right)
                s = 1 if isinstance(n.op, ast.Add) else -1
                return c1 + s * c2, [x + s * y for x, y in zip(a1, a2)]
            if isinstance(n, ast.BinOp) and isinstance(n.op, ast.Mult):
                (c1, a1), (c2, a2) = lin(n.left), lin(n.right)
                if not any(a1):
                    return c1 * c2, [c1 * y for y in a2]
                if not any(a2):
                    return c1 * c2, [c2 * x for x in a1]
                raise _err(f"index function {text!r} is not affine", n)
            raise _err(f"unsupported index syntax in {text!r}", n)

        forms = []
        for part in tree.elts:
            c, co = lin(part)
            forms.append(AffineForm(c, tuple(co)))
        return cls(tuple(forms), len(dims))

    def to_text(self, dims: Sequence[str]) -> str:
        return ",".join(f.to_text(dims) for f in self.forms)

    def at(self, idx: Sequence[int]) -> tuple[int, ...]:
        return tuple(f.at(idx) for f in self.forms)

    def at_arrays(self, grids: Sequence[np.ndarray]) -> tuple[np.ndarray, ...]:
        """Evaluate on index grids; a coordinate independent of every grid stays a 0-d array (broadcastable)."""
        out = []
        for f in self.forms:
            acc = np.asarray(f.const, dtype=np.int64)
            for c, g in zip(f.coeffs, grids):
                if c:
                    acc = acc + c * g
            out.append(acc)
        return tuple(out)

    def bounds(self, lows: Sequence[int], highs: Sequence[int]) -> list[tuple[int, int]]:
        return [f.bounds(lows, highs) for f in self.forms]

    def referenced_dims(self) -> set[int]:
        """1-based MDA dimensions with a non-zero coefficient in some coordinate."""
        return {j + 1 for f in self.forms for j, c in enumerate(f.coeffs) if c}

    def check_non_negative(self, lows: Sequence[int], highs: Sequence[int], label: str = "") -> None:
        for d, (lo, _) in enumerate(self.bounds(lows, highs)):
            if lo < 0:
                raise NegativeIndexReachable(f"{label} coordinate {d + 1} reaches {lo}")
