"""Scalar-field expressions for potentials and coefficients over R^n.

The grammar is a small infix arithmetic language:

    expr   := ('+'|'-')? term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' factor)?
    base   := number | 'x'DIGITS | func '(' expr ')' | '(' expr ')'

with functions ``exp, sin, cos, tanh, sqrt, sabs`` (``sabs`` is the smoothed
absolute value sqrt(x^2 + 0.01)).  Variables are ``x1 .. xn``.  Whitespace is
insignificant; numbers are decimals with optional exponent.

Expressions are immutable after parsing.  Evaluation comes in three flavours:

* :meth:`ScalarFieldExpr.values` -- vectorized numpy evaluation on point
  arrays (used to tabulate V(eps*x), K(eps*x) on grids),
* :meth:`ScalarFieldExpr.value_grad_hessian` -- second-order forward-mode
  jets carrying exact gradient and Hessian at a single point,
* :func:`eval_dual` -- generic evaluation over any numeric-like scalar,
  which nests (dual-over-dual) and backs the derivative consistency tests.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScalarFieldExpr",
    "ExprError",
    "ExprSyntaxError",
    "ExprDomainError",
    "parse",
    "Dual1",
    "Jet2",
    "eval_dual",
]

SABS_SMOOTHING = 1e-2  # sabs(x) = sqrt(x^2 + SABS_SMOOTHING^2)

FUNCTIONS = ("exp", "sin", "cos", "tanh", "sqrt", "sabs")


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    """Rejected input; ``pos`` is the byte offset of the offending token."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at offset {pos})")
        self.pos = pos


class ExprDomainError(ExprError):
    """Evaluation left the function's domain (sqrt of a negative, etc.)."""


# --------------------------------------------------------------------------
# AST nodes.  Source positions are kept for error messages but excluded from
# equality so that round-tripped trees compare structurally equal.


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    index: int  # 1-based
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    child: object
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: object
    right: object
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    name: str
    arg: object
    pos: int = field(default=0, compare=False)


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            at = len(text) - len(stripped)
            if not stripped:
                break
            raise ExprSyntaxError(f"unexpected character {stripped[0]!r}", at)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.peek()
        if val != value:
            raise ExprSyntaxError(f"expected {value!r}, got {val or 'end of input'!r}", pos)
        return self.advance()

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"trailing input {val!r}", pos)
        return node

    def expr(self):
        kind, val, pos = self.peek()
        if val in ("+", "-"):
            self.advance()
            node = self.term()
            if val == "-":
                node = Neg(node, pos)
        else:
            node = self.term()
        while self.peek()[1] in ("+", "-"):
            _, op, pos = self.advance()
            node = Bin(op, node, self.term(), pos)
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/"):
            _, op, pos = self.advance()
            node = Bin(op, node, self.factor(), pos)
        return node

    def factor(self):
        node = self.base()
        if self.peek()[1] == "^":
            _, _, pos = self.advance()
            node = Bin("^", node, self.factor(), pos)
        return node

    def base(self):
        kind, val, pos = self.advance()
        if kind == "num":
            return Num(float(val), pos)
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg, pos)
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                index = int(m.group(1))
                if not 1 <= index <= self.dim:
                    raise ExprSyntaxError(
                        f"variable x{index} out of range for dimension {self.dim}", pos
                    )
                return Var(index, pos)
            raise ExprSyntaxError(f"unknown identifier {val!r}", pos)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExprSyntaxError(f"expected a value, got {val or 'end of input'!r}", pos)


# --------------------------------------------------------------------------
# Scalar types for forward-mode differentiation.


class Dual1:
    """First-order dual number (value, directional derivative).

    The components may themselves be Dual1 instances, so nesting two levels
    yields second derivatives ("AD on AD").
    """

    __slots__ = ("val", "dot")

    def __init__(self, val, dot=0.0):
        self.val = val
        self.dot = dot

    def __add__(self, other):
        other = _as_dual(other)
        return Dual1(self.val + other.val, self.dot + other.dot)

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_dual(other)
        return Dual1(self.val - other.val, self.dot - other.dot)

    def __rsub__(self, other):
        return _as_dual(other).__sub__(self)

    def __neg__(self):
        return Dual1(-self.val, -self.dot)

    def __mul__(self, other):
        other = _as_dual(other)
        return Dual1(self.val * other.val, self.dot * other.val + self.val * other.dot)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_dual(other)
        inv = 1.0 / other.val
        val = self.val * inv
        return Dual1(val, (self.dot - val * other.dot) * inv)

    def __rtruediv__(self, other):
        return _as_dual(other).__truediv__(self)


def _as_dual(x):
    return x if isinstance(x, Dual1) else Dual1(x, 0.0)


class Jet2:
    """Second-order jet: value, gradient (n,), symmetric Hessian (n, n)."""

    __slots__ = ("val", "g", "H")

    def __init__(self, val: float, g: np.ndarray, H: np.ndarray):
        self.val = float(val)
        self.g = g
        self.H = H

    @staticmethod
    def const(val: float, n: int) -> "Jet2":
        return Jet2(val, np.zeros(n), np.zeros((n, n)))

    @staticmethod
    def variable(val: float, i: int, n: int) -> "Jet2":
        g = np.zeros(n)
        g[i] = 1.0
        return Jet2(val, g, np.zeros((n, n)))

    def __add__(self, other):
        return Jet2(self.val + other.val, self.g + other.g, self.H + other.H)

    def __sub__(self, other):
        return Jet2(self.val - other.val, self.g - other.g, self.H - other.H)

    def __neg__(self):
        return Jet2(-self.val, -self.g, -self.H)

    def __mul__(self, other):
        cross = np.outer(self.g, other.g)
        return Jet2(
            self.val * other.val,
            self.val * other.g + other.val * self.g,
            self.val * other.H + other.val * self.H + cross + cross.T,
        )

    def __truediv__(self, other):
        return self * other.reciprocal()

    def reciprocal(self):
        return self.chain(lambda v: 1.0 / v, lambda v: -1.0 / v**2, lambda v: 2.0 / v**3)

    def chain(self, f, f1, f2):
        u, g, H = self.val, self.g, self.H
        return Jet2(f(u), f1(u) * g, f1(u) * H + f2(u) * np.outer(g, g))

    def ipow(self, k: int):
        """Integer power, valid for any sign of the base."""
        u = self.val
        if k == 0:
            return Jet2.const(1.0, len(self.g))
        return self.chain(
            lambda v: v**k,
            lambda v: k * v ** (k - 1),
            lambda v: k * (k - 1) * v ** (k - 2) if k != 1 else 0.0 * v,
        )


# --------------------------------------------------------------------------
# Evaluation dispatch tables.

_NUMPY_FUNCS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "sabs": lambda v: np.sqrt(v * v + SABS_SMOOTHING**2),
}

# (f, f', f'') triples for the second-order jets.
_JET_FUNCS = {
    "exp": (math.exp, math.exp, math.exp),
    "sin": (math.sin, math.cos, lambda v: -math.sin(v)),
    "cos": (math.cos, lambda v: -math.sin(v), lambda v: -math.cos(v)),
    "tanh": (
        math.tanh,
        lambda v: 1.0 - math.tanh(v) ** 2,
        lambda v: -2.0 * math.tanh(v) * (1.0 - math.tanh(v) ** 2),
    ),
    "sqrt": (
        math.sqrt,
        lambda v: 0.5 / math.sqrt(v),
        lambda v: -0.25 / math.sqrt(v) ** 3,
    ),
    "sabs": (
        lambda v: math.sqrt(v * v + SABS_SMOOTHING**2),
        lambda v: v / math.sqrt(v * v + SABS_SMOOTHING**2),
        lambda v: SABS_SMOOTHING**2 / math.sqrt(v * v + SABS_SMOOTHING**2) ** 3,
    ),
}

# f, f', f'' table for the generic (nestable) dual evaluation; includes log
# as an internal helper for non-integer powers.
_DUAL_TABLE = dict(_JET_FUNCS)
_DUAL_TABLE["log"] = (math.log, lambda v: 1.0 / v, lambda v: -1.0 / v**2)


def _check_domain(name, arg_values):
    if name == "sqrt" and np.any(np.asarray(arg_values) < 0):
        raise ExprDomainError("sqrt of a negative value")
    if name == "log" and np.any(np.asarray(arg_values) <= 0):
        raise ExprDomainError("non-integer power of a non-positive base")


def _eval_values(node, x: np.ndarray):
    if isinstance(node, Num):
        return np.full(x.shape[1:], node.value) if x.ndim > 1 else node.value
    if isinstance(node, Var):
        return x[node.index - 1]
    if isinstance(node, Neg):
        return -_eval_values(node.child, x)
    if isinstance(node, Bin):
        a = _eval_values(node.left, x)
        b = _eval_values(node.right, x)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        # power: integer exponents work for any base, otherwise base > 0
        if isinstance(node.right, Num) and float(node.right.value).is_integer():
            return a ** int(node.right.value)
        if np.any(np.asarray(a) <= 0):
            raise ExprDomainError("non-integer power of a non-positive base")
        return a**b
    if isinstance(node, Call):
        v = _eval_values(node.arg, x)
        _check_domain(node.name, v)
        return _NUMPY_FUNCS[node.name](v)
    raise TypeError(f"unknown node {node!r}")


def _eval_jet(node, jets: list) -> Jet2:
    n = len(jets)
    if isinstance(node, Num):
        return Jet2.const(node.value, n)
    if isinstance(node, Var):
        return jets[node.index - 1]
    if isinstance(node, Neg):
        return -_eval_jet(node.child, jets)
    if isinstance(node, Bin):
        a = _eval_jet(node.left, jets)
        if node.op == "^":
            if isinstance(node.right, Num) and float(node.right.value).is_integer():
                return a.ipow(int(node.right.value))
            b = _eval_jet(node.right, jets)
            if a.val <= 0:
                raise ExprDomainError("non-integer power of a non-positive base")
            # a^b = exp(b ln a)
            ln_a = a.chain(math.log, lambda v: 1.0 / v, lambda v: -1.0 / v**2)
            return (b * ln_a).chain(math.exp, math.exp, math.exp)
        b = _eval_jet(node.right, jets)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b
    if isinstance(node, Call):
        u = _eval_jet(node.arg, jets)
        _check_domain(node.name, u.val)
        return u.chain(*_JET_FUNCS[node.name])
    raise TypeError(f"unknown node {node!r}")


def eval_dual(node, scalars: list):
    """Evaluate over arbitrary numeric-like scalars (floats or Dual1).

    Nesting Dual1 components inside Dual1 yields second derivatives; used by
    the tests to check the Jet2 Hessian against the Jacobian of the gradient.
    """
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return scalars[node.index - 1]
    if isinstance(node, Neg):
        return -eval_dual(node.child, scalars)
    if isinstance(node, Bin):
        a = eval_dual(node.left, scalars)
        if node.op == "^":
            if isinstance(node.right, Num) and float(node.right.value).is_integer():
                return _dual_ipow(a, int(node.right.value))
            b = eval_dual(node.right, scalars)
            return _dual_func("exp", b * _dual_func("log", a))
        b = eval_dual(node.right, scalars)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b
    if isinstance(node, Call):
        return _dual_func(node.name, eval_dual(node.arg, scalars))
    raise TypeError(f"unknown node {node!r}")


def _dual_ipow(u, k: int):
    if k == 0:
        return 1.0
    r = u
    for _ in range(abs(k) - 1):
        r = r * u
    return r if k > 0 else 1.0 / r


def _dual_func(name, u):
    if isinstance(u, Dual1):
        return Dual1(_dual_func(name, u.val), _dual_deriv(name, u.val) * u.dot)
    f = _DUAL_TABLE[name][0]
    _check_domain(name, u)
    return f(u)


def _dual_deriv(name, u):
    """f'(u) where u may itself be a Dual1 (one extra nesting level)."""
    if isinstance(u, Dual1):
        return Dual1(_dual_deriv(name, u.val), _dual_deriv2(name, u.val) * u.dot)
    return _DUAL_TABLE[name][1](u)


def _dual_deriv2(name, u):
    if isinstance(u, Dual1):
        raise NotImplementedError("third-order nesting is not supported")
    return _DUAL_TABLE[name][2](u)


# --------------------------------------------------------------------------
# Public wrapper.


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}


def _unparse(node, parent_prec=0, right_side=False) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        inner = _unparse(node.child, 2)
        s = f"-{inner}"
        return f"({s})" if parent_prec > 1 else s
    if isinstance(node, Call):
        return f"{node.name}({_unparse(node.arg)})"
    if isinstance(node, Bin):
        prec = _PRECEDENCE[node.op]
        left = _unparse(node.left, prec, right_side=False)
        # - and / are left-associative, ^ is right-associative
        rprec = prec if node.op == "^" else prec + (1 if node.op in "-/" else 0)
        right = _unparse(node.right, rprec, right_side=True)
        if node.op == "^":
            left = _unparse(node.left, prec + 1)
        s = f"{left}{node.op}{right}"
        need = prec < parent_prec or (prec == parent_prec and right_side)
        return f"({s})" if need else s
    raise TypeError(f"unknown node {node!r}")


@dataclass(frozen=True)
class ScalarFieldExpr:
    """A parsed expression over x1..xn with exact derivatives."""

    ast: object
    dim: int
    source: str = field(default="", compare=False)

    def values(self, x: np.ndarray):
        """Evaluate on points.  ``x`` has shape (dim,) or (dim, ...)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 and self.dim == 1:
            x = x.reshape(1)
        if x.shape[0] != self.dim:
            raise ValueError(f"expected leading axis {self.dim}, got shape {x.shape}")
        out = _eval_values(self.ast, x)
        out = np.broadcast_to(np.asarray(out, dtype=float), x.shape[1:])
        if not np.all(np.isfinite(out)):
            raise ExprDomainError("expression evaluated to a non-finite value")
        return float(out) if out.ndim == 0 else np.array(out)

    def __call__(self, x):
        return self.values(x)

    def value_grad_hessian(self, x) -> tuple[float, np.ndarray, np.ndarray]:
        """Exact value, gradient and symmetric Hessian at one point."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise ValueError(f"expected point of dimension {self.dim}")
        jets = [Jet2.variable(x[i], i, self.dim) for i in range(self.dim)]
        jet = _eval_jet(self.ast, jets)
        H = 0.5 * (jet.H + jet.H.T)  # enforce exact symmetry
        if not (np.isfinite(jet.val) and np.all(np.isfinite(jet.g)) and np.all(np.isfinite(H))):
            raise ExprDomainError("derivative evaluation produced a non-finite value")
        return jet.val, jet.g, H

    def unparse(self) -> str:
        return _unparse(self.ast)

    def is_constant(self) -> bool:
        return not _has_var(self.ast)


def _has_var(node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Neg):
        return _has_var(node.child)
    if isinstance(node, Bin):
        return _has_var(node.left) or _has_var(node.right)
    if isinstance(node, Call):
        return _has_var(node.arg)
    return False


def parse(text: str, dim: int) -> ScalarFieldExpr:
    """Parse ``text`` over variables x1..x{dim}.

    Raises :class:`ExprSyntaxError` with a byte offset on rejection.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    ast = _Parser(text, dim).parse()
    return ScalarFieldExpr(ast, dim, source=text)
