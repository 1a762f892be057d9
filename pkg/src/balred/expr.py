"""Scalar expression mini-language: parse, print, evaluate, differentiate.

Expressions are immutable trees of :class:`Expr` nodes.  Arithmetic operators
are overloaded so that numeric code can be written once and run either on
floats/arrays or on expressions (the transformation engine relies on this).

Grammar (``^`` is right associative, no implicit multiplication)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'
"""
from __future__ import annotations

import math
import re
from typing import Iterable, Mapping

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt")

_BINARY_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PREC = 3
_ATOM_PREC = 5


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message, text, pos):
        self.text = text
        self.pos = pos
        super().__init__(f"{message} at position {pos}: {text!r}")


class EvalError(ExprError):
    """Raised on missing bindings or domain errors during evaluation."""


class Expr:
    __slots__ = ("_hash",)

    # -- operator overloading (folds trivial identities) ------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)

    def __neg__(self):
        return neg(self)

    def __hash__(self):
        return self._hash

    def __str__(self):
        return to_string(self)

    @property
    def variables(self) -> frozenset:
        return free_variables(self)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)
        self._hash = hash(("c", self.value))

    def __eq__(self, other):
        return isinstance(other, Const) and (
            self.value == other.value
            or (math.isnan(self.value) and math.isnan(other.value)))

    __hash__ = Expr.__hash__

    def __repr__(self):
        return f"Const({self.value!r})"


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name
        self._hash = hash(("v", name))

    def __eq__(self, other):
        return isinstance(other, Var) and self.name == other.name

    __hash__ = Expr.__hash__

    def __repr__(self):
        return f"Var({self.name!r})"


class Unary(Expr):
    """``op`` is ``'neg'`` or one of :data:`FUNCTIONS`."""
    __slots__ = ("op", "arg")

    def __init__(self, op, arg):
        self.op = op
        self.arg = arg
        self._hash = hash(("u", op, arg._hash))

    def __eq__(self, other):
        return (isinstance(other, Unary) and self._hash == other._hash
                and self.op == other.op and self.arg == other.arg)

    __hash__ = Expr.__hash__

    def __repr__(self):
        return f"Unary({self.op!r}, {self.arg!r})"


class Binary(Expr):
    __slots__ = ("op", "left", "right")

    def __init__(self, op, left, right):
        self.op = op
        self.left = left
        self.right = right
        self._hash = hash(("b", op, left._hash, right._hash))

    def __eq__(self, other):
        return (isinstance(other, Binary) and self._hash == other._hash
                and self.op == other.op and self.left == other.left
                and self.right == other.right)

    __hash__ = Expr.__hash__

    def __repr__(self):
        return f"Binary({self.op!r}, {self.left!r}, {self.right!r})"


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float, np.floating, np.integer)):
        return Const(float(v))
    raise TypeError(f"cannot convert {type(v).__name__} to Expr")


def _is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


def _is_neg(e):
    return isinstance(e, Unary) and e.op == "neg"


# -- folding constructors ----------------------------------------------------

def add(a, b):
    a, b = as_expr(a), as_expr(b)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_neg(b):
        return sub(a, b.arg)
    return Binary("+", a, b)


def sub(a, b):
    a, b = as_expr(a), as_expr(b)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_neg(b):
        return add(a, b.arg)
    return Binary("-", a, b)


def mul(a, b):
    a, b = as_expr(a), as_expr(b)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    if _is_neg(a):
        return neg(mul(a.arg, b))
    if _is_neg(b):
        return neg(mul(a, b.arg))
    return Binary("*", a, b)


def div(a, b):
    a, b = as_expr(a), as_expr(b)
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is_neg(a):
        return neg(div(a.arg, b))
    if (_is_const(b) and b.value != 0.0 and isinstance(a, Binary) and a.op == "*"
            and _is_const(a.right)):
        return mul(a.left, a.right.value / b.value)
    return Binary("/", a, b)


def power(a, b):
    a, b = as_expr(a), as_expr(b)
    if _is_const(b, 0.0):
        return ONE
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        try:
            return Const(math.pow(a.value, b.value))
        except (ValueError, OverflowError):
            pass
    return Binary("^", a, b)


def neg(a):
    a = as_expr(a)
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


_MATH = {"sin": math.sin, "cos": math.cos, "exp": math.exp,
         "ln": math.log, "sqrt": math.sqrt}
_NUMPY = {"sin": np.sin, "cos": np.cos, "exp": np.exp,
          "ln": np.log, "sqrt": np.sqrt}


def func(name, a):
    a = as_expr(a)
    if _is_const(a):
        try:
            return Const(_MATH[name](a.value))
        except (ValueError, OverflowError):
            pass
    return Unary(name, a)


def _dispatch(name):
    def f(v):
        if isinstance(v, Expr):
            return func(name, v)
        if isinstance(v, (float, int)):
            return _MATH[name](v)
        return _NUMPY[name](v)
    f.__name__ = name
    f.__doc__ = f"{name} that works on floats, numpy arrays and Expr."
    return f


sin = _dispatch("sin")
cos = _dispatch("cos")
exp = _dispatch("exp")
ln = _dispatch("ln")
sqrt = _dispatch("sqrt")


# -- parsing -----------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                    r"|([A-Za-z_][A-Za-z_0-9]*)|(\S))")


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # trailing whitespace
            break
        num, name, sym = m.groups()
        start = m.start(m.lastindex)
        if num is not None:
            tokens.append(("num", num, start))
        elif name is not None:
            tokens.append(("name", name, start))
        else:
            if sym not in "+-*/^(),":
                raise ParseError(f"unexpected character {sym!r}", text, start)
            tokens.append((sym, sym, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, allowed):
        self.text = text
        self.allowed = allowed
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind=None):
        tok = self.tokens[self.i]
        if kind is not None and tok[0] != kind:
            where = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ParseError(f"expected {kind!r}, found {where}", self.text, tok[2])
        self.i += 1
        return tok

    def parse(self):
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected token {tok[1]!r}", self.text, tok[2])
        return e

    def expr(self):
        e = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.take()[0]
            e = Binary(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.take()[0]
            e = Binary(op, e, self.unary())
        return e

    def unary(self):
        if self.peek()[0] == "-":
            self.take()
            operand = self.unary()
            if isinstance(operand, Const):
                return Const(-operand.value)
            return Unary("neg", operand)
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[0] == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def primary(self):
        kind, val, pos = self.peek()
        if kind == "num":
            self.take()
            return Const(float(val))
        if kind == "name":
            self.take()
            if self.peek()[0] == "(":
                if val not in FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", self.text, pos)
                self.take("(")
                arg = self.expr()
                self.take(")")
                return Unary(val, arg)
            if val in FUNCTIONS:
                raise ParseError(f"function {val!r} used without arguments",
                                 self.text, pos)
            if self.allowed is not None and val not in self.allowed:
                raise ParseError(f"unknown variable {val!r}", self.text, pos)
            return Var(val)
        if kind == "(":
            self.take()
            e = self.expr()
            self.take(")")
            return e
        where = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"syntax error, unexpected {where}", self.text, pos)


def parse_expr(text: str, allowed_vars: Iterable[str] | None = None) -> Expr:
    """Parse ``text``; every variable must be in ``allowed_vars`` (if given)."""
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty expression", str(text), 0)
    allowed = None if allowed_vars is None else frozenset(allowed_vars)
    return _Parser(text, allowed).parse()


# -- printing ----------------------------------------------------------------

def _fmt_const(v):
    if v.is_integer() and abs(v) < 1e16:
        s = str(int(v))
    else:
        s = repr(v)
    return f"({s})" if v < 0 or s.startswith("-") else s


def _prec(e):
    if isinstance(e, Binary):
        return _BINARY_PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _NEG_PREC
    return _ATOM_PREC


def to_string(e: Expr) -> str:
    """Print ``e`` so that :func:`parse_expr` rebuilds the same tree."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = to_string(e.arg)
            if _prec(e.arg) <= _NEG_PREC:
                inner = f"({inner})"
            return f"-{inner}"
        return f"{e.op}({to_string(e.arg)})"
    p = _BINARY_PREC[e.op]
    ls, rs = to_string(e.left), to_string(e.right)
    lp, rp = _prec(e.left), _prec(e.right)
    if e.op == "^":
        if lp <= p:
            ls = f"({ls})"
        if rp < p or rp == _NEG_PREC:
            rs = f"({rs})"
        return f"{ls}^{rs}"
    if lp < p or lp == _NEG_PREC:
        ls = f"({ls})"
    if rp <= p or rp == _NEG_PREC:
        rs = f"({rs})"
    return f"{ls} {e.op} {rs}"


# -- traversal ---------------------------------------------------------------

def free_variables(e: Expr) -> frozenset:
    out = set()
    stack = [e]
    seen = set()
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        if isinstance(n, Var):
            out.add(n.name)
        elif isinstance(n, Unary):
            stack.append(n.arg)
        elif isinstance(n, Binary):
            stack.append(n.left)
            stack.append(n.right)
    return frozenset(out)


def substitute(e: Expr, mapping: Mapping[str, object]) -> Expr:
    """Replace variables by expressions (or numbers), folding as it rebuilds."""
    mapping = {k: as_expr(v) for k, v in mapping.items()}
    memo: dict[int, Expr] = {}

    def go(n):
        key = id(n)
        if key in memo:
            return memo[key]
        if isinstance(n, Var):
            r = mapping.get(n.name, n)
        elif isinstance(n, Const):
            r = n
        elif isinstance(n, Unary):
            a = go(n.arg)
            r = neg(a) if n.op == "neg" else func(n.op, a)
        else:
            r = _BUILD[n.op](go(n.left), go(n.right))
        memo[key] = r
        return r

    return go(e)


_BUILD = {"+": add, "-": sub, "*": mul, "/": div, "^": power}


def simplify(e: Expr) -> Expr:
    """Light constant folding (rebuild through the folding constructors)."""
    return substitute(e, {})


# -- differentiation ---------------------------------------------------------

def diff_expr(e: Expr, var: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``var``."""
    memo: dict[int, Expr] = {}

    def d(n):
        key = id(n)
        if key in memo:
            return memo[key]
        if isinstance(n, Const):
            r = ZERO
        elif isinstance(n, Var):
            r = ONE if n.name == var else ZERO
        elif isinstance(n, Unary):
            da = d(n.arg)
            a = n.arg
            if _is_const(da, 0.0):
                r = ZERO
            elif n.op == "neg":
                r = neg(da)
            elif n.op == "sin":
                r = mul(func("cos", a), da)
            elif n.op == "cos":
                r = neg(mul(func("sin", a), da))
            elif n.op == "exp":
                r = mul(n, da)
            elif n.op == "ln":
                r = div(da, a)
            elif n.op == "sqrt":
                r = div(da, mul(Const(2.0), n))
            else:  # pragma: no cover
                raise ExprError(f"no derivative rule for {n.op}")
        else:
            a, b = n.left, n.right
            da, db = d(a), d(b)
            if n.op == "+":
                r = add(da, db)
            elif n.op == "-":
                r = sub(da, db)
            elif n.op == "*":
                r = add(mul(da, b), mul(a, db))
            elif n.op == "/":
                if _is_const(db, 0.0):
                    r = div(da, b)
                else:
                    r = div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
            else:
                if _is_const(db, 0.0):
                    # d(a^c) = c a^(c-1) a'
                    r = mul(mul(b, power(a, sub(b, ONE))), da)
                elif _is_const(da, 0.0):
                    r = mul(mul(n, func("ln", a)), db)
                else:
                    r = mul(n, add(mul(db, func("ln", a)), div(mul(b, da), a)))
        memo[key] = r
        return r

    return d(e)


# -- evaluation --------------------------------------------------------------

_PY_OPS = {"+": "+", "-": "-", "*": "*", "/": "/"}


def _codegen(exprs, argnames, mod):
    """SSA code for ``exprs`` with common subexpressions shared."""
    lines = []
    names: dict[Expr, str] = {}
    stack_limit = 0

    def emit(n):
        nonlocal stack_limit
        if n in names:
            return names[n]
        if isinstance(n, Const):
            return repr(n.value)
        if isinstance(n, Var):
            return n.name
        # iterative post-order to avoid deep recursion on long chains
        todo = [(n, False)]
        while todo:
            node, ready = todo.pop()
            if node in names or isinstance(node, (Const, Var)):
                continue
            kids = [node.arg] if isinstance(node, Unary) else [node.left, node.right]
            if not ready:
                todo.append((node, True))
                for k in kids:
                    if not (k in names or isinstance(k, (Const, Var))):
                        todo.append((k, False))
                continue
            ref = [names.get(k) or emit(k) for k in kids]
            if isinstance(node, Unary):
                code = f"-{ref[0]}" if node.op == "neg" else f"{mod}_{node.op}({ref[0]})"
            elif node.op == "^":
                code = f"{mod}_pow({ref[0]}, {ref[1]})"
            else:
                code = f"{ref[0]} {_PY_OPS[node.op]} {ref[1]}"
            t = f"_t{len(names)}"
            names[node] = t
            lines.append(f"    {t} = {code}")
        return names[n]

    outs = [emit(e) for e in exprs]
    src = f"def _f({', '.join(argnames)}):\n" + "\n".join(lines)
    src += f"\n    return ({', '.join(outs)},)\n"
    return src


def _math_pow(x, y):
    return math.pow(x, y)


_SCALAR_NS = {"m_" + k: v for k, v in _MATH.items()}
_SCALAR_NS["m_pow"] = _math_pow
_ARRAY_NS = {"n_" + k: v for k, v in _NUMPY.items()}
_ARRAY_NS["n_pow"] = np.power


class Compiled:
    """Several expressions compiled into one function of named arguments.

    Works on floats (``math`` backend) and on numpy arrays (``numpy``
    backend, floating-point faults raise).  Outputs are broadcast to the
    common shape of the inputs.
    """

    def __init__(self, exprs: Iterable[Expr], argnames: Iterable[str]):
        self.exprs = [as_expr(e) for e in exprs]
        self.argnames = tuple(argnames)
        used = set()
        for e in self.exprs:
            used |= free_variables(e)
        missing = used - set(self.argnames)
        if missing:
            raise EvalError(f"unbound variables {sorted(missing)}")
        ns = dict(_SCALAR_NS)
        exec(_codegen(self.exprs, self.argnames, "m"), ns)
        self._scalar = ns["_f"]
        ns = dict(_ARRAY_NS)
        exec(_codegen(self.exprs, self.argnames, "n"), ns)
        self._array = ns["_f"]

    def scalar(self, *args):
        try:
            return tuple(float(v) for v in self._scalar(*args))
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            ctx = dict(zip(self.argnames, args))
            raise EvalError(f"evaluation fault ({exc}) at {ctx}") from exc

    def array(self, *args):
        """Evaluate on arrays; returns an array of shape (n_exprs, *shape)."""
        arrs = [np.asarray(a, dtype=float) for a in args]
        shape = np.broadcast_shapes(*[a.shape for a in arrs]) if arrs else ()
        try:
            with np.errstate(divide="raise", invalid="raise", over="raise"):
                vals = self._array(*arrs)
        except FloatingPointError as exc:
            raise EvalError(f"evaluation fault ({exc}) in array evaluation "
                            f"over {self.argnames}") from exc
        out = np.empty((len(vals),) + shape)
        for i, v in enumerate(vals):
            out[i] = v
        return out

    def __call__(self, *args):
        if all(np.ndim(a) == 0 for a in args):
            return self.scalar(*args)
        return self.array(*args)


def eval_expr(e: Expr, bindings: Mapping[str, float]) -> float:
    """Evaluate ``e`` in double precision with the given variable values."""
    names = sorted(free_variables(e))
    missing = [n for n in names if n not in bindings]
    if missing:
        raise EvalError(f"missing binding for {', '.join(missing)}")
    args = [bindings[n] for n in names]
    if any(np.ndim(a) for a in args):
        return Compiled([e], names).array(*args)[0]
    return Compiled([e], names).scalar(*args)[0]
