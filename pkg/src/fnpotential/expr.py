"""Closed-form expressions over x, used for coefficients, right-hand sides and
exact solutions in scenario documents.

Expressions are parsed with :mod:`ast` against a whitelist and converted to
sympy, so the same object can be evaluated on point arrays and differentiated
symbolically (exact gradients and Hessians for manufactured solutions).

Variables: ``x1 .. xn`` (also ``x, y, z`` for the first three axes), ``r`` for
the Euclidean norm ``|x|``, constants ``pi`` and ``e``.  The literal ``|x|`` is
accepted as a synonym of ``r``.
"""
from __future__ import annotations

import ast
import functools

import numpy as np
import sympy

from .errors import ParseError

_FUNCS = {
    "sin": sympy.sin,
    "cos": sympy.cos,
    "tan": sympy.tan,
    "exp": sympy.exp,
    "log": sympy.log,
    "sqrt": sympy.sqrt,
    "abs": sympy.Abs,
    "atan": sympy.atan,
    "arctan": sympy.atan,
    "atan2": sympy.atan2,
    "sinh": sympy.sinh,
    "cosh": sympy.cosh,
    "tanh": sympy.tanh,
    "sign": sympy.sign,
    "min": sympy.Min,
    "max": sympy.Max,
}

_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


def _symbols(dim):
    xs = sympy.symbols(" ".join(f"x{i + 1}" for i in range(dim)), real=True)
    if dim == 1:
        xs = (xs,)
    return tuple(xs)


class Expression:
    """A parsed scalar expression in ``dim`` variables."""

    def __init__(self, source, dim):
        if isinstance(source, (int, float)):
            source = repr(float(source))
        if not isinstance(source, str):
            raise ParseError(f"expression must be a string or number, got {type(source).__name__}")
        self.source = source
        self.dim = int(dim)
        self.symbols = _symbols(self.dim)
        self.sym = self._parse(source)

    def __repr__(self):
        return f"Expression({self.source!r}, dim={self.dim})"

    def _names(self):
        names = {f"x{i + 1}": s for i, s in enumerate(self.symbols)}
        for alias, s in zip("xyz", self.symbols):
            names.setdefault(alias, s)
        names["r"] = sympy.sqrt(sum(s**2 for s in self.symbols))
        names["pi"] = sympy.pi
        names["e"] = sympy.E
        return names

    def _parse(self, source):
        text = source.replace("|x|", "r").replace("^", "**")
        try:
            tree = ast.parse(text, mode="eval")
        except SyntaxError as exc:
            raise ParseError(f"cannot parse expression {source!r}: {exc.msg}") from None
        names = self._names()

        def conv(node):
            if isinstance(node, ast.Expression):
                return conv(node.body)
            if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
                return sympy.Float(node.value) if isinstance(node.value, float) else sympy.Integer(node.value)
            if isinstance(node, ast.Name):
                if node.id not in names:
                    raise ParseError(f"unknown name {node.id!r} in {source!r}")
                return names[node.id]
            if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
                return _BINOPS[type(node.op)](conv(node.left), conv(node.right))
            if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
                val = conv(node.operand)
                return -val if isinstance(node.op, ast.USub) else val
            if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
                fn = _FUNCS.get(node.func.id)
                if fn is None or node.keywords:
                    raise ParseError(f"function {node.func.id!r} not allowed in {source!r}")
                return fn(*[conv(a) for a in node.args])
            raise ParseError(f"unsupported syntax {type(node).__name__} in {source!r}")

        return conv(tree)

    @functools.cached_property
    def _func(self):
        return sympy.lambdify(self.symbols, self.sym, modules="numpy")

    def __call__(self, points):
        """Evaluate at ``points`` of shape (m, dim); returns shape (m,)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self._func(*[pts[:, i] for i in range(self.dim)])
        return np.broadcast_to(np.asarray(out, dtype=float), (pts.shape[0],)).copy()

    def gradient(self):
        return [Expression._from_sym(sympy.diff(self.sym, s), self) for s in self.symbols]

    def hessian(self):
        return [[Expression._from_sym(sympy.diff(self.sym, a, b), self) for b in self.symbols] for a in self.symbols]

    @classmethod
    def _from_sym(cls, sym, parent):
        obj = cls.__new__(cls)
        obj.source = str(sym)
        obj.dim = parent.dim
        obj.symbols = parent.symbols
        obj.sym = sym
        return obj


def parse(source, dim):
    return Expression(source, dim)
