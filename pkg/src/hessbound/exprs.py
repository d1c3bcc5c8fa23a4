"""Closed-form coefficient functions of ``(x, z, p)``.

Expressions are plain strings parsed by sympy. Available names:

``x1 .. xn``   chart coordinates
``z`` or ``u`` the value of the unknown
``p1 .. pn``   covariant gradient components
``pnorm2``     ``|p|^2 = g^ij p_i p_j`` for the chart metric

together with ``exp``, ``log``, ``sqrt``, ``sin``, ``cos``, ``tan``,
``sinh``, ``cosh``, ``tanh``, ``pi``, ``Abs`` and the usual arithmetic and
``**`` powers. Derivatives are taken symbolically and compiled to numpy on
first use.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import sympy as sp
from sympy.core.function import AppliedUndef

from .errors import DomainError

_ALLOWED = {
    name: getattr(sp, name)
    for name in ("exp", "log", "sqrt", "sin", "cos", "tan", "sinh", "cosh", "tanh", "pi", "Abs", "Rational")
}


@lru_cache(maxsize=None)
def symbols(n: int):
    """``(x, z, p)`` sympy symbols for dimension ``n``."""
    x = sp.symbols(f"x1:{n + 1}", real=True)
    p = sp.symbols(f"p1:{n + 1}", real=True)
    z = sp.Symbol("z", real=True)
    return x, z, p


def inverse_metric_scale(manifold):
    """``c(x)`` with ``g^ij = c(x) delta_ij`` as a sympy expression."""
    x, _, _ = symbols(manifold.n)
    if manifold.flat:
        return sp.Integer(1)
    q = 1 + sum(xi**2 for xi in x)
    return (q / (2 * sp.Float(manifold.radius))) ** 2


def parse(source, n: int) -> sp.Expr:
    """Parse an expression string (or pass a sympy expression through)."""
    x, z, p = symbols(n)
    if isinstance(source, sp.Basic):
        return source
    if isinstance(source, (int, float)):
        return sp.Float(source) if isinstance(source, float) else sp.Integer(source)
    names = dict(_ALLOWED)
    names.update({str(s): s for s in x + p})
    names["z"] = z
    names["u"] = z
    names["pnorm2"] = sp.Symbol("pnorm2", real=True)
    try:
        expr = sp.sympify(source, locals=names)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise DomainError(f"cannot parse expression {source!r}: {exc}") from None
    unknown_fns = {type(f).__name__ for f in expr.atoms(AppliedUndef)}
    if unknown_fns:
        raise DomainError(f"unknown functions {sorted(unknown_fns)} in expression {source!r}")
    allowed = set(x) | set(p) | {z, names["pnorm2"]}
    extra = expr.free_symbols - allowed
    if extra:
        raise DomainError(f"unknown names {sorted(map(str, extra))} in expression {source!r}")
    return expr


class CompiledExpr:
    """An expression bound to a chart, with cached derivatives.

    ``pnorm2`` is replaced by ``c(x) sum p_i^2`` so that x-derivatives see
    the metric dependence.

    Parameters
    ----------
    expr : str or sympy expression
    manifold : DiscreteManifold
    """

    def __init__(self, expr, manifold):
        self.manifold = manifold
        n = manifold.n
        self.n = n
        x, z, p = symbols(n)
        base = parse(expr, n)
        pn = sp.Symbol("pnorm2", real=True)
        self.expr = base.subs(pn, inverse_metric_scale(manifold) * sum(pi**2 for pi in p))
        self.x, self.z, self.p = x, z, p
        self._fns = {}

    @property
    def depends_on_z(self) -> bool:
        return self.z in self.expr.free_symbols

    @property
    def depends_on_p(self) -> bool:
        return bool(set(self.p) & self.expr.free_symbols)

    @property
    def depends_on_x(self) -> bool:
        return bool(set(self.x) & self.expr.free_symbols)

    def _symbol(self, name):
        if name == "z":
            return self.z
        kind, idx = name[0], int(name[1:]) - 1
        return (self.x if kind == "x" else self.p)[idx]

    def _fn(self, names):
        if names not in self._fns:
            e = self.expr
            for name in names:
                e = sp.diff(e, self._symbol(name))
            self._fns[names] = (sp.lambdify(self.x + (self.z,) + self.p, e, "numpy"), e.is_number, e)
        return self._fns[names]

    def derivative_expr(self, *names):
        return self._fn(tuple(names))[2]

    def __call__(self, x, z=0.0, p=None, *names):
        """Evaluate ``d^{names} expr`` at ``(x, z, p)``; arrays broadcast over nodes."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        z = np.broadcast_to(np.asarray(z, dtype=float), shape)
        p = np.zeros(x.shape) if p is None else np.asarray(p, dtype=float)
        fn, constant, e = self._fn(tuple(names))
        if constant:
            return np.full(shape, float(e))
        args = [x[..., i] for i in range(self.n)] + [z] + [p[..., i] for i in range(self.n)]
        return np.broadcast_to(np.asarray(fn(*args), dtype=float), shape).copy()

    def gradient(self, kind, x, z=0.0, p=None) -> np.ndarray:
        """All first partials in ``x`` or ``p``: shape ``(..., n)``."""
        return np.stack([self(x, z, p, f"{kind}{i + 1}") for i in range(self.n)], axis=-1)

    def hessian(self, kind1, kind2, x, z=0.0, p=None) -> np.ndarray:
        """Mixed second partials ``d_{kind1 i} d_{kind2 j}``: shape ``(..., n, n)``."""
        n = self.n
        out = np.empty(np.shape(x)[:-1] + (n, n))
        for i in range(n):
            for j in range(n):
                if kind1 == kind2 and j < i:
                    out[..., i, j] = out[..., j, i]
                else:
                    out[..., i, j] = self(x, z, p, f"{kind1}{i + 1}", f"{kind2}{j + 1}")
        return out


class FieldExpr:
    """A closed-form scalar field ``u(x)`` with exact covariant derivatives."""

    def __init__(self, expr, manifold):
        if parse(expr, manifold.n).free_symbols - set(symbols(manifold.n)[0]):
            raise DomainError("a field expression may only use x1..xn")
        self.compiled = CompiledExpr(expr, manifold)
        self.manifold = manifold

    @property
    def expr(self):
        return self.compiled.expr

    def values(self, x=None):
        x = self.manifold.coords if x is None else x
        return self.compiled(x)

    def gradient(self, x=None):
        x = self.manifold.coords if x is None else x
        return self.compiled.gradient("x", x)

    def hessian(self, x=None):
        """``d_i d_j u - Gamma^k_ij d_k u`` from the closed-form connection."""
        m = self.manifold
        x = m.coords if x is None else x
        H = self.compiled.hessian("x", "x", x)
        if not m.flat:
            H = H - np.einsum("...kij,...k->...ij", m.christoffel(x), self.gradient(x))
        return H
