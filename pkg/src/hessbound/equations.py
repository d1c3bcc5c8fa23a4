"""Residual assembly for ``F(g^-1 W) = f(x, u) h(x, du)`` and named presets.

The right-hand side is stored in factored form ``f(x, z) = coef(x) Z(x, z)``
where ``coef`` is a positive grid array (or constant) and ``Z`` a closed-form
expression. Manufactured solutions replace ``coef`` so that a chosen field
solves the equation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import symfunc
from .errors import ConeViolation, DomainError, UnsupportedDimension
from .exprs import CompiledExpr, FieldExpr, inverse_metric_scale
from .geometry import DiscreteManifold, ScalarField, augmented_tensor, schouten
from .geometry.calculus import _inverse_conformal2, covariant_gradient, covariant_hessian, grad_norm2_from
from .symfunc import OperatorSpec

#: minimum scaled cone margin accepted for a manufactured solution
MANUFACTURED_MARGIN = 1e-3


@dataclass(frozen=True, eq=False)
class EquationSpec:
    """Coefficients of ``F(g^-1(D^2 u + a du du + b |du|^2 g + B)) = coef Z(x,u) h(x,du)``.

    Parameters
    ----------
    name : str
        Preset name, used in reports.
    manifold : DiscreteManifold
    operator : OperatorSpec
    a, b : float or ndarray
        Constants or grid arrays.
    B : ndarray or None
        Background tensor, shape ``grid + (n, n)``.
    coef : float or ndarray
        Positive x-only factor of ``f``.
    zfactor, h : str
        Expressions (see :mod:`hessbound.exprs`) for ``Z(x, z)`` and ``h(x, p)``.
    delta1, delta2 : float or None
        Recorded hypothesis constants ``b < -delta1``, ``a + n b < -delta2``.
    K : float
        Constant sectional curvature tag of the chart.
    Lam, M : str or None, float or None
        ``Lambda(p)`` and ``M`` for the case-(b) hypotheses.
    cases : tuple of str
        Estimate tags this preset is meant for.
    """

    name: str
    manifold: DiscreteManifold
    operator: OperatorSpec
    a: object = 0.0
    b: object = 0.0
    B: np.ndarray | None = None
    coef: object = 1.0
    zfactor: str = "1"
    h: str = "1"
    delta1: float | None = None
    delta2: float | None = None
    K: float = 0.0
    Lam: str | None = None
    M: float | None = None
    cases: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        m = self.manifold
        if self.operator.n != m.n:
            raise DomainError(f"operator dimension {self.operator.n} does not match manifold n={m.n}")
        if self.B is not None and np.shape(self.B) != m.shape + (m.n, m.n):
            raise DomainError("background tensor B has the wrong shape")
        coef = np.asarray(self.coef, dtype=float)
        if coef.ndim and coef.shape != m.shape:
            raise DomainError("coefficient array does not match the grid")
        if np.any(~np.isfinite(coef)) or np.any(coef <= 0):
            raise DomainError("coefficient of f must be positive and finite")

    # ---------------------------------------------------------------- helpers
    @cached_property
    def Zc(self) -> CompiledExpr:
        return CompiledExpr(self.zfactor, self.manifold)

    @cached_property
    def hc(self) -> CompiledExpr:
        return CompiledExpr(self.h, self.manifold)

    @property
    def coef_grid(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.coef, dtype=float), self.manifold.shape)

    def with_coef(self, coef) -> "EquationSpec":
        return replace(self, coef=coef)

    def with_manifold(self, manifold, **changes) -> "EquationSpec":
        return replace(self, manifold=manifold, **changes)

    @property
    def h_constant(self) -> bool:
        return not (self.hc.depends_on_p or self.hc.depends_on_x)

    def constant(self, name):
        """``a`` or ``b`` as a float when it is constant, otherwise ``None``."""
        val = np.asarray(getattr(self, name), dtype=float)
        if val.ndim == 0:
            return float(val)
        flat = val.ravel()
        return float(flat[0]) if np.all(flat == flat[0]) else None

    def describe(self) -> dict:
        out = {"preset": self.name, "operator": self.operator.label()}
        out.update(self.manifold.header())
        out.update(self.params)
        return out


# ---------------------------------------------------------------- evaluation
@dataclass
class LocalState:
    """Everything pointwise that residual and Jacobian need."""

    W: np.ndarray
    A: np.ndarray
    eig: np.ndarray
    Q: np.ndarray
    grad: np.ndarray
    value: np.ndarray
    rhs: np.ndarray


def _normalized_tensor(W, m):
    """``g^{-1/2} W g^{-1/2}`` for the conformally flat charts."""
    return W if m.flat else W * _inverse_conformal2(m)[..., None, None]


def _cone_error(exc, m, mask_index=None):
    node = exc.index
    if node is not None and mask_index is not None:
        node = tuple(int(c[node[0]]) for c in mask_index)
    where = "" if node is None else f" at node {node} (x = {np.array2string(m.coords[node], precision=5)})"
    return ConeViolation(
        f"operator argument leaves the cone{where}: sigma_{exc.order} = {exc.value:.6g}, "
        f"eigenvalues {np.array2string(exc.eigenvalues, precision=6)}",
        index=node,
        order=exc.order,
        value=exc.value,
        eigenvalues=exc.eigenvalues,
    )


def rhs_factors(spec: EquationSpec, u_values, grad):
    m = spec.manifold
    x = m.coords
    Z = spec.Zc(x, u_values, grad)
    h = spec.hc(x, u_values, grad)
    return spec.coef_grid, Z, h


def local_state(spec: EquationSpec, u: ScalarField, mask=None) -> LocalState:
    """Evaluate the operator and right-hand side at the nodes in ``mask``."""
    m = spec.manifold
    if u.manifold != m:
        raise DomainError("field and equation live on different manifolds")
    W = augmented_tensor(u, spec.a, spec.b, spec.B).components
    grad = covariant_gradient(u)
    A = _normalized_tensor(W, m)
    if mask is None:
        mask = np.ones(m.shape, dtype=bool)
    idx = np.nonzero(mask)
    eig, Q = np.linalg.eigh(A[idx])
    try:
        value = symfunc.F_eval(spec.operator, eig)
    except ConeViolation as exc:
        raise _cone_error(exc, m, idx) from None
    coef, Z, h = rhs_factors(spec, u.values, grad)
    rhs = (coef * Z * h)[idx]
    return LocalState(W, A, eig, Q, grad, value, rhs)


def residual(spec: EquationSpec, u: ScalarField, mask=None) -> ScalarField:
    """``F(g^-1 W(u)) - f(x, u) h(x, du)`` at every node (zero outside ``mask``)."""
    m = spec.manifold
    if mask is None:
        mask = np.ones(m.shape, dtype=bool)
    st = local_state(spec, u, mask)
    out = np.zeros(m.shape)
    out[mask] = st.value - st.rhs
    return ScalarField(out, m)


def cone_margin_field(spec: EquationSpec, u: ScalarField, mask=None) -> np.ndarray:
    """Scaled cone margin ``min_i sigma_i / C(n, i)`` at the nodes in ``mask``."""
    m = spec.manifold
    W = augmented_tensor(u, spec.a, spec.b, spec.B).components
    A = _normalized_tensor(W, m)
    if mask is not None:
        A = A[mask]
    eig = np.linalg.eigvalsh(A)
    return symfunc.cone_margin(eig, spec.operator.cone)


# ------------------------------------------------------------- manufactured
def exact_state(spec: EquationSpec, ustar: FieldExpr):
    """Closed-form ``(u, du, W)`` of a field expression on the grid."""
    m = spec.manifold
    x = m.coords
    uval = ustar.values(x)
    grad = ustar.gradient(x)
    H = ustar.hessian(x)
    a = np.asarray(spec.a, dtype=float)
    b = np.asarray(spec.b, dtype=float)
    W = H + a[..., None, None] * grad[..., :, None] * grad[..., None, :]
    W = W + (b * grad_norm2_from(grad, m))[..., None, None] * m.g
    if spec.B is not None:
        W = W + spec.B
    iu = np.triu_indices(m.n, 1)
    W[..., iu[1], iu[0]] = W[..., iu[0], iu[1]]
    return uval, grad, W


def manufactured_f(spec: EquationSpec, ustar, margin: float = MANUFACTURED_MARGIN) -> np.ndarray:
    """Coefficient ``coef(x)`` making ``ustar`` a solution.

    ``ustar`` is either a :class:`ScalarField` (discrete mode: the grid
    field solves the discrete equation to round-off) or a
    :class:`FieldExpr` (analytic mode: exact derivatives, so the discrete
    solution differs from ``ustar`` by the stencil error).
    """
    m = spec.manifold
    if isinstance(ustar, ScalarField):
        uval = ustar.values
        grad = covariant_gradient(ustar)
        W = augmented_tensor(ustar, spec.a, spec.b, spec.B).components
    elif isinstance(ustar, FieldExpr):
        uval, grad, W = exact_state(spec, ustar)
    else:
        raise TypeError("ustar must be a ScalarField or a FieldExpr")
    eig = np.linalg.eigvalsh(_normalized_tensor(W, m))
    try:
        value = symfunc.F_eval(spec.operator, eig)
    except ConeViolation as exc:
        raise _cone_error(exc, m) from None
    marg = symfunc.cone_margin(eig, spec.operator.cone)
    if np.min(marg) < margin:
        node = np.unravel_index(int(np.argmin(marg)), m.shape)
        raise ConeViolation(
            f"manufactured solution has cone margin {np.min(marg):.3g} < {margin:g} at node {node}",
            index=node,
            value=float(np.min(marg)),
            eigenvalues=eig[node],
        )
    x = m.coords
    denom = spec.Zc(x, uval, grad) * spec.hc(x, uval, grad)
    coef = value / denom
    if not np.all(np.isfinite(coef)) or np.any(coef <= 0):
        raise DomainError("manufactured coefficient is not positive; check h and the z-factor")
    return coef


def manufacture(spec: EquationSpec, ustar):
    """Return ``(spec with manufactured f, grid field of ustar)``."""
    coef = manufactured_f(spec, ustar)
    field_ = ustar if isinstance(ustar, ScalarField) else ScalarField(ustar.values(), spec.manifold)
    return spec.with_coef(coef), field_


# ------------------------------------------------------------------ presets
def _grid_coefficient(expr, manifold):
    if isinstance(expr, (int, float)):
        return float(expr)
    fe = FieldExpr(expr, manifold)
    return fe.values()


def schouten_quotient_spec(manifold: DiscreteManifold, k: int, l: int = 0, f="1") -> EquationSpec:
    """Conformal Schouten quotient equation ``(s_k/s_l)^{1/(k-l)}(A_{g_u}) = f(x) e^{-2u}``."""
    n = manifold.n
    if n < 3:
        raise UnsupportedDimension("the Schouten preset needs n >= 3")
    op = OperatorSpec.quotient(n, k, l) if l > 0 else OperatorSpec.sigma_root(n, k)
    return EquationSpec(
        name="schouten",
        manifold=manifold,
        operator=op,
        a=1.0,
        b=-0.5,
        B=schouten(manifold).components,
        coef=_grid_coefficient(f, manifold),
        zfactor="exp(-2*z)",
        h="1",
        delta1=0.5,
        delta2=(n - 2) / 2.0,
        K=manifold.K,
        cases=("T1a", "C31"),
        params={"k": k, "l": l},
    )


def lc_schouten_spec(manifold: DiscreteManifold, k: int, t: float, s: float, sign: int = 1, f="1", c0=None) -> EquationSpec:
    """``s_k^{1/k}(t A + s tr(A) g) = f_0(x) e^{-2u}`` (sign +1) or ``f_0 e^{2u}`` (sign -1)."""
    n = manifold.n
    if n < 3:
        raise UnsupportedDimension("the Schouten preset needs n >= 3")
    if t < 0 or s < 0 or t + s < 1:
        raise DomainError("need t, s >= 0 and t + s >= 1")
    if c0 is not None and t + n * s > c0:
        raise DomainError(f"t + n s = {t + n * s:g} exceeds c0 = {c0:g}")
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    return EquationSpec(
        name="lc_schouten",
        manifold=manifold,
        operator=OperatorSpec.lincomb(n, k, t, s),
        a=1.0,
        b=-0.5,
        B=schouten(manifold).components,
        coef=_grid_coefficient(f, manifold),
        zfactor="exp(-2*z)" if sign == 1 else "exp(2*z)",
        h="1",
        delta1=0.5,
        delta2=(n - 2) / 2.0,
        K=manifold.K,
        cases=("T1a", "C32a" if sign == 1 else "C32b"),
        params={"k": k, "t": t, "s": s, "sign": sign, "c0": c0},
    )


def optics_T_expr(manifold):
    """Reflected direction ``T(x, p)`` in ``R^{n+1}`` as sympy expressions.

    ``p`` is the covariant gradient; it is raised with the chart metric and
    pushed into the ambient space through the stereographic embedding.
    """
    import sympy as sp

    from .exprs import symbols

    n = manifold.n
    x, _, p = symbols(n)
    q = 1 + sum(xi**2 for xi in x)
    c = inverse_metric_scale(manifold)
    vec = [c * pi for pi in p]  # g^{ij} p_j
    jac_top = [[(2 * (1 if i == j else 0)) / q - 4 * x[i] * x[j] / q**2 for j in range(n)] for i in range(n)]
    jac_bot = [-4 * x[j] / q**2 for j in range(n)]
    P = [sum(jac_top[i][j] * vec[j] for j in range(n)) for i in range(n)]
    P.append(sum(jac_bot[j] * vec[j] for j in range(n)))
    N = [2 * xi / q for xi in x] + [(1 - sum(xi**2 for xi in x)) / q]
    pn2 = c * sum(pi**2 for pi in p)
    return [sp.simplify(-(2 * P[a] + (1 - pn2) * N[a]) / (1 + pn2)) for a in range(n + 1)]


def optics_T(manifold, x, p) -> np.ndarray:
    """Numeric ``T(x, p)``, shape ``(..., n + 1)``."""
    if manifold.kind != "sphere" or manifold.radius != 1.0:
        raise DomainError("the optics map lives on the unit sphere chart")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    q = 1.0 + np.sum(x**2, axis=-1)
    c = (q / 2.0) ** 2
    vec = c[..., None] * p
    J = manifold.embedding_jacobian(x)
    P = np.einsum("...ai,...i->...a", J, vec)
    N = manifold.embedding(x)
    pn2 = c * np.sum(p * p, axis=-1)
    return -(2.0 * P + (1.0 - pn2)[..., None] * N) / (1.0 + pn2)[..., None]


def optics_spec(manifold: DiscreteManifold, nu="1", phi="1") -> EquationSpec:
    """Reflector equation after ``u = ln v``, in n-th-root form.

    ``phi`` is an expression in the ambient unit-vector components
    ``y1 .. y{n+1}`` (a number for the constant case).
    """
    import sympy as sp

    if manifold.kind != "sphere" or manifold.radius != 1.0:
        raise DomainError("the optics preset needs the unit sphere chart")
    n = manifold.n
    nu_grid = np.asarray(_grid_coefficient(nu, manifold), dtype=float)
    constant_phi = isinstance(phi, (int, float)) or sp.sympify(phi).is_number
    if constant_phi:
        phi0 = float(sp.sympify(phi))
        if phi0 <= 0:
            raise DomainError("phi must be positive")
        coef = (nu_grid * phi0) ** (1.0 / n)
        h = "(1 + pnorm2)/2"
        lam, M, cases = "1", 1.0, ("T1b", "T1c")
    else:
        ys = sp.symbols(f"y1:{n + 2}", real=True)
        phi_expr = sp.sympify(phi, locals={str(y): y for y in ys})
        T = optics_T_expr(manifold)
        phi_T = phi_expr.subs(dict(zip(ys, T)), simultaneous=True)
        h = sp.Rational(1, 2) * (1 + sp.Symbol("pnorm2", real=True)) * phi_T ** sp.Rational(1, n)
        coef = nu_grid ** (1.0 / n)
        lam, M, cases = None, None, ("T1c",)
    return EquationSpec(
        name="optics",
        manifold=manifold,
        operator=OperatorSpec.sigma_root(n, n),
        a=1.0,
        b=-0.5,
        B=0.5 * manifold.g,
        coef=coef,
        zfactor="1",
        h=h,
        delta1=0.5,
        delta2=(n - 2) / 2.0,
        K=manifold.K,
        Lam=lam,
        M=M,
        cases=cases,
        params={"phi": str(phi)},
    )


def _gauss_h(n):
    return f"(1 + pnorm2)**(({n} + 2)/(2*{n}))"


def csc_spec(manifold: DiscreteManifold, operator: OperatorSpec, a: float, f="1", zfactor="1", h="1") -> EquationSpec:
    """``F(g^-1(D^2 u + a du du + K g)) = f(x, u) h(du)`` with constant ``a`` and chart curvature ``K``."""
    K = manifold.K
    return EquationSpec(
        name="csc",
        manifold=manifold,
        operator=operator,
        a=float(a),
        b=0.0,
        B=None if K == 0 else K * manifold.g,
        coef=_grid_coefficient(f, manifold),
        zfactor=zfactor,
        h=h,
        K=K,
        cases=("T2",),
    )


def gauss_flat_spec(manifold: DiscreteManifold, kappa="1") -> EquationSpec:
    """Graph Gauss curvature equation ``det^{1/n}(D^2 u) = kappa^{1/n} (1 + |du|^2)^{(n+2)/(2n)}``."""
    if manifold.kind != "euclidean":
        raise DomainError("the flat Gauss preset needs a Euclidean domain")
    n = manifold.n
    coef = np.asarray(_grid_coefficient(kappa, manifold), dtype=float) ** (1.0 / n)
    spec = csc_spec(manifold, OperatorSpec.sigma_root(n, n), 0.0, h=_gauss_h(n))
    return replace(spec, name="gauss_flat", coef=coef if coef.ndim else float(coef))


def gauss_sphere_spec(manifold: DiscreteManifold, kappa="1") -> EquationSpec:
    """Radial-graph Gauss curvature equation after ``u = ln v``."""
    if manifold.kind != "sphere":
        raise DomainError("the sphere Gauss preset needs a sphere chart")
    n = manifold.n
    coef = np.asarray(_grid_coefficient(kappa, manifold), dtype=float) ** (1.0 / n)
    spec = csc_spec(manifold, OperatorSpec.sigma_root(n, n), 1.0, zfactor="exp(-z)", h=_gauss_h(n))
    return replace(spec, name="gauss_sphere", coef=coef if coef.ndim else float(coef))


def laplace_spec(manifold: DiscreteManifold, a=0.0, b=0.0, B=None, f="1", h="1") -> EquationSpec:
    """The linear case ``F = s_1 / n``."""
    n = manifold.n
    return EquationSpec(
        name="laplace",
        manifold=manifold,
        operator=OperatorSpec.sigma_root(n, 1),
        a=a,
        b=b,
        B=B,
        coef=_grid_coefficient(f, manifold),
        h=h,
        K=manifold.K,
    )


PRESETS = {
    "schouten": schouten_quotient_spec,
    "lc_schouten": lc_schouten_spec,
    "optics": optics_spec,
    "gauss_flat": gauss_flat_spec,
    "gauss_sphere": gauss_sphere_spec,
    "laplace": laplace_spec,
}


# --------------------------------------------------------------- bound data
@dataclass
class BoundData:
    """``c_inf``, ``c_sup``, ``e_sup`` over a set of nodes."""

    c_inf: float
    c_sup: float
    e_sup: float


def _covector_norm(v, c):
    return np.sqrt(np.sum(v * v, axis=-1) * c)


def _vector_norm(v, c):
    return np.sqrt(np.sum(v * v, axis=-1) / c)


def _spectral(T):
    return np.abs(np.linalg.eigvalsh(0.5 * (T + np.swapaxes(T, -1, -2)))).max(axis=-1)


def _mixed_norm(T):
    return np.linalg.norm(T, ord=2, axis=(-2, -1))


def _ginv_scale(m):
    return _inverse_conformal2(m)


def bound_data(spec: EquationSpec, u: ScalarField, mask=None) -> BoundData:
    """Grid suprema of the ``f`` and ``h`` derivative sums over ``mask``.

    ``x``-derivatives are covariant (coordinate partials with the closed-form
    connection for second derivatives); ``p``-derivatives use the metric norm
    of the vector or bivector they define. Derivatives of a gridded ``coef``
    use the fourth-order stencils.
    """
    m = spec.manifold
    if mask is None:
        mask = np.ones(m.shape, dtype=bool)
    x = m.coords
    z = u.values
    grad = covariant_gradient(u)
    c = _ginv_scale(m)
    gam = None if m.flat else m.gamma
    # coefficient and its derivatives
    coef = spec.coef_grid
    C = ScalarField(np.array(coef), m)
    Cg = covariant_gradient(C)
    CH = covariant_hessian(C).components
    Zc = spec.Zc
    Z = Zc(x, z, grad)
    Zx = Zc.gradient("x", x, z, grad)
    Zxx = Zc.hessian("x", "x", x, z, grad)
    if gam is not None:
        Zxx = Zxx - np.einsum("...kij,...k->...ij", gam, Zx)
    Zz = Zc(x, z, grad, "z")
    Zzz = Zc(x, z, grad, "z", "z")
    Zxz = np.stack([Zc(x, z, grad, f"x{i + 1}", "z") for i in range(m.n)], axis=-1)
    f = coef * Z
    fx = Cg * Z[..., None] + coef[..., None] * Zx
    fxx = CH * Z[..., None, None] + Cg[..., :, None] * Zx[..., None, :] + Cg[..., None, :] * Zx[..., :, None] + coef[..., None, None] * Zxx
    fz = coef * Zz
    fxz = Cg * Zz[..., None] + coef[..., None] * Zxz
    fzz = coef * Zzz
    c_sum = f + _covector_norm(fx, c) + np.abs(fz) + _spectral(fxx) * c + _covector_norm(fxz, c) + np.abs(fzz)
    # h and its derivatives at p = du
    hc = spec.hc
    h = hc(x, z, grad)
    hx = hc.gradient("x", x, z, grad)
    hp = hc.gradient("p", x, z, grad)
    hpp = hc.hessian("p", "p", x, z, grad)
    hxp = hc.hessian("x", "p", x, z, grad)
    hxx = hc.hessian("x", "x", x, z, grad)
    if gam is not None:
        hxx = hxx - np.einsum("...kij,...k->...ij", gam, hx)
    e_sum = h + _covector_norm(hx, c) + _vector_norm(hp, c) + _spectral(hpp) / c + _mixed_norm(hxp) + _spectral(hxx) * c
    return BoundData(float(np.min(f[mask])), float(np.max(c_sum[mask])), float(np.max(e_sum[mask])))


def laplacian_lower_bound_slack(spec: EquationSpec, u: ScalarField, mask=None) -> float:
    """Minimum over nodes of ``Laplace(u) + tr_g B - delta2 |du|^2``.

    Positive whenever ``g^-1 W`` lies in the positive trace cone and
    ``a + n b < -delta2``.
    """
    m = spec.manifold
    if spec.delta2 is None:
        raise DomainError("spec records no delta2")
    if mask is None:
        mask = np.ones(m.shape, dtype=bool)
    H = covariant_hessian(u).components
    c = _ginv_scale(m)
    lap = np.trace(H, axis1=-2, axis2=-1) * c
    trB = 0.0 if spec.B is None else np.trace(spec.B, axis1=-2, axis2=-1) * c
    gn2 = grad_norm2_from(covariant_gradient(u), m)
    slack = lap + trB - spec.delta2 * gn2
    return float(np.min(slack[mask]))
