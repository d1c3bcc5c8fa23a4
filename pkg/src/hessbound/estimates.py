"""Measured Hessian suprema against the local and global bound expressions.

Every supremum is an exact grid maximum of the invariant norms
``|du|^2 = g^ij u_i u_j`` and ``|D^2 u|`` (spectral norm of ``g^-1 D^2 u``)
over nodes at least ``COLLAR`` spacings from the chart boundary.

Case tags
---------
``T1a``  ``sup_{B_r/2}(|D^2u| + |du|^2)`` against ``r^-2 + c_sup(r)``
``T1b``  same quantity against ``r^-2 + c_sup(r) e_sup(r)``
``T1c``  ``sup_{B_r/2} |D^2u|`` against ``r^-2 + c_sup(r) e_sup(r) + sup_{B_r}|du|^2``
``C31``  same quantity as T1a against ``r^-2 + sup_{B_r} e^{-2u}``
``C32a`` against ``1 + sup_{B_r} e^{-2u}``
``C32b`` against ``1 + sup_{B_r} e^{2u}``
``T2``   interior ``sup |D^2 u|`` against ``max(boundary sup, C4*)``
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from . import symfunc
from .conditions import ConditionReport
from .equations import EquationSpec, bound_data, residual
from .errors import ConeViolation, DomainError, HypothesisError, UnsolvedStateError
from .exprs import CompiledExpr, parse, symbols
from .geometry import ScalarField, grad_norm2, hessian_norm, rescale_ball
from .geometry.calculus import _inverse_conformal2

COLLAR = 3
LOCAL_TAGS = ("T1a", "T1b", "T1c", "C31", "C32a", "C32b")
TAGS = LOCAL_TAGS + ("T2",)
#: nodes sampled for the structure spot checks inside an audit
AUDIT_SAMPLES = 400


@dataclass
class EstimateReport:
    case_tag: str
    quantity: float
    bound_expr: float
    ratio: float
    inputs: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = {"case": self.case_tag, "quantity": self.quantity, "bound": self.bound_expr, "ratio": self.ratio}
        out.update(self.inputs)
        return out


def _ratio(q, b):
    if b > 0:
        return q / b
    return 0.0 if q == 0 else float("inf")


# ------------------------------------------------------------------- audits
def _node_eigs(spec, u, mask):
    from .equations import _normalized_tensor
    from .geometry import augmented_tensor

    W = augmented_tensor(u, spec.a, spec.b, spec.B).components
    return np.linalg.eigvalsh(_normalized_tensor(W, spec.manifold)[mask])


def _sample_rows(arr, count, seed=0):
    if len(arr) <= count:
        return arr
    rng = np.random.default_rng(seed)
    return arr[np.sort(rng.choice(len(arr), size=count, replace=False))]


def _p_samples(m, nodes, radius, count, seed=0):
    """Covectors ``p`` with ``|p|_g <= radius`` at randomly chosen nodes."""
    rng = np.random.default_rng(seed)
    pick = nodes[rng.integers(0, len(nodes), size=count)]
    x = m.coords[tuple(pick.T)]
    c = _inverse_conformal2(m)[tuple(pick.T)]
    dirs = rng.standard_normal((count, m.n))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    rad = radius * rng.uniform(0.0, 1.0, size=(count, 1)) ** (1.0 / m.n)
    rad[0] = 0.0
    rad[1] = radius
    p = dirs * rad / np.sqrt(c)[:, None]
    return x, p, c


def h_of_gradient(spec: EquationSpec) -> bool:
    """Whether ``h`` is a function of the gradient covector alone.

    Judged on the source expression: no ``x`` or ``z``, and on a curved
    chart the gradient may only enter through the invariant ``pnorm2``.
    """
    x, z, p = symbols(spec.manifold.n)
    free = parse(spec.h, spec.manifold.n).free_symbols
    if free & (set(x) | {z}):
        return False
    return spec.manifold.flat or not (free & set(p))


def hpp_lower_bound(spec: EquationSpec, x, p, c) -> np.ndarray:
    """Smallest eigenvalue of ``h_pp`` in an orthonormal frame at each sample."""
    hpp = spec.hc.hessian("p", "p", x, 0.0, p)
    return np.linalg.eigvalsh(hpp / c[:, None, None])[:, 0]


def _negation_witness(name):
    return f"{name} violated"


def hypothesis_audit(spec: EquationSpec, u: ScalarField, case_tag: str, mask=None, samples: int = 2000, seed: int = 0) -> ConditionReport:
    """Check every hypothesis of the tagged estimate on the given state.

    The sign conditions are checked in the non-strict form
    ``b <= -delta1`` and ``a + n b <= -delta2`` with ``delta1, delta2 > 0``.
    """
    if case_tag not in TAGS:
        raise DomainError(f"unknown case tag {case_tag!r}; expected one of {TAGS}")
    m = spec.manifold
    n = m.n
    rep = ConditionReport(f"hypotheses {case_tag} for {spec.name} ({spec.operator.label()})")
    if mask is None:
        mask = m.collar_mask(COLLAR) if m.kind != "torus" else np.ones(m.shape, dtype=bool)
    nodes = np.argwhere(mask)
    # cone membership of the state
    try:
        eig = _node_eigs(spec, u, mask)
        inside = symfunc.in_cone(eig, spec.operator.cone)
        margin = symfunc.cone_margin(eig, spec.operator.cone)
        worst = int(np.argmin(margin))
        rep.add("state in cone", bool(np.all(inside)), float(margin[worst]), "min scaled sigma_i / C(n,i)",
                witness=tuple(int(v) for v in nodes[worst]))
    except ConeViolation as exc:
        rep.add("state in cone", False, float("nan"), str(exc))
        eig = None
    # structure conditions at the state's eigenvalues
    if eig is not None and np.all(symfunc.in_cone(eig, spec.operator.cone)):
        sample = _sample_rows(eig, AUDIT_SAMPLES, seed)
        st = symfunc.check_structure(spec.operator, sample, max_pairs=AUDIT_SAMPLES)
        for item in st.items:
            rep.add(item.name, item.passed, item.worst, item.detail, item.witness)
    a = np.broadcast_to(np.asarray(spec.a, dtype=float), m.shape)[mask]
    b = np.broadcast_to(np.asarray(spec.b, dtype=float), m.shape)[mask]
    if case_tag in LOCAL_TAGS:
        d1, d2 = spec.delta1, spec.delta2
        ok1 = d1 is not None and d1 > 0 and np.all(b <= -d1)
        rep.add("b < -delta1", ok1, float(np.max(b) + (d1 or 0.0)),
                f"delta1={d1}", witness=None if ok1 else _negation_witness("b < -delta1"))
        s = a + n * b
        ok2 = d2 is not None and d2 > 0 and np.all(s <= -d2)
        rep.add("a + n b < -delta2", ok2, float(np.max(s) + (d2 or 0.0)),
                f"delta2={d2}", witness=None if ok2 else _negation_witness("a + n b < -delta2"))
    grad_sup = float(np.sqrt(np.max(grad_norm2(u)[mask])))
    if case_tag in ("T1a", "C31", "C32a", "C32b"):
        rep.add("h constant", spec.h_constant, float("nan"), f"h = {spec.h}")
    if case_tag in ("C31", "C32a", "C32b"):
        z = sp.Symbol("z", real=True)
        want = {"C31": "exp(-2*z)", "C32a": "exp(-2*z)", "C32b": "exp(2*z)"}[case_tag]
        ok = sp.simplify(spec.Zc.expr - sp.sympify(want, locals={"z": z})) == 0
        rep.add("f = f0(x) exp(-+2u)", bool(ok), float("nan"), f"Z = {spec.Zc.expr}")
    if case_tag == "T1b":
        ok = h_of_gradient(spec) and not spec.Zc.depends_on_z
        rep.add("h = h(p), f = f(x)", ok, float("nan"), f"h = {spec.h}, Z = {spec.zfactor}")
        if spec.Lam is None or spec.M is None:
            rep.add("Lambda and M supplied", False, float("nan"), "no Lambda(p) / M recorded")
        else:
            lam = CompiledExpr(spec.Lam, m)
            x, p, c = _p_samples(m, nodes, 2.0 * grad_sup + 1.0, samples, seed)
            L = lam(x, 0.0, p)
            pn = np.sqrt(np.sum(p * p, axis=-1) * c)
            hmin = hpp_lower_bound(spec, x, p, c)
            h = spec.hc(x, 0.0, p)
            hp = spec.hc.gradient("p", x, 0.0, p)
            hp_norm = np.sqrt(np.sum(hp * hp, axis=-1) / c)
            M = spec.M
            slack1 = hmin - L
            slack2 = M * L * (1 + pn) ** 2 - h
            slack3 = M * L * (1 + pn) - hp_norm
            tol = 1e-12
            rep.add("Lambda > 0", bool(np.all(L > 0)), float(np.min(L)), f"Lambda = {spec.Lam}")
            rep.add("h_pp >= Lambda g", bool(np.all(slack1 >= -tol * (1 + np.abs(L)))), float(np.min(slack1)),
                    f"{samples} samples, |p| <= {2 * grad_sup + 1:.4g}")
            rep.add("h <= M Lambda (1+|p|)^2", bool(np.all(slack2 >= -tol * (1 + np.abs(h)))), float(np.min(slack2)), f"M = {M}")
            rep.add("|h_p| <= M Lambda (1+|p|)", bool(np.all(slack3 >= -tol * (1 + hp_norm))), float(np.min(slack3)), f"M = {M}")
    if case_tag == "T1c":
        op = spec.operator
        has_A = op.mu0 is not None
        if has_A and eig is not None:
            ca = symfunc.check_condition_A(op, _sample_rows(eig, AUDIT_SAMPLES, seed))
            rep.add("condition (A)", ca.passed, ca.items[0].worst, f"mu0={op.mu0:.6g}, mu1={op.mu1:.6g}")
        else:
            rep.add("condition (A)", False, float("nan"), "operator carries no (A) constants")
        rep.add("cone within Gamma_2", _cone_within_gamma2(op), float("nan"), op.cone.kind)
    if case_tag == "T2":
        bc = spec.constant("b")
        rep.add("b = 0", bc == 0.0, float(np.max(np.abs(b))), "")
        rep.add("a constant", spec.constant("a") is not None, float("nan"), "")
        rep.add("K >= 0", spec.K >= 0, spec.K, "constant sectional curvature")
        rep.add("h = h(p)", h_of_gradient(spec), float("nan"), f"h = {spec.h}")
        x, p, c = _p_samples(m, nodes, 2.0 * grad_sup + 1.0, samples, seed)
        eps = float(np.min(hpp_lower_bound(spec, x, p, c)))
        rep.add("h_pp >= eps delta, eps > 0", eps > 0, eps, f"{samples} samples, |p| <= {2 * grad_sup + 1:.4g}")
    return rep


def _cone_within_gamma2(op) -> bool:
    cone = op.cone
    if cone.kind == "positive":
        return cone.k >= 2
    # sample the linear-combination cone and test membership in Gamma_2
    samples = symfunc.sample_cone(cone, op.n, 4000, seed=11)
    return bool(np.all(symfunc.in_cone(samples, symfunc.ConeSpec.positive(2))))


def _require(rep: ConditionReport):
    if not rep.passed:
        item = rep.failures()[0]
        raise HypothesisError(f"{rep.title}: {item.name} failed ({item.witness or item.detail})")


# ------------------------------------------------------------ local reports
def _interior(m):
    return m.collar_mask(COLLAR) if not m.periodic else np.ones(m.shape, dtype=bool)


def local_estimate_report(u: ScalarField, spec: EquationSpec, r: float, case_tag: str, residual_tol: float = 1e-6,
                          check: bool = True) -> EstimateReport:
    """Measured supremum over ``B_{r/2}`` and the bound expression over ``B_r``.

    Raises
    ------
    HypothesisError
        If ``check`` and a hypothesis of ``case_tag`` fails.
    UnsolvedStateError
        If the residual on ``B_r`` exceeds ``residual_tol``.
    """
    if case_tag not in LOCAL_TAGS:
        raise DomainError(f"unknown local case tag {case_tag!r}")
    m = spec.manifold
    if r <= 0:
        raise DomainError("radius must be positive")
    inner = _interior(m)
    ball = m.ball_mask(r) & inner
    half = m.ball_mask(0.5 * r) & inner
    if not half.any():
        raise DomainError(f"no interior nodes inside B_{{r/2}} for r={r}")
    res = np.abs(residual(spec, u, ball).values)
    res_max = float(res.max())
    if res_max > residual_tol:
        raise UnsolvedStateError(f"residual {res_max:.3g} on B_r exceeds {residual_tol:g}; u does not solve the equation")
    if check:
        _require(hypothesis_audit(spec, u, case_tag, mask=ball))
    gn2 = grad_norm2(u)
    hn = hessian_norm(u)
    quantity = float(np.max(hn[half])) if case_tag == "T1c" else float(np.max((gn2 + hn)[half]))
    bd = bound_data(spec, u, ball)
    sup_em2 = float(np.max(np.exp(-2.0 * u.values[ball])))
    sup_ep2 = float(np.max(np.exp(2.0 * u.values[ball])))
    sup_grad2 = float(np.max(gn2[ball]))
    if case_tag == "C31":
        bound = r**-2 + sup_em2
    elif case_tag == "C32a":
        bound = 1.0 + sup_em2
    elif case_tag == "C32b":
        bound = 1.0 + sup_ep2
    elif case_tag == "T1a":
        bound = r**-2 + bd.c_sup
    elif case_tag == "T1b":
        bound = r**-2 + bd.c_sup * bd.e_sup
    else:
        bound = r**-2 + bd.c_sup * bd.e_sup + sup_grad2
    inputs = {
        "r": r,
        "delta1": spec.delta1,
        "delta2": spec.delta2,
        "c_inf": bd.c_inf,
        "c_sup": bd.c_sup,
        "e_sup": bd.e_sup,
        "sup_grad": float(np.sqrt(sup_grad2)),
        "sup_exp_m2u": sup_em2,
        "coef_inf": float(np.min(spec.coef_grid[ball])),
        "residual": res_max,
        "collar": COLLAR,
    }
    return EstimateReport(case_tag, quantity, bound, _ratio(quantity, bound), inputs)


def rescaled_spec(spec: EquationSpec, r: float) -> EquationSpec:
    """The equation satisfied by ``rescale_ball(u, r)``.

    Only scale-covariant equations qualify: flat chart, ``B = 0``, constant
    ``h`` and ``Z = exp(-2z)``, so the left side scales by ``r^2`` exactly
    like the right side.
    """
    m = spec.manifold
    z = sp.Symbol("z", real=True)
    if not m.flat:
        raise DomainError("rescaling needs a flat chart")
    if spec.B is not None and np.any(spec.B != 0):
        raise DomainError("rescaling needs B = 0")
    if not spec.h_constant or sp.simplify(spec.Zc.expr - sp.exp(-2 * z)) != 0:
        raise DomainError("rescaling needs constant h and f = f0(x) exp(-2u)")
    return spec.with_manifold(m.with_side(m.L / r))


def radius_sweep(u: ScalarField, spec: EquationSpec, radii, case_tag: str = "C31", **kw) -> list:
    """Reports for the same solution at each radius, computed on the rescaled state.

    The state ``u~ = rescale_ball(u, r)`` solves ``rescaled_spec(spec, r)``
    and is evaluated on ``B_1``; ``inputs['direct_ratio']`` holds the ratio
    computed on the original chart at radius ``r`` for comparison.
    """
    out = []
    for r in radii:
        ut = rescale_ball(u, r)
        st = rescaled_spec(spec, r)
        rep = local_estimate_report(ut, st, 1.0, case_tag, **kw)
        direct = local_estimate_report(u, spec, r, case_tag, check=False, **kw)
        rep.inputs["r"] = r
        rep.inputs["direct_ratio"] = direct.ratio
        out.append(rep)
    return out


def scaling_family(spec: EquationSpec, u: ScalarField, ts):
    """Members ``(t, spec with coef * t, u + c_t)`` that stay exact solutions.

    Requires ``Z = exp(alpha z)``; the shift is ``c_t = -ln(t) / alpha``.
    """
    z = spec.Zc.z
    ratio = sp.simplify(sp.diff(spec.Zc.expr, z) / spec.Zc.expr)
    if not ratio.is_number or ratio == 0:
        raise DomainError("scaling family needs f = coef(x) exp(alpha u)")
    alpha = float(ratio)
    return [(t, spec.with_coef(spec.coef_grid * t), u + (-np.log(t) / alpha)) for t in ts]


def cinf_sweep(spec: EquationSpec, u: ScalarField, ts, r: float, case_tag: str = "C31", **kw) -> list:
    """Case-(a) family: scale ``f`` by each ``t`` and report at radius ``r``.

    ``inputs['coef_inf']`` is the infimum of the x-only factor of ``f``; it
    spans the same range as ``t``.
    """
    out = []
    for t, st, ut in scaling_family(spec, u, ts):
        rep = local_estimate_report(ut, st, r, case_tag, **kw)
        rep.inputs["t"] = t
        out.append(rep)
    return out


def relative_slope(xs, ys) -> float:
    """Least-squares slope of ``ys`` on ``xs`` times ``span(xs) / mean(ys)``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    slope = np.polyfit(xs, ys, 1)[0]
    return float(slope * (xs.max() - xs.min()) / ys.mean())


def band(values) -> float:
    """``max / min`` of a set of positive ratios."""
    v = np.asarray(values, dtype=float)
    return float(v.max() / v.min())


# ------------------------------------------------------- maximum principle
def domain_boundary(mask: np.ndarray, m) -> np.ndarray:
    """Nodes of ``mask`` with a grid neighbour outside it (or on the chart boundary)."""
    edge = mask & m.boundary_mask
    for axis in range(m.d):
        for shift in (1, -1):
            nb = np.roll(mask, shift, axis=axis)
            if not m.periodic:
                sl = [slice(None)] * m.d
                sl[axis] = 0 if shift == 1 else -1
                nb[tuple(sl)] = False
            edge |= mask & ~nb
    return edge


def data_scale(inputs: dict) -> float:
    """``c_sup e_sup / (eps c_inf)``: the data combination the global constant is fitted against."""
    return inputs["c_sup"] * inputs["e_sup"] / (inputs["eps"] * inputs["c_inf"])


def max_principle_report(u: ScalarField, spec: EquationSpec, omega=None, C4=None, residual_tol: float = 1e-6,
                         samples: int = 2000, seed: int = 0) -> EstimateReport:
    """Interior against boundary Hessian suprema on a domain ``omega``.

    ``omega`` is a node mask (default: the whole chart). ``C4`` is a fitted
    constant or a callable ``inputs -> C4*``; the flag
    ``inputs['flag']`` records ``interior <= max(boundary, C4*)``.
    """
    m = spec.manifold
    if omega is None:
        omega = np.ones(m.shape, dtype=bool)
    bnd = domain_boundary(omega, m)
    inner = omega & ~bnd
    if not inner.any():
        raise DomainError("domain has no interior nodes")
    rep = hypothesis_audit(spec, u, "T2", mask=inner, samples=samples, seed=seed)
    _require(rep)
    eps = rep["h_pp >= eps delta, eps > 0"].worst
    res = float(np.max(np.abs(residual(spec, u, inner).values)))
    if res > residual_tol:
        raise UnsolvedStateError(f"residual {res:.3g} exceeds {residual_tol:g}")
    hn = hessian_norm(u)
    interior_sup = float(np.max(hn[inner]))
    boundary_sup = float(np.max(hn[bnd]))
    loc = np.unravel_index(int(np.argmax(np.where(inner, hn, -np.inf))), m.shape)
    bd = bound_data(spec, u, omega)
    c1 = float(np.max(np.abs(u.values[omega])) + np.sqrt(np.max(grad_norm2(u)[omega])))
    inputs = {
        "interior_sup": interior_sup,
        "boundary_sup": boundary_sup,
        "argmax": tuple(int(i) for i in loc),
        "x_argmax": tuple(float(v) for v in m.coords[loc][: m.d]),
        "c1_norm": c1,
        "c_inf": bd.c_inf,
        "c_sup": bd.c_sup,
        "e_sup": bd.e_sup,
        "eps": eps,
        "a": spec.constant("a"),
        "K": spec.K,
        "residual": res,
    }
    c4 = C4(inputs) if callable(C4) else C4
    bound = boundary_sup if c4 is None else max(boundary_sup, c4)
    inputs["C4"] = c4
    inputs["flag"] = bool(interior_sup <= bound)
    return EstimateReport("T2", interior_sup, bound, _ratio(interior_sup, bound), inputs)


def fit_global_constant(reports, safety: float = 2.0):
    """Fit ``C4* = kappa * data_scale`` on calibration reports.

    ``kappa = safety * max(interior_sup / data_scale)``; returns a callable
    suitable for :func:`max_principle_report`.
    """
    kappa = safety * max(r.inputs["interior_sup"] / data_scale(r.inputs) for r in reports)

    def C4(inputs, kappa=kappa):
        return kappa * data_scale(inputs)

    C4.kappa = kappa
    return C4


# ------------------------------------------------------------------ tables
TABLE_COLUMNS = ("case", "r", "t", "quantity", "bound", "ratio", "c_inf", "c_sup", "e_sup", "sup_grad")


def report_table(reports, columns=TABLE_COLUMNS) -> str:
    """Comma-separated table, one row per report, ``%.10g`` floats."""
    lines = [",".join(columns)]
    for rep in reports:
        row = rep.row()
        cells = []
        for col in columns:
            v = row.get(col, "")
            if isinstance(v, float):
                cells.append(f"{v:.10g}")
            elif v is None:
                cells.append("")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines)
