"""Cone-preserving damped Newton iteration for the discrete equation.

Boundary nodes of Euclidean and sphere charts carry Dirichlet data taken
from the initial guess; torus charts have no boundary.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import symfunc
from .equations import EquationSpec, cone_margin_field, local_state
from .errors import ConeViolation, EllipticityError, LinearSolveError
from .geometry import ScalarField
from .geometry.calculus import _inverse_conformal2
from .geometry.fd import operators


@dataclass
class SolveConfig:
    """Newton controls.

    ``linear_solver`` is ``"direct"`` (sparse LU) or ``"bicgstab"``
    (Jacobi-preconditioned BiCGSTAB).
    """

    max_iters: int = 25
    residual_tol: float = 1e-10
    initial_step: float = 1.0
    backtrack: float = 0.5
    min_step: float = 2.0**-20
    cone_margin: float = 1e-6
    linear_solver: str = "direct"
    linear_tol: float = 1e-13
    seed: int = 0

    def __post_init__(self):
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")
        if self.cone_margin <= 0:
            raise ValueError("cone_margin must be positive")
        if self.linear_solver not in ("direct", "bicgstab"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual_history: list
    min_cone_margin_seen: float
    final_u: ScalarField = field(repr=False)
    step_history: list = field(default_factory=list)
    reason: str = ""
    failed_tau: float | None = None
    taus: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "final_u"}
        out["status"] = "converged" if self.converged else "not converged"
        return out

    def to_text(self) -> str:
        """Stable JSON document (sorted keys, full float precision)."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# --------------------------------------------------------------- linearization
def _dirichlet_mask(m):
    return m.free_mask


def principal_coefficients(spec: EquationSpec, st):
    """``F^{ij} = dF/dW_ij`` at the evaluated nodes."""
    grad_lam = symfunc.F_grad(spec.operator, st.eig)
    P = np.einsum("...ia,...a,...ja->...ij", st.Q, grad_lam, st.Q)
    P = 0.5 * (P + np.swapaxes(P, -1, -2))
    return P, grad_lam


def linearize(spec: EquationSpec, u: ScalarField, mask=None):
    """Jacobian of ``residual(spec, .)`` at ``u`` restricted to ``mask`` rows and columns.

    Returns ``(J, r, info)`` with the sparse Jacobian, the residual vector on
    the masked nodes and a dict holding the ellipticity certificate
    ``min_eig`` (smallest eigenvalue of ``g^{1/2} F^{ij} g^{1/2}``).
    """
    m = spec.manifold
    if mask is None:
        mask = _dirichlet_mask(m)
    st = local_state(spec, u, mask)
    idx = np.nonzero(mask)
    n, d = m.n, m.d
    c_full = _inverse_conformal2(m)
    c = c_full[idx]
    P_A, grad_lam = principal_coefficients(spec, st)
    min_eig = float(np.min(grad_lam))
    if not min_eig > 0:
        raise EllipticityError(f"principal part not positive definite (min eigenvalue {min_eig:.3g})")
    P = P_A * c[:, None, None]  # dF/dW
    grad = st.grad[idx]
    # first-order coefficients
    first = np.zeros((len(c), n))
    if not m.flat:
        first -= np.einsum("...ij,...kij->...k", P, m.gamma[idx])
    a = np.broadcast_to(np.asarray(spec.a, dtype=float), m.shape)[idx]
    b = np.broadcast_to(np.asarray(spec.b, dtype=float), m.shape)[idx]
    first += 2.0 * a[:, None] * np.einsum("...ij,...j->...i", P, grad)
    trPg = np.einsum("...ij,...ij->...", P, m.g[idx])
    first += (2.0 * b * trPg * c)[:, None] * grad
    x = m.coords
    coef = spec.coef_grid[idx]
    Z = spec.Zc(x, u.values, st.grad)[idx]
    hval = spec.hc(x, u.values, st.grad)[idx]
    if spec.hc.depends_on_p:
        hp = spec.hc.gradient("p", x, u.values, st.grad)[idx]
        first -= (coef * Z)[:, None] * hp
    zero = np.zeros(len(c))
    if spec.Zc.depends_on_z:
        zero -= coef * spec.Zc(x, u.values, st.grad, "z")[idx] * hval
    op = operators(m)
    # assemble on the full grid, then restrict to the masked nodes
    full = sp.csr_matrix((m.size, m.size))
    for i in range(d):
        for j in range(i, d):
            w = P[:, i, j] if i == j else 2.0 * P[:, i, j]
            full = full + sp.diags(_scatter(w, idx, m)) @ op.second_matrix(i, j)
        full = full + sp.diags(_scatter(first[:, i], idx, m)) @ op.first_matrix(i)
    full = full + sp.diags(_scatter(zero, idx, m))
    flat = np.ravel_multi_index(idx, m.shape)
    J = full.tocsr()[flat][:, flat].tocsc()
    r = st.value - st.rhs
    return J, r, {"min_eig": min_eig, "P": P, "rows": flat}


def _scatter(values, idx, m):
    out = np.zeros(m.shape)
    out[idx] = values
    return out.ravel()


def _solve_linear(J, rhs, cfg: SolveConfig):
    if cfg.linear_solver == "direct":
        try:
            lu = spla.splu(J)
            sol = lu.solve(rhs)
        except RuntimeError as exc:
            raise LinearSolveError(f"sparse LU failed: {exc}") from None
    else:
        diag = J.diagonal()
        if np.any(diag == 0):
            raise LinearSolveError("zero diagonal entry; Jacobi preconditioner undefined")
        pre = spla.LinearOperator(J.shape, matvec=lambda v: v / diag)
        sol, info = spla.bicgstab(J, rhs, rtol=cfg.linear_tol, atol=0.0, maxiter=20 * J.shape[0], M=pre)
        if info != 0:
            raise LinearSolveError(f"BiCGSTAB did not converge (info={info})")
    if not np.all(np.isfinite(sol)):
        raise LinearSolveError("linear solve produced non-finite values")
    return sol


# ------------------------------------------------------------------- Newton
def _evaluate(spec, u, mask):
    st = local_state(spec, u, mask)
    r = st.value - st.rhs
    marg = symfunc.cone_margin(st.eig, spec.operator.cone)
    return float(np.max(np.abs(r))) if r.size else 0.0, float(np.min(marg)) if marg.size else np.inf


def newton_solve(spec: EquationSpec, u0: ScalarField, cfg: SolveConfig | None = None) -> SolveReport:
    """Damped Newton with backtracking on residual decrease and cone margin.

    Raises
    ------
    ConeViolation
        If ``u0`` is outside the cone or closer to its boundary than
        ``cfg.cone_margin`` (the offending node is named).
    LinearSolveError
        If a Newton system cannot be solved.
    """
    cfg = cfg or SolveConfig()
    m = spec.manifold
    mask = _dirichlet_mask(m)
    u = u0
    res, margin = _evaluate(spec, u, mask)
    if margin < cfg.cone_margin:
        marg = cone_margin_field(spec, u)
        marg = np.where(mask, marg, np.inf)
        node = np.unravel_index(int(np.argmin(marg)), m.shape)
        raise ConeViolation(
            f"initial guess has cone margin {margin:.3g} < {cfg.cone_margin:g} at node {node}",
            index=node,
            value=margin,
        )
    history = [res]
    steps = []
    min_margin = margin
    flat_free = mask.ravel()
    for it in range(cfg.max_iters + 1):
        if res <= cfg.residual_tol:
            return SolveReport(True, it, history, min_margin, u, steps, "residual tolerance reached")
        if it == cfg.max_iters:
            break
        J, r, _ = linearize(spec, u, mask)
        delta = _solve_linear(J, -r, cfg)
        du = np.zeros(m.size)
        du[flat_free] = delta
        du = du.reshape(m.shape)
        step = cfg.initial_step
        accepted = False
        while step >= cfg.min_step:
            trial = ScalarField(u.values + step * du, m)
            try:
                t_res, t_margin = _evaluate(spec, trial, mask)
            except ConeViolation:
                t_res, t_margin = np.inf, -np.inf
            if t_margin >= cfg.cone_margin and t_res < res:
                accepted = True
                break
            step *= cfg.backtrack
        if not accepted:
            return SolveReport(False, it, history, min_margin, u, steps, "step size collapsed below minimum")
        u, res = trial, t_res
        min_margin = min(min_margin, t_margin)
        history.append(res)
        steps.append(step)
    return SolveReport(False, cfg.max_iters, history, min_margin, u, steps, "iteration limit reached")


def continuation_solve(family, u0: ScalarField, steps: int, cfg: SolveConfig | None = None) -> SolveReport:
    """Solve ``family(tau)`` for ``tau = 1/steps, ..., 1`` with warm starts.

    ``family`` maps ``tau`` in ``[0, 1]`` to an :class:`EquationSpec`. The
    returned report is the last step's, extended with the ``tau`` values
    reached; on failure ``failed_tau`` names the step that did not converge.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    cfg = cfg or SolveConfig()
    u = u0
    taus = []
    total = 0
    min_margin = np.inf
    report = None
    for i in range(1, steps + 1):
        tau = i / steps
        report = newton_solve(family(tau), u, cfg)
        total += report.iterations
        min_margin = min(min_margin, report.min_cone_margin_seen)
        taus.append(tau)
        if not report.converged:
            report.failed_tau = tau
            report.taus = taus
            return report
        u = report.final_u
    report.taus = taus
    if steps > 1:
        # the residual history and steps stay those of the final solve
        report.iterations = total
        report.min_cone_margin_seen = min_margin
        report.reason = "continuation complete"
    return report


def smooth_noise(manifold, seed: int = 0, modes: int = 4) -> np.ndarray:
    """Seeded smooth perturbation that vanishes on the chart boundary.

    A sum of ``modes`` low-frequency cosines times ``prod cos^2(pi x / L)``
    (the window is dropped on the torus). The result is scaled so that its
    largest absolute value is one.
    """
    rng = np.random.default_rng(seed)
    m = manifold
    x = m.coords[..., : m.d]
    L = m.L
    out = np.zeros(m.shape)
    for _ in range(modes):
        kv = rng.integers(1, 3, size=m.d)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out += rng.standard_normal() * np.cos(2.0 * np.pi * (x @ kv) / L + phase)
    if not m.periodic:
        out *= np.prod(np.cos(np.pi * x / L), axis=-1) ** 2
        out[m.boundary_mask] = 0.0
    return out / np.max(np.abs(out))


def perturbed_guess(ustar: ScalarField, level: float = 0.1, seed: int = 0) -> ScalarField:
    """``ustar + level * noise`` with the noise Hessian scaled to that of ``ustar``.

    ``level = 0.1`` is a 10% perturbation of the second derivatives, which is
    what the operator sees.
    """
    from .geometry import hessian_norm

    m = ustar.manifold
    noise = smooth_noise(m, seed)
    interior = m.collar_mask(2)
    scale = np.max(hessian_norm(ustar)[interior]) / np.max(hessian_norm(ScalarField(noise, m))[interior])
    return ScalarField(ustar.values + level * scale * noise, m)
