"""Covariant derivatives, curvature tensors and invariant norms on grid charts.

Index conventions
-----------------
Covariant derivatives are written in the order they are taken, so for a
scalar ``u``::

    u_ij   = (nabla^2 u)(e_i, e_j)
    u_ijk  = (nabla_k nabla^2 u)_ij
    u_ijkl = (nabla_l nabla^3 u)_ijk

With ``R_ijkl = K (g_ik g_jl - g_il g_jk)`` the third-order commutation
rule reads ``u_kij = u_ijk + R_mikj u^m``. Repeated indices are contracted
with the inverse metric.
"""
from __future__ import annotations

import numpy as np

from ..errors import DomainError, UnsupportedDimension
from .fd import operators
from .fields import ScalarField, TensorField2
from .manifold import DiscreteManifold


def _values(obj):
    return obj.values if isinstance(obj, ScalarField) else obj


def _same_manifold(*fields):
    ms = [f.manifold for f in fields if isinstance(f, (ScalarField, TensorField2))]
    for m in ms[1:]:
        if m != ms[0]:
            raise DomainError("fields live on different manifolds")


def covariant_gradient(u: ScalarField) -> np.ndarray:
    """Covariant components ``u_i``, shape ``grid + (n,)``.

    Directions without a grid axis (reduced flat charts) get exact zeros.
    """
    m = u.manifold
    op = operators(m)
    out = np.zeros(m.shape + (m.n,))
    for a in range(m.d):
        out[..., a] = op.partial(u.values, a)
    return out


def _symmetric_second(u_values, m, grad):
    op = operators(m)
    n = m.n
    H = np.zeros(m.shape + (n, n))
    for i in range(m.d):
        for j in range(i, m.d):
            H[..., i, j] = op.second_partial(u_values, i, j)
    if not m.flat:
        H -= np.einsum("...kij,...k->...ij", m.gamma, grad)
    iu = np.triu_indices(n, 1)
    H[..., iu[1], iu[0]] = H[..., iu[0], iu[1]]
    return H


def covariant_hessian(u: ScalarField) -> TensorField2:
    """``u_ij = d_i d_j u - Gamma^k_ij u_k``, exactly symmetric.

    Diagonal entries use the second-derivative stencil, off-diagonal ones the
    product of first-derivative stencils.
    """
    m = u.manifold
    return TensorField2(_symmetric_second(u.values, m, covariant_gradient(u)), m)


def covariant_derivative(T: np.ndarray, m: DiscreteManifold) -> np.ndarray:
    """Covariant derivative of a covariant tensor field, new index appended last.

    ``(nabla T)_{i1..ir k} = d_k T_{i1..ir} - sum_s Gamma^p_{k i_s} T_{..p..}``
    """
    op = operators(m)
    n = m.n
    rank = T.ndim - m.d
    out = np.zeros(T.shape + (n,))
    for k in range(m.d):
        out[..., k] = op.partial(T, k)
    if m.flat:
        return out
    gam = m.gamma  # [..., p, k, i]
    letters = "abcdefgh"[:rank]
    for s in range(rank):
        src = letters[:s] + "p" + letters[s + 1 :]
        # Gamma^p_{k i_s} T_{..p..} for every k
        expr = f"...pk{letters[s]},...{src}->...{letters}k"
        out -= np.einsum(expr, gam, T)
    return out


def covariant_third(u: ScalarField) -> np.ndarray:
    """``u_ijk`` with shape ``grid + (n, n, n)``."""
    return covariant_derivative(covariant_hessian(u).components, u.manifold)


def augmented_tensor(u: ScalarField, a=0.0, b=0.0, B=None) -> TensorField2:
    """``W = nabla^2 u + a du (x) du + b |nabla u|^2 g + B``.

    ``a`` and ``b`` may be constants, arrays over the grid or scalar fields;
    ``B`` may be ``None``, an array ``grid + (n, n)`` or a tensor field.
    """
    _same_manifold(u, a, b, B)
    m = u.manifold
    grad = covariant_gradient(u)
    W = _symmetric_second(u.values, m, grad)
    av = np.asarray(_values(a), dtype=float)
    bv = np.asarray(_values(b), dtype=float)
    if np.any(av != 0):
        W += np.asarray(av)[..., None, None] * (grad[..., :, None] * grad[..., None, :])
    if np.any(bv != 0):
        W += (bv * grad_norm2_from(grad, m))[..., None, None] * m.g
    if B is not None:
        W += B.components if isinstance(B, TensorField2) else np.asarray(B, dtype=float)
    return TensorField2(W, m)


def schouten(m: DiscreteManifold) -> TensorField2:
    """``A_g = (Ric - R g / (2 (n - 1))) / (n - 2)`` from the closed-form curvature."""
    n = m.n
    if n < 3:
        raise UnsupportedDimension("the Schouten tensor needs n >= 3")
    A = (m.ricci() - m.scalar_curvature() / (2.0 * (n - 1)) * m.g) / (n - 2)
    return TensorField2(A, m)


# ----------------------------------------------------------------------- norms
def _inverse_conformal2(m):
    """``exp(-2 phi)`` at every node (1 on flat charts)."""
    if m.flat:
        return np.ones(m.shape)
    phi, _, _ = m.conformal_log()
    return np.exp(-2.0 * phi)


def grad_norm2_from(grad, m) -> np.ndarray:
    sq = np.sum(grad * grad, axis=-1)
    return sq if m.flat else sq * _inverse_conformal2(m)


def grad_norm2(u: ScalarField) -> np.ndarray:
    """``|nabla u|^2 = g^ij u_i u_j`` at every node."""
    return grad_norm2_from(covariant_gradient(u), u.manifold)


def tensor_norm(H: np.ndarray, m) -> np.ndarray:
    """Spectral norm of ``g^{-1} H`` (all charts are conformally flat)."""
    eig = np.abs(np.linalg.eigvalsh(H))
    out = eig.max(axis=-1)
    return out if m.flat else out * _inverse_conformal2(m)


def hessian_norm(u: ScalarField) -> np.ndarray:
    """``|nabla^2 u|``: the largest absolute eigenvalue of ``g^{-1} nabla^2 u``."""
    return tensor_norm(covariant_hessian(u).components, u.manifold)


def hessian_norm2(u: ScalarField) -> np.ndarray:
    """``g^ik g^jl u_ij u_kl``."""
    m = u.manifold
    H = covariant_hessian(u).components
    sq = np.sum(H * H, axis=(-1, -2))
    return sq if m.flat else sq * _inverse_conformal2(m) ** 2


# ----------------------------------------------------------- commutation rules
def commutation_residual(u: ScalarField, collar: int = 3, fourth: bool = True):
    """Max-norm residuals of the third- and fourth-order commutation identities.

    ``r3 = max |u_kij - u_ijk - R_mikj u^m|``

    ``r4 = max |u_kkij - u_ijkk - 2 R_mikj u^mk + Ric_mj u^m_i + Ric_mi u^m_j|``

    Curvature derivatives vanish on all chart kinds and are omitted. ``r3``
    runs over nodes at least ``collar`` spacings from the boundary; ``r4``
    nests two more stencils and uses ``collar + 4`` so one-sided boundary
    stencils do not leak into it.
    Pass ``fourth=False`` to skip the (memory-hungry) fourth-order tensor,
    in which case ``r4`` is ``nan``.
    """
    m = u.manifold
    interior = m.collar_mask(collar)
    grad = covariant_gradient(u)
    H = _symmetric_second(u.values, m, grad)
    T3 = covariant_derivative(H, m)
    ginv = m.ginv
    R = m.riemann()
    up = np.einsum("...mp,...p->...m", ginv, grad)
    curv3 = np.einsum("...mikj,...m->...kij", R, up)
    # T3[..., a, b, c] = u_abc, so u_ijk sits at [k, i, j] after moving the last axis first
    r3_tensor = T3 - np.moveaxis(T3, -1, -3) - curv3
    r3 = float(np.max(np.abs(r3_tensor[interior]))) if interior.any() else 0.0
    if not fourth:
        return r3, float("nan")
    T4 = covariant_derivative(T3, m)
    del T3
    lap_first = np.einsum("...kl,...klij->...ij", ginv, T4)
    lap_last = np.einsum("...kl,...ijkl->...ij", ginv, T4)
    del T4
    Hup = np.einsum("...mp,...kq,...pq->...mk", ginv, ginv, H)
    ric = m.ricci()
    ric_mixed = np.einsum("...mj,...mp,...pi->...ij", ric, ginv, H)
    res4 = lap_first - lap_last - 2.0 * np.einsum("...mikj,...mk->...ij", R, Hup) + ric_mixed + np.swapaxes(ric_mixed, -1, -2)
    interior4 = m.collar_mask(collar + 4)
    r4 = float(np.max(np.abs(res4[interior4]))) if interior4.any() else 0.0
    return r3, r4


# ------------------------------------------------------------- ball rescaling
def _require_flat(m):
    if not m.flat:
        raise DomainError("ball rescaling is defined on flat charts only")


def rescale_ball(u: ScalarField, r: float) -> ScalarField:
    """``u~(y) = u(r y) - ln r`` on the chart scaled by ``1/r``.

    The grid is re-indexed, not resampled: node ``y`` of the new chart is node
    ``x = r y`` of the old one. The pulled-back metric ``r^-2 E* g`` is the
    flat metric again, so the result lives on a flat chart of side ``L / r``.
    """
    if not 0.0 < r <= 1.0:
        raise DomainError(f"rescaling radius r={r} outside (0, 1]")
    m = u.manifold
    _require_flat(m)
    if r == 1.0:
        return u
    return ScalarField(u.values - np.log(r), m.with_side(m.L / r))


def pullback_ball(ut: ScalarField, r: float) -> ScalarField:
    """Inverse of :func:`rescale_ball`."""
    if not 0.0 < r <= 1.0:
        raise DomainError(f"rescaling radius r={r} outside (0, 1]")
    m = ut.manifold
    _require_flat(m)
    if r == 1.0:
        return ut
    return ScalarField(ut.values + np.log(r), m.with_side(m.L * r))


def rescale_identity_residual(u: ScalarField, r: float) -> dict:
    """Check the two rescaling identities nodewise.

    Returns the max relative residuals of
    ``|du|^2 + |d^2 u|  =  r^-2 (|du~|^2 + |d^2 u~|)`` and
    ``exp(-2 u~) = r^2 exp(-2 u)``.
    """
    ut = rescale_ball(u, r)
    lhs = grad_norm2(u) + hessian_norm(u)
    rhs = (grad_norm2(ut) + hessian_norm(ut)) / r**2
    d1 = np.abs(lhs - rhs) / (1.0 + np.abs(lhs))
    e_lhs = np.exp(-2.0 * ut.values)
    e_rhs = r**2 * np.exp(-2.0 * u.values)
    d2 = np.abs(e_lhs - e_rhs) / (1e-300 + np.abs(e_rhs))
    return {"derivative": float(d1.max()), "exponential": float(d2.max())}
