"""Normalized symmetric operators on eigenvalue vectors.

Three operator families are supported, all homogeneous of degree one and
normalized so that ``F(e) = 1`` with ``e = (1, ..., 1)``:

* ``sigma_root(n, k)``   ``C(n,k)^(-1/k) sigma_k^(1/k)``
* ``quotient(n, k, l)``  ``C(n,k)^(-1/(k-l)) C(n,l)^(1/(k-l)) (sigma_k/sigma_l)^(1/(k-l))``
* ``lincomb(n, k, t, s)`` ``(t+ns)^(-1) C(n,k)^(-1/k) sigma_k^(1/k)(t lam + s sigma_1(lam) e)``

Every function accepts a single eigenvalue vector of shape ``(n,)`` or a
batch of shape ``(..., n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .conditions import ConditionReport
from .errors import ConeViolation, DomainError, UnsupportedOperator

# threshold below which two eigenvalues are treated as equal in divided differences
DK_COALESCE = 1e-9


def _as_eigen(lam) -> np.ndarray:
    arr = np.asarray(lam, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] < 2:
        raise DomainError("an eigenvalue vector needs n >= 2 entries")
    if not np.all(np.isfinite(arr)):
        raise DomainError("eigenvalue vector has non-finite entries")
    return arr


def elementary(lam, kmax=None) -> np.ndarray:
    """All elementary symmetric functions ``sigma_0 .. sigma_kmax``.

    Uses the one-pass recurrence ``e_k(l_1..l_j) = e_k(l_1..l_{j-1}) + l_j e_{k-1}(l_1..l_{j-1})``.
    Returns an array of shape ``(..., kmax + 1)``.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if kmax is None:
        kmax = n
    out = np.zeros(lam.shape[:-1] + (kmax + 1,))
    out[..., 0] = 1.0
    for j in range(n):
        lj = lam[..., j]
        for k in range(min(j + 1, kmax), 0, -1):
            out[..., k] += lj * out[..., k - 1]
    return out


def sigma(lam, k: int):
    """k-th elementary symmetric function, ``sigma_0 = 1``."""
    lam = _as_eigen(lam)
    n = lam.shape[-1]
    if not 0 <= k <= n:
        raise DomainError(f"sigma order k={k} outside 0..{n}")
    return elementary(lam, k)[..., k]


@lru_cache(maxsize=None)
def _drop_one_index(n):
    return np.array([[j for j in range(n) if j != i] for i in range(n)], dtype=int)


@lru_cache(maxsize=None)
def _drop_two_index(n):
    idx = np.zeros((n, n, max(n - 2, 1)), dtype=int)
    for i in range(n):
        for j in range(n):
            rest = [m for m in range(n) if m != i and m != j]
            if i != j:
                idx[i, j, : len(rest)] = rest
    return idx


def elementary_without(lam, kmax) -> np.ndarray:
    """``sigma_j(lam | i)`` for all i, shape ``(..., n, kmax + 1)``."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    return elementary(lam[..., _drop_one_index(n)], kmax)


def elementary_without_pair(lam, kmax) -> np.ndarray:
    """``sigma_j(lam | i, m)`` for i != m (zero on the diagonal), shape ``(..., n, n, kmax + 1)``."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if n == 2:
        out = np.zeros(lam.shape[:-1] + (2, 2, kmax + 1))
        out[..., 0, 1, 0] = out[..., 1, 0, 0] = 1.0
        return out
    out = elementary(lam[..., _drop_two_index(n)], kmax)
    eye = np.eye(n, dtype=bool)
    out[..., eye, :] = 0.0
    return out


# --------------------------------------------------------------------------- cones


@dataclass(frozen=True)
class ConeSpec:
    """``positive``: Garding cone of order k; ``lincomb``: preimage of it under ``lam -> t lam + s sigma_1 e``."""

    kind: str
    k: int
    t: float = 1.0
    s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("positive", "lincomb"):
            raise DomainError(f"unknown cone kind {self.kind!r}")
        if self.k < 1:
            raise DomainError("cone order must be >= 1")
        if self.kind == "lincomb":
            if self.t < 0 or self.s < 0 or self.t + self.s < 1:
                raise DomainError("lincomb cone needs t, s >= 0 and t + s >= 1")

    @classmethod
    def positive(cls, k):
        return cls("positive", int(k))

    @classmethod
    def lincomb(cls, k, t, s):
        return cls("lincomb", int(k), float(t), float(s))

    def transform(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self.kind == "positive":
            return lam
        return self.t * lam + self.s * lam.sum(axis=-1, keepdims=True)


def _check_order(cone, n):
    if cone.k > n:
        raise DomainError(f"cone order {cone.k} exceeds dimension {n}")


def in_cone(lam, cone: ConeSpec, eps: float = 0.0):
    """Open-cone membership: ``sigma_i(mu) > eps`` for ``1 <= i <= k``."""
    lam = _as_eigen(lam)
    _check_order(cone, lam.shape[-1])
    e = elementary(cone.transform(lam), cone.k)
    return np.all(e[..., 1:] > eps, axis=-1)


def cone_margin(lam, cone: ConeSpec):
    """``min_i sigma_i(mu) / C(n, i)`` over ``1 <= i <= k``; positive inside the cone."""
    lam = _as_eigen(lam)
    n = lam.shape[-1]
    _check_order(cone, n)
    e = elementary(cone.transform(lam), cone.k)
    binom = np.array([math.comb(n, i) for i in range(1, cone.k + 1)], dtype=float)
    return np.min(e[..., 1:] / binom, axis=-1)


def _raise_if_outside(lam, cone, e):
    bad = ~np.all(e[..., 1 : cone.k + 1] > 0, axis=-1)
    if np.any(bad):
        if np.ndim(bad) == 0:
            pos, index = (), None
        else:
            pos = tuple(int(p) for p in np.argwhere(bad)[0])
            index = pos
        ev = e[pos]
        point = lam[pos]
        order = int(np.argmax(ev[1 : cone.k + 1] <= 0)) + 1
        raise ConeViolation(
            f"eigenvalues {np.array2string(point, precision=6)} outside cone: "
            f"sigma_{order} = {ev[order]:.6g} <= 0",
            index=index,
            order=order,
            value=float(ev[order]),
            eigenvalues=np.array(point),
        )


# ------------------------------------------------------------------------ operators


@dataclass(frozen=True)
class OperatorSpec:
    kind: str
    n: int
    k: int
    l: int = 0
    t: float = 1.0
    s: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise DomainError("dimension n must be >= 2")
        if not 1 <= self.k <= self.n:
            raise DomainError(f"order k={self.k} outside 1..{self.n}")
        if self.kind == "quotient":
            if not 0 <= self.l < self.k:
                raise DomainError(f"quotient needs 0 <= l < k, got l={self.l}, k={self.k}")
        elif self.kind == "sigma_root":
            if self.l != 0:
                raise DomainError("sigma_root has l = 0")
        elif self.kind == "lincomb":
            if self.t < 0 or self.s < 0 or self.t + self.s < 1:
                raise DomainError("lincomb needs t, s >= 0 and t + s >= 1")
        else:
            raise DomainError(f"unknown operator kind {self.kind!r}")

    @classmethod
    def sigma_root(cls, n, k):
        return cls("sigma_root", int(n), int(k))

    @classmethod
    def quotient(cls, n, k, l):
        return cls("quotient", int(n), int(k), int(l))

    @classmethod
    def lincomb(cls, n, k, t, s):
        return cls("lincomb", int(n), int(k), 0, float(t), float(s))

    @property
    def cone(self) -> ConeSpec:
        if self.kind == "lincomb":
            return ConeSpec.lincomb(self.k, self.t, self.s)
        return ConeSpec.positive(self.k)

    @property
    def degree_gap(self) -> int:
        return self.k - self.l

    @property
    def normalization(self) -> float:
        n, k, l = self.n, self.k, self.l
        if self.kind == "lincomb":
            return (self.t + n * self.s) ** -1 * math.comb(n, k) ** (-1.0 / k)
        m = k - l
        return math.comb(n, k) ** (-1.0 / m) * math.comb(n, l) ** (1.0 / m)

    @property
    def mu0(self):
        if self.kind == "sigma_root" and self.k >= 2:
            return self.n ** (-1.0 / (self.k - 1))
        return None

    @property
    def mu1(self):
        if self.kind == "sigma_root" and self.k >= 2:
            return 1.0 / (self.k - 1)
        return None

    def label(self) -> str:
        if self.kind == "sigma_root":
            return f"SigmaKRoot(k={self.k}, n={self.n})"
        if self.kind == "quotient":
            return f"Quotient(k={self.k}, l={self.l}, n={self.n})"
        return f"LinearCombRoot(k={self.k}, t={self.t:g}, s={self.s:g}, n={self.n})"


def _prepare(spec: OperatorSpec, lam, canonical=False):
    lam = _as_eigen(lam)
    if lam.shape[-1] != spec.n:
        raise DomainError(f"eigenvalue vector has length {lam.shape[-1]}, operator expects n={spec.n}")
    base = np.sort(lam, axis=-1) if canonical else lam
    mu = spec.cone.transform(base)
    e = elementary(mu, spec.k)
    _raise_if_outside(lam, spec.cone, e)
    return lam, mu, e


def _value_from(spec, e):
    m = spec.degree_gap
    ratio = e[..., spec.k] / e[..., spec.l]
    return spec.normalization * ratio ** (1.0 / m)


def F_eval(spec: OperatorSpec, lam):
    """Normalized operator value; permutation-invariant bit for bit."""
    _, _, e = _prepare(spec, lam, canonical=True)
    return _value_from(spec, e)


def _log_parts(spec, mu, e):
    """First derivatives of log(sigma_k) and log(sigma_l) in mu."""
    k, l = spec.k, spec.l
    ew = elementary_without(mu, k)
    a = ew[..., k - 1] / e[..., k, None]
    if l == 0:
        b = np.zeros_like(a)
    else:
        b = ew[..., l - 1] / e[..., l, None]
    return ew, a, b


def _chain(spec, g):
    if spec.kind != "lincomb":
        return g
    return spec.t * g + spec.s * g.sum(axis=-1, keepdims=True)


def F_grad(spec: OperatorSpec, lam):
    """Gradient ``dF/dlam_i``, shape ``(..., n)``."""
    lam, mu, e = _prepare(spec, lam)
    value = _value_from(spec, e)
    _, a, b = _log_parts(spec, mu, e)
    g = value[..., None] * (a - b) / spec.degree_gap
    return _chain(spec, g)


def F_hess(spec: OperatorSpec, lam):
    """Analytic Hessian ``d^2F/dlam_i dlam_j``, shape ``(..., n, n)``."""
    lam, mu, e = _prepare(spec, lam)
    k, l, m = spec.k, spec.l, spec.degree_gap
    value = _value_from(spec, e)
    _, a, b = _log_parts(spec, mu, e)
    ep = elementary_without_pair(mu, k)
    aa = (ep[..., k - 2] / e[..., k, None, None]) if k >= 2 else np.zeros(a.shape + (spec.n,))
    if l >= 2:
        bb = ep[..., l - 2] / e[..., l, None, None]
    else:
        bb = np.zeros_like(aa)
    dlog = (a - b) / m
    ddlog = (aa - a[..., :, None] * a[..., None, :] - bb + b[..., :, None] * b[..., None, :]) / m
    hess = value[..., None, None] * (dlog[..., :, None] * dlog[..., None, :] + ddlog)
    if spec.kind == "lincomb":
        n = spec.n
        jac = spec.t * np.eye(n) + spec.s * np.ones((n, n))
        hess = jac @ hess @ jac
    return hess


# ------------------------------------------------------------------ matrix versions


def _symmetric(W):
    W = np.asarray(W, dtype=float)
    if W.ndim < 2 or W.shape[-1] != W.shape[-2]:
        raise DomainError("expected square matrices")
    return 0.5 * (W + np.swapaxes(W, -1, -2))


def F_matrix(spec: OperatorSpec, W):
    """Value and derivative ``F^{ij} = dF/dW_ij`` of ``F(lambda(W))`` for symmetric W.

    ``F^{ij} = Q diag(dF/dlam) Q^T`` in the eigenbasis of W. The gradient of a
    symmetric spectral function takes equal values on equal eigenvalues, so the
    construction is basis-independent inside degenerate eigenspaces.
    """
    W = _symmetric(W)
    lam, Q = np.linalg.eigh(W)
    value = F_eval(spec, lam)
    grad = F_grad(spec, lam)
    Fij = np.einsum("...ia,...a,...ja->...ij", Q, grad, Q)
    return value, 0.5 * (Fij + np.swapaxes(Fij, -1, -2))


def divided_differences(lam, grad, hess):
    """Daleckii-Krein first divided differences of the gradient.

    ``D_ab = (g_a - g_b) / (lam_a - lam_b)``; when
    ``|lam_a - lam_b| < DK_COALESCE (1 + |lam_a|)`` the derivative limit
    ``H_aa - H_ab`` is used instead.
    """
    la = lam[..., :, None]
    lb = lam[..., None, :]
    diff = la - lb
    close = np.abs(diff) < DK_COALESCE * (1.0 + np.abs(la))
    safe = np.where(close, 1.0, diff)
    quotient = (grad[..., :, None] - grad[..., None, :]) / safe
    diag = np.diagonal(hess, axis1=-2, axis2=-1)
    limit = diag[..., :, None] - hess
    return np.where(close, limit, quotient)


def F_matrix_second(spec: OperatorSpec, W, H):
    """Second directional derivative ``D^2 F(W)[H, H]`` for symmetric W, H."""
    W = _symmetric(W)
    H = _symmetric(H)
    lam, Q = np.linalg.eigh(W)
    grad = F_grad(spec, lam)
    hess = F_hess(spec, lam)
    Ht = np.swapaxes(Q, -1, -2) @ H @ Q
    hd = np.diagonal(Ht, axis1=-2, axis2=-1)
    dd = divided_differences(lam, grad, hess)
    n = lam.shape[-1]
    off = ~np.eye(n, dtype=bool)
    spectral = np.einsum("...a,...ab,...b->...", hd, hess, hd)
    rotational = np.sum(np.where(off, dd * Ht**2, 0.0), axis=(-2, -1))
    return spectral + rotational


# -------------------------------------------------------------------------- sampling


def sample_cone(cone: ConeSpec, n: int, count: int, seed=0, spread=3.0) -> np.ndarray:
    """Seeded rejection sampler for the open cone.

    Proposals are ``alpha e + Z`` with ``alpha ~ U(0, spread)`` and
    ``Z ~ N(0, I_n)``; proposals outside the cone are discarded.
    """
    rng = np.random.default_rng(seed)
    _check_order(cone, n)
    accepted = []
    have = 0
    while have < count:
        batch = max(4 * (count - have), 256)
        alpha = rng.uniform(0.0, spread, size=(batch, 1))
        prop = alpha + rng.standard_normal((batch, n))
        keep = prop[in_cone(prop, cone)]
        accepted.append(keep)
        have += len(keep)
    return np.concatenate(accepted)[:count]


# ---------------------------------------------------------------- structure checks

_MIDPOINT_RTOL = 1e-12
_HESS_EIG_TOL = 1e-10


def _require_samples(samples, spec):
    samples = _as_eigen(samples)
    if samples.ndim == 1:
        samples = samples[None, :]
    if samples.shape[0] == 0:
        raise DomainError("empty sample list")
    if samples.shape[-1] != spec.n:
        raise DomainError("sample dimension does not match operator")
    return samples


def numerical_hessian(spec: OperatorSpec, lam) -> np.ndarray:
    """Central second differences with step ``1e-4 (1 + |lam|)``.

    The step is halved for any sample whose stencil leaves the cone.
    """
    lam = np.atleast_2d(_as_eigen(lam))
    count, n = lam.shape
    step = 1e-4 * (1.0 + np.linalg.norm(lam, axis=-1))
    eye = np.eye(n)
    offsets = []
    for i in range(n):
        for j in range(n):
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                offsets.append(si * eye[i] + sj * eye[j])
    offsets = np.array(offsets)
    for _ in range(30):
        pts = lam[:, None, :] + step[:, None, None] * offsets[None]
        ok = np.all(in_cone(pts, spec.cone), axis=-1)
        if ok.all():
            break
        step = np.where(ok, step, 0.5 * step)
    vals = F_eval(spec, pts).reshape(count, n, n, 4)
    return (vals[..., 0] - vals[..., 1] - vals[..., 2] + vals[..., 3]) / (4.0 * step[:, None, None] ** 2)


def check_structure(spec: OperatorSpec, samples, max_pairs=None) -> ConditionReport:
    """Check positivity (S0), concavity (S1) and monotonicity (S2) on samples."""
    samples = _require_samples(samples, spec)
    report = ConditionReport(f"structure conditions for {spec.label()}")
    values = F_eval(spec, samples)
    grads = F_grad(spec, samples)

    report.add("S0 positive", np.all(values > 0), values.min(), "min F")

    i, j = np.triu_indices(len(samples), k=1)
    if max_pairs is not None and len(i) > max_pairs:
        i, j = i[:max_pairs], j[:max_pairs]
    if len(i):
        mid = F_eval(spec, 0.5 * (samples[i] + samples[j]))
        chord = 0.5 * (values[i] + values[j])
        excess = (chord - mid) / (1.0 + np.abs(chord))
        worst = excess.max()
        report.add(
            "S1 concave (midpoint)",
            worst <= _MIDPOINT_RTOL,
            worst,
            f"max relative chord excess over {len(i)} pairs",
        )
    H = F_hess(spec, samples)
    scale = 1.0 + np.abs(H).max(axis=(-2, -1))
    eig_max = np.linalg.eigvalsh(H).max(axis=-1) / scale
    report.add(
        "S1 concave (hessian)",
        np.all(eig_max <= _HESS_EIG_TOL),
        eig_max.max(),
        "max eigenvalue of d2F/dlam2 relative to its size",
    )
    report.add("S2 monotone", np.all(grads > 0), grads.min(), "min dF/dlam_i")
    return report


def condition_A_sides(spec: OperatorSpec, lam):
    """Left side ``sum_i dF/dlam_i`` and right side ``mu0 (sigma_1 / F)^mu1`` of condition (A)."""
    if spec.mu0 is None:
        raise UnsupportedOperator(f"{spec.label()} carries no condition-(A) constants")
    lam = _as_eigen(lam)
    lhs = F_grad(spec, lam).sum(axis=-1)
    rhs = spec.mu0 * (lam.sum(axis=-1) / F_eval(spec, lam)) ** spec.mu1
    return lhs, rhs


def check_condition_A(spec: OperatorSpec, samples) -> ConditionReport:
    samples = _require_samples(samples, spec)
    lhs, rhs = condition_A_sides(spec, samples)
    slack = lhs / rhs - 1.0
    report = ConditionReport(f"condition (A) for {spec.label()}")
    report.add(
        "A lower bound",
        np.all(slack >= -1e-12),
        slack.min(),
        f"mu0={spec.mu0:.12g} mu1={spec.mu1:.12g}; min relative slack",
        witness=samples[int(np.argmin(slack))],
    )
    return report


def newton_maclaurin_sides(lam, k: int, m: int):
    """``k(n-m+1) sigma_{m-1} sigma_k`` and ``m(n-k+1) sigma_m sigma_{k-1}``."""
    lam = _as_eigen(lam)
    n = lam.shape[-1]
    if not 1 <= m < k <= n:
        raise DomainError(f"Newton-MacLaurin needs 1 <= m < k <= n, got m={m}, k={k}, n={n}")
    e = elementary(lam, k)
    _raise_if_outside(lam, ConeSpec.positive(k), e)
    lhs = k * (n - m + 1) * e[..., m - 1] * e[..., k]
    rhs = m * (n - k + 1) * e[..., m] * e[..., k - 1]
    return lhs, rhs


def check_newton_maclaurin(lam, k: int, m: int, rtol: float = 1e-12):
    lhs, rhs = newton_maclaurin_sides(lam, k, m)
    return lhs <= rhs * (1.0 + rtol)


def gamma2_eigen_bound(lam, rtol: float = 1e-12):
    """``-(n-2)/n sigma_1 <= lam_i <= sigma_1`` for every i, on the second Garding cone."""
    lam = _as_eigen(lam)
    n = lam.shape[-1]
    e = elementary(lam, 2)
    _raise_if_outside(lam, ConeSpec.positive(2), e)
    s1 = e[..., 1:2]
    tol = rtol * np.abs(s1)
    ok = (lam >= -(n - 2) / n * s1 - tol) & (lam <= s1 + tol)
    return np.all(ok, axis=-1)
