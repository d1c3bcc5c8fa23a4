"""Structured-grid charts with closed-form metric, connection and curvature.

Three chart kinds are available:

``torus``      flat periodic box ``[-L/2, L/2)^d`` with ``N`` nodes per axis.
``euclidean``  flat closed box ``[-L/2, L/2]^d`` with ``N + 1`` nodes per axis.
``sphere``     stereographic patch of the round sphere of radius ``rho``,
               ``g = (2 rho / (1 + |x|^2))^2 delta`` on ``[-L/2, L/2]^n``.

In every case ``h = L / N``. Flat charts may carry fewer grid axes ``d``
than the manifold dimension ``n``; the trailing ``n - d`` coordinates are
then translation-invariant directions and every field is constant along
them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import DomainError

KINDS = ("torus", "euclidean", "sphere")


@dataclass(frozen=True)
class DiscreteManifold:
    kind: str
    n: int
    N: int
    L: float
    dims: int | None = None
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown chart kind {self.kind!r}")
        if not 2 <= self.n <= 6:
            raise DomainError(f"dimension n={self.n} outside 2..6")
        if self.N < 5:
            raise DomainError(f"resolution N={self.N} too low, need at least 5 intervals per axis")
        if self.L <= 0:
            raise DomainError("side length L must be positive")
        d = self.d
        if not 1 <= d <= self.n:
            raise DomainError(f"grid dimension {d} outside 1..{self.n}")
        if self.kind == "sphere":
            if d != self.n:
                raise DomainError("sphere charts carry a full n-dimensional grid")
            if self.radius <= 0:
                raise DomainError("sphere radius must be positive")
            if 0.5 * self.L * math.sqrt(self.n) >= 1.0:
                raise DomainError("stereographic patch must stay inside the open unit ball (geodesic radius < pi/2)")

    # ------------------------------------------------------------ constructors
    @classmethod
    def flat_torus(cls, n, N, L, dims=None):
        return cls("torus", int(n), int(N), float(L), dims)

    @classmethod
    def euclidean_domain(cls, n, N, L, dims=None):
        return cls("euclidean", int(n), int(N), float(L), dims)

    @classmethod
    def sphere_chart(cls, n, N, L, radius=1.0):
        return cls("sphere", int(n), int(N), float(L), None, float(radius))

    def refined(self, N):
        return DiscreteManifold(self.kind, self.n, int(N), self.L, self.dims, self.radius)

    def with_side(self, L):
        return DiscreteManifold(self.kind, self.n, self.N, float(L), self.dims, self.radius)

    # ------------------------------------------------------------------ layout
    @property
    def d(self) -> int:
        return self.n if self.dims is None else int(self.dims)

    @property
    def flat(self) -> bool:
        return self.kind != "sphere"

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def points_per_axis(self) -> int:
        return self.N if self.periodic else self.N + 1

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.d

    @property
    def size(self) -> int:
        return self.points_per_axis**self.d

    @property
    def K(self) -> float:
        """Constant sectional curvature."""
        return 0.0 if self.flat else 1.0 / self.radius**2

    def header(self) -> dict:
        return {"chart": self.kind, "n": self.n, "d": self.d, "N": self.N, "L": self.L, "radius": self.radius}

    @cached_property
    def axis(self) -> np.ndarray:
        return -0.5 * self.L + self.h * np.arange(self.points_per_axis)

    @cached_property
    def coords(self) -> np.ndarray:
        """Chart coordinates of every node, shape ``shape + (n,)``."""
        grids = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        out = np.zeros(self.shape + (self.n,))
        for a, grid in enumerate(grids):
            out[..., a] = grid
        return out

    def _index_grids(self):
        return np.meshgrid(*([np.arange(self.points_per_axis)] * self.d), indexing="ij")

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        if self.periodic:
            return np.zeros(self.shape, dtype=bool)
        mask = np.zeros(self.shape, dtype=bool)
        for idx in self._index_grids():
            mask |= (idx == 0) | (idx == self.N)
        return mask

    @property
    def free_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    def collar_mask(self, collar: int = 3) -> np.ndarray:
        """Nodes at least ``collar * h`` from the boundary."""
        if self.periodic:
            return np.ones(self.shape, dtype=bool)
        mask = np.ones(self.shape, dtype=bool)
        for idx in self._index_grids():
            mask &= (idx >= collar) & (idx <= self.N - collar)
        return mask

    def distance_from_origin(self, x=None) -> np.ndarray:
        """Riemannian distance from the chart origin (flat: Euclidean in the grid axes)."""
        x = self.coords if x is None else np.asarray(x)
        rad = np.linalg.norm(x[..., : self.d], axis=-1)
        if self.flat:
            return rad
        return 2.0 * self.radius * np.arctan(rad)

    def ball_mask(self, r: float) -> np.ndarray:
        return self.distance_from_origin() <= r * (1.0 + 1e-12)

    # --------------------------------------------------------------- geometry
    def conformal_log(self, x=None):
        """``phi`` with ``g = exp(2 phi) delta`` and its first two partials."""
        x = self.coords if x is None else np.asarray(x)
        n = self.n
        if self.flat:
            zero = np.zeros(x.shape[:-1])
            return zero, np.zeros(x.shape), np.zeros(x.shape + (n,))
        q = 1.0 + np.sum(x**2, axis=-1)
        phi = np.log(2.0 * self.radius / q)
        dphi = -2.0 * x / q[..., None]
        ddphi = -2.0 * np.eye(n) / q[..., None, None] + 4.0 * x[..., :, None] * x[..., None, :] / q[..., None, None] ** 2
        return phi, dphi, ddphi

    def metric(self, x=None) -> np.ndarray:
        x = self.coords if x is None else np.asarray(x)
        phi, _, _ = self.conformal_log(x)
        return np.exp(2.0 * phi)[..., None, None] * np.eye(self.n)

    def inverse_metric(self, x=None) -> np.ndarray:
        x = self.coords if x is None else np.asarray(x)
        phi, _, _ = self.conformal_log(x)
        return np.exp(-2.0 * phi)[..., None, None] * np.eye(self.n)

    def conformal_factor(self, x=None) -> np.ndarray:
        """``exp(phi)``: the metric is ``exp(2 phi) delta``."""
        phi, _, _ = self.conformal_log(x)
        return np.exp(phi)

    @cached_property
    def g(self) -> np.ndarray:
        return self.metric()

    @cached_property
    def ginv(self) -> np.ndarray:
        return self.inverse_metric()

    def christoffel(self, x=None) -> np.ndarray:
        """``Gamma[..., k, i, j] = Gamma^k_{ij}``."""
        x = self.coords if x is None else np.asarray(x)
        _, dphi, _ = self.conformal_log(x)
        eye = np.eye(self.n)
        return (
            eye[:, :, None] * dphi[..., None, None, :]
            + eye[:, None, :] * dphi[..., None, :, None]
            - eye[None, :, :] * dphi[..., :, None, None]
        )

    def christoffel_derivative(self, x=None) -> np.ndarray:
        """``dGamma[..., l, k, i, j] = d_l Gamma^k_{ij}``."""
        x = self.coords if x is None else np.asarray(x)
        _, _, ddphi = self.conformal_log(x)
        eye = np.eye(self.n)
        # ddphi[..., a, l] is symmetric; place derivative index l first
        return (
            eye[None, :, :, None] * ddphi[..., :, None, None, :]
            + eye[None, :, None, :] * ddphi[..., :, None, :, None]
            - eye[None, None, :, :] * ddphi[..., :, :, None, None]
        )

    @cached_property
    def gamma(self) -> np.ndarray:
        return self.christoffel()

    def riemann(self, x=None) -> np.ndarray:
        """``R_{ijkl} = K (g_ik g_jl - g_il g_jk)``, the closed form for constant curvature."""
        g = self.metric(x)
        return self.K * (
            g[..., :, None, :, None] * g[..., None, :, None, :] - g[..., :, None, None, :] * g[..., None, :, :, None]
        )

    def riemann_from_connection(self, x=None) -> np.ndarray:
        """Assemble ``R_{ijkl} = g_{km} R^m_{ijl}`` from the closed-form Christoffel symbols.

        ``R^m_{ijl} = d_i Gamma^m_{jl} - d_j Gamma^m_{il} + Gamma^m_{ip} Gamma^p_{jl} - Gamma^m_{jp} Gamma^p_{il}``
        """
        gam = self.christoffel(x)
        dgam = self.christoffel_derivative(x)
        up = (
            np.einsum("...imjl->...mijl", dgam)
            - np.einsum("...jmil->...mijl", dgam)
            + np.einsum("...mip,...pjl->...mijl", gam, gam)
            - np.einsum("...mjp,...pil->...mijl", gam, gam)
        )
        return np.einsum("...km,...mijl->...ijkl", self.metric(x), up)

    def ricci(self, x=None) -> np.ndarray:
        return (self.n - 1) * self.K * self.metric(x)

    def scalar_curvature(self) -> float:
        return self.n * (self.n - 1) * self.K

    def embedding(self, x=None) -> np.ndarray:
        """Unit normal ``N(x)`` of the sphere chart in ``R^{n+1}``: ``(2x, 1 - |x|^2) / (1 + |x|^2)``."""
        if self.kind != "sphere":
            raise DomainError("embedding is defined for sphere charts only")
        x = self.coords if x is None else np.asarray(x)
        q = 1.0 + np.sum(x**2, axis=-1, keepdims=True)
        return np.concatenate([2.0 * x / q, (2.0 - q) / q], axis=-1)

    def embedding_jacobian(self, x=None) -> np.ndarray:
        """``dN_a / dx_i`` for the unit sphere, shape ``(..., n + 1, n)``."""
        if self.kind != "sphere":
            raise DomainError("embedding is defined for sphere charts only")
        x = self.coords if x is None else np.asarray(x)
        q = 1.0 + np.sum(x**2, axis=-1)
        top = 2.0 * np.eye(self.n) / q[..., None, None] - 4.0 * x[..., :, None] * x[..., None, :] / q[..., None, None] ** 2
        bottom = -4.0 * x / q[..., None] ** 2
        return np.concatenate([top, bottom[..., None, :]], axis=-2)
