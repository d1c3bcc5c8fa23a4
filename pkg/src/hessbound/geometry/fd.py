"""Fourth-order finite-difference operators on the chart grids.

Weights are stored as small integers over a common denominator (``12 h``
for first derivatives, ``12 h^2`` for second derivatives) so that
polynomial fields on dyadic grids are differentiated without rounding.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ..errors import DomainError

DENOM = 12


def fd_weights(offsets, order) -> np.ndarray:
    """Weights ``w`` with ``sum_j w_j f(x + o_j h) = h^order f^(order)(x) + O(h^len)``."""
    offsets = np.asarray(offsets, dtype=float)
    m = len(offsets)
    vander = np.vander(offsets, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(vander, rhs)


def _integer_weights(offsets, order):
    w = DENOM * fd_weights(offsets, order)
    iw = np.rint(w)
    if np.max(np.abs(w - iw)) > 1e-8:
        raise AssertionError(f"non-integer stencil for offsets {offsets}")
    return iw


def _stencil_offsets(i, count, periodic, order):
    """Offsets used at node ``i`` of ``count`` nodes."""
    central = [-2, -1, 0, 1, 2]
    if periodic:
        return central
    width = 5 if order == 1 else 6
    last = count - 1
    if 2 <= i <= last - 2:
        return central
    if i < 2:
        return [j - i for j in range(width)]
    return [last - j - i for j in reversed(range(width))]


@lru_cache(maxsize=None)
def integer_matrix_1d(count: int, periodic: bool, order: int) -> sp.csr_matrix:
    """Integer-weight 1D derivative matrix (divide by ``12 h^order`` to apply)."""
    if count < 5 or (not periodic and count < 6):
        raise DomainError("need at least 5 nodes per axis (6 on bounded axes)")
    rows, cols, vals = [], [], []
    for i in range(count):
        offsets = _stencil_offsets(i, count, periodic, order)
        for o, w in zip(offsets, _integer_weights(offsets, order)):
            if w == 0:
                continue
            rows.append(i)
            cols.append((i + o) % count if periodic else i + o)
            vals.append(w)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(count, count))
    mat.sum_duplicates()
    return mat


def _embed(mat1d, axis, d, count):
    eye = sp.identity(count, format="csr")
    out = None
    for a in range(d):
        factor = mat1d if a == axis else eye
        out = factor if out is None else sp.kron(out, factor, format="csr")
    return out


class GridOperators:
    """Sparse derivative operators for one manifold's grid (C-order flattening)."""

    def __init__(self, manifold):
        self.manifold = manifold
        count = manifold.points_per_axis
        d = manifold.d
        self.h = manifold.h
        self.d = d
        first = integer_matrix_1d(count, manifold.periodic, 1)
        second = integer_matrix_1d(count, manifold.periodic, 2)
        self.int_first = [_embed(first, a, d, count) for a in range(d)]
        self.int_second = [_embed(second, a, d, count) for a in range(d)]
        self._scaled = {}

    # integer operators applied with exact division -------------------------
    def partial(self, values, axis):
        """``d_axis`` of an array whose leading dims are the grid shape."""
        m = self.manifold
        if axis >= self.d:
            return np.zeros_like(values, dtype=float)
        flat = values.reshape(m.size, -1)
        out = (self.int_first[axis] @ flat) / (DENOM * self.h)
        return out.reshape(values.shape)

    def second_partial(self, values, i, j):
        m = self.manifold
        if i >= self.d or j >= self.d:
            return np.zeros_like(values, dtype=float)
        flat = values.reshape(m.size, -1)
        if i == j:
            out = (self.int_second[i] @ flat) / (DENOM * self.h**2)
        else:
            out = (self.int_first[i] @ (self.int_first[j] @ flat)) / (DENOM * DENOM * self.h**2)
        return out.reshape(values.shape)

    # scaled operators for Jacobian assembly --------------------------------
    def first_matrix(self, axis):
        key = ("d1", axis)
        if key not in self._scaled:
            self._scaled[key] = (self.int_first[axis] / (DENOM * self.h)).tocsr()
        return self._scaled[key]

    def second_matrix(self, i, j):
        i, j = min(i, j), max(i, j)
        key = ("d2", i, j)
        if key not in self._scaled:
            if i == j:
                mat = self.int_second[i] / (DENOM * self.h**2)
            else:
                mat = (self.int_first[i] @ self.int_first[j]) / (DENOM * DENOM * self.h**2)
            self._scaled[key] = mat.tocsr()
        return self._scaled[key]


@lru_cache(maxsize=32)
def operators(manifold) -> GridOperators:
    return GridOperators(manifold)
