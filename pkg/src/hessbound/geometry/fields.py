"""Grid fields and their text serialization.

File format (UTF-8 text)::

    # hessbound-grid v1
    # chart=<kind> n=<n> d=<d> N=<N> L=<L> radius=<rho>
    # rank=<0|2> components=<c>
    <value>
    ...

Node data follow in row-major (C) order of the grid, one node per line,
components of a rank-2 tensor flattened row-major on that line. Floats are
written with 17 significant digits so a round trip is exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DomainError
from .manifold import DiscreteManifold

MAGIC = "# hessbound-grid v1"


@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray
    manifold: DiscreteManifold

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.manifold.shape:
            raise DomainError(f"field shape {values.shape} does not match grid {self.manifold.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("scalar field has non-finite values")
        object.__setattr__(self, "values", values)

    def with_values(self, values):
        return ScalarField(values, self.manifold)

    def __add__(self, other):
        other = other.values if isinstance(other, ScalarField) else other
        return self.with_values(self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, ScalarField) else other
        return self.with_values(self.values - other)


@dataclass(frozen=True, eq=False)
class TensorField2:
    components: np.ndarray
    manifold: DiscreteManifold

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        n = self.manifold.n
        if comps.shape != self.manifold.shape + (n, n):
            raise DomainError(f"tensor shape {comps.shape} does not match grid {self.manifold.shape} x ({n},{n})")
        if not np.array_equal(comps, np.swapaxes(comps, -1, -2)):
            raise DomainError("rank-2 tensor field must be exactly symmetric")
        object.__setattr__(self, "components", comps)


def _header_lines(manifold, rank, components):
    head = manifold.header()
    return [
        MAGIC,
        f"# chart={head['chart']} n={head['n']} d={head['d']} N={head['N']} L={head['L']!r} radius={head['radius']!r}",
        f"# rank={rank} components={components}",
    ]


def save_field(path, field) -> None:
    if isinstance(field, ScalarField):
        data = field.values.reshape(-1, 1)
        rank = 0
    elif isinstance(field, TensorField2):
        data = field.components.reshape(field.manifold.size, -1)
        rank = 2
    else:
        raise TypeError("expected ScalarField or TensorField2")
    lines = _header_lines(field.manifold, rank, data.shape[1])
    lines.extend(" ".join(f"{v:.17g}" for v in row) for row in data)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_kv(line):
    out = {}
    for token in line.lstrip("#").split():
        key, _, value = token.partition("=")
        out[key] = value
    return out


def load_field(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise DomainError(f"{path}: not a hessbound grid file")
    head = _parse_kv(lines[1])
    meta = _parse_kv(lines[2])
    manifold = DiscreteManifold(
        head["chart"], int(head["n"]), int(head["N"]), float(head["L"]), int(head["d"]), float(head["radius"])
    )
    if manifold.kind == "sphere":
        manifold = DiscreteManifold.sphere_chart(manifold.n, manifold.N, manifold.L, manifold.radius)
    elif manifold.d == manifold.n:
        manifold = DiscreteManifold(manifold.kind, manifold.n, manifold.N, manifold.L, None, manifold.radius)
    data = np.array([[float(v) for v in row.split()] for row in lines[3:] if row.strip()])
    if int(meta["rank"]) == 0:
        return ScalarField(data.reshape(manifold.shape), manifold)
    return TensorField2(data.reshape(manifold.shape + (manifold.n, manifold.n)), manifold)
