"""Grid fields, stacked primal/dual vectors and the local weighted norm.

Fields store their samples in a numpy array.  Scalar and complex fields
use the grid shape directly; multi-component fields keep the component
axis first, ``data.shape == (m, *grid)``.  Grids are row-major: a 2D field
of ``nx`` columns and ``ny`` rows has grid shape ``(ny, nx)`` and the
first spatial component of any derivative is the x (column) direction.

Symmetric tensors are stored by their unique entries.  Inner products
count every off-diagonal entry twice, which is what the per-component
``weights`` of :class:`VectorField` encode.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Any

import numpy as np

__all__ = [
    "Field",
    "ScalarField",
    "ScalarField2D",
    "ComplexField",
    "ComplexField2D",
    "VectorField",
    "VectorField2D",
    "SymTensorField3D",
    "StackedVector",
    "LocalMetric",
    "sym_weights",
    "sym_pairs",
    "inner",
    "weighted_norm_sq",
    "random_like",
]


def sym_pairs(d: int) -> list[tuple[int, int]]:
    """Index pairs of the unique entries of a symmetric ``d x d`` matrix.

    Diagonal first, then the upper off-diagonal in row order, giving
    ``(xx, yy, xy)`` for ``d = 2`` and ``(xx, yy, zz, xy, xz, yz)`` for
    ``d = 3``.
    """
    pairs = [(a, a) for a in range(d)]
    pairs += [(a, b) for a in range(d) for b in range(a + 1, d)]
    return pairs


def sym_weights(d: int) -> np.ndarray:
    return np.array([1.0 if a == b else 2.0 for a, b in sym_pairs(d)])


class Field:
    """Samples of a function on a regular grid with spacing ``h``."""

    def __init__(self, data, h: float = 1.0):
        self.data = np.asarray(data)
        self.h = float(h)
        if not self.h > 0:
            raise ValueError(f"grid step must be positive, got {h}")

    # subclasses override to keep their extra metadata
    def _new(self, data) -> "Field":
        return type(self)(data, h=self.h)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def grid(self) -> tuple[int, ...]:
        return self.data.shape

    def _check(self, other: "Field"):
        if type(other) is not type(self) or other.data.shape != self.data.shape:
            raise ValueError(
                f"field mismatch: {type(self).__name__}{self.data.shape} vs "
                f"{type(other).__name__}{getattr(other.data, 'shape', None)}"
            )

    def inner(self, other: "Field") -> float:
        self._check(other)
        return float(np.vdot(self.data, other.data).real)

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def grid_norm(self) -> float:
        """Discrete L2 norm ``sqrt(h^d sum |u|^2)``; independent of resolution."""
        return self.h ** (len(self.grid) / 2) * self.norm()

    def copy(self) -> "Field":
        return self._new(self.data.copy())

    def zeros_like(self) -> "Field":
        return self._new(np.zeros_like(self.data))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def __add__(self, other):
        self._check(other)
        return self._new(self.data + other.data)

    def __sub__(self, other):
        self._check(other)
        return self._new(self.data - other.data)

    def __mul__(self, scalar):
        return self._new(self.data * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self._new(self.data / scalar)

    def __neg__(self):
        return self._new(-self.data)

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.data.shape}, h={self.h:g})"


class ScalarField(Field):
    """Real scalar field on a grid of any dimension."""

    def __init__(self, data, h: float = 1.0):
        super().__init__(np.asarray(data, dtype=float), h)


class ScalarField2D(ScalarField):
    def __init__(self, data, h: float = 1.0):
        super().__init__(data, h)
        if self.data.ndim != 2:
            raise ValueError(f"expected a 2D grid, got shape {self.data.shape}")

    @property
    def nx(self) -> int:
        return self.data.shape[1]

    @property
    def ny(self) -> int:
        return self.data.shape[0]


class ComplexField(Field):
    """Complex samples, treated as a real Hilbert space with ``Re <a, b>``."""

    def __init__(self, data, h: float = 1.0):
        super().__init__(np.asarray(data, dtype=complex), h)


class ComplexField2D(ComplexField):
    def __init__(self, data, h: float = 1.0):
        super().__init__(data, h)
        if self.data.ndim != 2:
            raise ValueError(f"expected a 2D grid, got shape {self.data.shape}")


class VectorField(Field):
    """``m`` real components per grid point, component axis first.

    ``weights[c]`` is the multiplicity of component ``c`` in the inner
    product; it is 2 for off-diagonal entries of symmetric tensors.
    """

    def __init__(self, data, h: float = 1.0, weights=None):
        super().__init__(np.asarray(data, dtype=float), h)
        if self.data.ndim < 2:
            raise ValueError("vector field needs a component axis and a grid")
        m = self.data.shape[0]
        w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (m,):
            raise ValueError(f"{m} components but {w.size} weights")
        self.weights = w
        self._wshape = w.reshape((m,) + (1,) * (self.data.ndim - 1))

    def _new(self, data):
        return type(self)(data, h=self.h, weights=self.weights)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def grid(self) -> tuple[int, ...]:
        return self.data.shape[1:]

    def _check(self, other):
        super()._check(other)
        if not np.array_equal(self.weights, other.weights):
            raise ValueError("component weights differ")

    def inner(self, other) -> float:
        self._check(other)
        return float(np.sum(self._wshape * self.data * other.data))

    def pointwise_norm(self) -> np.ndarray:
        """Euclidean (weighted) norm of the component vector at every point."""
        return np.sqrt(np.sum(self._wshape * self.data**2, axis=0))


class VectorField2D(VectorField):
    def __init__(self, data, h: float = 1.0, weights=None):
        super().__init__(data, h, weights)
        if self.data.ndim != 3:
            raise ValueError(f"expected (m, ny, nx), got shape {self.data.shape}")

    @classmethod
    def symmetric(cls, data, h: float = 1.0) -> "VectorField2D":
        """Symmetric 2x2 tensor field stored as ``(xx, yy, xy)``."""
        return cls(data, h, weights=sym_weights(2))


class SymTensorField3D(VectorField):
    """Symmetric 3x3 tensors per voxel, stored as ``(xx, yy, zz, xy, xz, yz)``."""

    def __init__(self, data, h: float = 1.0, weights=None):
        super().__init__(data, h, sym_weights(3) if weights is None else weights)
        if self.data.shape[0] != 6 or self.data.ndim != 4:
            raise ValueError(f"expected (6, nz, ny, nx), got shape {self.data.shape}")
        if not np.array_equal(self.weights, sym_weights(3)):
            raise ValueError("symmetric tensor weights are fixed")

    def to_matrix(self) -> np.ndarray:
        """Full matrices, shape ``(*grid, 3, 3)``."""
        out = np.empty(self.grid + (3, 3))
        for c, (a, b) in enumerate(sym_pairs(3)):
            out[..., a, b] = self.data[c]
            out[..., b, a] = self.data[c]
        return out

    @classmethod
    def from_matrix(cls, mats, h: float = 1.0) -> "SymTensorField3D":
        mats = np.asarray(mats, dtype=float)
        sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
        data = np.stack([sym[..., a, b] for a, b in sym_pairs(3)])
        return cls(data, h)


class StackedVector(Mapping):
    """Ordered named blocks forming a primal or dual variable."""

    def __init__(self, blocks: Iterable[tuple[str, Field]] | Mapping[str, Field]):
        items = list(blocks.items() if isinstance(blocks, Mapping) else blocks)
        names = [k for k, _ in items]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate block names in {names}")
        self._blocks: dict[str, Field] = dict(items)

    def __getitem__(self, name: str) -> Field:
        return self._blocks[name]

    def __iter__(self):
        return iter(self._blocks)

    def __len__(self):
        return len(self._blocks)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._blocks)

    def _check(self, other: "StackedVector"):
        if not isinstance(other, StackedVector) or other.names != self.names:
            raise ValueError(
                f"block structure mismatch: {self.names} vs "
                f"{getattr(other, 'names', type(other).__name__)}"
            )

    def _map(self, fn) -> "StackedVector":
        return StackedVector((k, fn(v)) for k, v in self._blocks.items())

    def _zip(self, other, fn) -> "StackedVector":
        self._check(other)
        return StackedVector((k, fn(v, other[k])) for k, v in self._blocks.items())

    def inner(self, other: "StackedVector") -> float:
        self._check(other)
        return float(sum(v.inner(other[k]) for k, v in self._blocks.items()))

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def grid_norm(self) -> float:
        return float(np.sqrt(sum(v.grid_norm() ** 2 for v in self._blocks.values())))

    def copy(self) -> "StackedVector":
        return self._map(lambda v: v.copy())

    def zeros_like(self) -> "StackedVector":
        return self._map(lambda v: v.zeros_like())

    def replace(self, **blocks: Field) -> "StackedVector":
        unknown = set(blocks) - set(self._blocks)
        if unknown:
            raise KeyError(f"unknown blocks {sorted(unknown)}")
        return StackedVector((k, blocks.get(k, v)) for k, v in self._blocks.items())

    def is_finite(self) -> bool:
        return all(v.is_finite() for v in self._blocks.values())

    def __add__(self, other):
        return self._zip(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._zip(other, lambda a, b: a - b)

    def __mul__(self, scalar):
        return self._map(lambda a: a * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self._map(lambda a: a / scalar)

    def __neg__(self):
        return self._map(lambda a: -a)

    def __repr__(self):
        body = ", ".join(f"{k}={v!r}" for k, v in self._blocks.items())
        return f"StackedVector({body})"


def inner(u: StackedVector, v: StackedVector) -> float:
    return u.inner(v)


@dataclass(frozen=True)
class LocalMetric:
    """Step lengths and frozen Jacobian defining the local norm at a base point.

    ``k_lin`` is any object with ``apply(x) -> y`` mapping the primal space
    into the dual space.
    """

    tau: float
    sigma: float
    k_lin: Any
    omega: float = 1.0

    def __post_init__(self):
        if not (self.tau > 0 and self.sigma > 0):
            raise ValueError("tau and sigma must be positive")


def weighted_norm_sq(u: tuple[StackedVector, StackedVector], metric: LocalMetric) -> float:
    """Quadratic form of the local preconditioner at ``u = (x, y)``.

    Equals ``|x|^2/tau - (1 + omega) <K x, y> + |y|^2/sigma``.
    """
    x, y = u
    kx = metric.k_lin.apply(x)
    y._check(kx)
    return (
        x.inner(x) / metric.tau
        - (1.0 + metric.omega) * kx.inner(y)
        + y.inner(y) / metric.sigma
    )


def random_like(v, rng: np.random.Generator):
    """Standard normal sample with the structure of ``v`` (field or stack)."""
    if isinstance(v, StackedVector):
        return v._map(lambda b: random_like(b, rng))
    data = rng.standard_normal(v.data.shape)
    if np.iscomplexobj(v.data):
        data = data + 1j * rng.standard_normal(v.data.shape)
    return v._new(data)
