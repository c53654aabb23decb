"""Resolvents of the convex functionals used in the saddle problems.

Each functional object offers

* ``resolve(z, step)`` -- the proximal map ``argmin |x - z|^2 / (2 step) + f(x)``,
* ``eval(x)`` -- the value of ``f`` itself (``inf`` off its domain),
* ``conj_eval(w)`` -- the value of its convex conjugate, in closed form.

For the dual-side functionals ``f`` is the conjugate ``F*`` of the data or
regularisation term, so ``conj_eval`` gives back that term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Field, StackedVector, VectorField

__all__ = [
    "HuberBallSpec",
    "ZeroFunctional",
    "BallIndicator",
    "HuberBall",
    "QuadraticFidelity",
    "BlockResolvent",
    "huber_norm",
    "resolve_identity_G",
    "resolve_ball_G",
    "resolve_huber_ball",
    "resolve_quadratic_fidelity",
    "block_resolvent",
]

# relative slack when testing feasibility of iterates produced by projection
FEAS_RTOL = 1e-9


class ZeroFunctional:
    """``f = 0``; its conjugate is the indicator of the origin."""

    def resolve(self, z, step):
        return z

    def eval(self, x) -> float:
        return 0.0

    def feasible(self, x) -> bool:
        return True

    def conj_eval(self, w) -> float:
        return 0.0 if w.norm() == 0.0 else math.inf


class BallIndicator:
    """Indicator of the centred ball of radius ``M`` in the whole space."""

    def __init__(self, M: float):
        if not M > 0:
            raise ValueError(f"radius must be positive, got {M}")
        self.M = float(M)

    def resolve(self, z, step=None):
        nz = z.norm()
        return z if nz <= self.M else z * (self.M / nz)

    def feasible(self, x) -> bool:
        return x.norm() <= self.M * (1 + FEAS_RTOL)

    def eval(self, x) -> float:
        return 0.0 if self.feasible(x) else math.inf

    def conj_eval(self, w) -> float:
        """Support function ``M |w|``."""
        return self.M * w.norm()


@dataclass(frozen=True)
class HuberBallSpec:
    alpha: float
    gamma: float = 0.0
    m: int | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")


def huber_norm(norms: np.ndarray, gamma: float) -> np.ndarray:
    """``|g|_gamma`` evaluated on precomputed pointwise norms."""
    norms = np.asarray(norms, dtype=float)
    if gamma == 0:
        return norms
    return np.where(norms >= gamma, norms - gamma / 2, norms**2 / (2 * gamma))


class HuberBall:
    """``sum_j delta_{B(0, alpha)}(phi_j) + gamma / (2 alpha) |phi_j|^2``.

    Acts pointwise on a :class:`~nlsaddle.core.VectorField`, the ball
    being taken in the field's (weighted) component norm.  Its conjugate
    is ``alpha`` times the Huberised norm sum.
    """

    def __init__(self, spec: HuberBallSpec):
        self.spec = spec

    def _check(self, z: VectorField):
        if not isinstance(z, VectorField):
            raise TypeError(f"expected a VectorField, got {type(z).__name__}")
        if self.spec.m is not None and z.m != self.spec.m:
            raise ValueError(f"expected {self.spec.m} components, got {z.m}")

    def resolve(self, z: VectorField, step: float) -> VectorField:
        self._check(z)
        a, g = self.spec.alpha, self.spec.gamma
        shrunk = z.data / (1.0 + step * g / a) if g > 0 else z.data
        nrm = np.sqrt(np.sum(z._wshape * shrunk**2, axis=0))
        return z._new(shrunk / np.maximum(nrm / a, 1.0))

    def feasible(self, x: VectorField) -> bool:
        self._check(x)
        return bool(np.all(x.pointwise_norm() <= self.spec.alpha * (1 + FEAS_RTOL)))

    def eval(self, x: VectorField) -> float:
        if not self.feasible(x):
            return math.inf
        return self.spec.gamma / (2 * self.spec.alpha) * x.inner(x)

    def conj_eval(self, w: VectorField) -> float:
        self._check(w)
        return self.spec.alpha * float(np.sum(huber_norm(w.pointwise_norm(), self.spec.gamma)))


class QuadraticFidelity:
    """``lam -> |lam|^2 / 2 + <f, lam>``, conjugate of ``w -> |w - f|^2 / 2``."""

    def __init__(self, f: Field):
        self.f = f

    def resolve(self, z: Field, step: float) -> Field:
        return (z - self.f * step) / (1.0 + step)

    def feasible(self, x) -> bool:
        return True

    def eval(self, lam: Field) -> float:
        return 0.5 * lam.inner(lam) + self.f.inner(lam)

    def conj_eval(self, w: Field) -> float:
        d = w - self.f
        return 0.5 * d.inner(d)


class BlockResolvent:
    """Separable sum of functionals over the named blocks of a stack."""

    def __init__(self, blocks):
        items = list(blocks.items() if isinstance(blocks, dict) else blocks)
        self.blocks = dict(items)
        if len(self.blocks) != len(items):
            raise ValueError("duplicate block names")

    def _check(self, z: StackedVector):
        if set(z.names) != set(self.blocks):
            missing = set(self.blocks) - set(z.names)
            extra = set(z.names) - set(self.blocks)
            raise ValueError(f"block mismatch: missing {sorted(missing)}, extra {sorted(extra)}")

    def resolve(self, z: StackedVector, step: float) -> StackedVector:
        self._check(z)
        return StackedVector((k, self.blocks[k].resolve(z[k], step)) for k in z.names)

    def feasible(self, x: StackedVector) -> bool:
        self._check(x)
        return all(self.blocks[k].feasible(x[k]) for k in x.names)

    def eval(self, x: StackedVector) -> float:
        self._check(x)
        return float(sum(self.blocks[k].eval(x[k]) for k in x.names))

    def conj_eval(self, w: StackedVector) -> float:
        self._check(w)
        return float(sum(self.blocks[k].conj_eval(w[k]) for k in w.names))


def resolve_identity_G(z, tau=None):
    return z


def resolve_ball_G(z, tau, M: float):
    return BallIndicator(M).resolve(z, tau)


def resolve_huber_ball(z: VectorField, sigma: float, spec: HuberBallSpec) -> VectorField:
    return HuberBall(spec).resolve(z, sigma)


def resolve_quadratic_fidelity(z: Field, sigma: float, f: Field) -> Field:
    return QuadraticFidelity(f).resolve(z, sigma)


def block_resolvent(blocks) -> BlockResolvent:
    return BlockResolvent(blocks)
