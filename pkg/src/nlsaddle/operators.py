"""Linear and non-linear operators with hand-derived Jacobians and adjoints.

Every operator acts on :mod:`nlsaddle.core` fields or stacked vectors.
Complex ranges are real Hilbert spaces with inner product ``Re <a, b>``;
all adjoints below are adjoints in that sense.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    ComplexField,
    ComplexField2D,
    Field,
    ScalarField,
    ScalarField2D,
    StackedVector,
    SymTensorField3D,
    VectorField,
    VectorField2D,
    random_like,
    sym_pairs,
    sym_weights,
)

__all__ = [
    "ModelOverflowError",
    "LinearOp",
    "ScaledIdentity",
    "ScaledOp",
    "Gradient",
    "SymGradient",
    "SamplingMask",
    "FourierSampling",
    "BlockLinearOp",
    "NonlinearOp",
    "FrozenJacobian",
    "LinearWrapper",
    "PhaseMagnitudeOp",
    "StejskalTannerOp",
    "PartlyNonlinearOp",
    "grad2d",
    "grad2d_adjoint",
    "symgrad2d",
    "symgrad2d_adjoint",
    "fourier_sample",
    "fourier_sample_adjoint",
    "phase_magnitude_value",
    "phase_magnitude_jac",
    "phase_magnitude_jac_adjoint",
    "stejskal_tanner_value",
    "stejskal_tanner_jac",
    "stejskal_tanner_jac_adjoint",
    "linearisation_error",
    "op_norm_estimate",
    "PowerIteration",
    "check_linear_op",
    "check_nonlinear_op",
    "OperatorCheckError",
]


class ModelOverflowError(ArithmeticError):
    """A forward model produced non-finite values (usually unscaled data)."""


# ---------------------------------------------------------------------------
# Contracts


class LinearOp:
    """Bounded linear map between field or stacked-vector spaces.

    Subclasses implement :meth:`apply` and :meth:`adjoint_apply` and set
    ``domain``/``range`` to zero elements of the respective spaces.
    """

    domain = None
    range = None

    def apply(self, x):
        raise NotImplementedError

    def adjoint_apply(self, y):
        raise NotImplementedError

    def __call__(self, x):
        return self.apply(x)


class ScaledIdentity(LinearOp):
    def __init__(self, template, scale: float = 1.0):
        self.domain = template.zeros_like()
        self.range = self.domain
        self.scale = float(scale)

    def apply(self, x):
        return x * self.scale

    def adjoint_apply(self, y):
        return y * self.scale


class ScaledOp(LinearOp):
    """``s * A``."""

    def __init__(self, op: LinearOp, scale: float):
        self.op = op
        self.scale = float(scale)
        self.domain = op.domain
        self.range = op.range

    def apply(self, x):
        return self.op.apply(x) * self.scale

    def adjoint_apply(self, y):
        return self.op.adjoint_apply(y) * self.scale


class NonlinearOp:
    """Twice differentiable map with explicit Jacobian and Jacobian adjoint."""

    def value(self, x):
        raise NotImplementedError

    def jac_apply(self, x, dx):
        raise NotImplementedError

    def jac_adjoint_apply(self, x, y):
        raise NotImplementedError

    def frozen_jacobian(self, x) -> "FrozenJacobian":
        return FrozenJacobian(self, x)

    def __call__(self, x):
        return self.value(x)


class FrozenJacobian(LinearOp):
    """``dx -> J_K(xbar) dx`` as a linear operator."""

    def __init__(self, op: NonlinearOp, xbar):
        self.op = op
        self.xbar = xbar
        self.domain = xbar.zeros_like()
        self._range = None

    @property
    def range(self):
        if self._range is None:
            self._range = self.op.value(self.xbar).zeros_like()
        return self._range

    def apply(self, dx):
        return self.op.jac_apply(self.xbar, dx)

    def adjoint_apply(self, y):
        return self.op.jac_adjoint_apply(self.xbar, y)


class LinearWrapper(NonlinearOp):
    """A linear operator seen through the non-linear interface."""

    def __init__(self, lin: LinearOp):
        self.lin = lin

    def value(self, x):
        return self.lin.apply(x)

    def jac_apply(self, x, dx):
        return self.lin.apply(dx)

    def jac_adjoint_apply(self, x, y):
        return self.lin.adjoint_apply(y)


# ---------------------------------------------------------------------------
# Finite differences
#
# Spatial component d of a derivative acts along grid axis -(d + 1), so
# component 0 is x (last axis), 1 is y, 2 is z.


def _fwd(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Forward difference with Neumann boundary (zero in the last slice)."""
    out = np.zeros_like(a)
    n = a.shape[axis]
    hi = [slice(None)] * a.ndim
    lo = [slice(None)] * a.ndim
    hi[axis] = slice(1, n)
    lo[axis] = slice(0, n - 1)
    out[tuple(lo)] = (a[tuple(hi)] - a[tuple(lo)]) / h
    return out


def _bwd(p: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Backward difference equal to ``-(_fwd)^T``."""
    out = np.zeros_like(p)
    n = p.shape[axis]

    def sl(s):
        idx = [slice(None)] * p.ndim
        idx[axis] = s
        return tuple(idx)

    out[sl(slice(0, n - 1))] = p[sl(slice(0, n - 1))]
    out[sl(slice(1, n))] -= p[sl(slice(0, n - 1))]
    return out / h


def _grid_ndim(f: Field) -> int:
    return len(f.grid)


class Gradient(LinearOp):
    """Forward-difference gradient, applied to every component of a field.

    For an input with ``C`` components on a ``D``-dimensional grid the
    output has ``C * D`` components ordered component-major, each carrying
    the weight of its source component.
    """

    def __init__(self, template: Field):
        self.domain = template.zeros_like()
        self.D = _grid_ndim(template)
        if min(template.grid) < 2:
            raise ValueError(f"grid {template.grid} too small for differences")
        self.h = template.h
        if isinstance(template, VectorField):
            w = np.repeat(template.weights, self.D)
            lead = template.data.shape[0]
        else:
            w = np.ones(self.D)
            lead = 1
        self._w = w
        self._lead = lead
        self._vector_in = isinstance(template, VectorField)
        out_cls = VectorField2D if self.D == 2 else VectorField
        self._out_cls = out_cls
        self.range = out_cls(np.zeros((lead * self.D,) + template.grid), self.h, w)

    def _comps(self, f: Field) -> np.ndarray:
        return f.data if self._vector_in else f.data[None]

    def apply(self, x: Field) -> VectorField:
        self.domain._check(x)
        a = self._comps(x)
        out = np.empty((self._lead * self.D,) + a.shape[1:])
        for c in range(self._lead):
            for d in range(self.D):
                out[c * self.D + d] = _fwd(a[c], -(d + 1), self.h)
        return self._out_cls(out, self.h, self._w)

    def adjoint_apply(self, p: VectorField) -> Field:
        self.range._check(p)
        out = np.zeros((self._lead,) + p.grid)
        for c in range(self._lead):
            for d in range(self.D):
                out[c] -= _bwd(p.data[c * self.D + d], -(d + 1), self.h)
        return self.domain._new(out if self._vector_in else out[0])


class SymGradient(LinearOp):
    """Symmetrised backward-difference gradient of a first-order field.

    The input carries ``C * D`` components (``C`` groups of ``D`` spatial
    components, as produced by :class:`Gradient`); the output has
    ``C * S`` components with ``S = D (D + 1) / 2`` unique symmetric
    entries per group.
    """

    def __init__(self, template: VectorField):
        self.domain = template.zeros_like()
        self.D = _grid_ndim(template)
        if template.m % self.D:
            raise ValueError(f"{template.m} components not divisible by {self.D}")
        self.C = template.m // self.D
        self.h = template.h
        self.pairs = sym_pairs(self.D)
        self.S = len(self.pairs)
        cw = template.weights[:: self.D]
        if not np.array_equal(np.repeat(cw, self.D), template.weights):
            raise ValueError("spatial components of a group must share a weight")
        w = np.concatenate([wc * sym_weights(self.D) for wc in cw])
        self._w = w
        out_cls = VectorField2D if self.D == 2 else VectorField
        self._out_cls = out_cls
        self.range = out_cls(np.zeros((self.C * self.S,) + template.grid), self.h, w)

    def apply(self, w: VectorField) -> VectorField:
        self.domain._check(w)
        D, h = self.D, self.h
        out = np.empty((self.C * self.S,) + w.grid)
        for c in range(self.C):
            g = w.data[c * D:(c + 1) * D]
            for s, (a, b) in enumerate(self.pairs):
                if a == b:
                    out[c * self.S + s] = _bwd(g[a], -(a + 1), h)
                else:
                    out[c * self.S + s] = 0.5 * (
                        _bwd(g[a], -(b + 1), h) + _bwd(g[b], -(a + 1), h)
                    )
        return self._out_cls(out, h, self._w)

    def adjoint_apply(self, q: VectorField) -> VectorField:
        self.range._check(q)
        D, h = self.D, self.h
        out = np.zeros((self.C * D,) + q.grid)
        for c in range(self.C):
            for s, (a, b) in enumerate(self.pairs):
                qs = q.data[c * self.S + s]
                if a == b:
                    out[c * D + a] -= _fwd(qs, -(a + 1), h)
                else:
                    # weight 2 times the 1/2 of the symmetrisation
                    out[c * D + a] -= _fwd(qs, -(b + 1), h)
                    out[c * D + b] -= _fwd(qs, -(a + 1), h)
        return self.domain._new(out)


def grad2d(x: ScalarField2D) -> VectorField2D:
    return Gradient(x).apply(x)


def grad2d_adjoint(p: VectorField2D, template: ScalarField2D | None = None) -> ScalarField2D:
    if template is None:
        template = ScalarField2D(np.zeros(p.grid), p.h)
    return Gradient(template).adjoint_apply(p)


def symgrad2d(w: VectorField2D) -> VectorField2D:
    return SymGradient(w).apply(w)


def symgrad2d_adjoint(q: VectorField2D) -> VectorField2D:
    template = VectorField2D(np.zeros((2,) + q.grid), q.h)
    return SymGradient(template).adjoint_apply(q)


# ---------------------------------------------------------------------------
# Fourier sampling


@dataclass(frozen=True)
class SamplingMask:
    """Boolean k-space selection, stored centred (DC at ``[ny // 2, nx // 2]``)."""

    data: np.ndarray
    _fft_index: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=bool)
        if d.ndim != 2:
            raise ValueError("mask must be 2D")
        object.__setattr__(self, "data", d)
        idx = np.flatnonzero(np.fft.ifftshift(d))
        object.__setattr__(self, "_fft_index", idx)

    @classmethod
    def full(cls, ny: int, nx: int) -> "SamplingMask":
        return cls(np.ones((ny, nx), dtype=bool))

    @property
    def ny(self) -> int:
        return self.data.shape[0]

    @property
    def nx(self) -> int:
        return self.data.shape[1]

    @property
    def count(self) -> int:
        return int(self._fft_index.size)

    @property
    def coverage(self) -> float:
        return self.count / self.data.size

    @property
    def fft_index(self) -> np.ndarray:
        """Flat indices of the selected coefficients in unshifted FFT order."""
        return self._fft_index

    def __eq__(self, other):
        return isinstance(other, SamplingMask) and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash(self.data.tobytes())


_FFT_NORMS = ("ortho", "backward")


class FourierSampling(LinearOp):
    """``u -> S F u``: 2D DFT followed by selection of masked coefficients.

    With ``norm="ortho"`` the DFT is unitary.  ``norm="backward"`` is the
    unscaled DFT, i.e. ``sqrt(nx * ny)`` times the unitary one.
    """

    def __init__(self, mask: SamplingMask, norm: str = "ortho"):
        if norm not in _FFT_NORMS:
            raise ValueError(f"norm must be one of {_FFT_NORMS}, got {norm!r}")
        self.mask = mask
        self.norm = norm
        self.scale = 1.0 if norm == "ortho" else float(np.sqrt(mask.data.size))
        self.domain = ComplexField2D(np.zeros(mask.data.shape))
        self.range = ComplexField(np.zeros(mask.count))

    def forward_array(self, u: np.ndarray) -> np.ndarray:
        if u.shape != self.mask.data.shape:
            raise ValueError(f"image shape {u.shape} does not match mask {self.mask.data.shape}")
        k = np.fft.fft2(u, norm="ortho").ravel()[self.mask.fft_index]
        return k * self.scale if self.scale != 1.0 else k

    def adjoint_array(self, z: np.ndarray) -> np.ndarray:
        if z.shape != (self.mask.count,):
            raise ValueError(f"expected {self.mask.count} samples, got shape {z.shape}")
        full = np.zeros(self.mask.data.size, dtype=complex)
        full[self.mask.fft_index] = z
        u = np.fft.ifft2(full.reshape(self.mask.data.shape), norm="ortho")
        return u * self.scale if self.scale != 1.0 else u

    def apply(self, u: ComplexField2D) -> ComplexField:
        return ComplexField(self.forward_array(u.data))

    def adjoint_apply(self, z: ComplexField) -> ComplexField2D:
        return ComplexField2D(self.adjoint_array(z.data), h=self.domain.h)

    def zero_filled_inverse(self, z: ComplexField) -> ComplexField2D:
        """Inverse DFT of the zero-filled samples; equals the adjoint for ``"ortho"``."""
        return ComplexField2D(self.adjoint_array(z.data) / self.scale**2, h=self.domain.h)


def fourier_sample(u: ComplexField2D, mask: SamplingMask, norm: str = "ortho") -> ComplexField:
    return FourierSampling(mask, norm).apply(u)


def fourier_sample_adjoint(z: ComplexField, mask: SamplingMask, norm: str = "ortho") -> ComplexField2D:
    return FourierSampling(mask, norm).adjoint_apply(z)


# ---------------------------------------------------------------------------
# Phase/magnitude forward model


class PhaseMagnitudeOp(NonlinearOp):
    """``(r, phi) -> S F (r exp(i phi))`` on a stack with blocks ``r`` and ``phi``."""

    def __init__(self, mask: SamplingMask, norm: str = "ortho", names=("r", "phi")):
        self.A = FourierSampling(mask, norm)
        self.names = tuple(names)

    def _parts(self, x: StackedVector):
        r, phi = (x[k] for k in self.names)
        if r.data.shape != self.A.mask.data.shape or phi.data.shape != r.data.shape:
            raise ValueError("r, phi and mask shapes differ")
        return r, phi

    def value(self, x: StackedVector) -> ComplexField:
        r, phi = self._parts(x)
        return ComplexField(self.A.forward_array(r.data * np.exp(1j * phi.data)))

    def jac_apply(self, x: StackedVector, dx: StackedVector) -> ComplexField:
        r, phi = self._parts(x)
        dr, dphi = self._parts(dx)
        u = (dr.data + 1j * r.data * dphi.data) * np.exp(1j * phi.data)
        return ComplexField(self.A.forward_array(u))

    def jac_adjoint_apply(self, x: StackedVector, z: ComplexField) -> StackedVector:
        r, phi = self._parts(x)
        q = np.exp(-1j * phi.data) * self.A.adjoint_array(z.data)
        return StackedVector(
            [(self.names[0], r._new(q.real)), (self.names[1], phi._new(r.data * q.imag))]
        )


def _rp(r: ScalarField2D, phi: ScalarField2D) -> StackedVector:
    return StackedVector([("r", r), ("phi", phi)])


def phase_magnitude_value(r, phi, mask, norm: str = "ortho") -> ComplexField:
    return PhaseMagnitudeOp(mask, norm).value(_rp(r, phi))


def phase_magnitude_jac(r, phi, dr, dphi, mask, norm: str = "ortho") -> ComplexField:
    return PhaseMagnitudeOp(mask, norm).jac_apply(_rp(r, phi), _rp(dr, dphi))


def phase_magnitude_jac_adjoint(r, phi, z, mask, norm: str = "ortho"):
    """Returns the pair ``(dr, dphi)``."""
    out = PhaseMagnitudeOp(mask, norm).jac_adjoint_apply(_rp(r, phi), z)
    return out["r"], out["phi"]


# ---------------------------------------------------------------------------
# Stejskal-Tanner model


class StejskalTannerOp(NonlinearOp):
    """``v -> (s0 exp(<b_j, v b_j>))_j`` for a field of symmetric 3x3 tensors.

    The output is a :class:`VectorField` with one component per gradient.
    Works either on a bare :class:`SymTensorField3D` or, when ``name`` is
    given, on that block of a stacked vector.
    """

    def __init__(self, s0, bvecs, name: str | None = None):
        self.s0 = np.asarray(s0.data if isinstance(s0, Field) else s0, dtype=float)
        b = np.atleast_2d(np.asarray(bvecs, dtype=float))
        if b.shape[1] != 3:
            raise ValueError(f"gradient vectors must be 3D, got shape {b.shape}")
        if np.any(self.s0 < 0):
            raise ValueError("s0 must be nonnegative")
        self.bvecs = b
        # <b, v b> = sum_c coef[j, c] * v_c with off-diagonals counted twice
        self.coef = np.stack(
            [b[:, a] * b[:, c] * (1.0 if a == c else 2.0) for a, c in sym_pairs(3)], axis=1
        )
        # b b^T in storage layout, used by the adjoint
        self.outer = np.stack([b[:, a] * b[:, c] for a, c in sym_pairs(3)], axis=1)
        self.name = name

    @property
    def N(self) -> int:
        return self.bvecs.shape[0]

    def _v(self, x) -> SymTensorField3D:
        v = x[self.name] if self.name is not None else x
        if v.grid != self.s0.shape:
            raise ValueError(f"tensor grid {v.grid} does not match s0 {self.s0.shape}")
        return v

    def _signals(self, v: SymTensorField3D) -> np.ndarray:
        expo = np.tensordot(self.coef, v.data, axes=(1, 0))
        with np.errstate(over="ignore", invalid="ignore"):
            s = self.s0[None] * np.exp(expo)
        if not np.all(np.isfinite(s)):
            raise ModelOverflowError(
                f"exponent overflow (max exponent {np.nanmax(expo):.3g}); is the data scaled?"
            )
        return s

    def _out(self, data, v) -> VectorField:
        return VectorField(data, v.h)

    def value(self, x) -> VectorField:
        v = self._v(x)
        return self._out(self._signals(v), v)

    def jac_apply(self, x, dx) -> VectorField:
        v = self._v(x)
        dv = self._v(dx)
        s = self._signals(v)
        return self._out(s * np.tensordot(self.coef, dv.data, axes=(1, 0)), v)

    def jac_adjoint_apply(self, x, y: VectorField):
        v = self._v(x)
        s = self._signals(v)
        t = SymTensorField3D(np.tensordot(self.outer.T, s * y.data, axes=(1, 0)), v.h)
        if self.name is None:
            return t
        return StackedVector([(self.name, t)])


def stejskal_tanner_value(v: SymTensorField3D, s0, b) -> VectorField:
    return StejskalTannerOp(s0, b).value(v)


def stejskal_tanner_jac(v: SymTensorField3D, s0, b, dv: SymTensorField3D) -> VectorField:
    return StejskalTannerOp(s0, b).jac_apply(v, dv)


def stejskal_tanner_jac_adjoint(v: SymTensorField3D, s0, b, y: VectorField) -> SymTensorField3D:
    return StejskalTannerOp(s0, b).jac_adjoint_apply(v, y)


# ---------------------------------------------------------------------------
# Block operators


class BlockLinearOp(LinearOp):
    """Sparse block matrix of linear operators between stacked vectors.

    ``entries`` maps ``(out_name, in_name)`` to a :class:`LinearOp` or a
    scalar (meaning a multiple of the identity).
    """

    def __init__(self, domain: StackedVector, out_names, entries: dict):
        self.domain = domain.zeros_like()
        self.out_names = tuple(out_names)
        self.entries = dict(entries)
        for (o, i) in self.entries:
            if o not in self.out_names or i not in self.domain.names:
                raise KeyError(f"bad block entry {(o, i)}")
        self.range = self.apply(self.domain)

    def _term(self, op, v, adjoint=False):
        if isinstance(op, LinearOp):
            return op.adjoint_apply(v) if adjoint else op.apply(v)
        return v * op

    def apply(self, x: StackedVector) -> StackedVector:
        out = {}
        for (o, i), op in self.entries.items():
            t = self._term(op, x[i])
            out[o] = t if o not in out else out[o] + t
        return StackedVector((o, out[o]) for o in self.out_names)

    def adjoint_apply(self, y: StackedVector) -> StackedVector:
        out = {}
        for (o, i), op in self.entries.items():
            t = self._term(op, y[o], adjoint=True)
            out[i] = t if i not in out else out[i] + t
        return StackedVector(
            (k, out[k] if k in out else self.domain[k].zeros_like()) for k in self.domain.names
        )


class PartlyNonlinearOp(NonlinearOp):
    """``x -> (T(x_sub), A x)``: one non-linear output block plus a linear part.

    ``nonlinear`` acts on the sub-stack of blocks ``inputs`` and produces the
    dual block ``output``; ``linear`` is a :class:`BlockLinearOp` for the
    remaining dual blocks.
    """

    def __init__(self, nonlinear: NonlinearOp, inputs, output: str, linear: BlockLinearOp):
        self.T = nonlinear
        self.inputs = tuple(inputs)
        self.output = output
        self.linear = linear
        self.names = (output,) + linear.out_names

    def _sub(self, x: StackedVector) -> StackedVector:
        return StackedVector((k, x[k]) for k in self.inputs)

    def _stack(self, t, lin: StackedVector) -> StackedVector:
        return StackedVector([(self.output, t)] + list(lin.items()))

    def value(self, x):
        return self._stack(self.T.value(self._sub(x)), self.linear.apply(x))

    def jac_apply(self, x, dx):
        return self._stack(self.T.jac_apply(self._sub(x), self._sub(dx)), self.linear.apply(dx))

    def jac_adjoint_apply(self, x, y):
        lin_y = StackedVector((k, y[k]) for k in self.linear.out_names)
        out = self.linear.adjoint_apply(lin_y)
        t = self.T.jac_adjoint_apply(self._sub(x), y[self.output])
        return out.replace(**{k: out[k] + t[k] for k in self.inputs})


# ---------------------------------------------------------------------------
# Linearisation error and norm estimation


def linearisation_error(K: NonlinearOp, xbar, x, omega: float = 1.0):
    """``K(xbar) + J_K(xbar)(x_w - xbar) - K(x_w)`` with ``x_w = x + omega (x - xbar)``."""
    xw = x + (x - xbar) * omega
    return K.value(xbar) + K.jac_apply(xbar, xw - xbar) - K.value(xw)


class PowerIteration:
    """Power iteration on ``A^* A`` keeping its vector between calls.

    The returned estimate is the running maximum of the square-rooted
    Rayleigh quotients, so it never decreases.
    """

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.vector = None
        self.estimate = 0.0

    def run(self, A: LinearOp, iters: int = 50, tol: float = 1e-4) -> float:
        v = self.vector
        if v is None:
            v = random_like(A.domain, self.rng)
        nv = v.norm()
        if nv == 0:
            v = random_like(A.domain, self.rng)
            nv = v.norm()
        v = v / nv
        est = 0.0
        for _ in range(iters):
            av = A.apply(v)
            w = A.adjoint_apply(av)
            rq = av.inner(av)  # <v, A^*A v> with |v| = 1
            nw = w.norm()
            prev, est = est, max(est, float(np.sqrt(max(rq, 0.0))))
            if nw == 0.0:
                self.vector = None
                return 0.0 if est == 0.0 else est
            v = w / nw
            if prev > 0 and abs(est - prev) <= tol * est:
                break
        self.vector = v
        self.estimate = est
        return est


def op_norm_estimate(A: LinearOp, warm_start=None, iters: int = 50, tol: float = 1e-4,
                     seed: int = 0) -> float:
    """Estimate ``|A|`` by power iteration on ``A^* A``.

    Parameters
    ----------
    A : LinearOp
    warm_start : element of ``A.domain``, optional
        Starting vector; a seeded random vector is used otherwise.
    iters, tol : int, float
        Iteration cap and relative-change stopping threshold.
    """
    it = PowerIteration(seed)
    it.vector = warm_start
    return it.run(A, iters, tol)


# ---------------------------------------------------------------------------
# Self-checks


class OperatorCheckError(AssertionError):
    pass


def check_linear_op(A: LinearOp, pairs: int = 20, seed: int = 0, tol: float = 1e-10) -> float:
    """Largest relative adjoint-identity error over random pairs.

    Raises :class:`OperatorCheckError` when it exceeds ``tol``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        x = random_like(A.domain, rng)
        y = random_like(A.range, rng)
        Ax = A.apply(x)
        lhs = Ax.inner(y)
        rhs = x.inner(A.adjoint_apply(y))
        scale = max(Ax.norm() * y.norm(), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    if worst > tol:
        raise OperatorCheckError(f"adjoint identity violated: relative error {worst:.3e}")
    return worst


def check_nonlinear_op(K: NonlinearOp, x, seed: int = 0, pairs: int = 3,
                       fd_step: float = 1e-6, fd_tol: float = 1e-5,
                       adj_tol: float = 1e-10) -> dict:
    """Jacobian linearity, central finite differences and adjointness at ``x``.

    Returns the worst relative errors; raises :class:`OperatorCheckError`
    if any exceeds its tolerance.
    """
    rng = np.random.default_rng(seed)
    J = K.frozen_jacobian(x)
    scale = max(x.norm(), 1.0)
    out = {"linearity": 0.0, "finite_difference": 0.0, "adjoint": 0.0}
    for _ in range(pairs):
        d1 = random_like(x, rng)
        d2 = random_like(x, rng)
        a, b = rng.standard_normal(2)
        j1, j2 = J.apply(d1), J.apply(d2)
        comb = J.apply(d1 * a + d2 * b)
        ref = j1 * a + j2 * b
        out["linearity"] = max(out["linearity"], (comb - ref).norm() / max(ref.norm(), 1e-300))

        d = d1 * (1.0 / d1.norm())
        t = fd_step * scale
        fd = (K.value(x + d * t) - K.value(x - d * t)) * (0.5 / t)
        jd = J.apply(d)
        out["finite_difference"] = max(
            out["finite_difference"], (fd - jd).norm() / max(jd.norm(), 1e-300)
        )
    out["adjoint"] = check_linear_op(J, pairs=pairs, seed=seed, tol=np.inf)
    bad = {
        k: v for k, v in out.items()
        if v > {"linearity": adj_tol, "finite_difference": fd_tol, "adjoint": adj_tol}[k]
    }
    if bad:
        raise OperatorCheckError(f"operator check failed: {bad}")
    return out
