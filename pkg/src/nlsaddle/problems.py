"""Concrete problem instances: velocity MRI, TV denoising and DTI denoising."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ComplexField,
    ComplexField2D,
    ScalarField,
    ScalarField2D,
    StackedVector,
    SymTensorField3D,
    VectorField,
    VectorField2D,
    sym_pairs,
)
from .operators import (
    BlockLinearOp,
    FourierSampling,
    Gradient,
    LinearWrapper,
    PartlyNonlinearOp,
    PhaseMagnitudeOp,
    SamplingMask,
    ScaledIdentity,
    ScaledOp,
    StejskalTannerOp,
    SymGradient,
    check_nonlinear_op,
)
from .prox import BlockResolvent, HuberBall, HuberBallSpec, QuadraticFidelity
from .solver import SaddleProblem

__all__ = [
    "ExperimentSpec",
    "DtiSpec",
    "velocity_phantom",
    "ring_mask",
    "gaussian_mask",
    "kspace_simulate",
    "backprojection",
    "velocity_init",
    "split_polar",
    "build_velocity_problem",
    "build_tv_denoising",
    "tv_linear_problem",
    "dti_gradients",
    "dti_phantom",
    "dti_simulate",
    "dti_log_fit",
    "build_dti_problem",
    "dti_init",
]

# k-space spread of the sampling pattern on the reference 256 grid
REFERENCE_N = 256
REFERENCE_MASK_SPREAD = 0.15 * 128


@dataclass
class ExperimentSpec:
    """Velocity experiment parameters.

    ``alpha_r``, ``alpha_phi`` and ``beta_phi`` are given for unit grid
    step.  With ``scale_by_h`` the grid step is ``h = 2 / n`` and the
    effective weights become ``alpha * h`` and ``beta * h**2``, which
    leaves the discrete problem unchanged.
    """

    n: int = 64
    noise_sigma: float = 0.2
    coverage: float = 0.15
    mask_variance: float = REFERENCE_MASK_SPREAD
    alpha_r: float = 1.0
    alpha_phi: float = 0.15
    beta_phi: float = 0.20
    gamma: float = 0.0
    seed: int = 0
    scale_by_h: bool = True
    force_dc: bool = True
    fft_norm: str = "backward"

    def __post_init__(self):
        if not 0 < self.coverage <= 1:
            raise ValueError(f"coverage must lie in (0, 1], got {self.coverage}")
        if min(self.alpha_r, self.alpha_phi, self.beta_phi) <= 0:
            raise ValueError("regularisation weights must be positive")
        if self.n < 8:
            raise ValueError("n must be at least 8")

    @property
    def h(self) -> float:
        return 2.0 / self.n if self.scale_by_h else 1.0

    def weights(self) -> tuple[float, float, float]:
        """Effective ``(alpha_r, alpha_phi, beta_phi)`` for the grid step ``h``."""
        h = self.h
        return self.alpha_r * h, self.alpha_phi * h, self.beta_phi * h**2


def _centres(n: int) -> np.ndarray:
    return -1.0 + (np.arange(n) + 0.5) * (2.0 / n)


def _polar(n: int):
    c = _centres(n)
    X, Y = np.meshgrid(c, c)  # X varies along columns
    return X, Y, np.hypot(X, Y)


def velocity_phantom(n: int, h: float | None = None):
    """Magnitude ring and phase ``x / |(x, y)|`` on ``[-1, 1]^2``.

    Returns ``(r, phi)``; ``phi`` is 0 at the origin.  ``h`` defaults to ``2 / n``.
    """
    if n < 8:
        raise ValueError("n must be at least 8")
    X, _, rho = _polar(n)
    r = ((rho > 0.3) & (rho < 0.9)).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(rho > 0, X / rho, 0.0)
    h = 2.0 / n if h is None else h
    return ScalarField2D(r, h), ScalarField2D(phi, h)


def ring_mask(n: int, inner: float = 0.3, outer: float = 0.9) -> np.ndarray:
    _, _, rho = _polar(n)
    return (rho > inner) & (rho < outer)


def gaussian_mask(n: int, coverage: float = 0.15, variance: float = REFERENCE_MASK_SPREAD,
                  seed: int = 0, force_dc: bool = True, max_draws: int | None = None,
                  ) -> SamplingMask:
    """Random k-space pattern concentrated around DC.

    Coefficients are drawn from an isotropic normal distribution centred
    at DC with spread ``variance * n / 256`` (in coefficient units), rounded
    to the nearest coefficient; repeats are redrawn until
    ``ceil(coverage * n^2)`` distinct coefficients are selected.
    """
    target = math.ceil(coverage * n * n - 1e-9)
    if target < 1:
        raise ValueError("coverage selects no coefficients")
    data = np.zeros((n, n), dtype=bool)
    if target >= n * n:
        return SamplingMask(np.ones((n, n), dtype=bool))
    rng = np.random.default_rng(seed)
    spread = variance * n / REFERENCE_N
    c = n // 2
    count = 0
    if force_dc:
        data[c, c] = True
        count = 1
    max_draws = 1000 * target if max_draws is None else max_draws
    draws = 0
    while count < target:
        if draws >= max_draws:
            raise RuntimeError(
                f"gaussian_mask: {count}/{target} coefficients after {draws} draws; "
                "spread too small for the requested coverage"
            )
        batch = max(256, 2 * (target - count))
        pts = np.rint(rng.normal(0.0, spread, size=(batch, 2))).astype(int) + c
        draws += batch
        ok = np.all((pts >= 0) & (pts < n), axis=1)
        for iy, ix in pts[ok]:
            if not data[iy, ix]:
                data[iy, ix] = True
                count += 1
                if count == target:
                    break
    return SamplingMask(data)


def kspace_simulate(r: ScalarField2D, phi: ScalarField2D, mask: SamplingMask,
                    noise_sigma: float, seed: int = 0, norm: str = "ortho") -> ComplexField:
    """Sampled k-space of ``r exp(i phi)`` plus complex Gaussian noise."""
    clean = PhaseMagnitudeOp(mask, norm).value(StackedVector([("r", r), ("phi", phi)]))
    if noise_sigma == 0:
        return clean
    rng = np.random.default_rng(seed)
    m = mask.count
    noise = noise_sigma * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    return ComplexField(clean.data + noise)


def backprojection(f: ComplexField, mask: SamplingMask, norm: str = "ortho",
                   h: float = 1.0) -> ComplexField2D:
    """Zero-filled reconstruction: inverse DFT of ``f`` with unsampled coefficients set to 0.

    For the unitary DFT this is the adjoint ``(S F)^* f``.
    """
    u = FourierSampling(mask, norm).zero_filled_inverse(f)
    return ComplexField2D(u.data, h)


def split_polar(u: np.ndarray, h: float):
    mag = np.abs(u)
    phase = np.where(mag < 1e-12, 0.0, np.angle(u))
    return ScalarField2D(mag, h), ScalarField2D(phase, h)


def build_velocity_problem(spec: ExperimentSpec, f: ComplexField, mask: SamplingMask,
                           self_check: bool = True) -> SaddleProblem:
    """Phase/magnitude reconstruction with TV on ``r`` and TGV^2 on ``phi``.

    Primal blocks ``(r, phi, w)``; dual blocks ``lambda`` (data),
    ``psi_r``, ``psi_phi`` and ``xi_phi`` with
    ``K(r, phi, w) = (T(r, phi), grad r, grad phi - w, (beta/alpha) E w)``.
    """
    n = spec.n
    if mask.data.shape != (n, n) or f.data.shape != (mask.count,):
        raise ValueError("data, mask and spec sizes are inconsistent")
    h = spec.h
    a_r, a_phi, b_phi = spec.weights()
    zero = ScalarField2D(np.zeros((n, n)), h)
    w0 = VectorField2D(np.zeros((2, n, n)), h)
    x0 = StackedVector([("r", zero), ("phi", zero.copy()), ("w", w0)])
    grad = Gradient(zero)
    sym = SymGradient(w0)
    lin = BlockLinearOp(
        x0,
        ("psi_r", "psi_phi", "xi_phi"),
        {
            ("psi_r", "r"): grad,
            ("psi_phi", "phi"): grad,
            ("psi_phi", "w"): -1.0,
            ("xi_phi", "w"): ScaledOp(sym, b_phi / a_phi),
        },
    )
    K = PartlyNonlinearOp(PhaseMagnitudeOp(mask, spec.fft_norm), ("r", "phi"), "lambda", lin)
    Fstar = BlockResolvent([
        ("lambda", QuadraticFidelity(f)),
        ("psi_r", HuberBall(HuberBallSpec(a_r, spec.gamma, 2))),
        ("psi_phi", HuberBall(HuberBallSpec(a_phi, spec.gamma, 2))),
        ("xi_phi", HuberBall(HuberBallSpec(a_phi, spec.gamma, 3))),
    ])
    meta = {"kind": "velocity", "spec": spec, "mask": mask, "weights": (a_r, a_phi, b_phi)}
    problem = SaddleProblem(K, Fstar, fidelity="lambda", meta=meta)
    if self_check:
        x_probe, _ = velocity_init(problem)
        check_nonlinear_op(K, x_probe)
    return problem


def velocity_init(problem: SaddleProblem):
    """Backprojection start: modulus and argument of ``(S F)^* f``; ``w`` and duals zero."""
    spec, mask = problem.meta["spec"], problem.meta["mask"]
    u = backprojection(problem.data, mask, spec.fft_norm, spec.h)
    r, phi = split_polar(u.data, spec.h)
    x = StackedVector([
        ("r", r), ("phi", phi), ("w", VectorField2D(np.zeros((2,) + r.grid), spec.h)),
    ])
    y = problem.K.value(x).zeros_like()
    return x, y


def build_tv_denoising(f: ScalarField2D, alpha: float, gamma: float = 0.0) -> SaddleProblem:
    """``min_v |f - v|^2 / 2 + alpha TV_gamma(v)`` as a linear saddle problem."""
    v0 = f.zeros_like()
    x0 = StackedVector([("v", v0)])
    grad = Gradient(v0)
    lin = BlockLinearOp(x0, ("lambda", "psi"), {("lambda", "v"): 1.0, ("psi", "v"): grad})
    Fstar = BlockResolvent([
        ("lambda", QuadraticFidelity(f)),
        ("psi", HuberBall(HuberBallSpec(alpha, gamma, v0.data.ndim))),
    ])
    return SaddleProblem(LinearWrapper(lin), Fstar, fidelity="lambda",
                         meta={"kind": "tv", "alpha": alpha, "gamma": gamma})


def tv_linear_problem(problem: SaddleProblem):
    """The same problem in the form expected by :func:`~nlsaddle.baseline.linear_pdhgm`."""
    from .baseline import LinearProblem

    if not isinstance(problem.K, LinearWrapper):
        raise TypeError("problem coupling is not linear")
    return LinearProblem(problem.K.lin, problem.Fstar, problem.G, None, problem.fidelity)


# ---------------------------------------------------------------------------
# Diffusion tensor imaging


@dataclass
class DtiSpec:
    nx: int = 32
    ny: int = 32
    nz: int = 4
    N: int = 12
    b: np.ndarray | None = None
    s0_level: float = 1.0
    noise_sigma: float = 0.092
    alpha: float = 0.05
    beta: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.b is None:
            self.b = dti_gradients(self.N)
        self.b = np.asarray(self.b, dtype=float)
        self.N = self.b.shape[0]
        if self.N < 6:
            raise ValueError("need at least 6 gradients to identify a tensor")
        if min(self.alpha, self.beta) <= 0:
            raise ValueError("regularisation weights must be positive")


def dti_gradients(N: int) -> np.ndarray:
    """``N`` unit directions spread over a hemisphere (Fibonacci lattice)."""
    k = np.arange(N) + 0.5
    z = 1.0 - k / N  # z in (0, 1)
    t = np.pi * (1 + 5**0.5) * k
    rad = np.sqrt(1 - z**2)
    return np.stack([rad * np.cos(t), rad * np.sin(t), z], axis=1)


def dti_phantom(nx: int = 32, ny: int = 32, nz: int = 4, seed: int = 0):
    """Smooth negative-definite tensor field and ``s0 = 1``.

    The principal direction rotates in the x-y plane with position and
    tilts out of plane across slices; eigenvalues lie in ``[-3, -0.2]``
    so that ``exp(<b, v b>)`` stays in ``[e^-3, 1]`` for unit ``b``.
    ``seed`` draws the random phase and scale of the direction pattern.
    """
    if min(nx, ny, nz) < 4:
        raise ValueError("dimensions must be at least 4")
    rng = np.random.default_rng(seed)
    phase, turns = rng.uniform(0, 2 * np.pi), rng.uniform(0.5, 1.0)
    z, y, x = np.meshgrid(
        np.linspace(-1, 1, nz), np.linspace(-1, 1, ny), np.linspace(-1, 1, nx), indexing="ij"
    )
    theta = phase + turns * np.pi * (x + 0.5 * y)
    tilt = 0.3 * z
    e1 = np.stack([np.cos(theta) * np.cos(tilt), np.sin(theta) * np.cos(tilt), np.sin(tilt)], -1)
    e3 = np.broadcast_to(np.array([0.0, 0.0, 1.0]), e1.shape)
    e2 = np.cross(e3, e1)
    e2 /= np.linalg.norm(e2, axis=-1, keepdims=True)
    e3 = np.cross(e1, e2)
    # anisotropy grows towards a disc in the middle of each slice
    ani = 0.5 + 0.5 * np.exp(-2 * (x**2 + y**2))
    lam1 = -0.6 - 2.0 * ani
    lam2 = -0.6 - 0.3 * ani
    lam3 = np.full_like(lam1, -0.5)
    mats = (lam1[..., None, None] * e1[..., :, None] * e1[..., None, :]
            + lam2[..., None, None] * e2[..., :, None] * e2[..., None, :]
            + lam3[..., None, None] * e3[..., :, None] * e3[..., None, :])
    v = SymTensorField3D.from_matrix(mats)
    return v, ScalarField(np.ones((nz, ny, nx)))


def dti_simulate(v: SymTensorField3D, s0, b, noise_sigma: float, seed: int = 0) -> VectorField:
    """Diffusion-weighted signals with additive Gaussian noise."""
    s = StejskalTannerOp(s0, b).value(v)
    rng = np.random.default_rng(seed)
    return VectorField(s.data + noise_sigma * rng.standard_normal(s.data.shape), v.h)


def dti_log_fit(s: VectorField, s0, b, floor: float = 1e-3) -> SymTensorField3D:
    """Voxelwise least-squares tensor from ``log(s_j / s0) = <b_j, v b_j>``."""
    s0 = np.asarray(s0.data if hasattr(s0, "data") else s0, dtype=float)
    op = StejskalTannerOp(s0, b)
    logs = np.log(np.maximum(s.data, floor) / np.maximum(s0, floor)[None])
    coef_pinv = np.linalg.pinv(op.coef)  # (6, N)
    return SymTensorField3D(np.tensordot(coef_pinv, logs, axes=(1, 0)), s.h)


def build_dti_problem(dtspec: DtiSpec, s: VectorField, s0, self_check: bool = True) -> SaddleProblem:
    """TGV^2-regularised tensor fit ``sum_j |s_j - T_j(v)|^2 / 2 + TGV(v)``.

    Primal blocks ``(v, w)``; dual blocks ``lambda``, ``psi`` and ``xi``
    with ``K(v, w) = (T(v), grad v - w, (beta/alpha) E w)``.
    """
    s0_arr = np.asarray(s0.data if hasattr(s0, "data") else s0, dtype=float)
    grid = s0_arr.shape
    if s.data.shape != (dtspec.N,) + grid:
        raise ValueError(f"signals {s.data.shape} do not match {dtspec.N} gradients on {grid}")
    v0 = SymTensorField3D(np.zeros((6,) + grid))
    grad = Gradient(v0)
    w0 = grad.range.zeros_like()
    x0 = StackedVector([("v", v0), ("w", w0)])
    sym = SymGradient(w0)
    lin = BlockLinearOp(
        x0,
        ("psi", "xi"),
        {
            ("psi", "v"): grad,
            ("psi", "w"): -1.0,
            ("xi", "w"): ScaledOp(sym, dtspec.beta / dtspec.alpha),
        },
    )
    T = StejskalTannerOp(s0_arr, dtspec.b, name="v")
    K = PartlyNonlinearOp(T, ("v",), "lambda", lin)
    Fstar = BlockResolvent([
        ("lambda", QuadraticFidelity(s)),
        ("psi", HuberBall(HuberBallSpec(dtspec.alpha, 0.0, grad.range.m))),
        ("xi", HuberBall(HuberBallSpec(dtspec.alpha, 0.0, sym.range.m))),
    ])
    problem = SaddleProblem(K, Fstar, fidelity="lambda",
                            meta={"kind": "dti", "spec": dtspec, "s0": s0_arr})
    if self_check:
        x_probe, _ = dti_init(problem)
        check_nonlinear_op(K, x_probe)
    return problem


def dti_init(problem: SaddleProblem):
    """Log-linear tensor fit of the data as primal start; ``w`` and duals zero."""
    spec, s0 = problem.meta["spec"], problem.meta["s0"]
    v = dti_log_fit(problem.data, s0, spec.b)
    w = Gradient(v).range.zeros_like()
    x = StackedVector([("v", v), ("w", w)])
    return x, problem.K.value(x).zeros_like()
