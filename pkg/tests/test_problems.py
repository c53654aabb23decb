"""Phantoms, masks, k-space simulation and problem construction."""

import numpy as np
import pytest

from nlsaddle.core import StackedVector
from nlsaddle.operators import (
    FrozenJacobian,
    LinearWrapper,
    SamplingMask,
    StejskalTannerOp,
    check_linear_op,
)
from nlsaddle.problems import (
    DtiSpec,
    ExperimentSpec,
    backprojection,
    build_dti_problem,
    build_velocity_problem,
    dti_gradients,
    dti_phantom,
    dti_simulate,
    gaussian_mask,
    kspace_simulate,
    ring_mask,
    velocity_init,
    velocity_phantom,
)
from nlsaddle.solver import SaddleProblem


def _at(n, x, y):
    """Index of the pixel whose centre is closest to ``(x, y)``."""
    c = -1 + (np.arange(n) + 0.5) * 2 / n
    return int(np.argmin(abs(c - y))), int(np.argmin(abs(c - x)))


def test_phantom_points():
    # (0.5, 0) and (0, 0.5) are not pixel centres; compare with the formula
    # at the nearest centre
    n = 40
    r, phi = velocity_phantom(n)
    c = -1 + (np.arange(n) + 0.5) * 2 / n
    for x, y in ((0.5, 0.0), (0.0, 0.5)):
        i, j = _at(n, x, y)
        assert r.data[i, j] == 1
        assert phi.data[i, j] == pytest.approx(c[j] / np.hypot(c[i], c[j]))
    i, j = _at(n, 0.5, 0.0)
    assert phi.data[i, j] > 0.99
    assert r.h == pytest.approx(2 / n)
    assert set(np.unique(r.data)) <= {0.0, 1.0}
    assert np.all(np.abs(phi.data) <= 1)


def test_phantom_origin_convention():
    # odd n puts a pixel centre exactly at the origin
    r, phi = velocity_phantom(9)
    assert r.data[4, 4] == 0 and phi.data[4, 4] == 0


def test_ring_contains_support():
    n = 64
    r, _ = velocity_phantom(n)
    assert np.array_equal(ring_mask(n), r.data > 0)


def test_mask_count_reference_size():
    m = gaussian_mask(256, 0.15, seed=0)
    assert m.count == 9831
    c = 128
    assert m.data[c, c]


def test_mask_basics():
    assert gaussian_mask(16, 1.0).count == 256
    a, b = gaussian_mask(32, seed=5), gaussian_mask(32, seed=5)
    assert a == b
    assert gaussian_mask(32, seed=6) != a
    assert a.count == int(np.ceil(0.15 * 32 * 32))
    with pytest.raises(RuntimeError):
        gaussian_mask(32, 0.9, variance=1.0, max_draws=10_000)
    assert gaussian_mask(8, 1e-4).count == 1  # rounds up to DC only
    with pytest.raises(ValueError):
        gaussian_mask(8, 0.0)


def test_kspace_noise_free_and_reproducible():
    n = 16
    r, phi = velocity_phantom(n)
    mask = gaussian_mask(n, seed=0)
    clean = kspace_simulate(r, phi, mask, 0.0)
    u = r.data * np.exp(1j * phi.data)
    # samples are listed in unshifted FFT order
    idx = np.flatnonzero(np.fft.ifftshift(mask.data))
    assert np.allclose(clean.data, np.fft.fft2(u, norm="ortho").ravel()[idx])
    a = kspace_simulate(r, phi, mask, 0.2, seed=3)
    b = kspace_simulate(r, phi, mask, 0.2, seed=3)
    assert np.array_equal(a.data, b.data)


def test_noise_moment():
    n = 16
    r, phi = velocity_phantom(n)
    mask = gaussian_mask(n, seed=0)
    clean = kspace_simulate(r, phi, mask, 0.0)
    sig = 0.2
    e = [np.sum(np.abs(kspace_simulate(r, phi, mask, sig, seed=s).data - clean.data) ** 2)
         for s in range(100)]
    assert np.mean(e) == pytest.approx(2 * mask.count * sig**2, rel=0.05)


def test_backprojection_is_zero_filled_inverse():
    n = 16
    mask = gaussian_mask(n, seed=1)
    r, phi = velocity_phantom(n)
    for norm in ("ortho", "backward"):
        f = kspace_simulate(r, phi, mask, 0.0, norm=norm)
        full = np.zeros(n * n, complex)
        full[np.flatnonzero(np.fft.ifftshift(mask.data))] = f.data
        expect = np.fft.ifft2(full.reshape(n, n), norm=norm)
        assert np.allclose(backprojection(f, mask, norm).data, expect)
    full_mask = SamplingMask.full(n, n)
    f = kspace_simulate(r, phi, full_mask, 0.0, norm="backward")
    assert np.allclose(backprojection(f, full_mask, "backward").data, r.data * np.exp(1j * phi.data))


def _velocity(n=16, sigma=0.0, full=False, **kw):
    spec = ExperimentSpec(n=n, noise_sigma=sigma, **kw)
    r, phi = velocity_phantom(n)
    mask = SamplingMask.full(n, n) if full else gaussian_mask(n, seed=0)
    f = kspace_simulate(r, phi, mask, sigma, seed=1, norm=spec.fft_norm)
    return spec, r, phi, mask, f


@pytest.mark.parametrize("norm", ["ortho", "backward"])
def test_velocity_problem_self_check_and_truth(norm):
    spec, r, phi, mask, f = _velocity(full=True, fft_norm=norm)
    prob = build_velocity_problem(spec, f, mask)  # runs the operator checks
    x = StackedVector([("r", r), ("phi", phi), ("w", velocity_init(prob)[0]["w"])])
    assert prob.data_residual(x) <= 1e-10 * f.norm()
    Kx = prob.K.value(x)
    assert prob.Fstar.blocks["lambda"].conj_eval(Kx["lambda"]) == pytest.approx(0.0, abs=1e-18)


def test_velocity_weights_follow_grid_convention():
    spec = ExperimentSpec(n=64)
    a_r, a_phi, b_phi = spec.weights()
    h = 2 / 64
    assert (a_r, a_phi, b_phi) == pytest.approx((h, 0.15 * h, 0.20 * h**2))
    unscaled = ExperimentSpec(n=64, scale_by_h=False)
    assert unscaled.h == 1.0 and unscaled.weights() == pytest.approx((1.0, 0.15, 0.20))


def test_velocity_scaling_leaves_problem_unchanged():
    # alpha_h grad_h r = (alpha h)(grad_1 r / h) = alpha grad_1 r: same TV term
    spec, r, phi, mask, f = _velocity()
    a = build_velocity_problem(spec, f, mask, self_check=False)
    b = build_velocity_problem(ExperimentSpec(n=16, scale_by_h=False), f, mask, self_check=False)
    xa, _ = velocity_init(a)
    xb, _ = velocity_init(b)
    assert np.allclose(xa["r"].data, xb["r"].data)
    ka, kb = a.K.value(xa), b.K.value(xb)
    for name in ("psi_r", "psi_phi"):
        ra = ka[name].data * a.Fstar.blocks[name].spec.alpha
        rb = kb[name].data * b.Fstar.blocks[name].spec.alpha
        assert np.allclose(ra, rb)


def test_velocity_init_and_shapes():
    spec, r, phi, mask, f = _velocity(sigma=0.2)
    prob = build_velocity_problem(spec, f, mask, self_check=False)
    x, y = velocity_init(prob)
    assert x.names == ("r", "phi", "w") and y.norm() == 0
    assert np.all(x["r"].data >= 0)
    with pytest.raises(ValueError):
        build_velocity_problem(ExperimentSpec(n=32), f, mask)


def test_frozen_velocity_problem_is_linear():
    spec, r, phi, mask, f = _velocity()
    prob = build_velocity_problem(spec, f, mask, self_check=False)
    x, _ = velocity_init(prob)
    J = FrozenJacobian(prob.K, x)
    check_linear_op(J)
    lin = SaddleProblem(LinearWrapper(J), prob.Fstar, fidelity="lambda")
    assert (lin.K.value(x) - prob.K.jac_apply(x, x)).norm() == 0


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(coverage=0)
    with pytest.raises(ValueError):
        ExperimentSpec(alpha_r=0)
    with pytest.raises(ValueError):
        DtiSpec(b=np.eye(3))


def test_dti_phantom_properties():
    v, s0 = dti_phantom(8, 8, 4, seed=2)
    mats = v.to_matrix()
    assert np.array_equal(mats, np.swapaxes(mats, -1, -2))
    probes = np.random.default_rng(0).standard_normal((10, 3))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    q = np.einsum("ka,...ab,kb->...k", probes, mats, probes)
    assert np.all(q <= 0) and np.all(q >= -3)
    v2, _ = dti_phantom(8, 8, 4, seed=2)
    assert np.array_equal(v.data, v2.data)
    assert np.all(s0.data == 1)


def test_dti_gradients_unit_and_identifiable():
    b = dti_gradients(12)
    assert np.allclose(np.linalg.norm(b, axis=1), 1)
    assert np.linalg.matrix_rank(StejskalTannerOp(np.ones((1, 1, 1)), b).coef) == 6


def test_dti_problem_truth_and_adjoints():
    spec = DtiSpec(nx=4, ny=4, nz=2, N=6, noise_sigma=0.0)
    v, s0 = dti_phantom(4, 4, 4)
    v.data = v.data[:, :2]
    s0.data = s0.data[:2]
    s = dti_simulate(v, s0.data, spec.b, 0.0)
    prob = build_dti_problem(spec, s, s0)  # self-check hook runs the adjoint tests
    x = StackedVector([("v", v), ("w", velocity_w_zero(prob))])
    assert prob.data_residual(x) <= 1e-12


def velocity_w_zero(prob):
    from nlsaddle.problems import dti_init

    return dti_init(prob)[0]["w"]
