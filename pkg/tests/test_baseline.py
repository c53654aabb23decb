"""Linear PDHGM with pseudo-gap stopping and the Gauss-Newton outer loop."""

import math

import numpy as np
import pytest

from conftest import scalar_stack
from nlsaddle.baseline import (
    GNConfig,
    LinearPDConfig,
    LinearProblem,
    PseudoGapState,
    gauss_newton,
    linear_pdhgm,
    linearised_problem,
    pseudo_gap,
)
from nlsaddle.core import ScalarField2D, StackedVector
from nlsaddle.operators import BlockLinearOp
from nlsaddle.problems import build_tv_denoising, tv_linear_problem
from nlsaddle.prox import BlockResolvent, HuberBall, HuberBallSpec, QuadraticFidelity


def toy_linear(k=2.0, f=3.0):
    x0 = scalar_stack(0.0, "x")
    lin = BlockLinearOp(x0, ("lambda",), {("lambda", "x"): k})
    Fs = BlockResolvent([("lambda", QuadraticFidelity(ScalarField2D(np.array([[f]]))))])
    return LinearProblem(lin, Fs, fidelity="lambda"), x0, lin.range.zeros_like()


def tv8(alpha=0.1, seed=3):
    rng = np.random.default_rng(seed)
    img = np.zeros((8, 8))
    img[:, 4:] = 1.0
    f = ScalarField2D(img + 0.1 * rng.standard_normal((8, 8)))
    prob = build_tv_denoising(f, alpha)
    x = StackedVector([("v", f.copy())])
    return prob, (x, prob.K.value(x).zeros_like())


@pytest.fixture(scope="module")
def tv_reference():
    prob, init = tv8()
    ref = linear_pdhgm(tv_linear_problem(prob), init,
                       LinearPDConfig(rho2=0.0, max_iters=50_000, gap_every=10**9))
    return ref


def test_toy_gap_zero_at_saddle():
    prob, _, _ = toy_linear()
    x, y = scalar_stack(1.5, "x"), scalar_stack(0.0, "lambda")
    assert pseudo_gap(x, y, prob, PseudoGapState.for_start(x)) <= 1e-10


def test_toy_converges_to_closed_form():
    prob, x0, y0 = toy_linear()
    res = linear_pdhgm(prob, (x0, y0), LinearPDConfig(rho2=1e-14, max_iters=500))
    assert abs(float(res.x["x"].data.ravel()[0]) - 1.5) <= 1e-8
    assert abs(float(res.y["lambda"].data.ravel()[0])) <= 1e-8


def test_init_at_saddle_stops_immediately():
    prob, _, _ = toy_linear()
    res = linear_pdhgm(prob, (scalar_stack(1.5, "x"), scalar_stack(0.0, "lambda")),
                       LinearPDConfig(rho2=1e-10))
    assert res.status == "converged" and res.iters == 1
    assert res.records[0].step_norm == 0.0


def test_infeasible_dual_flag():
    prob, (x, y) = tv8()
    lp = tv_linear_problem(prob)
    psi = y["psi"]
    big = y.replace(psi=type(psi)(np.ones(psi.data.shape)))  # norm sqrt(2) > alpha
    state = PseudoGapState.for_start(x)
    assert pseudo_gap(x, big, lp, state) == math.inf
    assert state.infeasible_dual


def test_bound_grows_and_gap_nonnegative():
    prob, (x, y) = tv8()
    lp = tv_linear_problem(prob)
    state = PseudoGapState(M=1e-3)
    seen = [state.M]
    res = linear_pdhgm(lp, (x, y), LinearPDConfig(rho2=0.0, max_iters=300, gap_every=10**9),
                       callback=lambda i, x, y: seen.append(
                           (pseudo_gap(x, y, lp, state), state.M)[1]))
    assert all(b >= a for a, b in zip(seen, seen[1:]))
    assert seen[-1] > 1e-3
    assert pseudo_gap(res.x, res.y, lp, state) >= -1e-10


def test_tv_gap_and_reference(tv_reference):
    prob, init = tv8()
    res = linear_pdhgm(tv_linear_problem(prob), init, LinearPDConfig(rho2=1e-8))
    assert res.status == "converged" and res.gap < 1e-8
    assert (res.x - tv_reference.x).norm() <= 1e-6


def test_tv_gap_tail_and_step_summability():
    prob, init = tv8()
    lp = tv_linear_problem(prob)
    gaps, steps, prev = [], [], [init[0]]
    state = PseudoGapState.for_start(init[0])

    def cb(i, x, y):
        gaps.append(pseudo_gap(x, y, lp, state))
        steps.append((x - prev[0]).norm() ** 2)
        prev[0] = x

    linear_pdhgm(lp, init, LinearPDConfig(rho2=0.0, max_iters=2000, gap_every=10**9), callback=cb)
    tail = gaps[-400:]
    assert np.median(tail[200:]) <= np.median(tail[:200])
    s = np.asarray(steps)
    assert np.isfinite(s.sum())
    assert s[-200:].sum() <= s[:200].sum()


def test_tv_limits():
    rng = np.random.default_rng(0)
    f = ScalarField2D(rng.uniform(0, 1, (8, 8)))
    x0 = StackedVector([("v", f.copy())])
    small = build_tv_denoising(f, 1e-6)
    res = linear_pdhgm(tv_linear_problem(small), (x0, small.K.value(x0).zeros_like()),
                       LinearPDConfig(rho2=1e-12))
    assert (res.x["v"] - f).norm() <= 1e-3 * f.norm()
    big = build_tv_denoising(f, 1e3 * f.norm())
    res = linear_pdhgm(tv_linear_problem(big), (x0, big.K.value(x0).zeros_like()),
                       LinearPDConfig(rho2=0.0, max_iters=20000, gap_every=10**9))
    v = res.x["v"].data
    assert np.ptp(v) <= 1e-3 and abs(v.mean() - f.data.mean()) <= 1e-3


def test_huber_continuity():
    prob0, init = tv8()
    f = prob0.Fstar.blocks["lambda"].f
    a = linear_pdhgm(tv_linear_problem(prob0), init, LinearPDConfig(rho2=1e-11))
    prob1 = build_tv_denoising(f, 0.1, 1e-6)
    b = linear_pdhgm(tv_linear_problem(prob1), init, LinearPDConfig(rho2=1e-11))
    assert (a.x - b.x).norm() <= 1e-4


def test_gauss_newton_linear_coupling(tv_reference):
    prob, init = tv8()
    gn = gauss_newton(prob, init, GNConfig(rho_outer=1e-6, rho2=1e-10))
    assert gn.status == "converged"
    assert gn.outer_iters <= 2
    assert gn.records[-1].step_norm <= 1e-6
    assert (gn.x - tv_reference.x).norm() <= 1e-6
    direct = linear_pdhgm(tv_linear_problem(prob), init, LinearPDConfig(rho2=1e-10))
    assert (gn.records[0].inner_iters == direct.iters)
    assert (gn.x - direct.x).norm() <= 1e-9 or gn.outer_iters == 2


def test_linearised_problem_offset():
    prob, (x, _) = tv8()
    lp = linearised_problem(prob, x)
    # linear K: the offset vanishes
    assert lp.c.norm() <= 1e-14


def test_gn_at_critical_point_single_outer(tv_reference):
    prob, _ = tv8()
    gn = gauss_newton(prob, (tv_reference.x, tv_reference.y), GNConfig(rho_outer=1e-6, rho2=1e-10))
    assert gn.outer_iters == 1 and gn.status == "converged"


def test_gn_config_validation():
    with pytest.raises(ValueError):
        GNConfig(rho_outer=0.0)
