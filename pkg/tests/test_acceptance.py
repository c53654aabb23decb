"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line, printed in the "acceptance
criteria" section at the end of the pytest run, and then asserts.
Criterion 6 runs the n=256 reproduction and takes tens of minutes; it is
marked ``slow`` and only runs with ``NLSADDLE_SLOW=1``.
"""

import os
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import scalar_stack
from nlsaddle.baseline import LinearPDConfig, gauss_newton, linear_pdhgm
from nlsaddle.cli import (
    RunConfig,
    _velocity_scores,
    dti_experiment,
    dual_probe_step,
    solve_velocity,
    velocity_data,
)
from nlsaddle.core import (
    ComplexField2D,
    ScalarField2D,
    StackedVector,
    SymTensorField3D,
    VectorField2D,
)
from nlsaddle.evaluate import optimality_residuals
from nlsaddle.operators import (
    FourierSampling,
    Gradient,
    PhaseMagnitudeOp,
    StejskalTannerOp,
    SymGradient,
    check_linear_op,
    check_nonlinear_op,
)
from nlsaddle.problems import (
    ExperimentSpec,
    backprojection,
    build_velocity_problem,
    dti_gradients,
    gaussian_mask,
    kspace_simulate,
    split_polar,
    tv_linear_problem,
    velocity_init,
    velocity_phantom,
)
from nlsaddle.solver import VARIANTS, SolverConfig, nl_pdhgm

import test_prox
import test_solver

SLOW = os.environ.get("NLSADDLE_SLOW") == "1"

# Gauss-Newton inner budget: the absolute pseudo-gap never reaches
# rho2 = 1e-5 on the velocity problem, so every inner solve ends at this cap
GN_MAX_INNER = 1000
GN_MAX_OUTER = 40
DTI_MAX_ITERS = 3000


# -- shared runs -------------------------------------------------------------------


@pytest.fixture(scope="module")
def n64():
    cfg = RunConfig(n=64)
    data = velocity_data(cfg)
    runs = {}
    for solver in ("nl-exact", "nl-linearised"):
        c = replace(cfg, solver=solver)
        t = time.perf_counter()
        x, y, prob, status, info = solve_velocity(c, data)
        runs[solver] = dict(x=x, y=y, problem=prob, status=status, info=info,
                            wall=time.perf_counter() - t, scores=_velocity_scores(x, data))
    return cfg, data, runs


@pytest.fixture(scope="module")
def gn64(n64):
    cfg, data, _ = n64
    c = replace(cfg, solver="gauss-newton", rho2=cfg.rho / 10)
    problem = build_velocity_problem(data.spec, data.f, data.mask, self_check=False)
    gcfg = replace(c.gn_config(), max_inner=GN_MAX_INNER, max_outer=GN_MAX_OUTER)
    t = time.perf_counter()
    res = gauss_newton(problem, velocity_init(problem), gcfg)
    return dict(res=res, problem=problem, wall=time.perf_counter() - t,
                scores=_velocity_scores(res.x, data))


@pytest.fixture(scope="module")
def dti_run():
    # denser telemetry so the head/tail windows of criterion 10 hold several records
    cfg = RunConfig(max_iters=DTI_MAX_ITERS, telemetry_every=10)
    t = time.perf_counter()
    res, problem, v, scores = dti_experiment(cfg)
    return dict(res=res, problem=problem, scores=scores, wall=time.perf_counter() - t, cfg=cfg)


# -- 1 ---------------------------------------------------------------------------------


def test_c1_operator_calculus(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    adj, fd = 0.0, 0.0
    for n, h in ((8, 1.0), (12, 2 / 12), (16, 2 / 16)):
        s = ScalarField2D(np.zeros((n, n)), h)
        g = Gradient(s)
        adj = max(adj, check_linear_op(g), check_linear_op(SymGradient(g.range)))
        mask = gaussian_mask(n, seed=n)
        for norm in ("ortho", "backward"):
            adj = max(adj, check_linear_op(FourierSampling(mask, norm)))
            x = StackedVector([("r", ScalarField2D(rng.uniform(0.5, 1.5, (n, n)), h)),
                               ("phi", ScalarField2D(rng.uniform(-1, 1, (n, n)), h))])
            out = check_nonlinear_op(PhaseMagnitudeOp(mask, norm), x)
            adj, fd = max(adj, out["adjoint"]), max(fd, out["finite_difference"])
        vol = SymTensorField3D(np.zeros((6, 2, n, n)))
        gv = Gradient(vol)
        adj = max(adj, check_linear_op(gv), check_linear_op(SymGradient(gv.range)))
        v = SymTensorField3D(0.2 * rng.standard_normal((6, 2, n, n)))
        out = check_nonlinear_op(StejskalTannerOp(np.ones((2, n, n)), dti_gradients(12)), v)
        adj, fd = max(adj, out["adjoint"]), max(fd, out["finite_difference"])
    wall = time.perf_counter() - t0
    ok = adj <= 1e-10 and fd <= 1e-5 and wall < 10
    criterion(1, ok, f"max adjoint rel err {adj:.1e}, max FD rel err {fd:.1e}, {wall:.1f} s")
    assert ok


# -- 2 ---------------------------------------------------------------------------------


def test_c2_prox_oracles(criterion):
    t0 = time.perf_counter()
    test_prox.test_oracle_huber_ball()
    test_prox.test_oracle_quadratic_fidelity()
    test_prox.test_oracle_ball_and_identity()
    test_prox.test_oracle_weighted_symmetric_ball()
    rng = np.random.default_rng(1)
    worst = -np.inf
    for R in test_prox.FNE_CASES.values():
        for _ in range(200):
            step = float(np.exp(rng.uniform(-5, 2)))
            z1 = VectorField2D(2 * rng.standard_normal((2, 3, 3)))
            z2 = VectorField2D(2 * rng.standard_normal((2, 3, 3)))
            d = R(z1, step) - R(z2, step)
            worst = max(worst, d.inner(d) - d.inner(z1 - z2))
    wall = time.perf_counter() - t0
    ok = worst <= 1e-10 and wall < 30
    criterion(2, ok, f"5 resolvent families beat 10^4 candidates x 50 inputs; "
                     f"FNE slack {max(worst, 0):.1e}; {wall:.1f} s")
    assert ok


# -- 3 ---------------------------------------------------------------------------------


def test_c3_fixed_points(criterion):
    worst = 0.0
    k, f, M = 2.0, 3.0, 1.0
    prob, _, _ = test_solver.toy(k, f, M)
    xs, ys = test_solver.toy_saddle(k, f, M)
    start = (scalar_stack(xs, "x"), scalar_stack(ys, "lambda"))
    one = SolverConfig(max_iters=1, min_iters=1, rho=0.0)
    for variant in VARIANTS:
        res = nl_pdhgm(prob, start, replace(one, variant=variant))
        worst = max(worst, res.records[0].step_norm)
    tv, fimg = test_solver._tv_problem()
    long = nl_pdhgm(tv, test_solver._tv_init(tv, fimg), SolverConfig(rho=0.0, max_iters=20000))
    for variant in VARIANTS:
        res = nl_pdhgm(tv, (long.x, long.y), replace(one, variant=variant))
        worst = max(worst, res.records[0].step_norm)
    lin = linear_pdhgm(tv_linear_problem(tv), (long.x, long.y),
                       LinearPDConfig(rho2=0.0, max_iters=1))
    worst = max(worst, lin.records[0].step_norm)
    ok = worst <= 1e-8
    criterion(3, ok, f"largest first step from a critical point {worst:.1e} (toy, 8x8 TV)")
    assert ok


# -- 4 ---------------------------------------------------------------------------------


def test_c4_linear_equivalence(criterion):
    prob, fimg = test_solver._tv_problem()
    x0, y0 = test_solver._tv_init(prob, fimg)
    from nlsaddle.operators import PowerIteration

    L = PowerIteration(0).run(prob.K.lin, 100, 1e-12)
    tau, sigma = 0.5 / L, 1.9 / L
    ref = []
    linear_pdhgm(tv_linear_problem(prob), (x0, y0),
                 LinearPDConfig(tau=tau, sigma=sigma, rho2=0.0, max_iters=100, gap_every=10**9),
                 callback=lambda i, x, y: ref.append((x, y)))
    worst = 0.0
    for variant in VARIANTS:
        got = []
        nl_pdhgm(prob, (x0, y0),
                 SolverConfig(variant=variant, tau0=tau, sigma0=sigma, adapt_steps=False,
                              rho=0.0, max_iters=100),
                 callback=lambda i, x, y: got.append((x, y)))
        for (xa, ya), (xb, yb) in zip(ref, got):
            worst = max(worst, (xa - xb).norm() / max(xa.norm(), 1.0),
                        (ya - yb).norm() / max(ya.norm(), 1.0))
    ok = worst <= 1e-12 and len(ref) == 100
    criterion(4, ok, f"max per-iteration deviation over 100 iterations, 3 variants: {worst:.1e}")
    assert ok


# -- 5 ---------------------------------------------------------------------------------


def test_c5_variant_parity(n64, criterion):
    _, _, runs = n64
    a, b = runs["nl-exact"], runs["nl-linearised"]
    ia, ib = a["info"]["iters"], b["info"]["iters"]
    rel_iters = abs(ia - ib) / max(ia, ib)
    rel_x = (a["x"] - b["x"]).norm() / a["x"].norm()
    wall = a["wall"] + b["wall"]
    ok = (a["status"] == b["status"] == "converged" and rel_iters <= 0.10 and rel_x <= 1e-3
          and wall < 120)
    criterion(5, ok, f"iters exact {ia} / linearised {ib} ({100 * rel_iters:.1f}%), "
                     f"primal rel diff {rel_x:.1e}, {wall:.0f} s for both")
    assert ok


# -- 6 ---------------------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.skipif(not SLOW, reason="n=256 reproduction; set NLSADDLE_SLOW=1")
def test_c6_desk_scale_reproduction(criterion):
    cfg = RunConfig(n=256)
    data = velocity_data(cfg)
    u = backprojection(data.f, data.mask, data.spec.fft_norm, data.spec.h)
    r_bp, phi_bp = split_polar(u.data, data.spec.h)
    bp = _velocity_scores({"r": r_bp, "phi": phi_bp}, data)
    t = time.perf_counter()
    x, _, _, status, info = solve_velocity(cfg, data)
    wall = time.perf_counter() - t
    nl = _velocity_scores(x, data)
    checks = {
        "nl_r": abs(nl["psnr_r"] - 25.5) <= 1.5,
        "nl_phi": abs(nl["psnr_phi"] - 51.2) <= 2.5,
        "bp_r": abs(bp["psnr_r"] - 19.2) <= 1.5,
        "bp_phi": abs(bp["psnr_phi"] - 41.0) <= 2.5,
        "iters": status == "converged" and 4100 <= info["iters"] <= 16400,
    }
    ok = all(checks.values())
    failed = ", ".join(k for k, v in checks.items() if not v) or "none"
    criterion(6, ok, f"NL {nl['psnr_r']:.2f}/{nl['psnr_phi']:.2f} dB (target 25.5/51.2), "
                     f"BP {bp['psnr_r']:.2f}/{bp['psnr_phi']:.2f} dB (target 19.2/41.0), "
                     f"{status} after {info['iters']} iters (target 8200), {wall:.0f} s; "
                     f"failed: {failed}")
    assert ok


# -- 7 ---------------------------------------------------------------------------------


def test_c7_gauss_newton(n64, gn64, criterion):
    _, _, runs = n64
    nl = runs["nl-exact"]
    res = gn64["res"]
    d_r = abs(gn64["scores"]["psnr_r"] - nl["scores"]["psnr_r"])
    d_phi = abs(gn64["scores"]["psnr_phi"] - nl["scores"]["psnr_phi"])
    ratio = res.inner_iters / nl["info"]["iters"]
    ok = d_r <= 1.0 and d_phi <= 1.0 and ratio >= 3
    criterion(7, ok, f"GN {res.status} after {res.outer_iters} outer / {res.inner_iters} inner "
                     f"iters ({ratio:.1f}x NL), PSNR gap r {d_r:.2f} dB, phi {d_phi:.2f} dB, "
                     f"{gn64['wall']:.0f} s")
    assert ok


# -- 8 ---------------------------------------------------------------------------------


def test_c8_optimality_residuals(n64, gn64, dti_run, criterion):
    cfg, data, runs = n64
    converged = [(name, r["x"], r["y"], r["problem"], r["info"]["records"])
                 for name, r in runs.items() if r["status"] == "converged"]
    if gn64["res"].status == "converged":
        converged.append(("gauss-newton", gn64["res"].x, gn64["res"].y, gn64["problem"], ()))
    if dti_run["res"].status == "converged":
        converged.append(("dti", dti_run["res"].x, dti_run["res"].y, dti_run["problem"],
                          dti_run["res"].records))
    parts, ok = [], bool(converged)
    for name, x, y, prob, recs in converged:
        # probe the dual fixed point with the run's own dual step; the value
        # at sigma_probe = 1 is reported alongside for reference
        probe = dual_probe_step(prob, x, cfg, recs)
        rep = optimality_residuals(x, y, prob, sigma_probe=probe, norm=cfg.step_norm)
        unit = optimality_residuals(x, y, prob, sigma_probe=1.0, norm=cfg.step_norm)
        fn = prob.data.grid_norm() if cfg.step_norm == "grid" else prob.data.norm()
        good = rep.data_consistency <= 1e-3 * fn and rep.dual_fixed_point <= 10 * cfg.rho
        ok &= good
        parts.append(f"{name}: data {rep.data_consistency:.1e}/{1e-3 * fn:.1e}, "
                     f"dual {rep.dual_fixed_point:.1e}/{10 * cfg.rho:.0e} at sigma {probe:.3g} "
                     f"({unit.dual_fixed_point:.1e} at sigma 1)")
    criterion(8, ok, "; ".join(parts) or "no converged run")
    assert ok


# -- 9 ---------------------------------------------------------------------------------


def test_c9_dti(dti_run, criterion):
    s = dti_run["scores"]
    gain = s["psnr"] - s["psnr_input"]
    ok = 17 <= s["psnr_input"] <= 18 and gain >= 2 and dti_run["wall"] < 300
    criterion(9, ok, f"input {s['psnr_input']:.2f} dB -> TGV {s['psnr']:.2f} dB "
                     f"(+{gain:.2f}), {dti_run['res'].status} after {dti_run['res'].iters} "
                     f"iters, {dti_run['wall']:.0f} s")
    assert ok


# -- 10 --------------------------------------------------------------------------------


def test_c10_telemetry(n64, dti_run, criterion):
    _, _, runs = n64
    cfg = SolverConfig(tau0=0.5, sigma0=1.9)
    ok, parts = True, []
    sets = [(k, r["info"]["records"], r["status"]) for k, r in runs.items()]
    sets.append(("dti", dti_run["res"].records, dti_run["res"].status))
    for name, recs, status in sets:
        prod = max(r.tau * r.sigma * r.L**2 for r in recs)
        Ls = [r.L for r in recs]
        mono = all(b >= a for a, b in zip(Ls, Ls[1:]))
        good = prod <= cfg.tau0 * cfg.sigma0 * (1 + 1e-12) and mono
        lin = [r.lin_error for r in recs if np.isfinite(r.lin_error)]
        if lin and status == "converged":
            m = max(1, len(lin) // 10)
            head, tail = np.median(lin[:m]), np.median(lin[-m:])
            good &= tail <= head
            parts.append(f"{name}: max tau*sigma*L^2 {prod:.3f}, L monotone {mono}, "
                         f"lin_error head/tail median {head:.1e}/{tail:.1e}")
        else:
            parts.append(f"{name}: max tau*sigma*L^2 {prod:.3f}, L monotone {mono}")
        ok &= good
    criterion(10, ok, "; ".join(parts))
    assert ok
