"""Primal-dual hybrid gradient iterations for saddle problems with non-linear coupling.

Solves ``min_x max_y G(x) + <K(x), y> - F*(y)`` by

    x+  = (I + tau dG)^{-1}(x - tau J_K(x)^* y)
    xw  = x+ + omega (x+ - x)
    y+  = (I + sigma dF*)^{-1}(y + sigma k)

where the dual argument ``k`` is ``K(xw)`` (exact variant),
``K(x) + J_K(x)(xw - x)`` (linearised) or ``(1 + omega) K(x+) - omega K(x)``
(interpolated).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import LocalMetric, StackedVector, weighted_norm_sq
from .operators import ModelOverflowError, NonlinearOp, PowerIteration
from .prox import BlockResolvent, ZeroFunctional

__all__ = [
    "SaddleProblem",
    "SolverConfig",
    "StepSizeState",
    "IterationRecord",
    "SolverResult",
    "VARIANTS",
    "nl_pdhgm",
    "step_update",
    "step_norm_of",
    "STEP_NORMS",
]

log = logging.getLogger(__name__)

VARIANTS = ("exact", "linearised", "interpolated")
STEP_NORMS = ("l2", "grid")


def step_norm_of(dx: StackedVector, kind: str) -> float:
    """``|dx|`` in plain l2 or in the grid-weighted L2 norm."""
    return dx.grid_norm() if kind == "grid" else dx.norm()


@dataclass
class SaddleProblem:
    """``G``, ``F*`` (block separable) and the coupling operator ``K``.

    ``fidelity`` names the dual block whose conjugate is the quadratic data
    term; its data is used for the residual ``|f - T(x)|`` in telemetry.
    """

    K: NonlinearOp
    Fstar: BlockResolvent
    G: Any = field(default_factory=ZeroFunctional)
    fidelity: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def data(self):
        return None if self.fidelity is None else self.Fstar.blocks[self.fidelity].f

    def objective(self, x: StackedVector) -> float:
        """Primal value ``G(x) + F(K(x))``."""
        return self.G.eval(x) + self.Fstar.conj_eval(self.K.value(x))

    def data_residual(self, x: StackedVector, Kx: StackedVector | None = None) -> float:
        if self.fidelity is None:
            return math.nan
        Kx = self.K.value(x) if Kx is None else Kx
        return (Kx[self.fidelity] - self.data).norm()


@dataclass
class SolverConfig:
    variant: str = "exact"
    omega: float = 1.0
    tau0: float = 0.95
    sigma0: float = 0.95
    adapt_steps: bool = True
    rho: float = 1e-4
    # norm for the stopping test and the step_norm telemetry column
    step_norm: str = "l2"
    max_iters: int = 100000
    # with a zero dual start the first primal step vanishes identically
    min_iters: int = 2
    telemetry_every: int = 100
    # power iteration budget for the running operator-norm bound
    power_iters_full: int = 50
    power_iters_warm: int = 2
    power_refresh: int = 100
    power_tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.step_norm not in STEP_NORMS:
            raise ValueError(f"step_norm must be one of {STEP_NORMS}, got {self.step_norm!r}")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {self.omega}")
        if not (self.tau0 > 0 and self.sigma0 > 0):
            raise ValueError("tau0 and sigma0 must be positive")
        if self.adapt_steps and not self.tau0 * self.sigma0 < 1:
            raise ValueError(f"tau0 * sigma0 = {self.tau0 * self.sigma0} must be < 1")
        if self.telemetry_every < 1 or self.max_iters < 1:
            raise ValueError("telemetry_every and max_iters must be positive")


@dataclass
class StepSizeState:
    """Running supremum ``L`` of the Jacobian norms seen so far."""

    tau0: float
    sigma0: float
    L: float = 0.0
    power: PowerIteration = field(default_factory=PowerIteration)


def step_update(state: StepSizeState, K_jac, iters: int = 50, tol: float = 1e-4):
    """Raise ``state.L`` to cover ``|K_jac|`` and return ``(tau0 / L, sigma0 / L)``."""
    est = state.power.run(K_jac, iters=iters, tol=tol)
    state.L = max(state.L, est)
    if state.L <= 0:
        raise ValueError("operator norm estimate is zero; cannot scale steps")
    return state.tau0 / state.L, state.sigma0 / state.L


@dataclass
class IterationRecord:
    iter: int
    step_norm: float
    weighted_step: float
    data_residual: float
    L: float
    lin_error: float
    wall_ms: float
    tau: float
    sigma: float


@dataclass
class SolverResult:
    x: StackedVector
    y: StackedVector
    records: list[IterationRecord]
    status: str
    iters: int
    wall_s: float = 0.0

    def __iter__(self):
        return iter((self.x, self.y, self.records, self.status))


def nl_pdhgm(problem: SaddleProblem, init: tuple[StackedVector, StackedVector],
             config: SolverConfig | None = None, callback=None) -> SolverResult:
    """Run NL-PDHGM from ``init = (x, y)``.

    Stops when ``|x^i - x^{i+1}| < config.rho`` (norm per ``config.step_norm``) (status ``"converged"``)
    or after ``config.max_iters`` iterations (``"iter_cap"``).  A non-finite
    iterate aborts with status ``"diverged"`` and returns the last finite
    pair.

    ``callback(i, x, y)``, when given, is called after every iteration.
    """
    cfg = config or SolverConfig()
    K, G, Fs = problem.K, problem.G, problem.Fstar
    x, y = init
    omega = cfg.omega
    steps = StepSizeState(cfg.tau0, cfg.sigma0, power=PowerIteration(cfg.seed))
    tau, sigma = cfg.tau0, cfg.sigma0

    records: list[IterationRecord] = []
    t0 = time.perf_counter()
    status = "iter_cap"
    Kx = None  # K(x^i), kept for the interpolated variant
    i = 0
    try:
        if cfg.variant == "interpolated":
            Kx = K.value(x)
        for i in range(1, cfg.max_iters + 1):
            if cfg.adapt_steps:
                full = i == 1 or i % cfg.power_refresh == 0
                tau, sigma = step_update(
                    steps, K.frozen_jacobian(x),
                    cfg.power_iters_full if full else cfg.power_iters_warm, cfg.power_tol,
                )

            x_new = G.resolve(x - K.jac_adjoint_apply(x, y) * tau, tau)
            dx = x_new - x
            xw = x_new + dx * omega
            if cfg.variant == "exact":
                kw = K.value(xw)
            elif cfg.variant == "linearised":
                kw = K.value(x) + K.jac_apply(x, xw - x)
            else:
                Kx_new = K.value(x_new)
                kw = Kx_new * (1.0 + omega) - Kx * omega
            y_new = Fs.resolve(y + kw * sigma, sigma)

            if not (x_new.is_finite() and y_new.is_finite()):
                status = "diverged"
                break

            step_norm = step_norm_of(dx, cfg.step_norm)
            done = step_norm < cfg.rho and i >= cfg.min_iters
            last = done or i == cfg.max_iters
            if i == 1 or last or i % cfg.telemetry_every == 0:
                records.append(_record(problem, cfg, i, x, x_new, y, y_new, kw if cfg.variant == "exact" else None,
                                       steps.L if cfg.adapt_steps else math.nan, tau, sigma, t0))
            if cfg.variant == "interpolated":
                Kx = Kx_new
            x, y = x_new, y_new
            if callback is not None:
                callback(i, x, y)
            if done:
                status = "converged"
                break
    except (ModelOverflowError, FloatingPointError) as exc:
        log.warning("iteration %d: %s", i, exc)
        status = "diverged"
    if status == "diverged":
        log.warning("NL-PDHGM diverged at iteration %d", i)
    iters = i if status != "diverged" else i - 1
    return SolverResult(x, y, records, status, iters, time.perf_counter() - t0)


def _record(problem, cfg, i, x, x_new, y, y_new, kw, L, tau, sigma, t0) -> IterationRecord:
    K = problem.K
    J = K.frozen_jacobian(x)
    du = (x_new - x, y_new - y)
    wsq = weighted_norm_sq(du, LocalMetric(tau, sigma, J, cfg.omega))
    Kx_new = K.value(x_new)
    lin_err = math.nan
    if kw is not None:
        xw = x_new + (x_new - x) * cfg.omega
        # kw is K(xw), so D = K(x) + J (xw - x) - K(xw)
        lin_err = (K.value(x) + J.apply(xw - x) - kw).norm()
    return IterationRecord(
        iter=i,
        step_norm=step_norm_of(du[0], cfg.step_norm),
        weighted_step=float(np.sqrt(max(wsq, 0.0))),
        data_residual=problem.data_residual(x_new, Kx_new),
        L=L,
        lin_error=lin_err,
        wall_ms=1e3 * (time.perf_counter() - t0),
        tau=tau,
        sigma=sigma,
    )
