"""Linear PDHGM with a pseudo-duality-gap stop, and a Gauss-Newton outer loop.

Gauss-Newton linearises ``K`` at the current iterate ``xbar``,
``K(x) ~ c + K_xbar x`` with ``c = K(xbar) - K_xbar xbar``, solves the
resulting convex saddle problem with linear PDHGM and repeats.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any

from .core import StackedVector
from .operators import LinearOp, ModelOverflowError, PowerIteration
from .prox import BlockResolvent, ZeroFunctional
from .solver import IterationRecord, SaddleProblem, step_norm_of

__all__ = [
    "LinearProblem",
    "PseudoGapState",
    "LinearPDConfig",
    "GNConfig",
    "GNRecord",
    "LinearResult",
    "GNResult",
    "linear_pdhgm",
    "pseudo_gap",
    "gauss_newton",
]

log = logging.getLogger(__name__)


@dataclass
class LinearProblem:
    """``min_x max_y G(x) + <c + K x, y> - F*(y)`` with ``K`` linear."""

    K: LinearOp
    Fstar: BlockResolvent
    G: Any = field(default_factory=ZeroFunctional)
    c: StackedVector | None = None
    fidelity: str | None = None


@dataclass
class PseudoGapState:
    """Dynamic bound ``M`` on the primal variable; only ever grows."""

    M: float
    growth: float = 1.5
    infeasible_dual: bool = False

    @classmethod
    def for_start(cls, x: StackedVector, growth: float = 1.5, factor: float = 10.0):
        return cls(M=factor * max(x.norm(), 1e-12), growth=growth)


def pseudo_gap(x: StackedVector, y: StackedVector, problem: LinearProblem,
               state: PseudoGapState, Kx=None, KTy=None) -> float:
    """Duality gap of the problem with ``G`` replaced by the indicator of ``B(0, M)``.

    With ``G = 0`` the true gap is infinite; bounding the primal variable
    by ``M`` gives the finite value

        F(K x + c) + M |K^* y| + F*(y) - <c, y>        (|x| <= M).

    ``M`` is enlarged whenever ``x`` leaves the ball.  If ``y`` is outside
    the domain of ``F*`` the result is ``inf`` and ``state.infeasible_dual``
    is set.  ``Kx`` and ``KTy`` may be passed to avoid recomputation.
    """
    Kx = problem.K.apply(x) if Kx is None else Kx
    KTy = problem.K.adjoint_apply(y) if KTy is None else KTy
    Kxc = Kx if problem.c is None else Kx + problem.c
    state.infeasible_dual = not problem.Fstar.feasible(y)
    if state.infeasible_dual:
        return math.inf
    dual_part = problem.Fstar.eval(y) - (0.0 if problem.c is None else problem.c.inner(y))
    primal_part = problem.Fstar.conj_eval(Kxc)
    if not isinstance(problem.G, ZeroFunctional):
        return max(problem.G.eval(x) + primal_part + problem.G.conj_eval(-KTy) + dual_part, 0.0)
    nx, nk = x.norm(), KTy.norm()
    if nx > state.M:
        state.M = state.growth * nx
    gap = primal_part + state.M * nk + dual_part
    # a negative value can only come from round-off or too small an M
    for _ in range(100):
        if gap >= 0 or nk == 0:
            break
        state.M *= state.growth
        gap = primal_part + state.M * nk + dual_part
    return max(gap, 0.0)


@dataclass
class LinearPDConfig:
    tau: float | None = None
    sigma: float | None = None
    tau0: float = 0.95
    sigma0: float = 0.95
    omega: float = 1.0
    rho2: float = 1e-3
    max_iters: int = 100000
    gap_every: int = 1
    telemetry_every: int = 100
    growth: float = 1.5
    norm_iters: int = 50
    norm_tol: float = 1e-4
    seed: int = 0


@dataclass
class LinearResult:
    x: StackedVector
    y: StackedVector
    records: list[IterationRecord]
    status: str
    iters: int
    gap: float
    L: float
    wall_s: float = 0.0

    def __iter__(self):
        return iter((self.x, self.y, self.records, self.status))


def linear_pdhgm(problem: LinearProblem, init, config: LinearPDConfig | None = None,
                 power: PowerIteration | None = None, callback=None) -> LinearResult:
    """PDHGM for a linear coupling, stopped on the pseudo-duality gap.

    Steps are ``config.tau``/``config.sigma`` when both are given, and
    ``tau0 / |K|``, ``sigma0 / |K|`` otherwise.  ``power`` lets a caller
    warm-start the norm estimate across related operators.
    """
    cfg = config or LinearPDConfig()
    K, G, Fs, c = problem.K, problem.G, problem.Fstar, problem.c
    x, y = init
    L = math.nan
    if cfg.tau is not None and cfg.sigma is not None:
        tau, sigma = cfg.tau, cfg.sigma
    else:
        power = power or PowerIteration(cfg.seed)
        L = power.run(K, cfg.norm_iters, cfg.norm_tol)
        if L <= 0:
            raise ValueError("zero operator")
        tau, sigma = cfg.tau0 / L, cfg.sigma0 / L

    state = PseudoGapState.for_start(x, cfg.growth)
    t0 = time.perf_counter()
    records: list[IterationRecord] = []
    status, gap = "iter_cap", math.inf
    KTy = K.adjoint_apply(y)
    i = 0
    for i in range(1, cfg.max_iters + 1):
        x_new = G.resolve(x - KTy * tau, tau)
        dx = x_new - x
        xw = x_new + dx * cfg.omega
        kw = K.apply(xw)
        if c is not None:
            kw = c + kw
        y_new = Fs.resolve(y + kw * sigma, sigma)
        if not (x_new.is_finite() and y_new.is_finite()):
            status = "diverged"
            log.warning("linear PDHGM diverged at iteration %d", i)
            break
        x, y = x_new, y_new
        KTy = K.adjoint_apply(y)
        if callback is not None:
            callback(i, x, y)
        check = i % cfg.gap_every == 0 or i == cfg.max_iters
        if check:
            gap = pseudo_gap(x, y, problem, state, KTy=KTy)
        if i == 1 or i % cfg.telemetry_every == 0 or (check and gap < cfg.rho2):
            records.append(IterationRecord(i, dx.norm(), math.nan, math.nan, L, math.nan,
                                           1e3 * (time.perf_counter() - t0), tau, sigma))
        if check and gap < cfg.rho2:
            status = "converged"
            break
    iters = i if status != "diverged" else i - 1
    return LinearResult(x, y, records, status, iters, gap, L, time.perf_counter() - t0)


@dataclass
class GNConfig:
    rho_outer: float = 1e-4
    rho2: float = 1e-3
    # norm of the outer step, as in SolverConfig.step_norm
    step_norm: str = "l2"
    max_outer: int = 100
    max_inner: int = 100000
    warm_start: bool = True
    tau0: float = 0.95
    sigma0: float = 0.95
    gap_every: int = 1
    growth: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if not (self.rho_outer > 0 and self.rho2 > 0):
            raise ValueError("thresholds must be positive")


@dataclass
class GNRecord:
    iter: int
    inner_iters: int
    step_norm: float
    gap_at_exit: float
    wall_ms: float
    inner_status: str = ""


@dataclass
class GNResult:
    x: StackedVector
    y: StackedVector
    records: list[GNRecord]
    status: str
    outer_iters: int
    inner_iters: int
    wall_s: float = 0.0

    def __iter__(self):
        return iter((self.x, self.y, self.records, self.status))


def linearised_problem(problem: SaddleProblem, xbar: StackedVector) -> LinearProblem:
    """Convex problem obtained by freezing ``K`` at ``xbar``."""
    J = problem.K.frozen_jacobian(xbar)
    c = problem.K.value(xbar) - J.apply(xbar)
    return LinearProblem(J, problem.Fstar, problem.G, c, problem.fidelity)


def gauss_newton(problem: SaddleProblem, init, config: GNConfig | None = None) -> GNResult:
    """Gauss-Newton with linear PDHGM inner solves.

    Inner solves that hit ``max_inner`` are recorded and the outer loop
    carries on.  ``inner_iters`` of the result is the cumulative PDHGM count.
    """
    cfg = config or GNConfig()
    x, y = init
    y0 = y.zeros_like()
    power = PowerIteration(cfg.seed)
    t0 = time.perf_counter()
    records: list[GNRecord] = []
    total_inner = 0
    status = "iter_cap"
    k = 0
    for k in range(1, cfg.max_outer + 1):
        try:
            lin = linearised_problem(problem, x)
        except ModelOverflowError as exc:
            log.warning("Gauss-Newton outer %d: %s", k, exc)
            status = "diverged"
            break
        inner = linear_pdhgm(
            lin,
            (x, y if cfg.warm_start else y0),
            LinearPDConfig(tau0=cfg.tau0, sigma0=cfg.sigma0, rho2=cfg.rho2,
                           max_iters=cfg.max_inner, gap_every=cfg.gap_every,
                           growth=cfg.growth, seed=cfg.seed),
            power=power,
        )
        total_inner += inner.iters
        if inner.status == "diverged":
            status = "diverged"
            break
        step = step_norm_of(inner.x - x, cfg.step_norm)
        records.append(GNRecord(k, inner.iters, step, inner.gap,
                                1e3 * (time.perf_counter() - t0), inner.status))
        if inner.status != "converged":
            log.info("Gauss-Newton outer %d: inner solve stopped with %s", k, inner.status)
        x, y = inner.x, inner.y
        if step < cfg.rho_outer:
            status = "converged"
            break
    return GNResult(x, y, records, status, k, total_inner, time.perf_counter() - t0)
