"""PSNR, optimality residuals, discrepancy-principle sweeps and result output."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, is_dataclass
from pathlib import Path

import numpy as np

from . import io
from .core import Field, StackedVector

__all__ = [
    "PsnrSpec",
    "psnr",
    "PSNR_CAP",
    "ResidualReport",
    "optimality_residuals",
    "SweepRow",
    "SweepResult",
    "discrepancy_sweep",
    "emit",
    "SUMMARY_KEYS",
]

PSNR_CAP = 999.0
SUMMARY_KEYS = ("variant", "iters", "gn_outer", "wall_s", "psnr_r", "psnr_phi", "psnr",
                "residual", "alpha_hat")


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Field) else x, dtype=float)


@dataclass
class PsnrSpec:
    """Peak (dynamic range of the reference) and optional evaluation mask.

    A mask with the grid's shape selects points; for multi-component
    arrays it may also cover only the trailing grid axes.
    """

    peak: float | None = None
    mask: np.ndarray | None = None

    @classmethod
    def for_reference(cls, ref, mask=None) -> "PsnrSpec":
        r = _arr(ref)
        sel = r if mask is None else _select(r, mask)
        return cls(peak=float(sel.max() - sel.min()), mask=mask)


def _select(a: np.ndarray, mask) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.shape == a.shape:
        return a[m]
    if a.shape[-m.ndim:] == m.shape:
        return a[..., m]
    raise ValueError(f"mask shape {m.shape} does not fit data shape {a.shape}")


def psnr(x, ref, spec: PsnrSpec | None = None) -> float:
    """``10 log10(peak^2 / MSE)`` over the masked points, ``inf`` for identical inputs."""
    spec = spec or PsnrSpec()
    a, b = _arr(x), _arr(ref)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if spec.mask is not None:
        if not np.any(spec.mask):
            raise ValueError("empty PSNR mask")
        a, b = _select(a, spec.mask), _select(b, spec.mask)
    peak = spec.peak if spec.peak is not None else float(b.max() - b.min())
    if not peak > 0:
        raise ValueError("PSNR peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak**2 / mse)


@dataclass
class ResidualReport:
    primal_stationarity: float
    data_consistency: float
    dual_fixed_point: float


def optimality_residuals(x: StackedVector, y: StackedVector, problem, sigma_probe: float = 1.0,
                         norm: str = "l2") -> ResidualReport:
    """Residuals of the first-order conditions at ``(x, y)``.

    ``norm="grid"`` measures every residual in the grid-weighted L2 norm,
    matching a solver stopped with ``step_norm="grid"``.

    * ``|J_K(x)^* y|`` (stationarity for ``G = 0``; for other ``G`` the
      distance of ``x`` from its own proximal step is used),
    * ``|T(x) - f - lambda|`` on the fidelity block,
    * the largest blockwise ``|y_b - prox_{sigma F*_b}(y_b + sigma K(x)_b)|``.
    """
    from .prox import ZeroFunctional

    def nrm(v):
        return v.grid_norm() if norm == "grid" else v.norm()

    K = problem.K
    KTy = K.jac_adjoint_apply(x, y)
    if isinstance(problem.G, ZeroFunctional):
        stat = nrm(KTy)
    else:
        stat = nrm(x - problem.G.resolve(x - KTy * sigma_probe, sigma_probe)) / sigma_probe
    Kx = K.value(x)
    data = math.nan
    if problem.fidelity is not None:
        lam = y[problem.fidelity]
        data = nrm(Kx[problem.fidelity] - problem.data - lam)
    worst = 0.0
    for name, fn in problem.Fstar.blocks.items():
        yb = y[name]
        res = nrm(yb - fn.resolve(yb + Kx[name] * sigma_probe, sigma_probe))
        worst = max(worst, res)
    return ResidualReport(stat, data, worst)


@dataclass
class SweepRow:
    alpha: float
    residual: float
    psnr: dict
    status: str
    iters: int


@dataclass
class SweepResult:
    alpha_hat: float
    qualified: bool
    rows: list[SweepRow]
    noise_level: float


def discrepancy_sweep(alphas, problem_builder, noise_level: float, workers: int = 1) -> SweepResult:
    """Largest ``alpha`` whose data residual stays below ``noise_level``.

    ``problem_builder(alpha)`` must solve the problem and return
    ``(residual, psnr_dict, status, iters)``.  When no ``alpha``
    qualifies the smallest one is returned with ``qualified=False``.
    With ``workers > 1`` the runs are spread over a thread pool; rows keep
    the order of ``alphas`` either way.
    """
    alphas = list(alphas)
    if not alphas:
        raise ValueError("empty alpha list")
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be sorted ascending")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(problem_builder, alphas))
    else:
        outputs = [problem_builder(a) for a in alphas]
    rows = [SweepRow(float(a), float(res), dict(scores), status, int(iters))
            for a, (res, scores, status, iters) in zip(alphas, outputs)]
    ok = [r.alpha for r in rows if r.residual <= noise_level]
    if ok:
        return SweepResult(max(ok), True, rows, noise_level)
    return SweepResult(alphas[0], False, rows, noise_level)


def emit(obj, path, **kwargs):
    """Write ``obj`` to ``path`` in the format matching its kind.

    * a list of telemetry records -> CSV,
    * a 2D array or field -> 16-bit PGM plus ``.range`` sidecar,
    * a dict or :class:`ResidualReport` -> ``key: value`` summary.
    """
    path = Path(path)
    if isinstance(obj, (list, tuple)):
        io.write_records_csv(path, obj, **kwargs)
    elif isinstance(obj, (Field, np.ndarray)):
        io.write_pgm16(path, _arr(obj), **kwargs)
    elif isinstance(obj, dict):
        io.write_summary(path, obj)
    elif is_dataclass(obj):
        io.write_summary(path, asdict(obj))
    else:
        raise TypeError(f"don't know how to emit {type(obj).__name__}")
    return path
