"""Command-line front end.

Subcommands: ``phantom``, ``mask``, ``simulate``, ``solve``, ``sweep``,
``compare`` and ``dti-demo``.  Run configurations are flat ``key = value``
files; any key may also be overridden on the command line as ``key=value``.

Exit codes: 0 converged, 2 iteration cap, 3 diverged, 1 usage or input error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .baseline import GNConfig, gauss_newton
from .core import ComplexField
from .evaluate import PsnrSpec, discrepancy_sweep, optimality_residuals, psnr
from .operators import PowerIteration, SamplingMask
from .problems import (
    DtiSpec,
    ExperimentSpec,
    backprojection,
    build_dti_problem,
    build_velocity_problem,
    dti_init,
    dti_log_fit,
    dti_phantom,
    dti_simulate,
    gaussian_mask,
    kspace_simulate,
    ring_mask,
    velocity_init,
    velocity_phantom,
    split_polar,
)
from .solver import SolverConfig, nl_pdhgm

__all__ = ["RunConfig", "ConfigError", "parse_config", "format_config", "load_config", "main"]

log = logging.getLogger("nlsaddle")

EXIT_CODES = {"converged": 0, "iter_cap": 2, "diverged": 3}
SOLVERS = ("nl-exact", "nl-linearised", "nl-interp", "gauss-newton")
_VARIANT = {"nl-exact": "exact", "nl-linearised": "linearised", "nl-interp": "interpolated"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything needed to reproduce a run.

    Velocity weights are given for unit grid step (see
    :class:`~nlsaddle.problems.ExperimentSpec`).  The mask is drawn with
    ``seed`` and the noise with ``seed + 1`` unless ``mask_file`` /
    ``data_file`` point at existing inputs.
    """

    # velocity experiment
    n: int = 64
    noise_sigma: float = 0.2
    coverage: float = 0.15
    mask_variance: float = ExperimentSpec.mask_variance
    alpha_r: float = 1.0
    alpha_phi: float = 0.15
    beta_phi: float = 0.20
    gamma: float = 0.0
    scale_by_h: bool = True
    fft_norm: str = "backward"
    mask_file: str = ""
    data_file: str = ""
    # DTI experiment
    dti_nx: int = 32
    dti_ny: int = 32
    dti_nz: int = 4
    dti_N: int = 12
    dti_noise_sigma: float = DtiSpec.noise_sigma
    dti_alpha: float = DtiSpec.alpha
    dti_beta: float = DtiSpec.beta
    bvecs_file: str = ""
    # solver
    solver: str = "nl-exact"
    tau0: float = 0.5
    sigma0: float = 1.9
    omega: float = 1.0
    rho: float = 1e-4
    rho2: float = 1e-5
    step_norm: str = "grid"
    max_iters: int = 100000
    max_outer: int = 100
    telemetry_every: int = 100
    seed: int = 0
    out_dir: str = "run"

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.fft_norm not in ("ortho", "backward"):
            raise ConfigError(f"fft_norm must be 'ortho' or 'backward', got {self.fft_norm!r}")

    def experiment(self) -> ExperimentSpec:
        return ExperimentSpec(
            n=self.n, noise_sigma=self.noise_sigma, coverage=self.coverage,
            mask_variance=self.mask_variance, alpha_r=self.alpha_r, alpha_phi=self.alpha_phi,
            beta_phi=self.beta_phi, gamma=self.gamma, seed=self.seed,
            scale_by_h=self.scale_by_h, fft_norm=self.fft_norm,
        )

    def dti(self) -> DtiSpec:
        b = io.read_bvecs(self.bvecs_file) if self.bvecs_file else None
        return DtiSpec(nx=self.dti_nx, ny=self.dti_ny, nz=self.dti_nz, N=self.dti_N, b=b,
                       noise_sigma=self.dti_noise_sigma, alpha=self.dti_alpha,
                       beta=self.dti_beta, seed=self.seed)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(variant=_VARIANT.get(self.solver, "exact"), omega=self.omega,
                            tau0=self.tau0, sigma0=self.sigma0, rho=self.rho,
                            step_norm=self.step_norm, max_iters=self.max_iters,
                            telemetry_every=self.telemetry_every, seed=self.seed)

    def gn_config(self) -> GNConfig:
        return GNConfig(rho_outer=self.rho, rho2=self.rho2, step_norm=self.step_norm,
                        max_outer=self.max_outer,
                        max_inner=self.max_iters, tau0=self.tau0, sigma0=self.sigma0,
                        seed=self.seed)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    typ = _TYPES[key]
    if typ == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw


def parse_config(text: str, source: str = "<config>", base: dict | None = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown keys are errors."""
    values = dict(base or {})
    for k, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{k}: expected 'key = value': {line.strip()!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{k}: unknown key {key!r}: {line.strip()!r}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{k}: {exc}: {line.strip()!r}") from None
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                   for k, v in asdict(cfg).items())


def load_config(path: str | None, overrides=()) -> RunConfig:
    text = ""
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_config(text, str(path or "<defaults>"))
    if overrides:
        cfg = parse_config("\n".join(overrides), "<command line>", asdict(cfg))
    return cfg


def _threads() -> int:
    raw = os.environ.get("NLSADDLE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"NLSADDLE_THREADS must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# velocity pipeline


@dataclass
class VelocityData:
    spec: ExperimentSpec
    mask: SamplingMask
    f: ComplexField
    r: object
    phi: object
    hash: str


def velocity_data(cfg: RunConfig) -> VelocityData:
    spec = cfg.experiment()
    r, phi = velocity_phantom(spec.n)
    if cfg.mask_file:
        mask = SamplingMask(io.read_pbm(cfg.mask_file))
    else:
        mask = gaussian_mask(spec.n, spec.coverage, spec.mask_variance, seed=cfg.seed)
    if cfg.data_file:
        z, nx, ny = io.read_kspace(cfg.data_file)
        if (nx, ny) != (spec.n, spec.n) or z.size != mask.count:
            raise ConfigError(f"{cfg.data_file}: data does not match n={spec.n} and the mask")
        f = ComplexField(z)
    else:
        f = kspace_simulate(r, phi, mask, spec.noise_sigma, seed=cfg.seed + 1, norm=spec.fft_norm)
    return VelocityData(spec, mask, f, r, phi, io.data_hash(mask.data, f.data))


def _velocity_scores(x, data: VelocityData) -> dict:
    ring = ring_mask(data.spec.n)
    return {
        "psnr_r": psnr(x["r"], data.r),
        "psnr_phi": psnr(x["phi"], data.phi, PsnrSpec.for_reference(data.phi, ring)),
    }


def solve_velocity(cfg: RunConfig, data: VelocityData, spec: ExperimentSpec | None = None):
    """Build and solve; returns ``(x, y, problem, status, info)``."""
    problem = build_velocity_problem(spec or data.spec, data.f, data.mask, self_check=False)
    init = velocity_init(problem)
    info = {"variant": cfg.solver}
    if cfg.solver == "gauss-newton":
        res = gauss_newton(problem, init, cfg.gn_config())
        info.update(iters=res.inner_iters, gn_outer=res.outer_iters, wall_s=res.wall_s,
                    records=res.records)
    else:
        res = nl_pdhgm(problem, init, cfg.solver_config())
        info.update(iters=res.iters, wall_s=res.wall_s, records=res.records)
    return res.x, res.y, problem, res.status, info


def _write_run_dir(out: Path, cfg: RunConfig, data_hash: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    (out / "seed").write_text(f"{cfg.seed}\n")
    (out / "data_hash").write_text(f"{data_hash}\n")


def _summary(info: dict, scores: dict, residual: float, alpha_hat=None) -> dict:
    out = {"variant": info["variant"], "iters": info["iters"]}
    if "gn_outer" in info:
        out["gn_outer"] = info["gn_outer"]
    out["wall_s"] = round(info["wall_s"], 3)
    out.update(scores)
    out["residual"] = residual
    if alpha_hat is not None:
        out["alpha_hat"] = alpha_hat
    out["psnr_peak"] = "reference dynamic range within the evaluation mask"
    return out


def dual_probe_step(problem, x, cfg: RunConfig, records=()) -> float:
    """Dual step of a finished run, used to probe the dual fixed point.

    NL-PDHGM records carry their last ``sigma``; otherwise the step is
    ``sigma0 / |J_K(x)|`` at the final iterate.
    """
    sigma = getattr(records[-1], "sigma", None) if len(records) else None
    if sigma:
        return float(sigma)
    L = PowerIteration(cfg.seed).run(problem.K.frozen_jacobian(x))
    return cfg.sigma0 / L


def cmd_solve(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    data = velocity_data(cfg)
    _write_run_dir(out, cfg, data.hash)
    x, y, problem, status, info = solve_velocity(cfg, data)
    scores = _velocity_scores(x, data)
    residual = problem.data_residual(x)
    io.write_records_csv(out / "telemetry.csv", info["records"])
    io.write_pgm16(out / "r.pgm", x["r"].data)
    io.write_pgm16(out / "phi.pgm", x["phi"].data)
    io.write_summary(out / "run.summary", _summary(info, scores, residual))
    probe = dual_probe_step(problem, x, cfg, info["records"])
    rep = optimality_residuals(x, y, problem, sigma_probe=probe, norm=cfg.step_norm)
    io.write_summary(out / "residuals.summary", {**asdict(rep), "sigma_probe": probe})
    log.info("%s: %s after %d iterations, PSNR r %.2f dB, phi %.2f dB",
             cfg.solver, status, info["iters"], scores["psnr_r"], scores["psnr_phi"])
    return EXIT_CODES[status]


def scaled_weights(cfg: RunConfig, alpha: float) -> dict:
    """Regularisation weights for ``alpha_r = alpha`` with the configured ratios kept."""
    s = alpha / cfg.alpha_r
    return {"alpha_r": alpha, "alpha_phi": cfg.alpha_phi * s, "beta_phi": cfg.beta_phi * s}


def cmd_sweep(cfg: RunConfig, alphas: list[float]) -> int:
    out = Path(cfg.out_dir)
    data = velocity_data(cfg)
    _write_run_dir(out, cfg, data.hash)
    statuses = {}

    def run(alpha):
        c = replace(cfg, **scaled_weights(cfg, alpha))
        x, _, problem, status, info = solve_velocity(c, data, c.experiment())
        statuses[alpha] = status
        return problem.data_residual(x), _velocity_scores(x, data), status, info["iters"]

    level = math.sqrt(2 * data.mask.count) * cfg.noise_sigma
    result = discrepancy_sweep(sorted(alphas), run, level, workers=_threads())
    rows = [{"alpha": r.alpha, "residual": r.residual, "psnr_r": r.psnr["psnr_r"],
             "psnr_phi": r.psnr["psnr_phi"], "status": r.status, "iters": r.iters}
            for r in result.rows]
    io.write_records_csv(out / "sweep.csv", rows,
                         columns=("alpha", "residual", "psnr_r", "psnr_phi", "status", "iters"),
                         comment=f"data_hash: {data.hash}\nnoise_level: {level!r}")
    best = next(r for r in result.rows if r.alpha == result.alpha_hat)
    info = {"variant": cfg.solver, "iters": best.iters, "wall_s": 0.0}
    summary = _summary(info, best.psnr, best.residual, result.alpha_hat)
    summary["alpha_qualified"] = result.qualified
    io.write_summary(out / "run.summary", summary)
    return EXIT_CODES[best.status]


COMPARE_COLUMNS = ("Method", "PDHGM iters.", "GN iters.", "Time", "PSNR")


def cmd_compare(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    data = velocity_data(cfg)
    _write_run_dir(out, cfg, data.hash)

    t0 = time.perf_counter()
    u = backprojection(data.f, data.mask, data.spec.fft_norm, data.spec.h)
    r_bp, phi_bp = split_polar(u.data, data.spec.h)
    bp_scores = _velocity_scores({"r": r_bp, "phi": phi_bp}, data)
    rows = [("Backprojection", "", "", time.perf_counter() - t0, bp_scores)]

    def run(solver):
        c = replace(cfg, solver=solver)
        x, _, _, status, info = solve_velocity(c, data)
        return solver, status, info, _velocity_scores(x, data)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(run, ("nl-exact", "nl-linearised", "gauss-newton")))
    worst = 0
    names = {"nl-exact": "NL-PDHGM (exact)", "nl-linearised": "NL-PDHGM (linearised)",
             "gauss-newton": "Gauss-Newton"}
    for solver, status, info, scores in results:
        gn = info.get("gn_outer", "")
        rows.append((names[solver], info["iters"], gn, info["wall_s"], scores))
        worst = max(worst, EXIT_CODES[status])
    table = [
        {"Method": m, "PDHGM iters.": it, "GN iters.": gn, "Time": f"{t:.2f}",
         "PSNR": f"{s['psnr_r']:.2f} / {s['psnr_phi']:.2f}"}
        for m, it, gn, t, s in rows
    ]
    io.write_records_csv(out / "compare.csv", table, columns=COMPARE_COLUMNS,
                         comment=f"data_hash: {data.hash}\nPSNR: r / phi (ring mask), dB")
    return worst


def dti_experiment(cfg: RunConfig):
    """Synthetic DTI denoising; returns ``(result, problem, truth, scores)``."""
    spec = cfg.dti()
    v, s0 = dti_phantom(spec.nx, spec.ny, spec.nz, seed=cfg.seed)
    s = dti_simulate(v, s0, spec.b, spec.noise_sigma, seed=cfg.seed + 1)
    problem = build_dti_problem(spec, s, s0, self_check=False)
    init = dti_init(problem)
    res = nl_pdhgm(problem, init, cfg.solver_config())
    peak = PsnrSpec.for_reference(v)
    scores = {
        "psnr_input": psnr(dti_log_fit(s, s0, spec.b), v, peak),
        "psnr": psnr(res.x["v"], v, peak),
    }
    return res, problem, v, scores


def cmd_dti_demo(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    spec = cfg.dti()
    _write_run_dir(out, cfg, f"dti-seed-{cfg.seed}")
    io.write_bvecs(out / "bvecs.txt", spec.b)
    res, problem, v, scores = dti_experiment(cfg)
    io.write_records_csv(out / "telemetry.csv", res.records)
    mid = v.data.shape[1] // 2
    for c, name in enumerate(("xx", "yy", "zz", "xy", "xz", "yz")):
        io.write_pgm16(out / f"v_{name}.pgm", res.x["v"].data[c, mid])
    info = {"variant": cfg.solver, "iters": res.iters, "wall_s": res.wall_s}
    summary = _summary(info, scores, problem.data_residual(res.x))
    io.write_summary(out / "run.summary", summary)
    log.info("DTI: %s after %d iterations, PSNR %.2f -> %.2f dB",
             res.status, res.iters, scores["psnr_input"], scores["psnr"])
    return EXIT_CODES[res.status]


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nlsaddle", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    ph = sub.add_parser("phantom", help="write the velocity phantom as PGM images")
    ph.add_argument("--n", type=int, default=64)
    ph.add_argument("--out", default=".")

    mk = sub.add_parser("mask", help="draw a Gaussian k-space mask and write it as PBM")
    mk.add_argument("--n", type=int, default=64)
    mk.add_argument("--coverage", type=float, default=0.15)
    mk.add_argument("--variance", type=float, default=ExperimentSpec.mask_variance)
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--out", default="mask.pbm")

    for name, helptext in (
        ("simulate", "simulate noisy k-space data into out_dir"),
        ("solve", "solve a velocity reconstruction"),
        ("sweep", "discrepancy-principle sweep over alpha_r"),
        ("compare", "backprojection, both NL-PDHGM variants and Gauss-Newton"),
        ("dti-demo", "synthetic DTI denoising"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", nargs="?", help="key = value file")
        sp.add_argument("overrides", nargs="*", metavar="key=value")
        if name == "sweep":
            sp.add_argument("--alphas", required=True,
                            help="comma-separated alpha_r values (unit grid step)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "phantom":
            r, phi = velocity_phantom(args.n)
            out = Path(args.out)
            io.write_pgm16(out / "r.pgm", r.data)
            io.write_pgm16(out / "phi.pgm", phi.data)
            return 0
        if args.cmd == "mask":
            m = gaussian_mask(args.n, args.coverage, args.variance, seed=args.seed)
            io.write_pbm(args.out, m.data)
            return 0
        cfg_path, overrides = args.config, list(args.overrides)
        if cfg_path and "=" in cfg_path and not Path(cfg_path).exists():
            cfg_path, overrides = None, [cfg_path] + overrides
        cfg = load_config(cfg_path, overrides)
        if args.cmd == "simulate":
            data = velocity_data(cfg)
            out = Path(cfg.out_dir)
            _write_run_dir(out, cfg, data.hash)
            io.write_pbm(out / "mask.pbm", data.mask.data)
            io.write_kspace(out / "data.kspace", data.f.data, data.spec.n, data.spec.n)
            io.write_pgm16(out / "r_true.pgm", data.r.data)
            io.write_pgm16(out / "phi_true.pgm", data.phi.data)
            return 0
        if args.cmd == "solve":
            return cmd_solve(cfg)
        if args.cmd == "sweep":
            try:
                alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
            except ValueError:
                raise ConfigError(f"--alphas: not a comma-separated list of numbers: {args.alphas!r}")
            if not alphas:
                raise ConfigError("--alphas is empty")
            return cmd_sweep(cfg, alphas)
        if args.cmd == "compare":
            return cmd_compare(cfg)
        return cmd_dti_demo(cfg)
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"nlsaddle: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
