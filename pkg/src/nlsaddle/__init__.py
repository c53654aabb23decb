"""Primal-dual solvers for saddle problems with a non-linear coupling operator.

The main entry point is :func:`nl_pdhgm`, which solves

    min_x max_y  G(x) + <K(x), y> - F*(y)

for a differentiable ``K``.  :func:`linear_pdhgm` and :func:`gauss_newton`
provide the classical linear method and a Gauss-Newton loop around it.
"""

from .baseline import (
    GNConfig,
    LinearPDConfig,
    LinearProblem,
    gauss_newton,
    linear_pdhgm,
    pseudo_gap,
)
from .core import (
    ComplexField,
    ComplexField2D,
    LocalMetric,
    ScalarField,
    ScalarField2D,
    StackedVector,
    SymTensorField3D,
    VectorField,
    VectorField2D,
    inner,
    weighted_norm_sq,
)
from .evaluate import PsnrSpec, ResidualReport, discrepancy_sweep, optimality_residuals, psnr
from .operators import (
    BlockLinearOp,
    FourierSampling,
    Gradient,
    LinearOp,
    LinearWrapper,
    NonlinearOp,
    PhaseMagnitudeOp,
    SamplingMask,
    StejskalTannerOp,
    SymGradient,
    linearisation_error,
    op_norm_estimate,
)
from .prox import BlockResolvent, HuberBall, HuberBallSpec, QuadraticFidelity, ZeroFunctional
from .solver import IterationRecord, SaddleProblem, SolverConfig, SolverResult, nl_pdhgm

__version__ = "0.1.0"
