"""Projected Newton methods for discrepancy-constrained regularization."""
from .errors import *  # noqa: F401,F403
from .linop import (DenseOperator, FunctionOperator, LinearOperator, SparseOperator, fd1d,
                    gaussian_blur_1d, gaussian_blur_2d, identity_operator, tv2d_operator)
from .penalty import SmoothPenalty, lp_smooth, quadratic
from .pnewton import PNConfig, PNResult, ProjectedNewton, solve_projected_newton
from .problems import (ProblemInstance, load_problem, make_problem, piecewise_problem,
                       save_problem, smooth1d_problem, spike_problem)

__version__ = "0.1.0"
