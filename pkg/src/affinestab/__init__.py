"""Bang-bang control of semilinear elliptic equations and its stability under perturbations."""

from .analysis import (RateReport, cone_split, coercivity_probe, estimate_structural_exponent,
                       fit_rate, gamma_form, lambda_direct, lambda_dual)
from .elliptic import EllipticOperator, apply, assemble, solve_shifted
from .errors import (AffineStabError, CoercivityError, ConsistencyError, GridMismatchError,
                     InsufficientDataError, NonconvergenceError, PreconditionError,
                     SingularOperatorError)
from .grid import GridSpec, ScalarField, inner_product, integrate, measure_level_set, norm
from .optimize import (PerturbationTriple, SolveOptions, solve_bangbang, solve_nonlinear_perturbed,
                       solve_tikhonov)
from .perturb import NonlinearPerturbation, d_upsilon, dc_metric, metlem_constant
from .problem import ProblemSpec, hamiltonian_derivatives, make_problem, project_admissible
from .solvers import (OptimalitySnapshot, pi_of, solve_adjoint, solve_linearized_adjoint,
                      solve_linearized_state, solve_state, switching)

__version__ = "0.1.0"
