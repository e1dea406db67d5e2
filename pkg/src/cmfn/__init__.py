"""Solve ODE/PDE boundary-value problems with hard-constrained feedforward networks.

A trial function ``u = G + w * N`` satisfies the Dirichlet data exactly for
any network ``N``; training minimizes the summed squared residual of the
differential equation over collocation points with L-BFGS.  Derivatives with
respect to inputs come from Taylor-mode jets, gradients with respect to
network parameters from a reverse sweep over the jet computation.
"""

__version__ = "0.1.0"

from .autodiff import Jet, derivative, grad, gradcheck, jet_const, jet_var, value_and_grad
from .constraints import (SmoothField, TrialFunction, exp_weight_halfline, hermite_weight_interval,
                          tensor_weight_box, trial_eval, validate_constraints)
from .evaluation import ablation_run, derivative_sweep, error_distribution, l2_error, problem_error
from .network import MFN, get_params, mfn_forward, mfn_init, set_params
from .optimizer import LbfgsConfig, minimize, two_loop_direction
from .problems import (PROBLEMS, get_problem, problem_boundary_layer, problem_convection_diffusion,
                       problem_integral, problem_laplace, reduced_solution_reference_integral,
                       solve_bl_constant)
from .trainer import (CollocationSet, TrainConfig, TrainReport, grid_points_2d, loss, loss_grad, train,
                      uniform_points_1d)
