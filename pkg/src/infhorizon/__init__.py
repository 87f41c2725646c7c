"""Necessary conditions for infinite-horizon optimal control, made computable."""
from .convex_geom import (CoordinateCone, FullSpace, HullApprox, Membership, PointCloud,
                          Polyhedral, ZeroCone, cone_from_dict, cone_plus_hull_membership,
                          convex_hull_2d, hull_distance, hull_of, normal_cone)
from .errors import *  # noqa: F401,F403
from .expr import compile_expr, diff, eval_dual, eval_hessian, parse_expr, to_string
from .modelfile import ConfigError, LoadedModel, load_model, model_from_dict, preset
from .models import (RamseyModel, SDrivenModel, expr_system, oscillator_model,
                     oscillator_optimal_process, planar_model, planar_optimal_process,
                     ramsey_constant_process, ramsey_eta, ramsey_jacobian, ramsey_reduced_field,
                     ramsey_saddle_path, ramsey_stationary, ramsey_system, saddle_eigen,
                     sdriven_optimal_process, sdriven_system)
from .ode_core import (ControlSignal, ControlSystem, Process, TimeGrid, eval_cost, hamiltonian,
                       integrate_process)
from .sets import Box, ControlSet, HalfLine, Point, WholeSpace
from .transversality import (AkResult, GradientSampleSet, LimitSchedule, ak_limit, akk_check,
                             akk_samples, anton_residual, maxh_residual, overtaking_compare,
                             psiA_residual, sample_filter, transversality_zero_check,
                             wakk_check, wakk_samples, wakk_samples_batch)
from .variational import (CostateArc, SensitivityPath, batch_sensitivity, cauchy_residual,
                          cost_gradient, costate_from_terminal, integrate_adjoint,
                          transition_matrix)

__version__ = "0.1.0"
