"""Optimal control of delayed control-affine systems by indirect shooting
with homotopy on the delay."""

from .continuation import (ContinuationOptions, ContinuationStep, ContinuationTrace,
                           continuation_solve, solve_nondelayed)
from .endpoint import (GramianReport, TransitionTrajectory, controllability_gramian,
                       endpoint_derivative, endpoint_map, integrate_variational)
from .errors import (ConfigError, DivergenceError, InvalidParameterError, MissingGuessError,
                     OutOfDomainError, SingularJacobianError)
from .extremal import (ExtremalLift, control_law, cost_of, hamiltonian, integrate_extremal)
from .integrate import Grid, Trajectory, aligned_grid, integrate_dde
from .problem import (PRESETS, ConstantHistory, DelayedOCP, SmoothField, integrator_problem,
                      pendulum_problem, register_preset, rendezvous_problem,
                      scalar_delay_problem, validate)
from .shooting import (ShootingOptions, ShootingResult, fd_jacobian, newton_solve,
                       shooting_residual)

__version__ = "0.1.0"
