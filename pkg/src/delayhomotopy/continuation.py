"""Homotopy on the delay: solve tau = 0, then march tau to its target.

Each step warm-starts Newton from the previous p(0) and closes the advanced
adjoint term with the previous adjoint trajectory. After a converged step,
optional refinement passes re-shoot with the freshly computed adjoint as
the guess until it stops changing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DivergenceError, InvalidParameterError, SingularJacobianError
from .integrate import aligned_grid
from .problem import DelayedOCP
from .shooting import ShootingOptions, ShootingResult, newton_solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContinuationOptions:
    dtau_init: Optional[float] = None  # default tau_target / 10
    dtau_min: Optional[float] = None  # default tau_target / 1000
    refine_passes: int = 1
    refine_tol: float = 1e-8
    # passes at the target and at waypoints, where the answer is read off
    final_refine_passes: int = 25
    shooting: ShootingOptions = field(default_factory=ShootingOptions)
    base_h: Optional[float] = None  # default T / 2000
    growth: float = 1.5

    def __post_init__(self):
        if self.refine_passes < 0 or self.final_refine_passes < 0:
            raise InvalidParameterError("refinement pass counts must be >= 0")
        if not self.refine_tol > 0:
            raise InvalidParameterError("refine_tol must be positive")
        if self.dtau_init is not None and not self.dtau_init > 0:
            raise InvalidParameterError("dtau_init must be positive")
        if self.dtau_min is not None and not self.dtau_min > 0:
            raise InvalidParameterError("dtau_min must be positive")
        if (self.dtau_init is not None and self.dtau_min is not None
                and self.dtau_min > self.dtau_init):
            raise InvalidParameterError("dtau_min must not exceed dtau_init")
        if self.base_h is not None and not self.base_h > 0:
            raise InvalidParameterError("base_h must be positive")


@dataclass(frozen=True, eq=False)
class ContinuationStep:
    tau: float
    result: ShootingResult
    warm_iterations: int  # Newton iterations of the warm-started shoot
    total_iterations: int  # including refinement passes
    refinements: int = 0
    adjoint_change: float = 0.0  # sup-norm change in the last refinement pass


@dataclass(eq=False)
class ContinuationTrace:
    target_tau: float
    steps: list[ContinuationStep] = field(default_factory=list)
    succeeded: bool = False

    @property
    def taus(self) -> list[float]:
        return [s.tau for s in self.steps]

    @property
    def final(self) -> Optional[ShootingResult]:
        return self.steps[-1].result if self.steps else None

    def at(self, tau: float) -> ShootingResult:
        for s in self.steps:
            if abs(s.tau - tau) <= 1e-12 * max(1.0, abs(tau)):
                return s.result
        raise KeyError(tau)


def _shoot(problem, tau, p0, guess, grid, opts, fd_steps=None):
    try:
        return newton_solve(problem, tau, p0, guess, grid, opts.shooting, fd_steps)
    except (SingularJacobianError, DivergenceError) as exc:
        log.info("shoot at tau=%g failed: %s", tau, exc)
        return None


def solve_nondelayed(problem: DelayedOCP, p0_init=None,
                     opts: ContinuationOptions = ContinuationOptions()) -> ShootingResult:
    base_h = opts.base_h or problem.T / 2000
    grid = aligned_grid(problem.T, 0.0, base_h)
    p0 = np.zeros(problem.n) if p0_init is None else p0_init
    return newton_solve(problem, 0.0, p0, None, grid, opts.shooting)


def refine(problem: DelayedOCP, tau: float, result: ShootingResult, opts: ContinuationOptions,
           passes_max: Optional[int] = None):
    """Re-shoot with the latest adjoint as guess; returns (result, passes, change, iterations).

    Stops after ``passes_max`` passes (default ``opts.refine_passes``) or
    once the adjoint moves by at most ``opts.refine_tol`` in sup norm.
    """
    change = np.inf
    passes = 0
    iters = 0
    grid = result.lift.grid
    if passes_max is None:
        passes_max = opts.refine_passes
    for _ in range(passes_max):
        new = _shoot(problem, tau, result.p0, result.lift.adjoint, grid, opts,
                     result.fd_steps)
        if new is None or not new.converged:
            break
        passes += 1
        iters += new.iterations
        change = float(np.max(np.abs(new.lift.adjoint.values - result.lift.adjoint.values)))
        result = new
        if change <= opts.refine_tol:
            break
    return result, passes, change, iters


def continuation_solve(problem: DelayedOCP, tau_target: float, p0_init=None,
                       opts: ContinuationOptions = ContinuationOptions(),
                       waypoints: Sequence[float] = (),
                       on_step: Optional[Callable[[ContinuationStep], None]] = None,
                       ) -> ContinuationTrace:
    """Run the delay homotopy from 0 to ``tau_target``.

    ``waypoints`` are delays the schedule must land on exactly; there and
    at the target, refinement runs for up to ``final_refine_passes``. Failures
    are reported in the trace (``succeeded = False``), never raised.
    """
    if not 0 <= tau_target <= problem.M:
        raise InvalidParameterError(f"tau_target = {tau_target} outside [0, M = {problem.M}]")
    trace = ContinuationTrace(float(tau_target))
    base_h = opts.base_h or problem.T / 2000
    dtau_init = opts.dtau_init or tau_target / 10
    dtau_min = opts.dtau_min or tau_target / 1000
    stops = sorted({float(w) for w in waypoints if 0 < w < tau_target})

    try:
        first = solve_nondelayed(problem, p0_init, opts)
    except (SingularJacobianError, DivergenceError) as exc:
        log.warning("non-delayed solve failed: %s", exc)
        return trace
    if not first.converged:
        log.warning("non-delayed solve did not converge (|r| = %.3e)", first.residual_norm)
        return trace
    step = ContinuationStep(0.0, first, first.iterations, first.iterations)
    trace.steps.append(step)
    if on_step:
        on_step(step)
    log.info("tau=0: cost %.6e, %d Newton iterations", first.lift.cost, first.iterations)

    tau = 0.0
    prev = first
    dtau = dtau_init
    while tau < tau_target:
        nxt = tau + dtau
        # snap to the uniform schedule so rounding does not accumulate
        k = round(nxt / dtau_init)
        if k > 0 and abs(nxt - k * dtau_init) <= 1e-9 * dtau_init:
            nxt = float(f"{k * dtau_init:.12g}")
        nxt = min(nxt, tau_target)
        for w in stops:
            if tau < w < nxt:
                nxt = w
                break
        # avoid a sliver step just short of a stop
        if tau_target - nxt < 1e-9 * max(1.0, tau_target):
            nxt = tau_target
        grid = aligned_grid(problem.T, nxt, base_h)
        res = _shoot(problem, nxt, prev.p0, prev.lift.adjoint, grid, opts, prev.fd_steps)
        if res is None or not res.converged:
            dtau *= 0.5
            log.info("tau=%g: Newton failed, dtau -> %g", nxt, dtau)
            if dtau < dtau_min:
                log.warning("continuation stalled at tau=%g (dtau < %g)", tau, dtau_min)
                return trace
            continue
        warm = res.iterations
        landing = nxt == tau_target or nxt in stops
        res, passes, change, extra = refine(
            problem, nxt, res, opts,
            max(opts.refine_passes, opts.final_refine_passes) if landing else None)
        step = ContinuationStep(nxt, res, warm, warm + extra, passes,
                                change if passes else 0.0)
        trace.steps.append(step)
        if on_step:
            on_step(step)
        log.info("tau=%g: cost %.6e, %d+%d Newton iterations, %d refinements (change %.2e)",
                 nxt, res.lift.cost, warm, extra, passes, step.adjoint_change)
        tau, prev = nxt, res
        dtau = min(dtau * opts.growth, dtau_init)
    trace.succeeded = True
    return trace
