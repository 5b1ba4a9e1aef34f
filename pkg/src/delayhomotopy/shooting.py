"""Damped Newton shooting on the initial adjoint p(0)."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DivergenceError, InvalidParameterError, SingularJacobianError
from .extremal import ExtremalLift, extremal_flow, integrate_extremal, lift_from_flow
from .integrate import Grid, Trajectory
from .problem import DelayedOCP

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShootingOptions:
    residual_tol_abs: float = 1e-6
    residual_tol_rel: float = 1e-9
    max_iterations: int = 50
    fd_step: float = 1e-6
    max_backtracks: int = 20
    # central differences whose second difference exceeds this fraction of
    # the first difference are redone with a 100x smaller step
    fd_curvature_tol: float = 1e-3
    fd_max_shrinks: int = 12
    # "dogleg": scaled trust region, radius halved on rejection;
    # "linesearch": Newton step length halved on rejection
    globalization: str = "dogleg"
    initial_radius_factor: float = 100.0

    def __post_init__(self):
        for name in ("residual_tol_abs", "residual_tol_rel", "fd_step", "fd_curvature_tol"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")
        if self.max_iterations < 1 or self.max_backtracks < 1:
            raise InvalidParameterError("iteration counts must be at least 1")
        if self.globalization not in ("dogleg", "linesearch"):
            raise InvalidParameterError(f"unknown globalization {self.globalization!r}")

    def tolerance(self, target) -> float:
        return self.residual_tol_abs + self.residual_tol_rel * float(np.linalg.norm(target))


@dataclass(frozen=True, eq=False)
class ShootingResult:
    p0: np.ndarray
    residual: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    lift: ExtremalLift
    history: list = field(default_factory=list)  # residual norm per accepted iterate
    fd_steps: Optional[np.ndarray] = None  # finite-difference steps last used


def _terminal_states(problem, tau, P, guess, grid):
    flow = extremal_flow(problem, tau, P, guess, grid)
    return flow.values[-1][..., : problem.n]


def shooting_residual(problem: DelayedOCP, tau: float, p0, guess: Optional[Trajectory],
                      grid: Grid) -> np.ndarray:
    return _terminal_states(problem, tau, np.asarray(p0, dtype=float), guess, grid) - problem.target


def _perturbed(p0, steps, cols):
    P = np.repeat(p0[None, :], 2 * len(cols), axis=0)
    for k, j in enumerate(cols):
        P[2 * k, j] += steps[j]
        P[2 * k + 1, j] -= steps[j]
    return P


def _probe(problem, tau, p0, steps, guess, grid):
    """One batched solve at p0 and its 2n perturbations: (lift, terminal states)."""
    n = problem.n
    P = np.concatenate([p0[None, :], _perturbed(p0, steps, range(n))])
    flow = extremal_flow(problem, tau, P, guess, grid)
    centre = Trajectory(flow.grid, flow.values[:, 0], flow.derivs[:, 0],
                        None if flow.left_derivs is None else flow.left_derivs[:, 0],
                        flow.history)
    return lift_from_flow(problem, tau, centre), flow.values[-1, 1:, :n]


def _fd_jacobian(problem, tau, p0, r0, guess, grid, opts, steps=None, first=None):
    """Central-difference Jacobian of the shooting residual.

    Returns (J, steps). Columns are recomputed with smaller steps while the
    second difference signals that the step leaves the linear regime.
    ``first`` holds precomputed terminal states for all 2n perturbations.
    """
    n = problem.n
    p0 = np.asarray(p0, dtype=float)
    if steps is None:
        steps = opts.fd_step * np.maximum(1.0, np.abs(p0))
    steps = np.array(steps, dtype=float)
    J = np.empty((n, n))
    todo = list(range(n))
    for attempt in range(opts.fd_max_shrinks + 1):
        if not todo:
            break
        if attempt == 0 and first is not None:
            X = first
        else:
            try:
                X = _terminal_states(problem, tau, _perturbed(p0, steps, todo), guess, grid)
            except DivergenceError:
                if attempt == opts.fd_max_shrinks:
                    raise
                steps[todo] *= 1e-2
                continue
        retry = []
        for k, j in enumerate(todo):
            rp, rm = X[2 * k], X[2 * k + 1]
            diff = rp - rm
            J[:, j] = diff / (2.0 * steps[j])
            if r0 is not None:
                second = rp + rm - 2.0 * (r0 + problem.target)
                noise = 1e-11 * max(1.0, float(np.linalg.norm(rp)))
                if np.linalg.norm(second) > max(opts.fd_curvature_tol * np.linalg.norm(diff), noise):
                    retry.append(j)
        if retry:
            log.debug("fd: shrinking steps of columns %s", retry)
            steps[retry] *= 1e-2
        todo = retry
    return J, steps


def fd_jacobian(problem: DelayedOCP, tau: float, p0, guess: Optional[Trajectory], grid: Grid,
                opts: ShootingOptions = ShootingOptions()) -> np.ndarray:
    r0 = shooting_residual(problem, tau, p0, guess, grid)
    J, _ = _fd_jacobian(problem, tau, p0, r0, guess, grid, opts)
    return J


def _solve_lu(J, rhs):
    with warnings.catch_warnings():
        # singularity is reported below as SingularJacobianError
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(J, check_finite=False)
    scale = np.linalg.norm(J)
    if not np.all(np.isfinite(lu)) or np.min(np.abs(np.diag(lu))) < 1e-14 * scale or scale == 0:
        raise SingularJacobianError("shooting Jacobian is singular")
    return scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)


def _dogleg(r, J, newton, D, radius):
    """Powell dogleg step in the variables D * p, restricted to ``radius``."""
    if np.linalg.norm(D * newton) <= radius:
        return newton
    Js = J / D
    g = -(Js.T @ r)
    Jg = Js @ g
    gg = float(g @ g)
    if gg == 0.0:
        return np.zeros_like(newton)
    cauchy = (gg / float(Jg @ Jg)) * g
    nc = np.linalg.norm(cauchy)
    if nc >= radius:
        return cauchy * (radius / nc) / D
    a = D * newton - cauchy
    aa, ab = float(a @ a), float(a @ cauchy)
    t = (-ab + np.sqrt(ab * ab - aa * (nc * nc - radius * radius))) / aa
    return (cauchy + t * a) / D


def newton_solve(problem: DelayedOCP, tau: float, p0_init, guess: Optional[Trajectory],
                 grid: Grid, opts: ShootingOptions = ShootingOptions(),
                 fd_steps=None) -> ShootingResult:
    """Damped Newton on p(0) -> x(T) - target with the adjoint guess held fixed.

    A trial point is accepted only if it lowers the residual norm; on
    rejection the trust radius (or step length, for ``linesearch``) is
    halved, up to ``max_backtracks`` times. Returns the best iterate;
    running out of iterations or backtracks is reported through
    ``converged``, not raised. ``fd_steps`` seeds the finite-difference
    steps, e.g. from a nearby solve.
    """
    tol = opts.tolerance(problem.target)
    p = np.array(p0_init, dtype=float)
    steps = opts.fd_step * np.maximum(1.0, np.abs(p)) if fd_steps is None \
        else np.array(fd_steps, dtype=float)
    # every solve carries its 2n finite-difference neighbours along: batching
    # makes them nearly free, and an accepted trial then already has its Jacobian
    lift, first = _probe(problem, tau, p, steps, guess, grid)
    r = lift.state.values[-1] - problem.target
    rn = float(np.linalg.norm(r))
    norms = [rn]
    D = None
    radius = None
    it = 0
    while rn > tol and it < opts.max_iterations:
        J, steps = _fd_jacobian(problem, tau, p, r, guess, grid, opts, steps, first)
        newton = _solve_lu(J, -r)
        cols = np.linalg.norm(J, axis=0)
        cols[cols == 0] = 1.0
        D = cols if D is None else np.maximum(D, cols)
        if radius is None:
            radius = opts.initial_radius_factor * (float(np.linalg.norm(D * p)) or 1.0)
        lam = 1.0
        accepted = False
        for _ in range(opts.max_backtracks + 1):
            if opts.globalization == "dogleg":
                s = _dogleg(r, J, newton, D, radius)
            else:
                s = lam * newton
            try:
                tl, tfirst = _probe(problem, tau, p + s, steps, guess, grid)
                tr = tl.state.values[-1] - problem.target
                trn = float(np.linalg.norm(tr))
            except DivergenceError:
                trn = np.inf
            if opts.globalization == "dogleg":
                predicted = rn - float(np.linalg.norm(r + J @ s))
                ratio = (rn - trn) / predicted if predicted > 0 else -1.0
                ds = float(np.linalg.norm(D * s))
                if ratio < 0.1:
                    radius = 0.5 * min(radius, ds)
                elif ratio > 0.5:
                    radius = max(radius, 2.0 * ds)
            else:
                lam *= 0.5
            if trn < rn:
                accepted = True
                break
            log.debug("newton: trial rejected (|r| = %.3e), radius %.3e", trn, radius or 0.0)
        if not accepted:
            log.info("newton: no decrease after %d backtracks (|r| = %.3e)", opts.max_backtracks, rn)
            break
        assert trn < rn
        it += 1
        p, lift, r, rn, first = p + s, tl, tr, trn, tfirst
        norms.append(rn)
        log.debug("newton it %d: |r| = %.3e", it, rn)
    return ShootingResult(p, r, rn, it, rn <= tol, lift, norms, steps)
