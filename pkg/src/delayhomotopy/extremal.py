"""Forward integration of the state/adjoint extremal system.

With the cost multiplier fixed at -1 the Hamiltonian is

    H = <p, f0(x) + f1(x_delayed) + u f2(x)> - u^2,

so the maximising control is u = <p, f2(x)> / 2. The adjoint equation
contains an advanced term p(t + tau); it is closed by sampling a known
guess trajectory (the previous continuation iterate) at t + tau.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParameterError, MissingGuessError
from .integrate import Grid, Trajectory, integrate_dde
from .problem import DelayedOCP, SmoothField


def control_law(x, p, f2: SmoothField):
    return np.sum(np.asarray(p) * f2(x), axis=-1) / 2.0


def hamiltonian(problem: DelayedOCP, x, x_delayed, u, p):
    u = np.asarray(u)
    drift = problem.f0(x) + problem.f1(x_delayed) + u[..., None] * problem.f2(x)
    return np.sum(np.asarray(p) * drift, axis=-1) - u * u


def cost_of(control: Trajectory) -> float:
    """Integral of u^2 over the control grid (Simpson if N is even, else trapezoid)."""
    u2 = np.asarray(control.values, dtype=float).reshape(control.grid.N + 1, -1)[:, 0] ** 2
    h = control.grid.h
    N = control.grid.N
    if N % 2 == 0:
        return float(h / 3.0 * (u2[0] + u2[-1] + 4.0 * u2[1:-1:2].sum() + 2.0 * u2[2:-1:2].sum()))
    return float(h * (0.5 * (u2[0] + u2[-1]) + u2[1:-1].sum()))


@dataclass(frozen=True, eq=False)
class ExtremalLift:
    state: Trajectory
    adjoint: Trajectory
    control: Trajectory
    cost: float
    tau: float
    multiplier: float = -1.0

    @property
    def grid(self) -> Grid:
        return self.state.grid


CLOSURES = ("anchored", "direct")


def _jac_transpose(field: SmoothField):
    """(x, q) -> J(x)^T q, or None for constant fields."""
    if field.constant_value is not None:
        return None
    if field.matrix is not None:
        A = field.matrix
        return lambda x, q: q @ A
    jac = field.jacobian
    return lambda x, q: (q[..., None, :] @ jac(x))[..., 0, :]


def _check_args(problem, tau, guess, grid):
    if not 0 <= tau <= problem.M:
        raise InvalidParameterError(f"tau = {tau} outside [0, M = {problem.M}]")
    if abs(grid.tf - problem.T) > 1e-12 * max(1.0, problem.T) or grid.t0 != 0:
        raise InvalidParameterError("grid must span [0, T]")
    if tau > 0:
        if guess is None:
            raise MissingGuessError("tau > 0 requires an adjoint guess trajectory")
        if guess.t0 > 1e-12 or guess.tf < problem.T * (1 - 1e-12):
            raise InvalidParameterError("guess must cover [0, T]")


def extremal_flow(problem: DelayedOCP, tau: float, p0, guess: Optional[Trajectory],
                  grid: Grid, closure: str = "anchored") -> Trajectory:
    """Augmented (x, p) trajectory for one or a batch of initial adjoints.

    ``p0`` has shape (n,) or (k, n); the returned values have shape
    (N + 1, 2n) or (N + 1, k, 2n).
    """
    _check_args(problem, tau, guess, grid)
    if closure not in CLOSURES:
        raise InvalidParameterError(f"unknown closure {closure!r}")
    anchored = closure == "anchored"
    n = problem.n
    f0, f1, f2 = problem.f0, problem.f1, problem.f2
    p0 = np.asarray(p0, dtype=float)
    x0 = problem.x0
    z0 = np.concatenate([np.broadcast_to(x0, p0.shape), p0], axis=-1)
    pad = np.zeros(n)

    def history(t):
        return np.concatenate([problem.history(t), pad])

    T = grid.tf
    cutoff = None
    breaks = ()
    if tau > 0:
        j = grid.node_index(T - tau)
        if j is not None:
            cutoff = grid.times[j]
            breaks = (cutoff,)
        else:
            cutoff = T - tau
    # guess values at every stage time t0 + k h/2 (stage times of RK4)
    shift = None
    if tau > 0:
        half = grid.t0 + 0.5 * grid.h * np.arange(2 * grid.N + 1)
        active = half < cutoff + 0.25 * grid.h
        ahead = np.zeros((half.shape[0], n))
        ta = half[active] + tau
        # aligned grids never look past T; the unaligned fallback may overshoot
        # by under h/4 on the step straddling the cutoff, clamped below
        slack = 1e-9 if breaks else 0.25
        assert np.all(ta <= T + slack * grid.h), "advanced lookup past the horizon"
        ahead[active] = guess.sample_many(np.minimum(ta, guess.tf))
        shift = ahead
        if anchored:
            shift = ahead - guess.sample_many(half)
    inv_half = 2.0 / grid.h
    t0 = grid.t0

    jt0, jt1, jt2 = _jac_transpose(f0), _jac_transpose(f1), _jac_transpose(f2)
    c2 = f2.constant_value
    f0_eval, f1_eval = f0.eval, f1.eval

    def rhs(t, z, zd):
        x = z[..., :n]
        p = z[..., n:]
        if c2 is not None:
            f2x = c2
            u = (p @ c2)[..., None] * 0.5
        else:
            f2x = f2.eval(x)
            u = np.sum(p * f2x, axis=-1)[..., None] * 0.5
        xdot = f0_eval(x) + f1_eval(zd[..., :n]) + u * f2x
        pdot = np.zeros_like(p) if jt0 is None else -jt0(x, p)
        if jt2 is not None:
            pdot -= u * jt2(x, p)
        if jt1 is not None:
            if tau == 0:
                pdot -= jt1(x, p)
            elif t < cutoff:
                q = shift[int(round((t - t0) * inv_half))]
                if anchored:
                    q = p + q
                pdot -= jt1(x, q)
        return np.concatenate([xdot, pdot], axis=-1)

    return integrate_dde(rhs, tau, history, grid, initial=z0, breaks=breaks)


def lift_from_flow(problem: DelayedOCP, tau: float, flow: Trajectory) -> ExtremalLift:
    """Split an unbatched augmented trajectory into state, adjoint and control."""
    n = problem.n
    state = flow.take(np.s_[:n])
    state = Trajectory(state.grid, state.values, state.derivs, state.left_derivs, problem.history)
    adjoint = flow.take(np.s_[n:])
    adjoint = Trajectory(adjoint.grid, adjoint.values, adjoint.derivs, adjoint.left_derivs, None)
    x, p = state.values, adjoint.values
    f2 = problem.f2
    f2x = f2(x)
    J2 = f2.jacobian(x)

    def udot(xd, pd):
        # d/dt <p, f2(x)> / 2
        return (np.sum(pd * f2x, axis=-1) + np.einsum("ti,tij,tj->t", p, J2, xd)) / 2.0

    u = control_law(x, p, f2)
    du = udot(state.derivs, adjoint.derivs)
    dul = None
    if flow.left_derivs is not None:
        dul = udot(state.left_derivs, adjoint.left_derivs)
    control = Trajectory(flow.grid, u, du, dul, None)
    return ExtremalLift(state, adjoint, control, cost_of(control), float(tau))


def integrate_extremal(problem: DelayedOCP, tau: float, p0, guess: Optional[Trajectory],
                       grid: Grid) -> ExtremalLift:
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (problem.n,):
        raise InvalidParameterError(f"p0 must have shape ({problem.n},)")
    return lift_from_flow(problem, tau, extremal_flow(problem, tau, p0, guess, grid))


def hamiltonian_along(problem: DelayedOCP, lift: ExtremalLift) -> np.ndarray:
    """H at every grid node of a lift."""
    t = lift.grid.times
    x = lift.state.values
    xd = np.stack([lift.state.sample(ti - lift.tau) for ti in t]) if lift.tau > 0 else x
    return hamiltonian(problem, x, xd, lift.control.values, lift.adjoint.values)
