"""Variational delay system, end-point derivative and controllability Gramian.

Along a lift (x, u) the linearised dynamics are

    X'(t, s) = A1(t) X(t, s) + A2(t) X(t - tau, s),
    X(s, s) = I,  X(t, s) = 0 for t < s,

with A1 = df0(x) + u df2(x) and A2 = df1(x(t - tau)). The derivative of
the end-point mapping in a control direction v is
int_0^T X(T, s) f2(x(s)) v(s) ds.

All anchors s are integrated in one batched sweep over the grid: an anchor's
matrix stays zero until its start node, where it is reset to the identity.
Left limits are tracked separately so the zero extension below s stays
exact in the delayed argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DivergenceError, InvalidParameterError
from .extremal import ExtremalLift
from .integrate import Grid, Trajectory, integrate_dde
from .problem import DelayedOCP

# smallest eigenvalue above this fraction of trace/n counts as surjective
SURJECTIVITY_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class TransitionTrajectory:
    """X(., s) on [s, T], zero before s."""

    s: float
    X: Trajectory

    @property
    def final(self) -> np.ndarray:
        return self.X.values[-1]

    def sample(self, t: float) -> np.ndarray:
        if t < self.s - 1e-9 * self.X.grid.h:
            return np.zeros(self.X.shape)
        return self.X.sample(t)


def _delay_steps(tau: float, grid: Grid) -> int:
    m = tau / grid.h
    k = int(round(m))
    if abs(m - k) > 1e-9 * max(1.0, m) or (tau > 0 and k < 1):
        raise InvalidParameterError(f"tau = {tau} is not a whole number of steps h = {grid.h}")
    return k


def _generators(problem: DelayedOCP, tau: float, state: Trajectory, control: Trajectory,
                grid: Grid):
    """A1, A2 at nodes (N+1, n, n) and at step midpoints (N, n, n)."""
    nodes = grid.times
    mids = nodes[:-1] + 0.5 * grid.h

    def a1(t):
        x = state.sample_many(t)
        u = control.sample_many(t).reshape(len(t))
        return problem.f0.jacobian(x) + u[:, None, None] * problem.f2.jacobian(x)

    def a2(t):
        return problem.f1.jacobian(state.sample_many(t - tau))

    return a1(nodes), a1(mids), a2(nodes), a2(mids)


def _sweep(problem: DelayedOCP, tau: float, state: Trajectory, control: Trajectory,
           grid: Grid, anchors: Sequence[int], keep: bool = False):
    """Batched RK4 for X(., s_k), s_k = grid node ``anchors[k]``.

    Returns X(T, s_k) as (K, n, n); with ``keep`` also the full node
    values, right and left derivatives, each (N + 1, K, n, n).
    """
    n, N, h = problem.n, grid.N, grid.h
    m = _delay_steps(tau, grid)
    A1n, A1m, A2n, A2m = _generators(problem, tau, state, control, grid)
    if m == 0:
        # no delay: X(t - tau) is X(t) itself
        A1n, A1m = A1n + A2n, A1m + A2m
    anchors = np.asarray(anchors, dtype=int)
    K = anchors.shape[0]
    eye = np.eye(n)
    starts: dict[int, np.ndarray] = {}
    for k, j in enumerate(anchors):
        starts.setdefault(int(j), []).append(k)
    starts = {j: np.array(ks) for j, ks in starts.items()}

    size = N + 1 if keep else m + 2
    V = np.zeros((size, K, n, n))   # right values
    VL = np.zeros_like(V)           # left values
    D = np.zeros_like(V)            # right derivatives
    DL = np.zeros_like(V)           # left derivatives
    zero = np.zeros((K, n, n))

    def slot(i):
        return i if keep else i % size

    def rhs(A1, A2, X, Xd):
        if m == 0:
            return A1 @ X
        return A1 @ X + A2 @ Xd

    def node_value(i, left):
        if i < 0:
            return zero
        return (VL if left else V)[slot(i)]

    def mid_value(i):
        # X at the midpoint of segment [i, i+1], zero before the grid
        if i < 0:
            return zero
        a, b = slot(i), slot(i + 1)
        return 0.5 * (V[a] + VL[b]) + (h / 8.0) * (D[a] - DL[b])

    def settle(i, y):
        """Store node i reached with value y (before resets)."""
        si = slot(i)
        VL[si] = y
        DL[si] = rhs(A1n[i], A2n[i], y, node_value(i - m, left=True) if m else None)
        ks = starts.get(i)
        if ks is not None:
            y = y.copy()
            y[ks] = eye
        V[si] = y
        D[si] = rhs(A1n[i], A2n[i], y, node_value(i - m, left=False) if m else None)

    settle(0, zero)
    for i in range(N):
        si = slot(i)
        y, k1 = V[si], D[si]
        xd = mid_value(i - m) if m else None
        ys = y + (0.5 * h) * k1
        k2 = rhs(A1m[i], A2m[i], ys, xd)
        ys = y + (0.5 * h) * k2
        k3 = rhs(A1m[i], A2m[i], ys, xd)
        ys = y + h * k3
        k4 = rhs(A1n[i + 1], A2n[i + 1], ys, node_value(i + 1 - m, left=True) if m else None)
        y_next = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y_next)):
            raise DivergenceError(grid.times[i + 1])
        settle(i + 1, y_next)
    final = V[slot(N)].copy()
    if keep:
        return final, V, D, DL
    return final


def _check_lift_args(problem, tau, grid):
    if not 0 <= tau <= problem.M:
        raise InvalidParameterError(f"tau = {tau} outside [0, M = {problem.M}]")
    if grid.t0 != 0 or abs(grid.tf - problem.T) > 1e-12 * max(1.0, problem.T):
        raise InvalidParameterError("grid must span [0, T]")


def integrate_variational(problem: DelayedOCP, tau: float, state: Trajectory,
                          control: Trajectory, s: float, grid: Grid) -> TransitionTrajectory:
    _check_lift_args(problem, tau, grid)
    j = grid.node_index(s)
    if j is None:
        raise InvalidParameterError(f"anchor s = {s} is not a grid node")
    _, V, D, DL = _sweep(problem, tau, state, control, grid, [j], keep=True)
    if j == grid.N:
        sub = Grid(grid.tf, grid.tf + grid.h, grid.h, 1)
        X = np.stack([V[j, 0], V[j, 0]])
        return TransitionTrajectory(grid.tf, Trajectory(sub, X, np.zeros_like(X)))
    sub = Grid(grid.times[j], grid.tf, grid.h, grid.N - j)
    X = Trajectory(sub, V[j:, 0], D[j:, 0], DL[j:, 0])
    return TransitionTrajectory(float(grid.times[j]), X)


def simpson_weights(count: int, h: float) -> np.ndarray:
    """Positive quadrature weights for ``count`` equally spaced samples.

    Composite Simpson for an even number of intervals; otherwise Simpson
    on all but the last three intervals and the 3/8 rule on those.
    """
    if count < 2:
        raise InvalidParameterError("need at least two samples")
    intervals = count - 1
    w = np.zeros(count)
    if intervals == 1:
        w[:] = h / 2.0
        return w
    tail = 3 if intervals % 2 else 0
    head = intervals - tail
    if head:
        w[:head + 1:2] += 2.0 * h / 3.0
        w[1:head:2] += 4.0 * h / 3.0
        w[0] -= h / 3.0
        w[head] -= h / 3.0
    if tail:
        w[head:] += 3.0 * h / 8.0 * np.array([1.0, 3.0, 3.0, 1.0])
    return w


def anchor_nodes(grid: Grid, max_anchors: int = 200) -> np.ndarray:
    """Every K-th node with K the smallest divisor of N leaving at most ``max_anchors`` intervals.

    Falls back to every node if N has no suitable divisor close to N / max_anchors.
    """
    N = grid.N
    k0 = max(1, math.ceil(N / max_anchors))
    for K in range(k0, 4 * k0 + 1):
        if N % K == 0:
            return np.arange(0, N + 1, K)
    return np.arange(N + 1)


@dataclass(frozen=True, eq=False)
class EndpointSensitivity:
    """X(T, s_k) f2(x(s_k)) at quadrature anchors, with their weights."""

    times: np.ndarray
    columns: np.ndarray  # (K, n)
    weights: np.ndarray


def endpoint_sensitivity(problem: DelayedOCP, tau: float, lift: ExtremalLift, grid: Grid,
                         max_anchors: int = 200) -> EndpointSensitivity:
    _check_lift_args(problem, tau, grid)
    idx = anchor_nodes(grid, max_anchors)
    XT = _sweep(problem, tau, lift.state, lift.control, grid, idx)
    times = grid.times[idx]
    b = problem.f2(lift.state.sample_many(times))
    cols = np.einsum("kij,kj->ki", XT, b)
    return EndpointSensitivity(times, cols, simpson_weights(idx.shape[0], grid.h * (idx[1] - idx[0])))


def endpoint_derivative(problem: DelayedOCP, tau: float, lift: ExtremalLift, v: Trajectory,
                        grid: Grid, sensitivity: Optional[EndpointSensitivity] = None) -> np.ndarray:
    """Derivative of x(T) in the control direction ``v``.

    Pass a precomputed ``sensitivity`` to evaluate many directions cheaply.
    """
    sens = sensitivity or endpoint_sensitivity(problem, tau, lift, grid)
    vs = np.asarray(v.sample_many(sens.times), dtype=float).reshape(len(sens.times))
    return (sens.weights * vs) @ sens.columns


@dataclass(frozen=True, eq=False)
class GramianReport:
    """Gramian, its spectrum, and the surjectivity verdict.

    The verdict uses the diagonally scaled Gramian S G S, S = diag(G)^(-1/2),
    whose trace is n: rank is unchanged by the scaling, but the test no
    longer depends on the units of the state components.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray  # ascending
    min_eigenvalue: float
    scaled_min_eigenvalue: float
    surjective: bool


def controllability_gramian(problem: DelayedOCP, tau: float, lift: ExtremalLift, grid: Grid,
                            max_anchors: int = 200) -> GramianReport:
    """G = int X(T,s) f2 f2^T X(T,s)^T ds, with its spectrum and a surjectivity flag."""
    sens = endpoint_sensitivity(problem, tau, lift, grid, max_anchors)
    c = sens.columns
    G = np.einsum("k,ki,kj->ij", sens.weights, c, c)
    eig = np.linalg.eigvalsh(G)
    diag = np.diag(G)
    if np.all(diag > 0):
        S = 1.0 / np.sqrt(diag)
        scaled = float(np.linalg.eigvalsh(G * np.outer(S, S))[0])
    else:
        scaled = 0.0
    # the scaled matrix has trace n, so the threshold is relative to trace/n = 1
    surjective = scaled > SURJECTIVITY_RTOL
    return GramianReport(G, eig, float(eig[0]), scaled, bool(surjective))


def endpoint_map(problem: DelayedOCP, tau: float, control: Trajectory, grid: Grid) -> np.ndarray:
    """x(T) under a given control, integrated on ``grid``."""
    _check_lift_args(problem, tau, grid)
    f0, f1, f2 = problem.f0.eval, problem.f1.eval, problem.f2.eval

    def rhs(t, x, xd):
        u = float(np.asarray(control.sample(t)).reshape(-1)[0])
        return f0(x) + f1(xd) + u * f2(x)

    traj = integrate_dde(rhs, tau, problem.history, grid)
    return traj.values[-1]
