"""Fixed-step RK4 for delay differential equations, with Hermite dense output.

Trajectories store node values and node derivatives so they can be sampled
anywhere on their grid with a cubic Hermite interpolant. Values may carry
any trailing shape (vectors, batches of vectors, matrices).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DivergenceError, InvalidParameterError, OutOfDomainError

log = logging.getLogger(__name__)

# queries this close to a node (relative to h) snap to the node value
_NODE_SNAP = 1e-9


@dataclass(frozen=True)
class Grid:
    t0: float
    tf: float
    h: float
    N: int

    def __post_init__(self):
        if not (self.h > 0 and self.N >= 1):
            raise InvalidParameterError(f"invalid grid: h={self.h}, N={self.N}")
        if abs(self.t0 + self.N * self.h - self.tf) > 1e-12 * max(1.0, abs(self.tf)):
            raise InvalidParameterError("grid endpoints inconsistent with h and N")

    @classmethod
    def uniform(cls, t0: float, tf: float, N: int) -> "Grid":
        if tf <= t0:
            raise InvalidParameterError("grid needs tf > t0")
        if N < 1:
            raise InvalidParameterError(f"grid needs N >= 1, got {N}")
        return cls(float(t0), float(tf), (tf - t0) / N, int(N))

    @cached_property
    def times(self) -> np.ndarray:
        t = self.t0 + self.h * np.arange(self.N + 1)
        t[-1] = self.tf
        return t

    def node_index(self, t: float, tol: float = _NODE_SNAP) -> Optional[int]:
        """Index of the node at time ``t``, or None if ``t`` is not on the grid."""
        s = (t - self.t0) / self.h
        i = int(round(s))
        if 0 <= i <= self.N and abs(s - i) <= tol:
            return i
        return None


def aligned_grid(tf: float, tau: float, base_h: float, t0: float = 0.0,
                 max_factor: float = 4.0) -> Grid:
    """Uniform grid on [t0, tf] with h close to ``base_h`` and ``tau`` a multiple of h.

    N is increased from ceil((tf - t0)/base_h) until ``tau`` lands on a whole
    number of steps. If no N up to ``max_factor`` times the base count works,
    the unaligned base grid is returned and a warning is logged.
    """
    span = tf - t0
    n0 = max(1, math.ceil(span / base_h - 1e-9))
    if tau == 0:
        return Grid.uniform(t0, tf, n0)
    for n in range(n0, int(n0 * max_factor) + 1):
        m = tau * n / span
        if round(m) >= 1 and abs(m - round(m)) <= 1e-9 * max(1.0, m):
            return Grid.uniform(t0, tf, n)
    log.warning("no grid with N <= %d aligns tau=%g; using unaligned N=%d",
                int(n0 * max_factor), tau, n0)
    return Grid.uniform(t0, tf, n0)


def _segment_poly(y0, y1, m0, m1, h):
    """Coefficients (a, b, c, d) of the cubic a + b s + c s^2 + d s^3, s in [0, 1]."""
    b = h * m0
    dy = y1 - y0
    hm1 = h * m1
    return np.stack([y0, b, 3.0 * dy - 2.0 * b - hm1, b + hm1 - 2.0 * dy], axis=-2)


def _hermite(y0, y1, m0, m1, h, theta):
    om = 1.0 - theta
    h00 = (1.0 + 2.0 * theta) * om * om
    h10 = theta * om * om
    h01 = theta * theta * (3.0 - 2.0 * theta)
    h11 = theta * theta * (theta - 1.0)
    return h00 * y0 + h01 * y1 + h * (h10 * m0 + h11 * m1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Node values on a uniform grid plus derivatives for dense output.

    ``derivs[i]`` is the right-sided derivative at node i and
    ``left_derivs[i]`` the left-sided one; they differ only at nodes where
    the right-hand side jumps. ``history`` covers times before ``grid.t0``.
    """

    grid: Grid
    values: np.ndarray
    derivs: np.ndarray
    left_derivs: Optional[np.ndarray] = None
    history: Optional[Callable[[float], np.ndarray]] = None

    @classmethod
    def from_samples(cls, grid: Grid, values, derivs=None, history=None) -> "Trajectory":
        """Trajectory through node ``values``; derivatives default to second-order differences."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != grid.N + 1:
            raise InvalidParameterError(f"expected {grid.N + 1} node values, got {values.shape[0]}")
        if derivs is None:
            derivs = np.gradient(values, grid.h, axis=0, edge_order=2 if grid.N >= 2 else 1)
        return cls(grid, values, np.asarray(derivs, dtype=float), None, history)

    @property
    def shape(self):
        return self.values.shape[1:]

    @property
    def t0(self) -> float:
        return self.grid.t0

    @property
    def tf(self) -> float:
        return self.grid.tf

    def sample(self, t: float) -> np.ndarray:
        g = self.grid
        s = (t - g.t0) / g.h
        if s < -_NODE_SNAP:
            if self.history is None:
                raise OutOfDomainError(f"t = {t} precedes trajectory start {g.t0} and no history is set")
            return np.asarray(self.history(t))
        if s > g.N + _NODE_SNAP:
            raise OutOfDomainError(f"t = {t} is past trajectory end {g.tf}")
        j = math.floor(s)
        theta = s - j
        if theta <= _NODE_SNAP:
            return self.values[min(j, g.N)]
        if theta >= 1.0 - _NODE_SNAP:
            return self.values[min(j + 1, g.N)]
        w = np.array([1.0, theta, theta * theta, theta * theta * theta])
        return (w @ self._polys[j]).reshape(self.shape)

    @cached_property
    def _polys(self) -> np.ndarray:
        m = self.values.shape[0]
        y = self.values.reshape(m, -1)
        d = self.derivs.reshape(m, -1)
        dl = d if self.left_derivs is None else self.left_derivs.reshape(m, -1)
        return _segment_poly(y[:-1], y[1:], d[:-1], dl[1:], self.grid.h)

    def sample_many(self, ts) -> np.ndarray:
        """Vectorised ``sample`` over an array of times."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        g = self.grid
        s = (ts - g.t0) / g.h
        if np.any(s > g.N + _NODE_SNAP):
            raise OutOfDomainError(f"times past trajectory end {g.tf}")
        before = s < -_NODE_SNAP
        out = np.empty((ts.shape[0],) + self.shape)
        if np.any(before):
            if self.history is None:
                raise OutOfDomainError("times precede trajectory start and no history is set")
            for k in np.flatnonzero(before):
                out[k] = self.history(float(ts[k]))
        inside = ~before
        si = np.clip(s[inside], 0.0, g.N)
        j = np.minimum(np.floor(si).astype(int), g.N - 1)
        theta = si - j
        W = np.stack([np.ones_like(theta), theta, theta ** 2, theta ** 3], axis=-1)
        vals = np.einsum("mk,mkd->md", W, self._polys[j]).reshape((-1,) + self.shape)
        near = np.rint(si)
        exact = np.abs(si - near) <= _NODE_SNAP
        vals[exact] = self.values[near[exact].astype(int)]
        out[inside] = vals
        return out

    def take(self, index) -> "Trajectory":
        """Trajectory of a sub-block of the trailing dimensions, e.g. ``take(np.s_[:n])``."""
        if not isinstance(index, tuple):
            index = (index,)
        full = (slice(None),) + index
        hist = None
        if self.history is not None:
            base = self.history
            hist = lambda t: np.asarray(base(t))[index]  # noqa: E731
        return Trajectory(
            self.grid,
            self.values[full],
            self.derivs[full],
            None if self.left_derivs is None else self.left_derivs[full],
            hist,
        )


def integrate_dde(
    rhs: Callable[[float, np.ndarray, np.ndarray], np.ndarray],
    delay: float,
    history: Callable[[float], np.ndarray],
    grid: Grid,
    *,
    initial: Optional[np.ndarray] = None,
    breaks: Sequence[float] = (),
) -> Trajectory:
    """Integrate ``y'(t) = rhs(t, y(t), y(t - delay))`` with classical RK4.

    ``history`` gives y for t < grid.t0 and, unless ``initial`` is passed,
    the starting value history(t0). With ``delay = 0`` the delayed argument
    is the current stage value.

    ``breaks`` lists grid nodes where ``rhs`` jumps in t. ``rhs`` is taken
    as right-continuous there: the last stage of the step ending at a break
    is evaluated at the largest float below it, delayed lookups landing on
    ``t0`` from the left read the history, and the left-sided derivative is
    stored for dense output.
    """
    if delay < 0:
        raise InvalidParameterError("delay must be non-negative")
    N, h, t0 = grid.N, grid.h, grid.t0
    times = grid.times
    y = np.array(history(t0) if initial is None else initial, dtype=float)
    Y = np.empty((N + 1,) + y.shape)
    D = np.empty_like(Y)
    L = None
    break_nodes = set()
    for b in breaks:
        j = grid.node_index(b)
        if j is None:
            raise InvalidParameterError(f"break {b} is not a grid node")
        if 0 < j <= N:
            break_nodes.add(j)
    if break_nodes:
        L = np.empty_like(Y)
    slopes = D if L is None else L
    flat = int(np.prod(y.shape))
    P = np.empty((N, 4, flat))
    filled = [0]  # segments [0, filled) of P are valid

    def fill(upto):
        # segment polynomials are built in blocks, only when a lookup needs them
        a = filled[0]
        if upto > a:
            P[a:upto] = _segment_poly(Y[a:upto].reshape(-1, flat), Y[a + 1:upto + 1].reshape(-1, flat),
                                      D[a:upto].reshape(-1, flat),
                                      slopes[a + 1:upto + 1].reshape(-1, flat), h)
            filled[0] = upto

    def lookup(tq, last, left=False):
        # value at tq using nodes 0..last only
        s = (tq - t0) / h
        if s < -_NODE_SNAP or (left and s <= _NODE_SNAP):
            return history(tq if s < 0 else t0)
        j = math.floor(s)
        theta = s - j
        if theta <= _NODE_SNAP and j <= last:
            return Y[max(j, 0)]
        if theta >= 1.0 - _NODE_SNAP and j + 1 <= last:
            return Y[j + 1]
        if j + 1 <= last:
            if j >= filled[0]:
                fill(last)
            w = np.array([1.0, theta, theta * theta, theta * theta * theta])
            return (w @ P[j]).reshape(y.shape)
        # delay shorter than one step: extrapolate the last completed segment
        if last == 0:
            return Y[0] + (tq - t0) * D[0]
        return _hermite(Y[last - 1], Y[last], D[last - 1], slopes[last], h,
                        (tq - times[last - 1]) / h)

    def delayed(t, stage_y, last, left=False):
        if delay == 0:
            return stage_y
        return lookup(t - delay, last, left)

    Y[0] = y
    # overflow surfaces as DivergenceError, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        _run_steps(rhs, delayed, Y, D, L, times, h, N, break_nodes)
    if L is not None:
        L[0] = D[0]
    traj = Trajectory(grid, Y, D, L, history)
    fill(N)
    traj.__dict__["_polys"] = P  # seed the cached dense output
    return traj


def _run_steps(rhs, delayed, Y, D, L, times, h, N, break_nodes):
    t0 = times[0]
    D[0] = rhs(t0, Y[0], delayed(t0, Y[0], 0))
    for i in range(N):
        t = times[i]
        t_next = times[i + 1]
        tm = t + 0.5 * h
        at_break = (i + 1) in break_nodes
        k1 = D[i]
        ys = Y[i] + (0.5 * h) * k1
        k2 = rhs(tm, ys, delayed(tm, ys, i))
        ys = Y[i] + (0.5 * h) * k2
        k3 = rhs(tm, ys, delayed(tm, ys, i))
        ys = Y[i] + h * k3
        if at_break:
            te = math.nextafter(t_next, -math.inf)
            k4 = rhs(te, ys, delayed(t_next, ys, i, left=True))
        else:
            k4 = rhs(t_next, ys, delayed(t_next, ys, i))
        y_next = Y[i] + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y_next)):
            raise DivergenceError(t_next)
        Y[i + 1] = y_next
        D[i + 1] = rhs(t_next, y_next, delayed(t_next, y_next, i + 1))
        if L is not None:
            if at_break:
                te = math.nextafter(t_next, -math.inf)
                L[i + 1] = rhs(te, y_next, delayed(t_next, y_next, i + 1, left=True))
            else:
                L[i + 1] = D[i + 1]
