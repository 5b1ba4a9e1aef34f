"""Problem definitions: vector fields, history, horizon, target.

A problem describes

    x'(t) = f0(x(t)) + f1(x(t - tau)) + u(t) f2(x(t)),   x = history on [-M, 0],

to be steered to ``target`` at time ``T`` while minimising the integral of
u^2. Field callables are vectorised: ``eval`` maps arrays of shape
(..., n) to (..., n) and ``jacobian`` maps (..., n) to (..., n, n).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidParameterError, OutOfDomainError


class UnboundedFieldWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SmoothField:
    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    # structural hints used to skip work in the inner loop
    constant_value: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None

    def __call__(self, x):
        return self.eval(x)

    @classmethod
    def constant(cls, value) -> "SmoothField":
        value = np.asarray(value, dtype=float)
        n = value.shape[0]

        def f(x):
            return np.broadcast_to(value, np.shape(x)[:-1] + (n,)).copy()

        def jac(x):
            return np.zeros(np.shape(x)[:-1] + (n, n))

        value.setflags(write=False)
        return cls(f, jac, constant_value=value)

    @classmethod
    def zero(cls, n: int) -> "SmoothField":
        return cls.constant(np.zeros(n))

    @classmethod
    def linear(cls, A) -> "SmoothField":
        """x -> A x."""
        A = np.asarray(A, dtype=float)

        def f(x):
            return np.asarray(x) @ A.T

        def jac(x):
            return np.broadcast_to(A, np.shape(x)[:-1] + A.shape).copy()

        A.setflags(write=False)
        return cls(f, jac, matrix=A)


class ConstantHistory:
    """phi(t) = value on [-M, 0]."""

    def __init__(self, value, M: float):
        self.value = np.array(value, dtype=float)
        self.value.setflags(write=False)
        self.M = float(M)

    def __call__(self, t: float) -> np.ndarray:
        if t < -self.M * (1.0 + 1e-12) - 1e-12 or t > 1e-12:
            raise OutOfDomainError(f"history queried at t = {t}, outside [-{self.M}, 0]")
        return self.value


@dataclass(frozen=True)
class DelayedOCP:
    n: int
    f0: SmoothField
    f1: SmoothField
    f2: SmoothField
    history: Callable[[float], np.ndarray]
    M: float
    T: float
    target: np.ndarray
    name: str = "custom"

    @property
    def x0(self) -> np.ndarray:
        return np.asarray(self.history(0.0), dtype=float)


def _fd_jacobian(f, x, rel_step=6e-6):
    n = x.shape[0]
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = rel_step * max(1.0, abs(x[j]))
        J[:, j] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * e[j])
    return J


def validate(problem: DelayedOCP, samples: int = 8, radius: float = 10.0,
             box: Optional[float] = None, seed: int = 0) -> list[str]:
    """Return a list of problems found; empty means the instance is usable.

    Jacobians are compared with central differences at ``samples`` random
    points of norm at most ``radius``. If ``box`` is given, fields whose
    magnitude keeps growing past that half-width trigger an
    ``UnboundedFieldWarning`` (boundedness is not required by the solver).
    """
    report: list[str] = []
    n = problem.n
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        report.append("n must be a positive integer")
        return report
    if not (np.isfinite(problem.T) and problem.T > 0):
        report.append("T must be positive")
    if not (np.isfinite(problem.M) and problem.M > 0):
        report.append("M must be positive")
    target = np.asarray(problem.target, dtype=float)
    if target.shape != (n,):
        report.append(f"target must have shape ({n},), got {target.shape}")
    elif not np.all(np.isfinite(target)):
        report.append("target has non-finite entries")

    if problem.M > 0:
        for t in np.linspace(-problem.M, 0.0, 101):
            try:
                v = np.asarray(problem.history(float(t)), dtype=float)
            except Exception as exc:  # report, never raise
                report.append(f"history fails at t = {t:.6g}: {exc}")
                break
            if v.shape != (n,):
                report.append(f"history returns shape {v.shape} at t = {t:.6g}, expected ({n},)")
                break
            if not np.all(np.isfinite(v)):
                report.append(f"history is not finite at t = {t:.6g}")
                break

    rng = np.random.default_rng(seed)
    for name in ("f0", "f1", "f2"):
        field = getattr(problem, name)
        for _ in range(samples):
            d = rng.normal(size=n)
            x = d / np.linalg.norm(d) * radius * rng.uniform() ** (1.0 / n)
            J = np.asarray(field.jacobian(x), dtype=float)
            if J.shape != (n, n):
                report.append(f"{name} jacobian has shape {J.shape}, expected ({n}, {n})")
                break
            Jfd = _fd_jacobian(field.eval, x)
            err = np.linalg.norm(J - Jfd)
            if not err <= 1e-5 * max(1.0, np.linalg.norm(Jfd)):
                report.append(f"{name} jacobian mismatch at x = {np.array2string(x, precision=4)} "
                              f"(finite-difference error {err:.3g})")
                break

    if box is not None:
        for name in ("f0", "f1", "f2"):
            field = getattr(problem, name)
            pts = rng.uniform(-1.0, 1.0, size=(64, n))
            inner = np.max(np.linalg.norm(field.eval(pts * box), axis=-1))
            outer = np.max(np.linalg.norm(field.eval(pts * 10 * box), axis=-1))
            if outer > 2.0 * max(inner, 1e-300):
                warnings.warn(f"{name} appears unbounded beyond |x| <= {box}", UnboundedFieldWarning,
                              stacklevel=2)
    return report


# ---------------------------------------------------------------- presets


def rendezvous_problem(v0: float = 100.0, c0: float = 1.0,
                       init=(0.0, 0.0, math.pi / 4, 5e-4),
                       target=(1500.0, 1000.0, math.pi / 20, 0.0),
                       T: float = 19.0, M: float = 7.0) -> DelayedOCP:
    """Planar vehicle at constant speed with a delayed steering channel.

    State (x, y, theta, delta): x' = v0 cos(theta), y' = v0 sin(theta),
    theta' = c0 v0 delta(t - tau), delta' = u. Defaults are pi/4 = 0.7853981633974483
    and pi/20 = 0.15707963267948966 for the initial and target headings.
    """
    if not v0 > 0:
        raise InvalidParameterError(f"v0 must be positive, got {v0}")
    if not c0 > 0:
        raise InvalidParameterError(f"c0 must be positive, got {c0}")
    v0, c0 = float(v0), float(c0)

    def f0(x):
        x = np.asarray(x)
        th = x[..., 2]
        out = np.zeros(x.shape)
        out[..., 0] = v0 * np.cos(th)
        out[..., 1] = v0 * np.sin(th)
        return out

    def j0(x):
        x = np.asarray(x)
        th = x[..., 2]
        out = np.zeros(x.shape + (4,))
        out[..., 0, 2] = -v0 * np.sin(th)
        out[..., 1, 2] = v0 * np.cos(th)
        return out

    steer = np.zeros((4, 4))
    steer[2, 3] = c0 * v0

    return DelayedOCP(
        n=4,
        f0=SmoothField(f0, j0),
        f1=SmoothField.linear(steer),
        f2=SmoothField.constant([0.0, 0.0, 0.0, 1.0]),
        history=ConstantHistory(init, M),
        M=float(M),
        T=float(T),
        target=np.array(target, dtype=float),
        name="rendezvous",
    )


def integrator_problem(target: float = 3.0, T: float = 1.0, x0: float = 0.0,
                       M: float = 1.0) -> DelayedOCP:
    """Scalar x' = u; the minimum-energy control is constant."""
    return DelayedOCP(
        n=1,
        f0=SmoothField.zero(1),
        f1=SmoothField.zero(1),
        f2=SmoothField.constant([1.0]),
        history=ConstantHistory([x0], M),
        M=float(M),
        T=float(T),
        target=np.array([target], dtype=float),
        name="integrator",
    )


def scalar_delay_problem(target: float = 2.0, T: float = 1.0, phi: float = 1.0,
                         M: float = 1.0) -> DelayedOCP:
    """Scalar x'(t) = x(t - tau) + u(t) with constant history."""
    return DelayedOCP(
        n=1,
        f0=SmoothField.zero(1),
        f1=SmoothField.linear([[1.0]]),
        f2=SmoothField.constant([1.0]),
        history=ConstantHistory([phi], M),
        M=float(M),
        T=float(T),
        target=np.array([target], dtype=float),
        name="scalar_delay",
    )


def pendulum_problem(init=(0.5, 0.0), target=(0.0, 0.0), T: float = 2.0,
                     M: float = 1.0, stiffness: float = 1.0) -> DelayedOCP:
    """Pendulum with delayed restoring torque: x1' = x2, x2' = -k sin(x1(t - tau)) + u."""
    k = float(stiffness)

    def f0(x):
        x = np.asarray(x)
        out = np.zeros(x.shape)
        out[..., 0] = x[..., 1]
        return out

    def j0(x):
        out = np.zeros(np.shape(x) + (2,))
        out[..., 0, 1] = 1.0
        return out

    def f1(x):
        x = np.asarray(x)
        out = np.zeros(x.shape)
        out[..., 1] = -k * np.sin(x[..., 0])
        return out

    def j1(x):
        x = np.asarray(x)
        out = np.zeros(x.shape + (2,))
        out[..., 1, 0] = -k * np.cos(x[..., 0])
        return out

    return DelayedOCP(
        n=2,
        f0=SmoothField(f0, j0),
        f1=SmoothField(f1, j1),
        f2=SmoothField.constant([0.0, 1.0]),
        history=ConstantHistory(init, M),
        M=float(M),
        T=float(T),
        target=np.array(target, dtype=float),
        name="pendulum",
    )


PRESETS: dict[str, Callable[..., DelayedOCP]] = {
    "rendezvous": rendezvous_problem,
    "integrator": integrator_problem,
    "scalar_delay": scalar_delay_problem,
    "pendulum": pendulum_problem,
}


def register_preset(name: str, factory: Callable[..., DelayedOCP]) -> None:
    PRESETS[name] = factory
