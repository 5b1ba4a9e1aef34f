import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import lambertw

from delayhomotopy import DivergenceError, Grid, InvalidParameterError, OutOfDomainError, Trajectory
from delayhomotopy import aligned_grid, integrate_dde


def parabola(h=0.1):
    g = Grid.uniform(0.0, 1.0, round(1 / h))
    t = g.times
    return Trajectory(g, t ** 2, 2 * t, history=lambda s: np.array(s * s))


def test_grid_invariant():
    with pytest.raises(InvalidParameterError):
        Grid(0.0, 1.0, 0.3, 3)
    with pytest.raises(InvalidParameterError):
        Grid.uniform(0.0, 1.0, 0)
    g = Grid.uniform(0.0, 19.0, 2000)
    assert g.times[-1] == 19.0 and len(g.times) == 2001


def test_aligned_grid_puts_delay_on_nodes():
    g = aligned_grid(19.0, 0.4, 19.0 / 2000)
    assert g.N >= 2000
    assert g.node_index(0.4) is not None and g.node_index(19.0 - 0.4) is not None


def test_hermite_exact_on_cubics():
    assert parabola().sample(0.3) == pytest.approx(0.09, rel=1e-15)
    g = Grid.uniform(0.0, 2.0, 7)
    t = g.times
    tr = Trajectory(g, t ** 3 - t, 3 * t ** 2 - 1)
    for s in np.linspace(0, 2, 37):
        assert tr.sample(s) == pytest.approx(s ** 3 - s, abs=1e-13)


def test_node_identity_bitwise():
    tr = parabola()
    for i, t in enumerate(tr.grid.times):
        assert tr.sample(t) == tr.values[i]
    assert tr.sample(tr.grid.times[5]) == tr.values[5]


def test_sample_continuous_at_nodes():
    g = Grid.uniform(0.0, 1.0, 10)
    rng = np.random.default_rng(3)
    tr = Trajectory(g, rng.normal(size=11), rng.normal(size=11))
    for t in g.times[1:-1]:
        eps = 1e-9
        assert abs(tr.sample(t - eps) - tr.sample(t + eps)) < 1e-6


def test_history_delegation_and_domain():
    g = Grid.uniform(0.0, 1.0, 10)
    tr = Trajectory(g, np.zeros((11, 2)), np.zeros((11, 2)), history=lambda t: np.array([1.0, 2.0]))
    np.testing.assert_array_equal(tr.sample(-0.5), [1.0, 2.0])
    with pytest.raises(OutOfDomainError):
        tr.sample(1.5)
    bare = Trajectory(g, np.zeros(11), np.zeros(11))
    with pytest.raises(OutOfDomainError):
        bare.sample(-0.1)


@settings(max_examples=40)
@given(st.lists(st.floats(-0.5, 1.0), min_size=1, max_size=20))
def test_sample_many_matches_sample(ts):
    tr = parabola()
    np.testing.assert_allclose(tr.sample_many(ts), [tr.sample(t) for t in ts], rtol=0, atol=1e-15)


def test_decay_matches_exponential():
    g = Grid.uniform(0.0, 1.0, 100)
    tr = integrate_dde(lambda t, x, xd: -x, 0.5, lambda t: np.array([1.0]), g)
    assert np.max(np.abs(tr.values[:, 0] - np.exp(-g.times))) <= 1e-9


def test_constant_delayed_term_is_exact():
    g = Grid.uniform(0.0, 1.0, 100)
    tr = integrate_dde(lambda t, x, xd: xd, 1.0, lambda t: np.array([1.0]), g)
    np.testing.assert_allclose(tr.values[:, 0], 1.0 + g.times, rtol=0, atol=1e-14)


def plain_rk4(f, y0, g):
    ys = [np.array(y0, dtype=float)]
    h = g.h
    for t in g.times[:-1]:
        y = ys[-1]
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        ys.append(y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
    return np.array(ys)


def test_zero_delay_is_plain_rk4():
    def f(t, y):
        return np.array([y[1], -np.sin(y[0]) + 0.1 * t])

    g = Grid.uniform(0.0, 3.0, 300)
    tr = integrate_dde(lambda t, x, xd: f(t, xd), 0.0, lambda t: np.array([1.0, 0.0]), g)
    assert np.max(np.abs(tr.values - plain_rk4(f, [1.0, 0.0], g))) <= 1e-13


def max_error_ode(N):
    # y' = y cos t, y = exp(sin t)
    g = Grid.uniform(0.0, 2.0, N)
    tr = integrate_dde(lambda t, x, xd: x * math.cos(t), 0.0, lambda t: np.array([1.0]), g)
    return np.max(np.abs(tr.values[:, 0] - np.exp(np.sin(g.times))))


def test_order_without_delay():
    ratios = [max_error_ode(n) / max_error_ode(2 * n) for n in (20, 40, 80)]
    assert all(12 <= r <= 20 for r in ratios), ratios


def lambert_problem(tau=0.25):
    lam = float(np.real(lambertw(-tau))) / tau  # x = exp(lam t) solves x' = -x(t - tau)
    return lam, (lambda t: np.array([math.exp(lam * t)]))


def max_error_dde(N, tau=0.25):
    lam, hist = lambert_problem(tau)
    g = Grid.uniform(0.0, 2.0, N)
    assert g.node_index(tau) is not None
    tr = integrate_dde(lambda t, x, xd: -xd, tau, hist, g)
    return np.max(np.abs(tr.values[:, 0] - np.exp(lam * g.times)))


def test_order_with_delay():
    errs = [max_error_dde(n) for n in (16, 32, 64, 128)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 3.5, orders


def test_determinism_bitwise():
    g = Grid.uniform(0.0, 2.0, 64)
    _, hist = lambert_problem()
    a = integrate_dde(lambda t, x, xd: -xd + np.sin(x), 0.25, hist, g)
    b = integrate_dde(lambda t, x, xd: -xd + np.sin(x), 0.25, hist, g)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.derivs, b.derivs)


def test_divergence_carries_time():
    g = Grid.uniform(0.0, 2.0, 200)
    with pytest.raises(DivergenceError) as info:
        integrate_dde(lambda t, x, xd: x ** 2, 0.0, lambda t: np.array([10.0]), g)
    assert 0.0 < info.value.time <= 0.2


def test_breaks_make_step_rhs_exact():
    # y' = 0 before 0.5 and 1 after: the break keeps the kink exact
    g = Grid.uniform(0.0, 1.0, 10)
    rhs = lambda t, x, xd: np.array([1.0 if t >= 0.5 else 0.0])  # noqa: E731
    tr = integrate_dde(rhs, 0.0, lambda t: np.array([0.0]), g, breaks=(0.5,))
    np.testing.assert_allclose(tr.values[:, 0], np.maximum(g.times - 0.5, 0.0), atol=1e-15)
    assert tr.left_derivs[5, 0] == 0.0 and tr.derivs[5, 0] == 1.0
    with pytest.raises(InvalidParameterError):
        integrate_dde(rhs, 0.0, lambda t: np.array([0.0]), g, breaks=(0.55,))


def test_delay_shorter_than_step():
    # x' = x(t - tau) with tau << h behaves like x' = x
    g = Grid.uniform(0.0, 1.0, 50)
    tr = integrate_dde(lambda t, x, xd: xd, 1e-6, lambda t: np.array([1.0]), g)
    assert abs(tr.values[-1, 0] - math.e) < 1e-4


def test_batched_values():
    g = Grid.uniform(0.0, 1.0, 20)
    y0 = np.array([[1.0], [2.0], [3.0]])
    tr = integrate_dde(lambda t, x, xd: -x, 0.0, lambda t: y0, g)
    assert tr.values.shape == (21, 3, 1)
    np.testing.assert_allclose(tr.sample(0.55)[:, 0], y0[:, 0] * math.exp(-0.55), rtol=1e-7)


def test_from_samples_default_derivatives():
    g = Grid.uniform(0.0, 1.0, 50)
    tr = Trajectory.from_samples(g, np.sin(g.times))
    assert abs(tr.sample(0.37) - math.sin(0.37)) < 1e-6
