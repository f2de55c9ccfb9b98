import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netprog.geometry import (
    NodeGeodesic,
    OverflowGuardError,
    TimeWarp,
    geodesic_value,
    geodesic_velocity,
    node_trajectory,
    node_trajectory_via_geodesic,
    time_warp,
)

positive = st.floats(0.1, 10.0)
velocity = st.floats(-1.0, 1.0)
# |v / p| <= 0.5 per year keeps the finite-difference truncation error
# (v/p)**2 h**2 / 6 well below the tolerance at the prescribed step
fd_p = st.floats(1.0, 5.0)
fd_v = st.floats(-0.5, 0.5).filter(lambda x: abs(x) >= 1e-3)
ages = st.floats(50.0, 95.0)


def test_geodesic_examples():
    g = NodeGeodesic(2.0, -0.1, 70.0)
    assert geodesic_value(g, 70.0) == 2.0
    assert geodesic_value(NodeGeodesic(2.0, 0.0, 70.0), 91.0) == 2.0
    assert geodesic_value(g, 75.0) == pytest.approx(2 * math.exp(-0.25), rel=1e-15)
    assert geodesic_value(g, 75.0) == pytest.approx(1.55760157, abs=1e-8)


def test_velocity_examples():
    g = NodeGeodesic(2.0, -0.1, 70.0)
    assert geodesic_velocity(g, 70.0) == -0.1
    assert geodesic_velocity(NodeGeodesic(2.0, 0.0, 70.0), 80.0) == 0.0


@settings(max_examples=200, deadline=None)
@given(p=fd_p, v=fd_v, t0=ages, t=ages)
def test_velocity_matches_finite_difference(p, v, t0, t):
    g = NodeGeodesic(p, v, t0)
    h = 1e-5 * max(1.0, abs(t))
    fd = (geodesic_value(g, t + h) - geodesic_value(g, t - h)) / (2 * h)
    exact = geodesic_velocity(g, t)
    assert abs(fd - exact) <= 1e-6 * max(abs(exact), 1e-300)


def test_time_warp_examples():
    assert time_warp(TimeWarp(1.0, 0.0, 70.0), 63.5) == 63.5
    assert time_warp(TimeWarp(3.7, 2.0, 70.0), 72.0) == 70.0
    assert time_warp(TimeWarp(2.0, 3.0, 70.0), 75.0) == 74.0


def test_node_trajectory_examples():
    g = NodeGeodesic(2.0, -0.1, 70.0)
    assert node_trajectory(g, 0.0, TimeWarp(1.0, 0.0, 70.0), 77.0) == geodesic_value(g, 77.0)
    val = node_trajectory(g, 0.2, TimeWarp(1.5, -2.0, 70.0), 72.0)
    assert val == pytest.approx(2 * math.exp(0.1 - 0.3), rel=1e-15)
    assert val == pytest.approx(1.63746151, abs=1e-8)


def test_zero_velocity_shift_evaluates_directly():
    g = NodeGeodesic(2.0, 0.0, 70.0)
    warp = TimeWarp(1.0, 0.0, 70.0)
    assert node_trajectory(g, 0.2, warp, 80.0) == pytest.approx(2 * math.exp(0.1))
    with pytest.raises(ZeroDivisionError):
        node_trajectory_via_geodesic(g, 0.2, warp, 80.0)


@settings(max_examples=300, deadline=None)
@given(p=positive, v=velocity.filter(lambda x: abs(x) > 1e-3), t0=ages,
       w=st.floats(-0.5, 0.5), xi=st.floats(-1, 1), tau=st.floats(-10, 10), t=ages)
def test_shifted_and_warped_routes_agree(p, v, t0, w, xi, tau, t):
    g = NodeGeodesic(p, v, t0)
    warp = TimeWarp.from_log_acceleration(xi, tau, t0)
    a = node_trajectory(g, w, warp, t)
    b = node_trajectory_via_geodesic(g, w, warp, t)
    assert a > 0
    assert abs(a - b) <= 1e-12 * abs(b)


@settings(max_examples=200, deadline=None)
@given(p=positive, v=velocity.filter(lambda x: abs(x) > 1e-3), w=st.floats(-0.5, 0.5),
       xi=st.floats(-1, 1), tau=st.floats(-10, 10), t=ages, dt=st.floats(0.01, 10))
def test_monotone_in_time(p, v, w, xi, tau, t, dt):
    g = NodeGeodesic(p, v, 72.0)
    warp = TimeWarp.from_log_acceleration(xi, tau, 72.0)
    a, b = node_trajectory(g, w, warp, t), node_trajectory(g, w, warp, t + dt)
    assert (b < a) if v < 0 else (b > a)


@given(alpha=positive, tau=st.floats(-10, 10), a=ages, b=ages, lam=st.floats(0, 1))
def test_time_warp_is_affine(alpha, tau, a, b, lam):
    warp = TimeWarp(alpha, tau, 72.0)
    lhs = time_warp(warp, lam * a + (1 - lam) * b)
    rhs = lam * time_warp(warp, a) + (1 - lam) * time_warp(warp, b)
    assert lhs == pytest.approx(rhs, rel=1e-13, abs=1e-12)


def test_overflow_guard():
    g = NodeGeodesic(1.0, 10.0, 0.0)
    with pytest.raises(OverflowGuardError):
        geodesic_value(g, 71.0)
    assert np.isfinite(geodesic_value(g, 69.0))


def test_invalid_containers():
    with pytest.raises(ValueError):
        NodeGeodesic(0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        TimeWarp(-1.0, 0.0, 0.0)
