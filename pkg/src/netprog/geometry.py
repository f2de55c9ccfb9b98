"""Closed-form geometry of the positive half-line with metric ``uv / p**2``.

Geodesics through ``p`` at time ``t0`` with velocity ``v`` are
``p * exp(v / p * (t - t0))``; subjects follow them after an affine
reparametrisation of time and a shift parallel to the group trajectory.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXPONENT_LIMIT = 700.0


class OverflowGuardError(FloatingPointError):
    """Raised when a trajectory exponent leaves ``[-700, 700]``."""


def guarded_exp(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.abs(x) <= EXPONENT_LIMIT):
        raise OverflowGuardError(
            f"exponent {np.max(np.abs(x))!r} outside +/-{EXPONENT_LIMIT}")
    out = np.exp(x)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class NodeGeodesic:
    p: float
    v: float
    t0: float

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError(f"geodesic position must be positive, got {self.p}")


@dataclass(frozen=True)
class TimeWarp:
    alpha: float
    tau: float
    t0: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"acceleration factor must be positive, got {self.alpha}")

    @classmethod
    def from_log_acceleration(cls, xi, tau, t0):
        return cls(float(np.exp(xi)), tau, t0)


def geodesic_value(g: NodeGeodesic, t):
    return g.p * guarded_exp(g.v / g.p * (np.asarray(t, dtype=float) - g.t0))


def geodesic_velocity(g: NodeGeodesic, t):
    return g.v * guarded_exp(g.v / g.p * (np.asarray(t, dtype=float) - g.t0))


def time_warp(w: TimeWarp, t):
    return w.alpha * (np.asarray(t, dtype=float) - w.tau - w.t0) + w.t0


def node_trajectory(g: NodeGeodesic, w_shift, warp: TimeWarp, t):
    """Value at one node of a subject shifted by ``w_shift`` and warped by ``warp``.

    Evaluated in the exp-parallelised form, which stays defined when the
    node velocity is zero.
    """
    t = np.asarray(t, dtype=float)
    expo = w_shift / g.p + g.v / g.p * warp.alpha * (t - warp.t0 - warp.tau)
    return g.p * guarded_exp(expo)


def node_trajectory_via_geodesic(g: NodeGeodesic, w_shift, warp: TimeWarp, t):
    """Same value routed through the group geodesic at a shifted, warped time.

    Requires a nonzero velocity: the shift is converted to time through the
    velocity at the reference time.
    """
    if g.v == 0:
        raise ZeroDivisionError("space shift cannot be converted to time at zero velocity")
    return geodesic_value(g, w_shift / geodesic_velocity(g, g.t0) + time_warp(warp, t))
