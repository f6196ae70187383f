"""Continuous-time joint trajectories and their differential geometry.

Trajectories are natural cubic splines through timestamped 3D samples. On
top of them live arc length (adaptive Simpson per polynomial piece),
curvature, torsion and Frenet frames.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from . import kernels
from .errors import DegenerateInput, OutOfDomain, SingularVelocity, VanishingCurvature

EPS_SPEED = 1e-6
EPS_CURV = 1e-9
ARC_TOL = 1e-8


class SplineTrajectory:
    """Piecewise cubic ``x(t)`` with breakpoints ``knots`` and coefficients
    ``coeffs`` of shape ``(4, n_pieces, dim)`` (descending powers of the
    local variable ``t - knots[k]``)."""

    __slots__ = ("knots", "coeffs", "_cum")

    def __init__(self, knots, coeffs):
        self.knots = np.asarray(knots, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.shape[:2] != (4, len(self.knots) - 1):
            raise ValueError("coefficient shape does not match knots")
        self.knots.setflags(write=False)
        self.coeffs.setflags(write=False)
        self._cum = None

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def dim(self) -> int:
        return self.coeffs.shape[2]

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        lo, hi = self.domain
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(t < lo - slack) or np.any(t > hi + slack):
            raise OutOfDomain(f"t outside [{lo}, {hi}]")
        return np.clip(t, lo, hi)

    def piece(self, t) -> np.ndarray:
        k = np.searchsorted(self.knots, t, side="right") - 1
        return np.clip(k, 0, len(self.knots) - 2)

    def __call__(self, t, order: int = 0) -> np.ndarray:
        t = self._check(t)
        k = self.piece(t)
        u = (t - self.knots[k])[..., None]
        c0, c1, c2, c3 = (self.coeffs[i, k] for i in range(4))
        if order == 0:
            return ((c0 * u + c1) * u + c2) * u + c3
        if order == 1:
            return (3.0 * c0 * u + 2.0 * c1) * u + c2
        if order == 2:
            return 6.0 * c0 * u + 2.0 * c1
        if order == 3:
            return 6.0 * c0 + 0.0 * u
        raise ValueError("order must be 0..3")

    # arc length ------------------------------------------------------------

    def cumulative_length(self) -> np.ndarray:
        """Arc length from the first knot to every knot (cached)."""
        if self._cum is None:
            n = len(self.knots) - 1
            h = np.diff(self.knots)
            seg = kernels.arc_length_pieces(self.coeffs, np.arange(n), np.zeros(n), h,
                                            ARC_TOL / max(n, 1))
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            cum.setflags(write=False)
            self._cum = cum
        return self._cum

    def length_from_start(self, t) -> np.ndarray:
        """``s(t)`` for an array of times, reusing the per-knot cache."""
        t = np.atleast_1d(self._check(t))
        k = self.piece(t)
        local = t - self.knots[k]
        partial = kernels.arc_length_pieces(self.coeffs, k, np.zeros_like(local), local, 1e-11)
        return self.cumulative_length()[k] + partial

    # transforms --------------------------------------------------------------

    def scaled(self, factor: float) -> "SplineTrajectory":
        return SplineTrajectory(self.knots, self.coeffs * factor)

    def restrict(self, t0: float, t1: float) -> "SplineTrajectory":
        """The same curve on the sub-domain ``[t0, t1]``."""
        t0, t1 = (float(v) for v in self._check([t0, t1]))
        if not t1 > t0:
            raise DegenerateInput("restriction needs t0 < t1")
        k0 = int(self.piece(t0))
        k1 = int(np.searchsorted(self.knots, t1, side="left") - 1)
        k1 = max(min(k1, len(self.knots) - 2), k0)
        inner = self.knots[k0 + 1:k1 + 1]
        knots = np.concatenate([[t0], inner[(inner > t0) & (inner < t1)], [t1]])
        coeffs = np.array(self.coeffs[:, k0:k0 + len(knots) - 1])
        d = t0 - self.knots[k0]
        if d != 0.0:
            a, b, c, e = coeffs[:, 0]
            coeffs[0, 0] = a
            coeffs[1, 0] = 3 * a * d + b
            coeffs[2, 0] = (3 * a * d + 2 * b) * d + c
            coeffs[3, 0] = ((a * d + b) * d + c) * d + e
        return SplineTrajectory(knots, coeffs)


def fit_spline(times, points) -> SplineTrajectory:
    """Natural cubic spline through ``points`` (shape ``(n, dim)``) at ``times``."""
    t = np.asarray(times, dtype=float)
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if len(t) < 2 or len(t) != len(p):
        raise DegenerateInput("need at least 2 samples with matching times")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p))):
        raise DegenerateInput("non-finite samples")
    if np.any(np.diff(t) <= 0):
        raise DegenerateInput("times must be strictly increasing")
    cs = CubicSpline(t, p, bc_type="natural", axis=0)
    return SplineTrajectory(cs.x, cs.c)


def derivatives(traj: SplineTrajectory, t, order: int = 1) -> np.ndarray:
    """Exact derivative of the piecewise cubic (order 0, 1 or 2)."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    return traj(t, order)


def arc_length(traj: SplineTrajectory, t0: float, t1: float, tol: float = ARC_TOL) -> float:
    """Length of the curve over ``[t0, t1]``."""
    t0, t1 = (float(v) for v in traj._check([t0, t1]))
    if t1 < t0:
        raise OutOfDomain("t0 must not exceed t1")
    if t1 == t0:
        return 0.0
    k0, k1 = int(traj.piece(t0)), int(traj.piece(t1))
    if t1 == traj.knots[k1] and k1 > k0:
        k1 -= 1
    ks = np.arange(k0, k1 + 1)
    a = np.where(ks == k0, t0 - traj.knots[ks], 0.0)
    b = np.where(ks == k1, t1 - traj.knots[ks], traj.knots[ks + 1] - traj.knots[ks])
    return float(kernels.arc_length_pieces(traj.coeffs, ks, a, b, tol / len(ks)).sum())


def _kappa_tau(d1, d2, d3):
    speed = np.linalg.norm(d1, axis=-1)
    cross = np.cross(d1, d2)
    cn = np.linalg.norm(cross, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(speed > EPS_SPEED, cn / speed ** 3, 0.0)
        tau = np.where((cn >= EPS_CURV) & (speed > EPS_SPEED),
                       np.einsum("...i,...i->...", cross, d3) / cn ** 2, 0.0)
    return speed, kappa, tau


def curvature_torsion(traj: SplineTrajectory, t: float) -> tuple[float, float]:
    """Curvature and torsion at ``t``; torsion is 0 where the curve is straight."""
    d1, d2, d3 = traj(t, 1), traj(t, 2), traj(t, 3)
    speed, kappa, tau = _kappa_tau(d1, d2, d3)
    if speed <= EPS_SPEED:
        raise SingularVelocity(f"speed {float(speed):.3g} below threshold at t={t}")
    return float(kappa), float(tau)


def curvature_torsion_many(traj: SplineTrajectory, ts) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized, total version: both values are 0 where the speed vanishes."""
    ts = np.asarray(ts, dtype=float)
    _, kappa, tau = _kappa_tau(traj(ts, 1), traj(ts, 2), traj(ts, 3))
    return kappa, tau


@dataclass(frozen=True)
class FrenetFrame:
    t: np.ndarray
    n: np.ndarray
    b: np.ndarray
    point: np.ndarray
    s: float

    def matrix(self) -> np.ndarray:
        """Columns are (t, n, b)."""
        return np.column_stack([self.t, self.n, self.b])


def _frames(d1, d2):
    speed = np.linalg.norm(d1, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tan = d1 / speed[..., None]
        perp = d2 - np.einsum("...i,...i->...", d2, tan)[..., None] * tan
        kappa = np.linalg.norm(np.cross(d1, d2), axis=-1) / speed ** 3
        nor = perp / np.linalg.norm(perp, axis=-1)[..., None]
    bin_ = np.cross(tan, nor)
    valid = (speed > EPS_SPEED) & (kappa > EPS_CURV) & np.all(np.isfinite(nor), axis=-1)
    return tan, nor, bin_, valid, speed, kappa


def frenet_frame(traj: SplineTrajectory, t: float) -> FrenetFrame:
    d1, d2 = traj(t, 1), traj(t, 2)
    tan, nor, bin_, valid, speed, kappa = _frames(d1, d2)
    if speed <= EPS_SPEED:
        raise SingularVelocity(f"speed below threshold at t={t}")
    if not valid:
        raise VanishingCurvature(f"curvature below threshold at t={t}")
    s = arc_length(traj, traj.domain[0], t)
    return FrenetFrame(tan, nor, bin_, traj(t), s)


def frenet_frames_many(traj: SplineTrajectory, ts) -> tuple[np.ndarray, np.ndarray]:
    """Frames as ``(n, 3, 3)`` matrices with columns (t, n, b) plus a validity mask."""
    ts = np.asarray(ts, dtype=float)
    tan, nor, bin_, valid, _, _ = _frames(traj(ts, 1), traj(ts, 2))
    frames = np.stack([tan, nor, bin_], axis=-1)
    frames[~valid] = np.nan
    return frames, valid


def decimate_indices(n: int, factor: int) -> np.ndarray:
    """Indices 0, factor, 2*factor, ... and always the last one."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if n <= 0:
        return np.zeros(0, dtype=int)
    idx = np.arange(0, n, factor)
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


def decimate(samples, factor: int):
    """Keep every ``factor``-th sample plus the last; rows keep attached data."""
    idx = decimate_indices(len(samples), factor)
    if isinstance(samples, np.ndarray):
        return samples[idx]
    return [samples[i] for i in idx]
