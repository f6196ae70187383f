"""17-element feature vectors from decimated trajectories.

Each vector describes a window of three contiguous decimated points:

====== =====================================================
0:9    coordinates of points i-1, i, i+1
9:12   curvature at the three points
12:15  torsion at the three points
15     trajectory index indicator
16     indicator for the number of vectors of that trajectory
====== =====================================================

Inside a :class:`FeatureSet` the two indicators are min-max normalized to
[0, 1] so they can be denormalized to recover the source trajectory.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooShort
from .geometry import SplineTrajectory, curvature_torsion_many, decimate_indices, frenet_frames_many

N_FEATURES = 17
GEOM = slice(0, 15)
IDX_COL = 15
COUNT_COL = 16
DECIMATION = 5
# below this fraction of the peak speed a sample counts as at rest
REST_SPEED_FRAC = 1e-2


@dataclass(frozen=True)
class TrajectorySamples:
    """Decimated samples of one trajectory with their differential data."""

    times: np.ndarray
    points: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray
    frames: np.ndarray
    frame_valid: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


def sample_trajectory(traj: SplineTrajectory, factor: int = DECIMATION,
                      rest_frac: float = REST_SPEED_FRAC) -> TrajectorySamples:
    """Evaluate ``traj`` at every ``factor``-th knot (plus the last one).

    Curvature and torsion are ill-conditioned where the curve nearly stops,
    so samples slower than ``rest_frac`` times the peak knot speed get
    ``kappa = tau = 0`` and no frame, as at zero speed.
    """
    t = traj.knots[decimate_indices(len(traj.knots), factor)]
    kappa, tau = curvature_torsion_many(traj, t)
    frames, valid = frenet_frames_many(traj, t)
    speed = np.linalg.norm(traj(t, 1), axis=1)
    peak = np.linalg.norm(traj(traj.knots, 1), axis=1).max()
    rest = speed <= rest_frac * peak
    kappa[rest] = 0.0
    tau[rest] = 0.0
    frames[rest] = np.nan
    valid = valid & ~rest
    return TrajectorySamples(t, traj(t), kappa, tau, frames, valid)


def extract_features(points, kappa, tau, nu: int) -> np.ndarray:
    """Sliding windows of width 3 and stride 1 with unnormalized indicators.

    Returns an ``(n - 2, 17)`` array for ``n`` points.
    """
    points = np.asarray(points, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    tau = np.asarray(tau, dtype=float)
    n = len(points)
    if n < 3:
        raise TooShort(f"{n} decimated points; need at least 3")
    m = n - 2
    out = np.empty((m, N_FEATURES))
    for w in range(3):
        out[:, 3 * w:3 * w + 3] = points[w:w + m]
        out[:, 9 + w] = kappa[w:w + m]
        out[:, 12 + w] = tau[w:w + m]
    out[:, IDX_COL] = nu
    out[:, COUNT_COL] = m
    return out


def normalize_indicator(value, bounds) -> np.ndarray | float:
    lo, hi = bounds
    if hi == lo:
        return np.zeros_like(np.asarray(value, dtype=float)) if np.ndim(value) else 0.0
    return (np.asarray(value, dtype=float) - lo) / (hi - lo) if np.ndim(value) else (value - lo) / (hi - lo)


def denormalize_indicator(vhat, bounds, integer: bool = True):
    lo, hi = bounds
    v = np.asarray(vhat, dtype=float) * (hi - lo) + lo
    if integer:
        v = np.rint(v).astype(np.int64)
    return v if np.ndim(vhat) else v.item()


@dataclass(frozen=True)
class FeatureSet:
    """All feature vectors of a group with normalized indicators.

    ``source[nu]`` names what trajectory ``nu`` came from (for primitives a
    ``(primitive_index, joint)`` pair) and ``samples[nu]`` holds its
    decimated points. ``window[r]`` is the index of the first point of row
    ``r`` within its trajectory.
    """

    features: np.ndarray
    window: np.ndarray
    index_bounds: tuple[int, int]
    count_bounds: tuple[int, int]
    group: int
    samples: dict
    source: dict

    def __len__(self) -> int:
        return len(self.features)

    @property
    def geometric(self) -> np.ndarray:
        return self.features[:, GEOM]

    def trajectory_index(self) -> np.ndarray:
        return denormalize_indicator(self.features[:, IDX_COL], self.index_bounds)

    def trajectory_count(self) -> np.ndarray:
        return denormalize_indicator(self.features[:, COUNT_COL], self.count_bounds)

    def rows_of(self, nu: int) -> np.ndarray:
        return np.flatnonzero(self.trajectory_index() == nu)


def build_featureset(samples: dict, group: int = 0, source: dict | None = None) -> FeatureSet:
    """Stack features of ``{nu: TrajectorySamples}`` and normalize indicators."""
    blocks, windows = [], []
    for nu, s in samples.items():
        f = extract_features(s.points, s.kappa, s.tau, nu)
        blocks.append(f)
        windows.append(np.arange(len(f)))
    if not blocks:
        return FeatureSet(np.zeros((0, N_FEATURES)), np.zeros(0, dtype=np.int64), (0, 0), (0, 0), group,
                          {}, dict(source or {}))
    feats = np.vstack(blocks)
    ib = (int(feats[:, IDX_COL].min()), int(feats[:, IDX_COL].max()))
    cb = (int(feats[:, COUNT_COL].min()), int(feats[:, COUNT_COL].max()))
    feats[:, IDX_COL] = normalize_indicator(feats[:, IDX_COL], ib)
    feats[:, COUNT_COL] = normalize_indicator(feats[:, COUNT_COL], cb)
    return FeatureSet(feats, np.concatenate(windows), ib, cb, group, dict(samples), dict(source or {}))


def featureset_from_primitives(prims, joints=(2,), factor: int = DECIMATION) -> FeatureSet:
    """Features of the chosen joints' trajectories of every primitive.

    Trajectories with fewer than 3 decimated points are skipped. Trajectory
    ``nu`` is ``len(joints) * primitive_index + position of joint``.
    """
    samples, source = {}, {}
    group = prims[0].group if prims else 0
    for p_idx, prim in enumerate(prims):
        for j_pos, j in enumerate(joints):
            s = sample_trajectory(prim.trajectories[j], factor)
            if len(s) < 3:
                continue
            nu = len(joints) * p_idx + j_pos
            samples[nu] = s
            source[nu] = (p_idx, j)
    return build_featureset(samples, group, source)
