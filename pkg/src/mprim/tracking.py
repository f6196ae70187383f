"""Multi-subject association across frames by weighted rigid alignment.

Each detected skeleton is reduced to five anchor joints (both hips, both
clavicles and the head). Skeletons in consecutive frames are matched by an
optimal one-to-one assignment on the residual of the best weighted rigid
alignment between their anchor sets.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateConfiguration, MalformedInput
from .skeleton import DEFAULT_SPEC, SkeletonSequence

ANCHOR_JOINTS = ("lhip", "rhip", "lshoulder", "rshoulder", "head")
R_MAX = 0.5


@dataclass(frozen=True)
class AnchorSet:
    points: np.ndarray
    weights: np.ndarray = field(default_factory=lambda: np.ones(len(ANCHOR_JOINTS)))

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        w = np.broadcast_to(np.asarray(self.weights, dtype=float), (len(p),)).copy()
        if p.ndim != 2 or p.shape[1] != 3 or not np.all(np.isfinite(p)):
            raise MalformedInput("anchor points must be finite 3-vectors")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise MalformedInput("anchor weights must be positive")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_positions(cls, positions, weights=None, spec=DEFAULT_SPEC) -> "AnchorSet":
        """Anchors from an ``(18, 3)`` array of joint positions."""
        pos = np.asarray(positions, dtype=float)
        pts = pos[[spec.index(n) for n in ANCHOR_JOINTS]]
        return cls(pts) if weights is None else cls(pts, weights)


@dataclass(frozen=True)
class Alignment:
    R: np.ndarray
    d: np.ndarray
    residual: float


def weighted_kabsch(src, dst, weights=None) -> Alignment:
    """Proper rigid ``(R, d)`` minimizing ``sum w_i |R src_i + d - dst_i|^2``.

    ``src`` and ``dst`` are :class:`AnchorSet` values or ``(n, 3)`` arrays;
    weights default to those of ``src``. The residual is the weighted RMS.
    """
    if isinstance(src, AnchorSet):
        weights = src.weights if weights is None else weights
        src = src.points
    if isinstance(dst, AnchorSet):
        dst = dst.points
    X = np.asarray(src, dtype=float)
    Y = np.asarray(dst, dtype=float)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[1] != 3:
        raise MalformedInput("point sets must both be (n, 3)")
    w = np.ones(len(X)) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), (len(X),))
    w = w / w.sum()
    cx = w @ X
    cy = w @ Y
    Xc, Yc = X - cx, Y - cy
    sx = np.linalg.svd(np.sqrt(w)[:, None] * Xc, compute_uv=False)
    if sx[0] <= 1e-12 or sx[1] <= 1e-9 * sx[0]:
        raise DegenerateConfiguration("source anchors are coincident or collinear")
    H = (w[:, None] * Xc).T @ Yc
    U, _, Vt = np.linalg.svd(H)
    V = Vt.T
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(V @ U.T)) or 1.0])
    R = V @ D @ U.T
    d = cy - R @ cx
    res = float(np.sqrt(w @ np.sum((X @ R.T + d - Y) ** 2, axis=1)))
    return Alignment(R, d, res)


def residual_matrix(prev, cur) -> np.ndarray:
    """Alignment residual for every (previous, current) pair; ``inf`` when degenerate."""
    out = np.full((len(prev), len(cur)), np.inf)
    for i, a in enumerate(prev):
        for j, b in enumerate(cur):
            try:
                out[i, j] = weighted_kabsch(a, b).residual
            except DegenerateConfiguration:
                pass
    return out


def associate(prev, cur, r_max: float = R_MAX) -> dict[int, int]:
    """Optimal one-to-one matching ``prev index -> cur index`` minimizing
    total residual; pairs above ``r_max`` stay unmatched."""
    if not prev or not cur:
        return {}
    C = residual_matrix(prev, cur)
    big = 1e6 * (1.0 + np.nanmax(np.where(np.isfinite(C), C, 0.0)))
    rows, cols = linear_sum_assignment(np.where(np.isfinite(C), C, big))
    return {int(i): int(j) for i, j in zip(rows, cols) if C[i, j] <= r_max}


@dataclass
class SubjectTrack:
    track_id: int
    frames: list[int] = field(default_factory=list)
    detections: list[int] = field(default_factory=list)
    steps: list[Alignment] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class Detection:
    positions: np.ndarray
    detection_id: str = ""


def track_sequence(frames, r_max: float = R_MAX, weights=None) -> list[SubjectTrack]:
    """Chain associations over consecutive frames.

    ``frames[t]`` is a list of :class:`Detection`. Unmatched detections open
    new tracks; a track ends when its subject is not matched in the next
    frame, and is never reopened.
    """
    tracks: list[SubjectTrack] = []
    active: dict[int, int] = {}  # detection index in previous frame -> track position
    prev_anchor: list[AnchorSet] = []
    for t, dets in enumerate(frames):
        anchors = [AnchorSet.from_positions(d.positions, weights) for d in dets]
        match = associate(prev_anchor, anchors, r_max) if active else {}
        new_active = {}
        for i, j in match.items():
            tr = tracks[active[i]]
            tr.frames.append(t)
            tr.detections.append(j)
            tr.steps.append(weighted_kabsch(prev_anchor[i], anchors[j]))
            new_active[j] = active[i]
        for j in range(len(dets)):
            if j not in new_active:
                tracks.append(SubjectTrack(len(tracks), [t], [j]))
                new_active[j] = len(tracks) - 1
        active, prev_anchor = new_active, anchors
    return tracks


def track_to_sequence(track: SubjectTrack, frames, rate: float, seq_id: str | None = None) -> SkeletonSequence:
    """Single-subject position-only sequence covering the track's frames."""
    pos = np.array([frames[t][j].positions for t, j in zip(track.frames, track.detections)])
    return SkeletonSequence.from_positions(pos, rate, seq_id if seq_id is not None else f"track-{track.track_id}")


def parse_frames_json(text: str, spec=DEFAULT_SPEC) -> tuple[float, list[list[Detection]]]:
    """``{"rate_hz": r, "frames": [{"skeletons": [{"id": s, "joints": {name: {"t": [x, y, z]}}}]}]}``."""
    try:
        doc = json.loads(text)
        rate = float(doc["rate_hz"])
        frames = []
        for k, fr in enumerate(doc["frames"]):
            dets = []
            for sk in fr.get("skeletons", []):
                pos = np.array([sk["joints"][n]["t"] for n in spec.names], dtype=float)
                if pos.shape != (len(spec.names), 3) or not np.all(np.isfinite(pos)):
                    raise MalformedInput(f"frame {k}: bad joint positions")
                dets.append(Detection(pos, str(sk.get("id", ""))))
            frames.append(dets)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"multi-skeleton JSON: {exc}") from exc
    return rate, frames


def frames_to_json(frames, rate: float, spec=DEFAULT_SPEC) -> str:
    return json.dumps({"rate_hz": rate, "frames": [
        {"skeletons": [{"id": d.detection_id,
                        "joints": {n: {"t": [float(v) for v in d.positions[i]]} for i, n in enumerate(spec.names)}}
                       for d in dets]} for dets in frames]})
