"""Skeleton data model, sequence ingestion, resampling and pose normalization.

The skeleton has 18 joints split into six groups of three. Within each group
joints are listed inner to outer; the inner joint is the group's parent
joint (the one closest to the root in the hierarchy).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import IO, Mapping

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial.transform import Rotation, Slerp

from .errors import DegenerateSequence, MalformedInput, PositionOnlyInput

ORTHO_TOL = 1e-6

# (name, group) in canonical order; groups G1..G6 are head, torso,
# right arm, left arm, right leg, left leg.
JOINTS: tuple[tuple[str, int], ...] = (
    ("head", 1), ("upperneck", 1), ("lowerneck", 1),
    ("root", 2), ("lowerback", 2), ("thorax", 2),
    ("rshoulder", 3), ("relbow", 3), ("rwrist", 3),
    ("lshoulder", 4), ("lelbow", 4), ("lwrist", 4),
    ("rhip", 5), ("rknee", 5), ("rankle", 5),
    ("lhip", 6), ("lknee", 6), ("lankle", 6),
)

GROUP_NAMES = {1: "head", 2: "torso", 3: "right_arm", 4: "left_arm",
               5: "right_leg", 6: "left_leg"}

# inner -> outer joint order per group
GROUP_CHAINS: dict[int, tuple[str, str, str]] = {
    1: ("lowerneck", "upperneck", "head"),
    2: ("root", "lowerback", "thorax"),
    3: ("rshoulder", "relbow", "rwrist"),
    4: ("lshoulder", "lelbow", "lwrist"),
    5: ("rhip", "rknee", "rankle"),
    6: ("lhip", "lknee", "lankle"),
}


@dataclass(frozen=True)
class DirectionAnchor:
    group: int
    joints: tuple[str, str]


DIRECTION_ANCHORS: dict[int, DirectionAnchor] = {
    g: DirectionAnchor(g, ("lowerneck", "upperneck") if g in (1, 3, 4) else ("root", "lowerback"))
    for g in range(1, 7)
}


@dataclass(frozen=True)
class Se3Transform:
    """Rigid transform: 3x3 rotation and translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise MalformedInput("non-finite transform")
        check_rotation(r, tol=ORTHO_TOL)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Se3Transform":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Se3Transform":
        return Se3Transform(self.rotation.T, -self.rotation.T @ self.translation)

    def __matmul__(self, other: "Se3Transform") -> "Se3Transform":
        return Se3Transform(self.rotation @ other.rotation,
                            self.rotation @ other.translation + self.translation)


def check_rotation(r: np.ndarray, tol: float = ORTHO_TOL) -> None:
    """Raise MalformedInput unless ``r`` is a proper rotation within ``tol``."""
    if np.linalg.norm(r.T @ r - np.eye(3)) > tol:
        raise MalformedInput("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise MalformedInput("rotation has det != +1")


@dataclass(frozen=True)
class SkeletonSpec:
    """Joint list, group membership and per-group parent joints."""

    joints: tuple[tuple[str, int], ...] = JOINTS
    chains: Mapping[int, tuple[str, str, str]] = field(default_factory=lambda: dict(GROUP_CHAINS))
    root: str = "root"

    def __post_init__(self):
        if len(self.joints) != 18:
            raise ValueError("skeleton must have 18 joints")
        groups = [g for _, g in self.joints]
        if sorted(set(groups)) != [1, 2, 3, 4, 5, 6] or any(groups.count(g) != 3 for g in range(1, 7)):
            raise ValueError("skeleton must have 6 groups of 3 joints")
        if self.joints[3][0] != self.root or self.joints[3][1] != 2:
            raise ValueError("root must be the 4th joint, in group 2")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.joints]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def group_of(self, name: str) -> int:
        return dict(self.joints)[name]

    def parent(self, name: str) -> str:
        """Parent joint within the group; parent joints are their own parent."""
        return self.chains[self.group_of(name)][0]

    def parents(self) -> list[str]:
        return [self.chains[g][0] for g in range(1, 7)]


DEFAULT_SPEC = SkeletonSpec()


class SkeletonSequence:
    """Per-frame poses of the 18 joints at a fixed sampling rate.

    Rotations are held as unit quaternions ``(w, x, y, z)`` (the on-disk form,
    kept for exact round trips) together with the derived 3x3 matrices.
    Frame ``k`` (0-based) is at time ``k / rate``.
    """

    def __init__(self, quaternions, translations, rate: float, seq_id: str = "",
                 position_only: bool = False, spec: SkeletonSpec = DEFAULT_SPEC):
        q = np.array(quaternions, dtype=float)
        t = np.array(translations, dtype=float)
        if t.ndim != 3 or t.shape[1:] != (18, 3):
            raise MalformedInput(f"translations must have shape (N, 18, 3), got {t.shape}")
        if q.shape != t.shape[:2] + (4,):
            raise MalformedInput(f"quaternions must have shape (N, 18, 4), got {q.shape}")
        if len(t) < 1:
            raise DegenerateSequence("sequence has no frames")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise MalformedInput("non-finite value in sequence")
        if not rate > 0:
            raise MalformedInput("rate must be positive")
        norms = np.linalg.norm(q, axis=-1)
        if np.any(np.abs(norms - 1.0) > ORTHO_TOL):
            raise MalformedInput("quaternion is not unit length")
        self.quaternions = q
        self.translations = t
        self.rate = float(rate)
        self.id = seq_id
        self.position_only = bool(position_only)
        self.spec = spec
        self.rotations = quat_to_matrix(q)
        for a in (self.quaternions, self.translations, self.rotations):
            a.setflags(write=False)

    @classmethod
    def from_matrices(cls, rotations, translations, rate, seq_id="", position_only=False,
                      spec: SkeletonSpec = DEFAULT_SPEC) -> "SkeletonSequence":
        r = np.asarray(rotations, dtype=float)
        flat = r.reshape(-1, 3, 3)
        rtr = np.einsum("nji,njk->nik", flat, flat)
        if np.any(np.linalg.norm(rtr - np.eye(3), axis=(1, 2)) > ORTHO_TOL):
            raise MalformedInput("rotation is not orthonormal")
        if np.any(np.abs(np.linalg.det(flat) - 1.0) > ORTHO_TOL):
            raise MalformedInput("rotation has det != +1")
        q = matrix_to_quat(r)
        return cls(q, translations, rate, seq_id, position_only, spec)

    @classmethod
    def from_positions(cls, positions, rate, seq_id="", spec: SkeletonSpec = DEFAULT_SPEC):
        t = np.asarray(positions, dtype=float)
        q = np.zeros(t.shape[:2] + (4,))
        q[..., 0] = 1.0
        return cls(q, t, rate, seq_id, True, spec)

    def __len__(self) -> int:
        return len(self.translations)

    @property
    def n_frames(self) -> int:
        return len(self.translations)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_frames) / self.rate

    @property
    def duration(self) -> float:
        return (self.n_frames - 1) / self.rate

    def frame(self, k: int) -> dict[str, Se3Transform]:
        return {name: Se3Transform(self.rotations[k, i], self.translations[k, i])
                for i, name in enumerate(self.spec.names)}

    def joint_positions(self, name: str) -> np.ndarray:
        return self.translations[:, self.spec.index(name)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SkeletonSequence):
            return NotImplemented
        return (self.id == other.id and self.rate == other.rate
                and self.position_only == other.position_only
                and np.array_equal(self.quaternions, other.quaternions)
                and np.array_equal(self.translations, other.translations))

    def __repr__(self) -> str:
        return (f"SkeletonSequence(id={self.id!r}, frames={self.n_frames}, rate={self.rate}, "
                f"position_only={self.position_only})")


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from (w, x, y, z) quaternions, normalizing on the fly."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    s = 2.0 / np.sum(q * q, axis=-1)
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - s * (y * y + z * z)
    r[..., 0, 1] = s * (x * y - w * z)
    r[..., 0, 2] = s * (x * z + w * y)
    r[..., 1, 0] = s * (x * y + w * z)
    r[..., 1, 1] = 1 - s * (x * x + z * z)
    r[..., 1, 2] = s * (y * z - w * x)
    r[..., 2, 0] = s * (x * z - w * y)
    r[..., 2, 1] = s * (y * z + w * x)
    r[..., 2, 2] = 1 - s * (x * x + y * y)
    return r


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    xyzw = Rotation.from_matrix(r.reshape(-1, 3, 3)).as_quat()
    q = np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)
    # canonical sign: w >= 0
    q[q[:, 0] < 0] *= -1
    return q.reshape(r.shape[:-2] + (4,))


# --------------------------------------------------------------------------
# I/O

def parse_sequence(source: IO | bytes | str, format: str = "json", *, rate: float | None = None,
                   seq_id: str | None = None, spec: SkeletonSpec = DEFAULT_SPEC) -> SkeletonSequence:
    """Read a sequence from a JSON or CSV stream.

    ``rate`` and ``seq_id`` are required for CSV input, which carries neither.
    Joints may give a rotation as a quaternion ``"q"`` or as a matrix ``"R"``.
    """
    if isinstance(source, (bytes, bytearray)):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    if format == "json":
        return _parse_json(text, spec)
    if format == "csv":
        if rate is None:
            raise MalformedInput("CSV input needs an explicit rate")
        return _parse_csv(text, rate, seq_id or "", spec)
    raise MalformedInput(f"unknown format {format!r}")


def _num(v, what: str) -> float:
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise MalformedInput(f"non-numeric {what}: {v!r}") from None
    if not math.isfinite(x):
        raise MalformedInput(f"non-finite {what}")
    return x


def _rotation_entry(entry: Mapping, name: str) -> np.ndarray:
    if "q" in entry:
        q = entry["q"]
        if not isinstance(q, list) or len(q) != 4:
            raise MalformedInput(f"joint {name}: q must have 4 entries")
        return np.array([_num(v, f"{name}.q") for v in q])
    if "R" in entry:
        rows = entry["R"]
        try:
            r = np.array([[_num(v, f"{name}.R") for v in row] for row in rows])
        except TypeError:
            raise MalformedInput(f"joint {name}: bad R") from None
        if r.shape != (3, 3):
            raise MalformedInput(f"joint {name}: R must be 3x3")
        check_rotation(r)
        return matrix_to_quat(r)
    return np.array([1.0, 0.0, 0.0, 0.0])


def _parse_json(text: str, spec: SkeletonSpec) -> SkeletonSequence:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedInput(f"invalid JSON: {e}") from None
    if not isinstance(doc, dict) or "frames" not in doc:
        raise MalformedInput("missing 'frames'")
    rate = _num(doc.get("rate_hz"), "rate_hz")
    frames = doc["frames"]
    if not isinstance(frames, list) or not frames:
        raise DegenerateSequence("sequence has no frames")
    names = spec.names
    n = len(frames)
    q = np.zeros((n, 18, 4))
    t = np.zeros((n, 18, 3))
    for k, fr in enumerate(frames):
        joints = fr.get("joints") if isinstance(fr, dict) else None
        if not isinstance(joints, dict):
            raise MalformedInput(f"frame {k}: missing 'joints'")
        for i, name in enumerate(names):
            if name not in joints:
                raise MalformedInput(f"frame {k}: missing joint {name!r}")
            e = joints[name]
            tr = e.get("t")
            if not isinstance(tr, list) or len(tr) != 3:
                raise MalformedInput(f"frame {k}, joint {name}: t must have 3 entries")
            t[k, i] = [_num(v, f"{name}.t") for v in tr]
            q[k, i] = _rotation_entry(e, name)
    return SkeletonSequence(q, t, rate, str(doc.get("id", "")), bool(doc.get("position_only", False)), spec)


CSV_HEADER = ["frame", "joint", "qw", "qx", "qy", "qz", "tx", "ty", "tz"]


def _parse_csv(text: str, rate: float, seq_id: str, spec: SkeletonSpec) -> SkeletonSequence:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MalformedInput("empty CSV") from None
    if header != CSV_HEADER:
        raise MalformedInput(f"CSV header must be {','.join(CSV_HEADER)}")
    rows: dict[int, dict[str, list[str]]] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 9:
            raise MalformedInput(f"line {line_no}: expected 9 fields")
        try:
            k = int(row[0])
        except ValueError:
            raise MalformedInput(f"line {line_no}: bad frame index") from None
        rows.setdefault(k, {})[row[1].strip()] = row[2:]
    if not rows:
        raise DegenerateSequence("sequence has no frames")
    names = spec.names
    keys = sorted(rows)
    q = np.zeros((len(keys), 18, 4))
    t = np.zeros((len(keys), 18, 3))
    position_only = True
    for a, k in enumerate(keys):
        for i, name in enumerate(names):
            if name not in rows[k]:
                raise MalformedInput(f"frame {k}: missing joint {name!r}")
            vals = rows[k][name]
            if all(v.strip() == "" for v in vals[:4]):
                q[a, i] = (1.0, 0.0, 0.0, 0.0)
            else:
                position_only = False
                q[a, i] = [_num(v, f"{name}.q") for v in vals[:4]]
            t[a, i] = [_num(v, f"{name}.t") for v in vals[4:]]
    return SkeletonSequence(q, t, rate, seq_id, position_only, spec)


def serialize_sequence(seq: SkeletonSequence) -> str:
    """JSON rendering; floats use Python's shortest round-trip repr."""
    names = seq.spec.names
    frames = []
    for k in range(seq.n_frames):
        joints = {}
        for i, name in enumerate(names):
            joints[name] = {"q": [float(v) for v in seq.quaternions[k, i]],
                            "t": [float(v) for v in seq.translations[k, i]]}
        frames.append({"joints": joints})
    doc = {"id": seq.id, "rate_hz": seq.rate, "position_only": seq.position_only, "frames": frames}
    return json.dumps(doc)


def sequence_to_csv(seq: SkeletonSequence) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for k in range(seq.n_frames):
        for i, name in enumerate(seq.spec.names):
            q = ["", "", "", ""] if seq.position_only else [repr(float(v)) for v in seq.quaternions[k, i]]
            w.writerow([k, name, *q, *(repr(float(v)) for v in seq.translations[k, i])])
    return buf.getvalue()


# --------------------------------------------------------------------------
# resampling and normalization

def resample(seq: SkeletonSequence, target_rate: float) -> SkeletonSequence:
    """Resample to ``target_rate``.

    Translations use a natural cubic spline per coordinate; rotations use
    quaternion slerp between the bracketing frames. Output frames sit at
    ``k / target_rate`` up to the last original timestamp.
    """
    if not target_rate > 0:
        raise ValueError("target_rate must be positive")
    if seq.n_frames < 2:
        raise DegenerateSequence("resampling needs at least 2 frames")
    t_old = seq.times
    n_new = int(math.floor(seq.duration * target_rate + 1e-9)) + 1
    t_new = np.arange(n_new) / target_rate
    t_new[-1] = min(t_new[-1], t_old[-1])
    if seq.rate == target_rate:
        return SkeletonSequence(seq.quaternions, seq.translations, target_rate, seq.id,
                                seq.position_only, seq.spec)
    flat = seq.translations.reshape(seq.n_frames, -1)
    trans = CubicSpline(t_old, flat, bc_type="natural")(t_new).reshape(n_new, 18, 3)
    if seq.position_only:
        return SkeletonSequence.from_positions(trans, target_rate, seq.id, seq.spec)
    quats = np.empty((n_new, 18, 4))
    for i in range(18):
        rots = Rotation.from_matrix(seq.rotations[:, i])
        xyzw = Slerp(t_old, rots)(t_new).as_quat()
        quats[:, i] = np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)
    quats /= np.linalg.norm(quats, axis=-1, keepdims=True)
    return SkeletonSequence(quats, trans, target_rate, seq.id, False, seq.spec)


def _inv(r: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rt = np.swapaxes(r, -1, -2)
    return rt, -np.einsum("...ij,...j->...i", rt, t)


def _compose(r1, t1, r2, t2):
    return r1 @ r2, np.einsum("...ij,...j->...i", r1, t2) + t1


def root_sequence_normalize(seq: SkeletonSequence) -> SkeletonSequence:
    """Express every joint relative to its parent at frame k, mapped through
    the frame-1 pose of that parent relative to the root."""
    if seq.position_only:
        raise PositionOnlyInput("pose normalization needs full rotations")
    spec = seq.spec
    R, T = seq.rotations, seq.translations
    root = spec.index(spec.root)
    r_root_inv, t_root_inv = _inv(R[0, root], T[0, root])
    out_r = np.empty_like(R)
    out_t = np.empty_like(T)
    for i, name in enumerate(spec.names):
        p = spec.index(spec.parent(name))
        # constant factor: (T1_root)^-1 T1_parent
        cr, ct = _compose(r_root_inv, t_root_inv, R[0, p], T[0, p])
        # per-frame factor: (Tk_parent)^-1 Tk_joint
        pr_inv, pt_inv = _inv(R[:, p], T[:, p])
        lr, lt = _compose(pr_inv, pt_inv, R[:, i], T[:, i])
        out_r[:, i], out_t[:, i] = _compose(cr, ct, lr, lt)
    return SkeletonSequence.from_matrices(out_r, out_t, seq.rate, seq.id, False, spec)


def subtract_root(seq: SkeletonSequence) -> SkeletonSequence:
    """Position-only fallback: remove the frame-1 root translation."""
    root = seq.spec.index(seq.spec.root)
    t = seq.translations - seq.translations[0, root]
    return SkeletonSequence(seq.quaternions, t, seq.rate, seq.id, seq.position_only, seq.spec)


def normalize(seq: SkeletonSequence) -> SkeletonSequence:
    """Root-sequence normalization, or root subtraction for position-only data."""
    return subtract_root(seq) if seq.position_only else root_sequence_normalize(seq)


def group_positions(seq: SkeletonSequence, group: int) -> np.ndarray:
    """Translation series of the group's joints, shape ``(3, N, 3)``, inner to outer."""
    if group not in seq.spec.chains:
        raise ValueError(f"unknown group {group}")
    idx = [seq.spec.index(n) for n in seq.spec.chains[group]]
    return np.stack([seq.translations[:, i] for i in idx])

