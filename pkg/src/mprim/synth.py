"""Synthetic primitive sequences with known endpoints, and endpoint metrics.

A script animates one joint group of a full skeleton. Each event moves the
group's two segment rotations from a family-specific start pose to an end
pose along a minimum-jerk profile. Events are separated by rest dwells and,
from the second event on, a minimum-jerk transition ramp from the previous
end pose to the next start pose. Every event start and end is therefore a
zero-velocity instant.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import CountMismatch, InvalidScript
from .behavior import frames_to_samples
from .classes import PrimitiveClass
from .dpm import McmcConfig
from .flux import (FluxParams, GroupKinematics, anatomical_normalize, find_onset, primitive_between,
                   segment_sequence)
from .recognition import DEFAULT_DELTA, fit_class_models, recognize
from .skeleton import DEFAULT_SPEC, GROUP_CHAINS, GROUP_NAMES, JOINTS, SkeletonSequence

# rest-pose offset of each joint from its chain predecessor (metres, z up,
# x to the subject's left, y forward); chain inner joints are offset from
# the body anchor named alongside
_NOMINAL = {
    "root": ("world", (0.0, 0.0, 1.0)),
    "lowerback": ("root", (0.0, 0.0, 0.12)),
    "thorax": ("lowerback", (0.0, 0.0, 0.20)),
    "lowerneck": ("thorax", (0.0, 0.0, 0.15)),
    "upperneck": ("lowerneck", (0.0, 0.0, 0.08)),
    "head": ("upperneck", (0.0, 0.0, 0.12)),
    "rshoulder": ("thorax", (-0.18, 0.0, 0.08)),
    "relbow": ("rshoulder", (0.0, 0.0, -0.30)),
    "rwrist": ("relbow", (0.0, 0.0, -0.27)),
    "lshoulder": ("thorax", (0.18, 0.0, 0.08)),
    "lelbow": ("lshoulder", (0.0, 0.0, -0.30)),
    "lwrist": ("lelbow", (0.0, 0.0, -0.27)),
    "rhip": ("root", (-0.10, 0.0, -0.05)),
    "rknee": ("rhip", (0.0, 0.0, -0.45)),
    "rankle": ("rknee", (0.0, 0.0, -0.43)),
    "lhip": ("root", (0.10, 0.0, -0.05)),
    "lknee": ("lhip", (0.0, 0.0, -0.45)),
    "lankle": ("lknee", (0.0, 0.0, -0.43)),
}


def _f(a1s, a1e, a2s=(0, 0, 0), a2e=(0, 0, 0)):
    return np.array([*a1s, *a2s], float), np.array([*a1e, *a2e], float)


_Z = (0.0, 0.0, 0.0)
# start and end rotation vectors (proximal segment, distal segment), right side
_ARM = {
    "shoulder_flexion": _f(_Z, (1.3, 0, 0)),
    "shoulder_abduction": _f(_Z, (0, 1.2, 0)),
    "elbow_flexion": _f((0.2, 0, 0), (0.2, 0, 0), _Z, (1.6, 0, 0)),
    "shoulder_extension": _f(_Z, (-0.6, 0, 0)),
    "reach": _f((0.3, 0, 0), (1.5, 0, 0), (1.2, 0, 0), (0.1, 0, 0)),
    "raise_bend": _f((0, 0.4, 0), (0, 1.0, 0), (0.2, 0, 0), (1.4, 0, 0)),
}
_LEG = {
    "hip_flexion": _f(_Z, (0.9, 0, 0)),
    "hip_abduction": _f(_Z, (0, 0.6, 0)),
    "knee_flexion": _f((0.1, 0, 0), (0.1, 0, 0), _Z, (-1.4, 0, 0)),
    "hip_extension": _f(_Z, (-0.4, 0, 0)),
    "squat": _f(_Z, (1.0, 0, 0), _Z, (-1.6, 0, 0)),
    "kick": _f((0.2, 0, 0), (1.1, 0, 0), (-1.2, 0, 0), (-0.1, 0, 0)),
}
_HEAD = {
    "nod": _f(_Z, (-0.35, 0, 0), _Z, (-0.4, 0, 0)),
    "look_up": _f(_Z, (0.3, 0, 0), _Z, (0.4, 0, 0)),
    "tilt_right": _f(_Z, (0, -0.35, 0), _Z, (0, -0.3, 0)),
    "tilt_left": _f(_Z, (0, 0.35, 0), _Z, (0, 0.3, 0)),
    "nod_turn": _f((-0.2, 0, 0), (-0.5, 0, 0), _Z, (-0.3, 0, 0.8)),
    "chin_tuck": _f(_Z, (0.25, 0, 0), _Z, (-0.6, 0, 0)),
}
_TORSO = {
    "trunk_flexion": _f(_Z, (-0.8, 0, 0), _Z, (-0.3, 0, 0)),
    "trunk_extension": _f(_Z, (0.3, 0, 0), _Z, (0.2, 0, 0)),
    "side_bend_right": _f(_Z, (0, -0.4, 0), _Z, (0, -0.2, 0)),
    "side_bend_left": _f(_Z, (0, 0.4, 0), _Z, (0, 0.2, 0)),
    "flexion_twist": _f((-0.2, 0, 0), (-0.6, 0, 0), _Z, (0, 0, 0.7)),
    "bow": _f(_Z, (-0.5, 0, 0), _Z, (-0.6, 0, 0)),
}
_MIRROR = np.array([1.0, -1.0, -1.0, 1.0, -1.0, -1.0])

FAMILIES: dict[int, dict[str, tuple[np.ndarray, np.ndarray]]] = {
    1: _HEAD,
    2: _TORSO,
    3: _ARM,
    4: {k: (s * _MIRROR, e * _MIRROR) for k, (s, e) in _ARM.items()},
    5: _LEG,
    6: {k: (s * _MIRROR, e * _MIRROR) for k, (s, e) in _LEG.items()},
}


def min_jerk(tau):
    """Minimum-jerk profile on [0, 1]: zero velocity and acceleration at both ends."""
    tau = np.clip(tau, 0.0, 1.0)
    return tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)


@dataclass(frozen=True)
class SyntheticEvent:
    family: str
    duration: float
    amplitude: float = 1.0
    dwell_before: float = 0.5


@dataclass(frozen=True)
class SyntheticScript:
    group: int
    events: tuple[SyntheticEvent, ...] = ()
    rate: float = 50.0
    seed: int = 0
    ramp: float = 0.4
    tail: float = 0.5
    limb_scale: float | None = None

    def __post_init__(self):
        if self.group not in FAMILIES:
            raise InvalidScript(f"unknown group {self.group}")
        if not self.rate > 0 or not self.ramp > 0 or self.tail < 0:
            raise InvalidScript("rate and ramp must be positive, tail non-negative")
        for ev in self.events:
            if ev.family not in FAMILIES[self.group]:
                raise InvalidScript(f"family {ev.family!r} not defined for group {self.group}")
            if not ev.duration > 0 or ev.dwell_before < 0 or not ev.amplitude > 0:
                raise InvalidScript("durations and amplitudes must be positive, dwells non-negative")
        object.__setattr__(self, "events", tuple(self.events))


@dataclass(frozen=True)
class _Move:
    t0: float
    t1: float
    pose0: np.ndarray
    pose1: np.ndarray


class _Timeline:
    """Piecewise pose schedule: holds between minimum-jerk moves."""

    def __init__(self, script: SyntheticScript):
        fam = FAMILIES[script.group]
        self.moves: list[_Move] = []
        self.event_times: list[tuple[float, float]] = []
        t = 0.0
        pose = None
        for i, ev in enumerate(script.events):
            start, end = fam[ev.family]
            end = start + ev.amplitude * (end - start)
            t += ev.dwell_before
            if pose is not None:
                self.moves.append(_Move(t, t + script.ramp, pose, start))
                t += script.ramp
            self.moves.append(_Move(t, t + ev.duration, start, end))
            self.event_times.append((t, t + ev.duration))
            t += ev.duration
            pose = end
        self.initial = self.moves[0].pose0 if self.moves else np.zeros(6)
        self.duration = t + script.tail

    def pose(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.broadcast_to(self.initial, t.shape + (6,)).copy()
        for m in self.moves:
            s = min_jerk((t - m.t0) / (m.t1 - m.t0))[..., None]
            active = t >= m.t0
            out[active] = (m.pose0 + s * (m.pose1 - m.pose0))[active]
        return out


@dataclass(frozen=True)
class _Body:
    scale: float
    heading: float
    offset: np.ndarray


def _body(script: SyntheticScript) -> _Body:
    rng = np.random.default_rng([script.seed, 7])
    scale = script.limb_scale if script.limb_scale is not None else rng.uniform(0.5, 1.2)
    return _Body(float(scale), float(rng.uniform(-np.pi, np.pi)),
                 np.array([*rng.uniform(-2.0, 2.0, 2), 0.0]))


def _render(script: SyntheticScript, body: _Body, times: np.ndarray):
    """World rotations ``(n, 18, 3, 3)`` and translations ``(n, 18, 3)``."""
    n = len(times)
    names = [j for j, _ in JOINTS]
    idx = {j: i for i, j in enumerate(names)}
    world = Rotation.from_euler("z", body.heading).as_matrix()
    R = np.broadcast_to(world, (n, 18, 3, 3)).copy()
    T = np.zeros((n, 18, 3))
    rest = {}
    # _NOMINAL lists every joint after the joint it hangs from
    for name in _NOMINAL:
        base, off = _NOMINAL[name]
        off = np.asarray(off) * (1.0 if base == "world" else body.scale)
        rest[name] = off if base == "world" else rest[base] + off
    for name in names:
        T[:, idx[name]] = world @ rest[name] + body.offset
    inner, middle, outer = GROUP_CHAINS[script.group]
    pose = _Timeline(script).pose(times)
    a1 = Rotation.from_rotvec(pose[:, :3]).as_matrix()
    a2 = Rotation.from_rotvec(pose[:, 3:]).as_matrix()
    o1 = rest[middle] - rest[inner]
    o2 = rest[outer] - rest[middle]
    r_mid = world @ a1
    r_out = r_mid @ a2
    R[:, idx[middle]] = r_mid
    R[:, idx[outer]] = r_out
    T[:, idx[middle]] = T[:, idx[inner]] + r_mid @ o1
    T[:, idx[outer]] = T[:, idx[middle]] + r_out @ o2
    return R, T


def group_velocity(script: SyntheticScript, t: float, h: float = 1e-7) -> np.ndarray:
    """Central-difference velocity of the animated joints at time ``t`` (``(3, 3)``)."""
    body = _body(script)
    _, T = _render(script, body, np.array([t - h, t + h]))
    idx = [DEFAULT_SPEC.index(j) for j in GROUP_CHAINS[script.group]]
    return (T[1, idx] - T[0, idx]) / (2 * h)


def ground_truth_times(script: SyntheticScript) -> np.ndarray:
    """Event start and end times, flattened ``[s1, e1, s2, e2, ...]``."""
    return np.array(_Timeline(script).event_times, dtype=float).reshape(-1)


def generate_sequence(script: SyntheticScript) -> tuple[SkeletonSequence, np.ndarray]:
    """Render the script at its rate; returns the sequence and the 1-based
    ground-truth endpoint frames."""
    tl = _Timeline(script)
    n = int(np.floor(tl.duration * script.rate + 1e-9)) + 1
    times = np.arange(n) / script.rate
    R, T = _render(script, _body(script), times)
    seq = SkeletonSequence.from_matrices(R, T, script.rate, f"synth-{script.group}-{script.seed}")
    frames = np.rint(ground_truth_times(script) * script.rate).astype(int) + 1
    return seq, frames


def _snap(x: float, rate: float) -> float:
    """Round a duration to the frame grid."""
    return round(x * rate) / rate


def random_script(group: int, seed: int, rate: float = 50.0, max_events: int = 4) -> SyntheticScript:
    """Random order of random-length events; consecutive poses always differ
    enough that the transition ramp is a real motion."""
    rng = np.random.default_rng([seed, group])
    fam = FAMILIES[group]
    names = sorted(fam)
    events = []
    prev_end = None
    for _ in range(int(rng.integers(1, max_events + 1))):
        for _try in range(20):
            name = names[int(rng.integers(len(names)))]
            amp = float(rng.uniform(0.8, 1.2))
            start, end = fam[name]
            if prev_end is None or np.linalg.norm(start - prev_end) > 0.25:
                break
        prev_end = start + amp * (end - start)
        events.append(SyntheticEvent(name, _snap(rng.uniform(0.6, 1.4), rate), amp, _snap(rng.uniform(0.3, 0.8), rate)))
    return SyntheticScript(group, tuple(events), rate, seed, ramp=_snap(rng.uniform(0.3, 0.5), rate))


# metrics ---------------------------------------------------------------------


@dataclass(frozen=True)
class EndpointRecord:
    truth: np.ndarray
    found: np.ndarray
    group: int = 0

    @property
    def matched(self) -> bool:
        return len(self.truth) == len(self.found)

    def pairing(self) -> np.ndarray:
        """Order-based pairing: truth ``i`` pairs with found ``i``."""
        if not self.matched:
            raise CountMismatch(f"{len(self.found)} endpoints found, {len(self.truth)} expected")
        return np.arange(len(self.truth))


def endpoint_metrics(records) -> tuple[float | None, float | None, float]:
    """``(MAE, RMSE, miss_rate)`` in frames; sequences are weighted equally."""
    records = list(records)
    abs_means, sq_means, missed, counted = [], [], 0, 0
    for r in records:
        if len(r.truth) == 0 and len(r.found) == 0:
            continue
        counted += 1
        if not r.matched:
            missed += 1
            continue
        err = np.asarray(r.truth, float)[r.pairing()] - np.asarray(r.found, float)
        abs_means.append(np.mean(np.abs(err)))
        sq_means.append(np.mean(err ** 2))
    miss = missed / counted if counted else 0.0
    if not abs_means:
        return None, None, miss
    return float(np.mean(abs_means)), float(np.sqrt(np.mean(sq_means))), miss


def discovered_endpoints(kin: GroupKinematics, params: FluxParams) -> np.ndarray:
    """Onset of the first primitive followed by every primitive end (times)."""
    prims = segment_sequence(kin, params)
    if not prims:
        return np.zeros(0)
    onset = find_onset(kin, prims[0].interval[1], params)
    return np.array([onset] + [p.interval[1] for p in prims])


def evaluate_script(script: SyntheticScript, params: FluxParams) -> EndpointRecord:
    seq, truth = generate_sequence(script)
    kin = GroupKinematics.from_sequence(seq, script.group)
    found = discovered_endpoints(kin, params) * script.rate + 1
    return EndpointRecord(truth.astype(float), found, script.group)


@dataclass
class BenchmarkReport:
    n: int
    mae_frames: float | None
    rmse_frames: float | None
    miss_rate: float
    per_group: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    def to_dict(self) -> dict:
        """Report fields without the wall-clock runtime, so reruns match byte for byte."""
        return {"n": self.n, "mae_frames": self.mae_frames, "rmse_frames": self.rmse_frames,
                "miss_rate": self.miss_rate, "per_group": self.per_group}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def benchmark_scripts(n_sequences: int, seed: int = 0, rate: float = 50.0) -> list[SyntheticScript]:
    seeds = np.random.SeedSequence(seed).generate_state(n_sequences)
    return [random_script(1 + i % 6, int(s), rate) for i, s in enumerate(seeds)]


def run_benchmark(n_sequences: int = 100, params: FluxParams | None = None, seed: int = 0,
                  scripts=None) -> BenchmarkReport:
    """Generate, segment and score ``n_sequences`` scripts (cycling over groups)."""
    if n_sequences < 1:
        raise ValueError("n_sequences must be >= 1")
    params = params or FluxParams()
    scripts = list(scripts) if scripts is not None else benchmark_scripts(n_sequences, seed)
    t0 = time.perf_counter()
    records = [evaluate_script(s, params) for s in scripts]
    mae, rmse, miss = endpoint_metrics(records)
    per_group = {}
    for g in sorted({r.group for r in records}):
        sub = [r for r in records if r.group == g]
        m, r_, ms = endpoint_metrics(sub)
        per_group[GROUP_NAMES[g]] = {"n": len(sub), "mae_frames": m, "rmse_frames": r_, "miss_rate": ms}
    return BenchmarkReport(len(records), mae, rmse, miss, per_group, time.perf_counter() - t0)


# ----------------------------------------------------------------------------
# closed-loop recognition benchmark


@dataclass
class RecognitionReport:
    group: int
    n_train: int
    n_test: int
    accuracy: dict
    class_components: list
    runtime_s: float

    def to_dict(self) -> dict:
        return {"group": self.group, "n_train": self.n_train, "n_test": self.n_test,
                "accuracy": self.accuracy, "class_components": self.class_components}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def family_primitives(group: int, n_per_family: int, seed: int = 0, rate: float = 50.0,
                      params: FluxParams | None = None):
    """One single-event sequence per instance, segmented by the flux search.

    Returns the anatomically normalized discovered primitives (``None`` when
    nothing was found) and their family indices.
    """
    params = params or FluxParams()
    fams = list(FAMILIES[group])
    rng = np.random.default_rng(seed)
    prims, labels = [], []
    for f, fam in enumerate(fams):
        for r in range(n_per_family):
            dur = _snap(rng.uniform(0.6, 1.4), rate)
            dwell = _snap(rng.uniform(0.3, 0.8), rate)
            script = SyntheticScript(group, [SyntheticEvent(fam, dur, float(rng.uniform(0.8, 1.2)), dwell)],
                                     rate=rate, seed=int(rng.integers(2**31)))
            seq, _ = generate_sequence(script)
            kin = GroupKinematics.from_sequence(seq, group)
            found = segment_sequence(kin, params)
            prim = None
            if found:
                end = found[0].interval[1]
                prim = anatomical_normalize(primitive_between(kin, find_onset(kin, end, params), end), kin)
            prims.append(prim)
            labels.append(f)
    return prims, np.array(labels)


def recognition_benchmark(group: int = 3, n_per_family: int = 30, test_frac: float = 0.2, seed: int = 0,
                          config: McmcConfig | None = None, delta: float = DEFAULT_DELTA,
                          variants=("full", "delta", "frenet", "none")) -> RecognitionReport:
    """Train per-family class models on a random split and report held-out
    accuracy for each cost variant (``"none"`` is likelihood only). Test
    instances without a discovered primitive count as errors."""
    t0 = time.perf_counter()
    config = config or McmcConfig(iters=100, burnin=30, chains=2, seed=seed)
    fams = list(FAMILIES[group])
    prims, labels = family_primitives(group, n_per_family, seed)
    perm = np.random.default_rng([seed, 11]).permutation(len(prims))
    n_test = int(round(test_frac * len(prims)))
    test, train = perm[:n_test], perm[n_test:]
    classes = [PrimitiveClass(group, f, tuple(int(i) for i in train if labels[i] == f and prims[i] is not None),
                              fams[f]) for f in range(len(fams))]
    models = fit_class_models([c for c in classes if c.members], prims, config)
    acc = {}
    for v in variants:
        hits = [prims[i] is not None and recognize(models, prims[i], delta, v).label == fams[labels[i]]
                for i in test]
        acc[v] = float(np.mean(hits))
    return RecognitionReport(group, len(train), n_test, acc, [m.rho for m in models], time.perf_counter() - t0)


# ----------------------------------------------------------------------------
# behavior corpus

_BEHAVIOR_VOCAB = {
    "normal": {3: ("wave", "reach", "rest_arm"), 5: ("walk", "stand", "step")},
    "danger": {3: ("punch", "strike", "grab"), 5: ("kick", "stomp", "lunge")},
    "shared": {1: ("nod", "look_up", "tilt"), 2: ("bow", "twist", "upright"),
               4: ("wave_l", "reach_l", "rest_arm_l"), 6: ("walk_l", "stand_l", "step_l")},
}


def behavior_timeline(dangerous: bool, n_frames: int, rng: np.random.Generator, change_rate: float = 0.05):
    """Per-frame labels of the six groups; arm and leg vocabularies depend on the class."""
    kind = "danger" if dangerous else "normal"
    vocab = {**_BEHAVIOR_VOCAB["shared"], **_BEHAVIOR_VOCAB[kind]}
    cur = {g: str(rng.choice(vocab[g])) for g in range(1, 7)}
    out = []
    for _ in range(n_frames):
        for g in range(1, 7):
            if rng.random() < change_rate:
                cur[g] = str(rng.choice(vocab[g]))
        out.append(tuple(cur[g] for g in range(1, 7)))
    return out


def behavior_corpus(n_subjects: int = 40, n_frames: int = 300, seed: int = 0, change_rate: float = 0.05):
    """Samples of subjects whose arm and leg label patterns mark the class
    (odd subjects dangerous)."""
    rng = np.random.default_rng(seed)
    out = []
    for s in range(n_subjects):
        danger = s % 2 == 1
        tl = behavior_timeline(danger, n_frames, rng, change_rate)
        out.extend(frames_to_samples(tl, 1 if danger else -1, f"s{s}"))
    return out
