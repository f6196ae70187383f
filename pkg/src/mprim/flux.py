"""Motion flux, the flux energy and sequential primitive discovery.

For a group of joints with trajectories ``x_j(t)`` the flux over ``[t1, t2]``
is ``sum_j int |a_j(t) . g| dt`` where ``a_j`` is the acceleration and ``g``
a fixed unit direction. Primitive endpoints are found by maximizing

    P(rho; t0) = flux(t0, rho) - beta_v/2 sum_j (|v_j(rho)|^2 + |v_j(t0)|^2)
                 + beta_s sum_j (s_j(rho) - s_j(t0))

forward from the previous endpoint.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateDirection, DegenerateLimb, MalformedInput, OutOfDomain
from .geometry import SplineTrajectory, fit_spline
from .skeleton import DIRECTION_ANCHORS, SkeletonSequence, group_positions, normalize

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
N_JOINTS = 3


@dataclass(frozen=True)
class FluxParams:
    """Hyperparameters of the endpoint search.

    ``beta_s_sign`` flips the arc-length term (``+1`` rewards long segments).
    ``stat_frac`` is the squared-speed fraction of the window peak below
    which a near-maximal grid point counts as stationary.
    """

    beta_v: float = 100.0
    beta_s: float = 0.05
    grid_step: float = 0.02
    g: np.ndarray | None = None
    beta_s_sign: float = 1.0
    stat_frac: float = 1e-5

    def __post_init__(self):
        if self.beta_v < 0 or self.beta_s < 0:
            raise ValueError("beta_v and beta_s must be non-negative")
        if not self.grid_step > 0:
            raise ValueError("grid_step must be positive")
        if self.beta_s_sign not in (1.0, -1.0, 1, -1):
            raise ValueError("beta_s_sign must be +1 or -1")
        if self.g is not None:
            g = np.asarray(self.g, dtype=float)
            if abs(np.linalg.norm(g) - 1.0) > 1e-9:
                raise ValueError("g must be a unit vector")
            object.__setattr__(self, "g", g)

    @property
    def tie_tol(self) -> float:
        """Energy band treated as tied with the maximum.

        Leaving rest, flux grows linearly in speed while the penalty grows
        quadratically, so the energy first rises by at most ``1 / (2 beta_v)``
        per joint before it falls. A rest pose is therefore only maximal up
        to this band.
        """
        return N_JOINTS / (2.0 * self.beta_v) if self.beta_v > 0 else 0.0


@dataclass(frozen=True)
class GroupKinematics:
    group: int
    trajectories: tuple[SplineTrajectory, SplineTrajectory, SplineTrajectory]
    limb_length: float
    g: np.ndarray
    rate: float = 50.0
    sequence_id: str = ""
    _flux_cum: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_sequence(cls, seq: SkeletonSequence, group: int, *, normalized: bool = False):
        """Fit splines to the group's joints; normalizes the sequence first
        unless ``normalized`` says it already is."""
        if not normalized:
            seq = normalize(seq)
        pos = group_positions(seq, group)
        trajs = tuple(fit_spline(seq.times, p) for p in pos)
        return cls(group, trajs, limb_length(pos), direction_g(seq, group), seq.rate, seq.id)

    @property
    def domain(self) -> tuple[float, float]:
        return self.trajectories[0].domain

    def _cum(self, g: np.ndarray) -> list[np.ndarray]:
        key = tuple(np.round(g, 15))
        if key not in self._flux_cum:
            self._flux_cum[key] = [
                np.concatenate([[0.0], np.cumsum(_piece_flux(tr, g, np.arange(len(tr.knots) - 1),
                                                             np.diff(tr.knots)))])
                for tr in self.trajectories
            ]
        return self._flux_cum[key]

    def flux_from_start(self, t, g: np.ndarray | None = None) -> np.ndarray:
        """Cumulative flux from the start of the domain to each time in ``t``."""
        g = self.g if g is None else np.asarray(g, dtype=float)
        out = 0.0
        for tr, cum in zip(self.trajectories, self._cum(g)):
            tt = np.atleast_1d(tr._check(t))
            k = tr.piece(tt)
            out = out + cum[k] + _piece_flux(tr, g, k, tt - tr.knots[k])
        return out

    def speed2(self, t) -> np.ndarray:
        return sum(np.sum(tr(np.atleast_1d(t), 1) ** 2, axis=-1) for tr in self.trajectories)

    def length_from_start(self, t) -> np.ndarray:
        return sum(tr.length_from_start(t) for tr in self.trajectories)


def _piece_flux(tr: SplineTrajectory, g, k, u) -> np.ndarray:
    """Exact ``int_0^u |a(s) . g| ds`` on pieces ``k``; acceleration is linear per piece."""
    p = 2.0 * tr.coeffs[1, k] @ g
    q = 6.0 * tr.coeffs[0, k] @ g
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(q != 0.0, -p / q, -1.0)
    whole = np.abs(p * u + 0.5 * q * u * u)
    inside = (r > 0) & (r < u)
    split = np.abs(p * r + 0.5 * q * r * r) + np.abs(p * (u - r) + 0.5 * q * (u * u - r * r))
    return np.where(inside, split, whole)


def limb_length(pos: np.ndarray) -> float:
    """Sum of mean inner-middle and middle-outer distances over frames."""
    return float(sum(np.linalg.norm(pos[i + 1] - pos[i], axis=-1).mean() for i in range(2)))


def direction_g(seq: SkeletonSequence, group: int) -> np.ndarray:
    """Unit vector along the group's anchor segment, averaged over frames."""
    a, b = DIRECTION_ANCHORS[group].joints
    d = (seq.translations[:, seq.spec.index(b)] - seq.translations[:, seq.spec.index(a)]).mean(0)
    n = np.linalg.norm(d)
    if n <= 1e-9:
        raise DegenerateDirection(f"anchor joints of group {group} coincide")
    return d / n


def motion_flux(kin: GroupKinematics, t1: float, t2: float, g=None) -> float:
    if t2 < t1:
        raise OutOfDomain("t1 must not exceed t2")
    f = kin.flux_from_start([t1, t2], g)
    return max(0.0, float(f[1] - f[0]))


def _energy(kin: GroupKinematics, rho: np.ndarray, t0: float, params: FluxParams) -> np.ndarray:
    # symmetric in direction: flux and arc length are taken between the two times
    g = kin.g if params.g is None else params.g
    ts = np.append(rho, t0)
    f = kin.flux_from_start(ts, g)
    v2 = kin.speed2(ts)
    val = np.abs(f[:-1] - f[-1]) - 0.5 * params.beta_v * (v2[:-1] + v2[-1])
    if params.beta_s:
        s = kin.length_from_start(ts)
        val = val + params.beta_s_sign * params.beta_s * np.abs(s[:-1] - s[-1])
    return val


def energy(kin: GroupKinematics, rho, t0: float, params: FluxParams) -> np.ndarray | float:
    """Flux energy ``P(rho; t0)``; ``rho`` may be an array."""
    scalar = np.ndim(rho) == 0
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if np.any(rho < t0):
        raise OutOfDomain("rho must not precede t0")
    val = _energy(kin, rho, t0, params)
    return float(val[0]) if scalar else val


def _grid(t0: float, t1: float, h: float) -> np.ndarray:
    """Points ``t0, t0 + h, ...`` ending exactly at ``t1`` (either direction)."""
    span = abs(t1 - t0)
    step = h if t1 >= t0 else -h
    n = int(np.floor(span / h + 1e-9))
    grid = t0 + step * np.arange(n + 1)
    if n == 0 or span - n * h > 1e-6 * h:
        grid = np.append(grid, t1)
    else:
        grid[-1] = t1
    return grid


def _golden_max(f, a: float, b: float, tol: float) -> float:
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _search(kin: GroupKinematics, t0: float, t_stop: float, params: FluxParams) -> float | None:
    grid = _grid(t0, t_stop, params.grid_step)
    p = _energy(kin, grid, t0, params)
    tie = params.tie_tol
    run = np.maximum.accumulate(p)
    # a local maximum is confirmed once the energy has gained, and then lost,
    # clearly more than the tie band
    dropped = (p < run - max(2.0 * tie, 1e-12)) & (run - p[0] > 2.0 * tie)
    stop = int(np.argmax(dropped)) if dropped.any() else len(grid)
    p_win = p[:stop]
    best = float(p_win.max())
    if best - p[0] <= max(1e-9, 2.0 * tie):
        return None
    if tie == 0.0:
        # without the stationarity term the farthest maximizer is as valid as any
        i = stop - 1 - int(np.argmax(p_win[::-1] >= best))
    else:
        tied = np.flatnonzero(p_win >= best - tie)
        v2 = kin.speed2(grid[:stop])
        still = tied[v2[tied] <= params.stat_frac * v2.max()]
        i = int(still[0]) if len(still) else int(tied[np.argmin(v2[tied])])
    if 0 < i < len(grid) - 1 and p[i] > p[i - 1] and p[i] > p[i + 1]:
        a, b = sorted((grid[i - 1], grid[i + 1]))
        return _golden_max(lambda r: float(_energy(kin, np.array([r]), t0, params)[0]),
                           a, b, params.grid_step / 100)
    return float(grid[i])


def next_endpoint(kin: GroupKinematics, t0: float, t_seq: float, params: FluxParams) -> float | None:
    """The next primitive endpoint after ``t0``, or ``None`` if nothing moves.

    The energy is scanned on a grid; the scan ends at the first point where
    it falls clearly below its running maximum (a local maximum), and the
    endpoint is picked from the near-maximal points of the scanned window.
    """
    if not t0 < t_seq:
        return None
    return _search(kin, t0, t_seq, params)


def find_onset(kin: GroupKinematics, t_end: float, params: FluxParams) -> float:
    """Start of the motion ending at ``t_end``: the same search run backwards in time."""
    t_first = kin.domain[0]
    if not t_end > t_first:
        return t_first
    rho = _search(kin, t_end, t_first, params)
    return t_first if rho is None else rho


@dataclass(frozen=True)
class MotionPrimitive:
    group: int
    interval: tuple[float, float]
    trajectories: tuple[SplineTrajectory, ...]
    sequence_id: str = ""
    scale: float = 1.0
    label: str | None = None
    rate: float = 50.0

    @property
    def frames(self) -> tuple[int, int]:
        """1-based start and end frames."""
        return tuple(int(round(t * self.rate)) + 1 for t in self.interval)


def primitive_between(kin: GroupKinematics, t0: float, t1: float) -> MotionPrimitive:
    return MotionPrimitive(kin.group, (t0, t1), tuple(tr.restrict(t0, t1) for tr in kin.trajectories),
                           kin.sequence_id, 1.0, None, kin.rate)


def discover_intervals(kin: GroupKinematics, params: FluxParams) -> list[tuple[float, float]]:
    """Raw sequential endpoint search, before any filtering."""
    t, t_seq = kin.domain
    out = []
    while True:
        rho = next_endpoint(kin, t, t_seq, params)
        if rho is None or rho <= t:
            break
        out.append((t, rho))
        t = rho
        if t_seq - t <= params.grid_step:
            break
    return out


def segment_sequence(kin: GroupKinematics, params: FluxParams) -> list[MotionPrimitive]:
    """Contiguous primitives from the start of the sequence.

    Intervals shorter than 3 frames are folded into the following interval;
    a trailing one is dropped.
    """
    kept: list[tuple[float, float]] = []
    pending = None
    for a, b in discover_intervals(kin, params):
        start = a if pending is None else pending
        frames = int(round((b - start) * kin.rate)) + 1
        if frames < 3:
            pending = start
            continue
        kept.append((start, b))
        pending = None
    return [primitive_between(kin, a, b) for a, b in kept]


def energy_is_maximal(kin: GroupKinematics, prim: MotionPrimitive, params: FluxParams,
                      tol: float = 0.0) -> bool:
    """Whether the end of ``prim`` beats every interior grid point (up to ``tol``)."""
    t0, t1 = prim.interval
    grid = _grid(t0, t1, params.grid_step)[1:-1]
    if len(grid) == 0:
        return True
    return bool(energy(kin, t1, t0, params) >= energy(kin, grid, t0, params).max() - tol)


def anatomical_normalize(prim: MotionPrimitive, kin: GroupKinematics) -> MotionPrimitive:
    """Scale every trajectory by ``1 / limb_length``."""
    if kin.limb_length <= 1e-6:
        raise DegenerateLimb(f"limb length {kin.limb_length:.3g} m")
    k = 1.0 / kin.limb_length
    return replace(prim, trajectories=tuple(tr.scaled(k) for tr in prim.trajectories), scale=k)


PRIMITIVE_CSV_HEADER = ["sequence_id", "group", "start_frame", "end_frame", "label"]


def primitives_to_csv(prims) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PRIMITIVE_CSV_HEADER)
    for p in prims:
        s, e = p.frames
        w.writerow([p.sequence_id, p.group, s, e, p.label or ""])
    return buf.getvalue()


def read_primitive_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and list(rows[0].keys()) != PRIMITIVE_CSV_HEADER:
        raise MalformedInput("unexpected primitive CSV header")
    out = []
    for r in rows:
        try:
            out.append({"sequence_id": r["sequence_id"], "group": int(r["group"]),
                        "start_frame": int(r["start_frame"]), "end_frame": int(r["end_frame"]),
                        "label": r["label"] or None})
        except (TypeError, ValueError) as exc:
            raise MalformedInput(f"bad primitive row {r}") from exc
    return out
