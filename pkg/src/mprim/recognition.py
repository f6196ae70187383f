"""Recognition of unknown primitives against per-class mixture models.

Each class gets its own mixture over the features of all three joint
trajectories of its members. An unknown primitive is scored against every
class mixture. The components of the classes within ``delta`` log units
of the best joint log-likelihood form the hypothesis set, and the label
of the hypothesis with the lowest geometric cost wins. The cost between two curve segments
adds the nearest-point distance ``delta`` and the Frenet-frame rotation
discrepancy ``F_R = trace((I - R)(I - R)^T)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dpm import DpmModel, McmcConfig, NormalWishartPrior, fit_dpm, predictive_logdensity
from .errors import DegenerateFrame, EmptyHypotheses, EmptyManifold, MalformedInput, NoFeatures
from .features import DECIMATION, FeatureSet, featureset_from_primitives, sample_trajectory

DEFAULT_DELTA = math.log(10.0)
JOINTS = (0, 1, 2)


@dataclass(frozen=True)
class CurveSegment:
    """Ordered points with Frenet frames (columns t, n, b) and ruled-surface normals."""

    points: np.ndarray
    frames: np.ndarray
    valid: np.ndarray
    normals: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def scaled(self, factor: float) -> "CurveSegment":
        return CurveSegment(self.points * factor, self.frames, self.valid, self.normals)


def ruled_normals(points, frames, valid) -> np.ndarray:
    """Unit field ``(n x n') / |n x n'|`` with ``n'`` the central-difference
    derivative of the principal normal over chord length; the binormal is
    used wherever that is degenerate."""
    points = np.asarray(points, dtype=float)
    nor = frames[:, :, 1]
    bin_ = frames[:, :, 2]
    out = np.where(valid[:, None], bin_, np.nan)
    if len(points) >= 2 and valid.sum() >= 2:
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
        ok = valid & np.concatenate([[True], np.diff(s) > 0])
        idx = np.flatnonzero(ok)
        if len(idx) >= 2:
            dn = np.gradient(nor[idx], s[idx], axis=0)
            cr = np.cross(nor[idx], dn)
            cn = np.linalg.norm(cr, axis=1)
            good = cn > 1e-9
            out[idx[good]] = cr[good] / cn[good, None]
    return out


def make_segment(points, frames, valid) -> CurveSegment:
    points = np.asarray(points, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    return CurveSegment(points, np.asarray(frames, dtype=float), valid, ruled_normals(points, frames, valid))


def segment_distance(yu: CurveSegment, y: CurveSegment, symmetric: bool = False) -> tuple[float, float]:
    """``(delta, F_R)`` between an unknown segment ``yu`` and a model segment ``y``.

    ``y`` is projected onto the tangent planes of its own ruled surface.
    Each plane passes through its own point, so the projection is ``y``
    itself. ``q`` is the point of ``yu`` closest to it and ``q'`` the
    matching point of ``y``; only points with valid frames take
    part. ``symmetric`` also searches the other direction and keeps the
    smaller distance.
    """
    if not (yu.valid.any() and y.valid.any()):
        raise DegenerateFrame("no point with a valid Frenet frame")
    iu = np.flatnonzero(yu.valid)
    iy = np.flatnonzero(y.valid)
    yp = y.points[iy]
    dist, near = kernels.nearest(yp, yu.points[iu])
    b = int(np.argmin(dist))
    qu, qy = iu[near[b]], iy[b]
    best = float(dist[b])
    if symmetric:
        yup = yu.points[iu]
        dist2, near2 = kernels.nearest(yup, y.points[iy])
        b2 = int(np.argmin(dist2))
        if dist2[b2] < best:
            best, qu, qy = float(dist2[b2]), iu[b2], iy[near2[b2]]
    R = y.frames[qy] @ yu.frames[qu].T
    M = np.eye(3) - R
    return best, float(np.trace(M @ M.T))


def component_cost(man_u, man_c, terms: str = "full", symmetric: bool = False) -> float:
    """Largest ``delta + F_R`` over all pairs of segments.

    ``terms`` selects ``"full"``, ``"delta"`` or ``"frenet"``. Pairs without
    any valid frame contribute their plain nearest-point distance.
    """
    if len(man_u) == 0 or len(man_c) == 0:
        raise EmptyManifold("both manifolds need at least one segment")
    worst = 0.0
    for yu in man_u:
        for y in man_c:
            try:
                d, fr = segment_distance(yu, y, symmetric)
            except DegenerateFrame:
                d, fr = float(kernels.nearest(y.points, yu.points)[0].min()), 0.0
            c = {"full": d + fr, "delta": d, "frenet": fr}[terms]
            worst = max(worst, c)
    return worst


# ----------------------------------------------------------------------------
# class models


@dataclass(frozen=True)
class ClassModel:
    group: int
    index: int
    label: str
    dpm: DpmModel
    manifold: tuple[tuple[CurveSegment, ...], ...]

    @property
    def rho(self) -> int:
        return self.dpm.k


def build_manifold(model: DpmModel, fs: FeatureSet) -> tuple[tuple[CurveSegment, ...], ...]:
    """Per component, runs of consecutive windows of one trajectory whose
    features were assigned to it, merged into curve segments."""
    assign = np.argmax(model.component_logpdf(fs.geometric), axis=1) if len(fs) else np.zeros(0, int)
    nu = fs.trajectory_index() if len(fs) else np.zeros(0, int)
    out = []
    for j in range(model.k):
        segs = []
        for v in np.unique(nu[assign == j]):
            w = np.sort(fs.window[(assign == j) & (nu == v)])
            breaks = np.flatnonzero(np.diff(w) > 1) + 1
            s = fs.samples[int(v)]
            for run in np.split(w, breaks):
                sl = slice(int(run[0]), int(run[-1]) + 3)
                segs.append(make_segment(s.points[sl], s.frames[sl], s.frame_valid[sl]))
        out.append(tuple(segs))
    return tuple(out)


def fit_class_models(classes, primitives, config: McmcConfig = McmcConfig(), prior=None,
                     factor: int = DECIMATION) -> list[ClassModel]:
    """One mixture per class over the features of all three trajectories of
    its members. ``classes`` are :class:`~mprim.classes.PrimitiveClass`
    values indexing into ``primitives``; ``prior`` may be a
    :class:`NormalWishartPrior` or a callable building one from data."""
    out = []
    for cls in classes:
        members = [primitives[m] for m in cls.members]
        fs = featureset_from_primitives(members, JOINTS, factor)
        if len(fs) == 0:
            raise NoFeatures(f"class {cls.index} has no trajectory with 3 decimated points")
        X = fs.geometric
        p = prior(X) if callable(prior) else prior
        if p is None:
            p = NormalWishartPrior.from_data(X)
        model = fit_dpm(X, p, config=config)
        label = cls.label if cls.label is not None else str(cls.index)
        out.append(ClassModel(cls.group, cls.index, label, model, build_manifold(model, fs)))
    return out


# ----------------------------------------------------------------------------
# recognition


@dataclass(frozen=True)
class Hypothesis:
    model: int
    component: int
    loglik: float
    cost: float | None = None


def unknown_features(prim, factor: int = DECIMATION) -> tuple[np.ndarray, tuple[CurveSegment, ...]]:
    """Geometric features and whole-trajectory segments of a primitive."""
    fs = featureset_from_primitives([prim], JOINTS, factor)
    segs = []
    for j in JOINTS:
        s = sample_trajectory(prim.trajectories[j], factor)
        if len(s) >= 2:
            segs.append(make_segment(s.points, s.frames, s.frame_valid))
    return fs.geometric, tuple(segs)


def hypothesis_set(models, features, delta: float = DEFAULT_DELTA) -> list[Hypothesis]:
    """Components of every class whose joint log-likelihood is within
    ``delta`` of the best, sorted by decreasing log-likelihood (then model
    and component order).

    A single component covers only part of a motion, so the joint
    log-likelihood of a component is that of its whole class mixture,
    ``sum_n log sum_j pi_j N(F_n | mu_j, Sigma_j)``; all components of a
    class enter or leave the set together and the cost picks among them.
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.size == 0:
        raise NoFeatures("unknown primitive produced no feature vectors")
    if not models:
        raise EmptyHypotheses("no class models")
    entries = []
    for mi, m in enumerate(models):
        ll = float(np.sum(predictive_logdensity(m.dpm, features)))
        entries.extend(Hypothesis(mi, j, ll) for j in range(m.dpm.k))
    finite = [h for h in entries if math.isfinite(h.loglik)]
    if not finite:
        raise EmptyHypotheses("every component has zero likelihood")
    best = max(h.loglik for h in finite)
    keep = [h for h in finite if h.loglik >= best - delta]
    return sorted(keep, key=lambda h: (-h.loglik, h.model, h.component))


@dataclass(frozen=True)
class Recognition:
    label: str
    model: int
    class_index: int
    component: int
    loglik: float
    cost: float
    hypotheses: tuple[Hypothesis, ...] = field(default=(), repr=False)

    def report(self, prim) -> dict:
        s, e = prim.frames
        return {"sequence_id": prim.sequence_id, "group": prim.group, "start_frame": s, "end_frame": e,
                "label": self.label, "class": self.class_index, "component": self.component,
                "loglik": self.loglik, "cost": self.cost}


def recognize(models, prim, delta: float = DEFAULT_DELTA, terms: str = "full", symmetric: bool = False,
              factor: int = DECIMATION) -> Recognition:
    """Label ``prim`` by the cheapest hypothesis.

    ``terms="none"`` skips the cost and returns the most likely component.
    Ties in cost go to the higher log-likelihood, then the earlier model.
    """
    feats, man_u = unknown_features(prim, factor)
    hyps = hypothesis_set(models, feats, delta)
    scored = []
    for h in hyps:
        if terms == "none":
            cost = 0.0
        else:
            man_c = models[h.model].manifold[h.component]
            cost = component_cost(man_u, man_c, terms, symmetric) if man_c else math.inf
        scored.append(Hypothesis(h.model, h.component, h.loglik, cost))
    best = min(scored, key=lambda h: (h.cost, -h.loglik, models[h.model].index, h.component))
    m = models[best.model]
    return Recognition(m.label, best.model, m.index, best.component, best.loglik, best.cost, tuple(scored))


def reports_to_json(reports) -> str:
    return json.dumps(list(reports), indent=2)


def _segment_dict(seg: CurveSegment) -> dict:
    return {"points": seg.points.tolist(), "frames": np.where(seg.valid[:, None, None], seg.frames, 0.0).tolist(),
            "valid": seg.valid.tolist()}


def _segment_from(d: dict) -> CurveSegment:
    valid = np.asarray(d["valid"], dtype=bool)
    frames = np.asarray(d["frames"], dtype=float).reshape(-1, 3, 3)
    frames[~valid] = np.nan
    return make_segment(np.asarray(d["points"], dtype=float).reshape(-1, 3), frames, valid)


def class_models_to_json(models) -> str:
    return json.dumps([{"group": m.group, "index": m.index, "label": m.label, "dpm": json.loads(m.dpm.to_json()),
                        "manifold": [[_segment_dict(s) for s in comp] for comp in m.manifold]} for m in models])


def class_models_from_json(text: str) -> list[ClassModel]:
    try:
        out = []
        for d in json.loads(text):
            dpm = DpmModel.from_json(json.dumps(d["dpm"]))
            man = tuple(tuple(_segment_from(s) for s in comp) for comp in d["manifold"])
            out.append(ClassModel(int(d["group"]), int(d["index"]), str(d["label"]), dpm, man))
        return out
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"class model JSON: {exc}") from exc
