"""Primitive classes from mixture components, representatives and Hausdorff checks."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .dpm import DpmModel, component_assign
from .errors import EmptyClass, EmptyCurve, InconsistentIndicators, MalformedInput, UnknownClassRef
from .features import FeatureSet

SHARE_THRESHOLD = 0.8


@dataclass(frozen=True)
class PrimitiveClass:
    """Primitives (by index into the clustered list) attached to component ``index``."""

    group: int
    index: int
    members: tuple[int, ...]
    label: str | None = None
    representative: int = 0

    @property
    def representative_primitive(self) -> int:
        return self.members[self.representative]


def _trajectory_shares(model: DpmModel, fs: FeatureSet):
    assign = component_assign(model, fs.geometric)
    nu = fs.trajectory_index()
    counts = fs.trajectory_count()
    known = np.array(sorted(fs.source or fs.samples))
    if len(nu) and not np.all(np.isin(nu, known)):
        raise InconsistentIndicators("recovered trajectory index outside the enumeration")
    return assign, nu, counts


def classes_from_components(model: DpmModel, fs: FeatureSet, threshold: float = SHARE_THRESHOLD) -> list[PrimitiveClass]:
    """A trajectory joins component ``w`` when at least ``threshold`` of its
    feature vectors are assigned to ``w``; with several qualifying
    components the largest share wins and ties go to the lower index.

    Members are the primitive indices recorded in ``fs.source`` (or the
    trajectory indices when no source is recorded).
    """
    assign, nu, counts = _trajectory_shares(model, fs)
    members: dict[int, list[int]] = {w: [] for w in range(model.k)}
    for v in np.unique(nu):
        rows = nu == v
        total = int(counts[rows][0])
        hist = np.bincount(assign[rows], minlength=model.k)
        w = int(np.argmax(hist))
        if hist[w] >= threshold * total:
            src = fs.source.get(int(v), (int(v), None))[0] if fs.source else int(v)
            members[w].append(src)
    out = []
    for w in range(model.k):
        if members[w]:
            cls = PrimitiveClass(fs.group, w, tuple(members[w]))
            out.append(replace(cls, representative=class_representative(cls, model, fs)))
    return out


def class_representative(cls: PrimitiveClass, model: DpmModel, fs: FeatureSet) -> int:
    """Position in ``cls.members`` of the member with the highest mean
    component density over its features assigned to the class component."""
    if not cls.members:
        raise EmptyClass("class has no members")
    comp = model.components[cls.index]
    lp_all = model.component_logpdf(fs.geometric)
    assign = np.argmax(lp_all, axis=1)
    # remove the log weight to get the component density itself
    lp = lp_all[:, cls.index] - np.log(comp.weight)
    nu = fs.trajectory_index()
    counts = fs.trajectory_count()
    prim_of = np.array([fs.source[int(v)][0] if fs.source else int(v) for v in nu]) if len(nu) else nu
    best, best_i = -np.inf, 0
    for i, m in enumerate(cls.members):
        rows = np.flatnonzero((prim_of == m) & (assign == cls.index))
        if len(rows) == 0:
            continue
        mx = lp[rows].max()
        score = mx + np.log(np.exp(lp[rows] - mx).sum()) - np.log(counts[rows][0])
        if score > best:
            best, best_i = score, i
    return best_i


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between two point lists."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptyCurve("both curves need at least one point")
    return float(max(kernels.nearest(a, b)[0].max(), kernels.nearest(b, a)[0].max()))


def hausdorff_table(classes, points_of) -> np.ndarray:
    """Mean Hausdorff distance from the members of class ``r`` to the
    representative of class ``c``; ``points_of(member)`` gives the points."""
    reps = [points_of(c.representative_primitive) for c in classes]
    out = np.zeros((len(classes), len(classes)))
    for r, cr in enumerate(classes):
        for c, rep in enumerate(reps):
            out[r, c] = np.mean([hausdorff(points_of(m), rep) for m in cr.members])
    return out


LABEL_CSV_HEADER = ["group", "class_index", "label"]


def read_label_csv(text: str) -> dict[tuple[int, int], str]:
    """``(group, class_index) -> label``; repeated keys keep the last label."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        return {}
    if rows[0] != LABEL_CSV_HEADER:
        raise MalformedInput("label file header must be group,class_index,label")
    out: dict[tuple[int, int], str] = {}
    for line, r in enumerate(rows[1:], start=2):
        if len(r) != 3:
            raise MalformedInput(f"line {line}: expected 3 fields")
        try:
            key = (int(r[0]), int(r[1]))
        except ValueError as exc:
            raise MalformedInput(f"line {line}: group and class_index must be integers") from exc
        if key in out:
            warnings.warn(f"line {line}: duplicate label for {key}; keeping the last one", stacklevel=2)
        out[key] = r[2]
    return out


def apply_labels(classes, labels: dict[tuple[int, int], str]) -> list[PrimitiveClass]:
    known = {(c.group, c.index) for c in classes}
    unknown = sorted(set(labels) - known)
    if unknown:
        raise UnknownClassRef(f"labels refer to missing classes {unknown}")
    return [replace(c, label=labels.get((c.group, c.index), c.label)) for c in classes]
