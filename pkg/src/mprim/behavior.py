"""Dangerous-behavior scoring from per-frame primitive labels.

Labels are embedded into (0, 1), one coordinate per body group. An RBF
support vector machine trained by sequential minimal optimization scores
each 6-vector, Platt scaling turns scores into probabilities, and several
subjects are merged into one per-frame danger probability.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import DegenerateScores, MalformedInput, NonConvergence, SingleClassData

NO_PRIMITIVE = "<none>"
N_GROUPS = 6
DEFAULT_C = 10.0
# embedded labels sit about 1/vocabulary apart in (0, 1), so the kernel must be narrow
DEFAULT_GAMMA = 10.0
DEFAULT_TOL = 1e-3


# ----------------------------------------------------------------------------
# embedding


@dataclass(frozen=True)
class PrimitiveEmbedding:
    """Injective map from label text to a real in (0, 1)."""

    values: dict[str, float]

    def __call__(self, label: str | None) -> float:
        key = NO_PRIMITIVE if label is None or label == "" else label
        try:
            return self.values[key]
        except KeyError:
            raise MalformedInput(f"label {key!r} is not in the embedding vocabulary") from None

    def embed(self, labels) -> np.ndarray:
        return np.array([self(lab) for lab in labels])

    def __len__(self) -> int:
        return len(self.values)


def _label_stream(label: str, seed: int) -> np.random.Generator:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return np.random.default_rng([seed, *np.frombuffer(digest[:16], dtype=np.uint32).tolist()])


def build_embedding(labels, seed: int = 0) -> PrimitiveEmbedding:
    """Seeded pseudo-uniform value per label, keyed by the label text.

    The reserved no-primitive label is always included. On a collision the
    later label (in sorted order) draws again from its own stream.
    """
    vocab = sorted(set(labels) | {NO_PRIMITIVE})
    used: set[float] = set()
    out = {}
    for lab in vocab:
        rng = _label_stream(lab, seed)
        v = 0.0
        while v <= 0.0 or v in used:
            v = float(rng.random())
        used.add(v)
        out[lab] = v
    return PrimitiveEmbedding(out)


# ----------------------------------------------------------------------------
# samples


@dataclass(frozen=True)
class BehaviorSample:
    labels: tuple[str, ...]
    y: int
    subject: str = ""
    frame: int = 0

    def x(self, emb: PrimitiveEmbedding) -> np.ndarray:
        return emb.embed(self.labels)


def frames_to_samples(timeline, y=-1, subject: str = "") -> list[BehaviorSample]:
    """One sample per frame in which at least one group's active label changes.

    ``timeline[t]`` holds the six active labels of frame ``t + 1`` (``None``
    for no primitive); ``y`` is a per-frame sequence or one value for all.
    """
    ys = np.broadcast_to(np.asarray(y), (len(timeline),))
    out, prev = [], None
    for t, labs in enumerate(timeline):
        labs = tuple(NO_PRIMITIVE if v is None or v == "" else str(v) for v in labs)
        if len(labs) != N_GROUPS:
            raise MalformedInput(f"frame {t + 1}: expected {N_GROUPS} labels")
        if labs != prev:
            yy = int(ys[t])
            if yy not in (-1, 1):
                raise MalformedInput("labels must be -1 or +1")
            out.append(BehaviorSample(labs, yy, subject, t + 1))
        prev = labs
    return out


SAMPLES_CSV_HEADER = ["subject", "frame", "g1", "g2", "g3", "g4", "g5", "g6", "label"]


def samples_to_csv(samples) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SAMPLES_CSV_HEADER)
    for s in samples:
        w.writerow([s.subject, s.frame, *s.labels, s.y])
    return buf.getvalue()


def read_samples_csv(text: str) -> list[BehaviorSample]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != SAMPLES_CSV_HEADER:
        raise MalformedInput("samples CSV header must be " + ",".join(SAMPLES_CSV_HEADER))
    out = []
    for line, r in enumerate(reader, start=2):
        if not r:
            continue
        if len(r) != len(SAMPLES_CSV_HEADER):
            raise MalformedInput(f"line {line}: expected {len(SAMPLES_CSV_HEADER)} fields")
        try:
            frame, y = int(r[1]), int(r[8])
        except ValueError as exc:
            raise MalformedInput(f"line {line}: frame and label must be integers") from exc
        if y not in (-1, 1):
            raise MalformedInput(f"line {line}: label must be -1 or 1")
        out.append(BehaviorSample(tuple(r[2:8]), y, r[0], frame))
    return out


# ----------------------------------------------------------------------------
# support vector machine


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray
    alpha: np.ndarray
    y: np.ndarray
    b: float
    gamma: float
    C: float

    def decision_function(self, X) -> np.ndarray:
        K = rbf_kernel(np.asarray(X, dtype=float), self.support_vectors, self.gamma)
        return K @ (self.alpha * self.y) + self.b

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1, -1)


def train_svm(X, y, C: float = DEFAULT_C, gamma: float = DEFAULT_GAMMA, tol: float = DEFAULT_TOL,
              max_iter: int = 1_000_000) -> SvmModel:
    """Soft-margin RBF SVM from the dual ``max sum(a) - a^T Q a / 2``,
    ``y^T a = 0``, ``0 <= a <= C``, solved by SMO with second-order working
    set selection until the maximal KKT violation is below ``tol``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(X) != len(y) or len(y) < 2:
        raise SingleClassData("need at least two samples with labels")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SingleClassData("training data contain a single class")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise MalformedInput("labels must be -1 or +1")
    K = rbf_kernel(X, X, gamma)
    alpha, rho, _, converged = kernels.smo_solve(K, y, C, tol, max_iter)
    if not converged:
        raise NonConvergence(f"SMO did not converge in {max_iter} iterations")
    alpha = np.clip(alpha, 0.0, C)
    sv = alpha > 0
    return SvmModel(X[sv], alpha[sv], y[sv], float(-rho), float(gamma), float(C))


# ----------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class PlattCalibrator:
    A: float
    B: float
    nll_trace: tuple[float, ...] = field(default=(), repr=False, compare=False)

    def __call__(self, f) -> np.ndarray | float:
        p = expit(-(self.A * np.asarray(f, dtype=float) + self.B))
        return float(p) if np.ndim(p) == 0 else p


def _platt_nll(z, t):
    return float(np.sum(t * z + np.logaddexp(0.0, -z)))


def platt_fit(scores, y, max_iter: int = 100, min_step: float = 1e-10, sigma: float = 1e-12,
              eps: float = 1e-5) -> PlattCalibrator:
    """Fit ``p = 1 / (1 + exp(A f + B))`` by Newton steps with backtracking
    on the regularized-target negative log-likelihood."""
    f = np.asarray(scores, dtype=float)
    y = np.asarray(y)
    n_pos, n_neg = int(np.sum(y > 0)), int(np.sum(y <= 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassData("Platt scaling needs both classes")
    if np.ptp(f) == 0.0:
        raise DegenerateScores("all scores are identical")
    t = np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    A, B = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    fval = _platt_nll(f * A + B, t)
    trace = [fval]
    for _ in range(max_iter):
        z = f * A + B
        p = expit(-z)
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + np.sum(f * f * d2)
        h22 = sigma + np.sum(d2)
        h21 = np.sum(f * d2)
        d1 = t - p
        g1, g2 = np.sum(f * d1), np.sum(d1)
        if abs(g1) < eps and abs(g2) < eps:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= min_step:
            nA, nB = A + step * dA, B + step * dB
            nf = _platt_nll(f * nA + nB, t)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2.0
        if step < min_step:
            break
        trace.append(fval)
    return PlattCalibrator(float(A), float(B), tuple(trace))


def danger_probability(probs, scores=None) -> float:
    """Convex combination of per-subject probabilities.

    Weights are the min-max remapped ``scores`` (the probabilities
    themselves by default) normalized to sum 1, uniform when all are equal.
    """
    p = np.atleast_1d(np.asarray(probs, dtype=float))
    s = p if scores is None else np.atleast_1d(np.asarray(scores, dtype=float))
    if len(p) == 0 or len(s) != len(p):
        raise MalformedInput("need one score per subject")
    span = s.max() - s.min()
    w = np.ones_like(s) if span == 0 else (s - s.min()) / span
    w = w / w.sum()
    return float(np.clip(w @ p, 0.0, 1.0))


# ----------------------------------------------------------------------------
# evaluation


def roc_auc(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """ROC points ``(fpr, tpr, thresholds)`` and the trapezoid AUC.

    Tied scores cross the threshold together.
    """
    s = np.asarray(scores, dtype=float)
    pos = np.asarray(labels) > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassData("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, pos = s[order], pos[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(pos)[last]
    fp = np.cumsum(~pos)[last]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thr = np.r_[np.inf, s[last]]
    return fpr, tpr, thr, float(np.trapezoid(tpr, fpr))


# ----------------------------------------------------------------------------
# persistence


@dataclass(frozen=True)
class BehaviorModel:
    embedding: PrimitiveEmbedding
    svm: SvmModel
    platt: PlattCalibrator

    def probability(self, X) -> np.ndarray:
        return np.asarray(self.platt(self.svm.decision_function(X)))

    def to_json(self) -> str:
        return json.dumps({
            "support_vectors": self.svm.support_vectors.tolist(), "alpha": self.svm.alpha.tolist(),
            "y": self.svm.y.tolist(), "b": self.svm.b, "gamma": self.svm.gamma, "C": self.svm.C,
            "platt": {"A": self.platt.A, "B": self.platt.B}, "embedding": self.embedding.values})

    @classmethod
    def from_json(cls, text: str) -> "BehaviorModel":
        try:
            d = json.loads(text)
            svm = SvmModel(np.asarray(d["support_vectors"], float).reshape(-1, N_GROUPS),
                           np.asarray(d["alpha"], float), np.asarray(d["y"], float), float(d["b"]),
                           float(d["gamma"]), float(d["C"]))
            return cls(PrimitiveEmbedding(dict(d["embedding"])), svm,
                       PlattCalibrator(float(d["platt"]["A"]), float(d["platt"]["B"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedInput(f"behavior model JSON: {exc}") from exc


def train_behavior(samples, C: float = DEFAULT_C, gamma: float = DEFAULT_GAMMA, tol: float = DEFAULT_TOL,
                   seed: int = 0) -> BehaviorModel:
    """Embedding, SVM and Platt calibration fitted on the training scores."""
    emb = build_embedding({lab for s in samples for lab in s.labels}, seed)
    X = np.array([s.x(emb) for s in samples])
    y = np.array([s.y for s in samples], dtype=float)
    svm = train_svm(X, y, C, gamma, tol)
    return BehaviorModel(emb, svm, platt_fit(svm.decision_function(X), y))
