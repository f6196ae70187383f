import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mprim.classes import PrimitiveClass
from mprim.dpm import McmcConfig
from mprim.errors import DegenerateFrame, EmptyManifold, NoFeatures
from mprim.features import featureset_from_primitives
from mprim.geometry import fit_spline, frenet_frames_many
from mprim.recognition import (JOINTS, class_models_from_json, class_models_to_json, component_cost,
                               fit_class_models, hypothesis_set, make_segment, recognize, segment_distance,
                               unknown_features)
from mprim.synth import FAMILIES, family_primitives


def curve_segment(fn, t):
    tr = fit_spline(t, fn(t))
    F, valid = frenet_frames_many(tr, t[2:-2])
    return make_segment(tr(t[2:-2]), F, valid)


def helix_segment(a=1.0, b=0.5, phase=0.0, n=40, offset=(0, 0, 0)):
    t = np.linspace(0, 3, n + 4)
    return curve_segment(lambda u: np.column_stack([a * np.cos(u + phase), a * np.sin(u + phase), b * u])
                         + np.asarray(offset), t)


def circle_segment(z=0.0, n=30):
    t = np.linspace(0, 2 * np.pi, n + 4)
    return curve_segment(lambda u: np.column_stack([np.cos(u), np.sin(u), z + 0 * u]), t)


def test_identical_segments():
    s = helix_segment()
    d, fr = segment_distance(s, s)
    assert d == pytest.approx(0, abs=1e-9) and fr == pytest.approx(0, abs=1e-9)
    assert component_cost([s], [s]) == pytest.approx(0, abs=1e-9)


def test_frame_rotation_pi():
    s = helix_segment()
    Rz = np.diag([-1.0, -1.0, 1.0])
    y = make_segment(s.points, Rz @ s.frames, s.valid)
    assert segment_distance(s, y)[1] == pytest.approx(8.0, abs=1e-9)


def test_ruled_normals_unit():
    s = helix_segment()
    assert np.allclose(np.linalg.norm(s.normals[s.valid], axis=1), 1.0)


def test_delta_brute_force(rng):
    for _ in range(5):
        yu = helix_segment(rng.uniform(0.5, 1.5), rng.uniform(0.2, 1.0), rng.uniform(0, 6))
        y = helix_segment(rng.uniform(0.5, 1.5), rng.uniform(0.2, 1.0), rng.uniform(0, 6), offset=rng.normal(size=3))
        brute = min(np.linalg.norm(p - q) for p in y.points for q in yu.points)
        assert segment_distance(yu, y)[0] == pytest.approx(brute, abs=1e-6)


def test_max_rule():
    u = circle_segment()
    assert component_cost([u], [circle_segment(0.2), circle_segment(0.9)]) == pytest.approx(0.9, abs=1e-9)


def test_cost_exhaustive(rng):
    man_u = [helix_segment(phase=rng.uniform(0, 6), offset=rng.normal(size=3)) for _ in range(3)]
    man_c = [helix_segment(rng.uniform(0.5, 1.5), phase=rng.uniform(0, 6)) for _ in range(4)]
    pairs = [sum(segment_distance(a, b)) for a in man_u for b in man_c]
    assert len(pairs) == 12 and component_cost(man_u, man_c) == max(pairs)


def test_cost_errors():
    with pytest.raises(EmptyManifold):
        component_cost([], [helix_segment()])
    t = np.linspace(0, 1, 10)
    line = curve_segment(lambda u: np.column_stack([u, u, u]), t)
    with pytest.raises(DegenerateFrame):
        segment_distance(line, helix_segment())


@given(st.integers(0, 2**31 - 1), st.sampled_from([0.5, 2.0]))
def test_scale_covariance(seed, lam):
    rng = np.random.default_rng(seed)
    yu = helix_segment(rng.uniform(0.5, 1.5), rng.uniform(0.2, 1.0), rng.uniform(0, 6))
    y = helix_segment(rng.uniform(0.5, 1.5), rng.uniform(0.2, 1.0), rng.uniform(0, 6), offset=rng.normal(size=3))
    d, fr = segment_distance(yu, y)
    d2, fr2 = segment_distance(yu.scaled(lam), y.scaled(lam))
    assert d2 == pytest.approx(lam * d, abs=1e-6) and fr2 == pytest.approx(fr, abs=1e-6)


@given(st.integers(0, 2**31 - 1))
def test_cost_non_negative(seed):
    rng = np.random.default_rng(seed)
    man_u = [helix_segment(rng.uniform(0.5, 1.5), phase=rng.uniform(0, 6), offset=rng.normal(size=3))]
    man_c = [helix_segment(rng.uniform(0.5, 1.5), phase=rng.uniform(0, 6)) for _ in range(2)]
    for terms in ("full", "delta", "frenet"):
        assert component_cost(man_u, man_c, terms) >= 0.0
    assert component_cost(man_u, man_c) > 0.0


# ----------------------------------------------------------------------------
# class models on a small synthetic corpus


@pytest.fixture(scope="module")
def corpus():
    prims, labels = family_primitives(3, 6, seed=1)
    fams = list(FAMILIES[3])
    keep = [i for i, p in enumerate(prims) if p is not None]
    classes = [PrimitiveClass(3, f, tuple(i for i in keep if labels[i] == f), fams[f]) for f in range(len(fams))]
    classes = [c for c in classes if c.members]
    models = fit_class_models(classes, prims, McmcConfig(iters=40, burnin=10, chains=1, seed=0))
    return prims, labels, models, fams


def test_training_member_recall(corpus):
    prims, labels, models, fams = corpus
    for m in models:
        i = next(i for i in range(len(prims)) if prims[i] is not None and fams[labels[i]] == m.label)
        assert recognize(models, prims[i]).label == m.label


def test_recognition_deterministic(corpus):
    prims, _, models, _ = corpus
    p = next(p for p in prims if p is not None)
    assert recognize(models, p) == recognize(models, p)


def test_hypothesis_tiers(corpus):
    prims, _, models, _ = corpus
    feats, _ = unknown_features(next(p for p in prims if p is not None))
    top = hypothesis_set(models, feats, 0.0)
    assert {h.loglik for h in top} == {top[0].loglik} and len({h.model for h in top}) == 1
    everything = hypothesis_set(models, feats, math.inf)
    assert len(everything) == sum(m.rho for m in models)
    lls = [h.loglik for h in everything]
    assert lls == sorted(lls, reverse=True)
    with pytest.raises(NoFeatures):
        hypothesis_set(models, np.zeros((0, 15)))


@given(st.floats(0, 1e4), st.floats(0, 1e4), st.integers(0, 1000))
def test_tier_monotone(corpus, d1, d2, pick):
    prims, _, models, _ = corpus
    ok = [p for p in prims if p is not None]
    feats, _ = unknown_features(ok[pick % len(ok)])
    lo, hi = sorted((d1, d2))
    small = {(h.model, h.component) for h in hypothesis_set(models, feats, lo)}
    big = {(h.model, h.component) for h in hypothesis_set(models, feats, hi)}
    assert small <= big


def test_manifold_provenance(corpus):
    prims, _, models, _ = corpus
    m = models[0]
    # every cached segment is a contiguous run of some member trajectory's decimated points
    members = [prims[i] for i in range(len(prims)) if prims[i] is not None]
    fs = featureset_from_primitives(members, JOINTS)
    pools = [s.points for s in fs.samples.values()]
    for comp in m.manifold:
        for seg in comp:
            assert len(seg) >= 2
            assert any(any(np.array_equal(P[i:i + len(seg)], seg.points) for i in range(len(P) - len(seg) + 1))
                       for P in pools)


def test_class_model_json_round_trip(corpus):
    prims, _, models, _ = corpus
    back = class_models_from_json(class_models_to_json(models))
    p = next(p for p in prims if p is not None)
    a, b = recognize(models, p), recognize(back, p)
    assert (a.label, a.component) == (b.label, b.component)
    assert a.cost == pytest.approx(b.cost, abs=1e-9)
