"""Acceptance gate: one PASS/FAIL line per criterion."""
import time

import numpy as np
import pytest
from hypothesis import settings
from scipy.special import expit

import test_classes
import test_dpm
import test_features
import test_flux
import test_skeleton
import test_tracking
from helpers import random_rotation
from mprim.behavior import danger_probability, platt_fit, roc_auc, train_behavior
from mprim.dpm import McmcConfig, adjusted_rand_index, fit_dpm
from mprim.geometry import curvature_torsion_many, fit_spline, frenet_frames_many
from mprim.synth import behavior_corpus, recognition_benchmark, run_benchmark
from mprim.tracking import weighted_kabsch

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return emit


def test_criterion_1_endpoints(report):
    t0 = time.perf_counter()
    rep = run_benchmark(100)
    dt = time.perf_counter() - t0
    ok = (rep.mae_frames is not None and rep.mae_frames <= 5 and rep.rmse_frames <= 7
          and rep.miss_rate <= 0.05 and dt < 120)
    report(1, ok, f"mae={rep.mae_frames:.3f} rmse={rep.rmse_frames:.3f} miss={rep.miss_rate:.3f} time={dt:.1f}s")


def _spline(curve, n=1000, span=4 * np.pi):
    t = np.linspace(0.0, span, n)
    return fit_spline(t, curve(t))


def test_criterion_2_geometry(report):
    circle = _spline(lambda t: np.column_stack([2 * np.cos(t), 2 * np.sin(t), 0 * t]))
    helix = _spline(lambda t: np.column_stack([np.cos(t), np.sin(t), t]))
    # natural end conditions bend the first and last periods; measure inside
    ts = np.linspace(np.pi, 3 * np.pi, 201)
    kc, tc = curvature_torsion_many(circle, ts)
    kh, th = curvature_torsion_many(helix, ts)
    err = max(np.abs(kc - 0.5).max(), np.abs(tc).max(), np.abs(kh - 0.5).max(), np.abs(th - 0.5).max())
    ortho = 0.0
    for tr in (circle, helix):
        F, valid = frenet_frames_many(tr, ts)
        G = np.einsum("nji,njk->nik", F[valid], F[valid])
        ortho = max(ortho, float(np.abs(G - np.eye(3)).max()))
    report(2, err <= 1e-3 and ortho < 1e-8, f"max|dk|,|dtau|={err:.2e} orthonormality={ortho:.2e}")


def test_criterion_3_kabsch(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        X = rng.normal(size=(5, 3))
        R, d = random_rotation(rng), rng.normal(size=3)
        al = weighted_kabsch(X, X @ R.T + d)
        worst = max(worst, np.abs(al.R - R).max(), np.abs(al.d - d).max())
    sigma = 1e-3
    noisy = []
    for _ in range(200):
        X = rng.normal(size=(5, 3))
        R, d = random_rotation(rng), rng.normal(size=3)
        noisy.append(weighted_kabsch(X, X @ R.T + d + rng.normal(scale=sigma, size=X.shape)).residual)
    ok = worst <= 1e-9 and max(noisy) <= 3 * sigma
    report(3, ok, f"exact error={worst:.2e} noisy max residual={max(noisy):.2e} (3 sigma={3 * sigma:.0e})")


def test_criterion_4_dpm(report):
    t0 = time.perf_counter()
    good, results = 0, []
    for seed in range(5):
        X, truth = test_dpm.three_clouds(seed)
        m = fit_dpm(X, config=McmcConfig(iters=500, burnin=150, chains=1, seed=seed))
        ari = adjusted_rand_index(m.labels, truth)
        results.append(f"k={m.k},ari={ari:.3f}")
        good += m.k == 3 and ari >= 0.95
    dt = time.perf_counter() - t0
    report(4, good >= 4 and dt < 60, f"{good}/5 seeds [{'; '.join(results)}] time={dt:.1f}s")


def test_criterion_5_recognition(report):
    acc = recognition_benchmark(group=3, n_per_family=30, test_frac=0.2, seed=0).accuracy
    ok = acc["full"] >= 0.80 and acc["full"] >= acc["delta"] and acc["full"] >= acc["none"]
    report(5, ok, " ".join(f"{k}={v:.3f}" for k, v in acc.items()))


def test_criterion_6_platt(report):
    rng = np.random.default_rng(6)
    A0, B0 = -1.5, 0.7
    f = rng.normal(scale=2.0, size=10_000)
    y = np.where(rng.random(f.size) < expit(-(A0 * f + B0)), 1, -1)
    cal = platt_fit(f, y)
    within = abs(cal.A - A0) <= 0.1 * abs(A0) and abs(cal.B - B0) <= 0.1 * abs(B0)
    monotone = bool(np.all(np.diff(cal.nll_trace) <= 0))
    report(6, within and monotone, f"A={cal.A:.4f} B={cal.B:.4f} steps={len(cal.nll_trace) - 1} monotone={monotone}")


def test_criterion_7_behavior(report):
    samples = behavior_corpus(seed=0)
    subjects = sorted({s.subject for s in samples})
    held = set(np.random.default_rng(0).permutation(subjects)[: len(subjects) // 5])
    train = [s for s in samples if s.subject not in held]
    test = [s for s in samples if s.subject in held]
    model = train_behavior(train)
    p = model.probability([s.x(model.embedding) for s in test])
    auc = roc_auc(p, [s.y for s in test])[3]
    exact = all(danger_probability([q]) == q for q in p)
    report(7, auc >= 0.95 and exact, f"auc={auc:.4f} single-subject equality={exact}")


INVARIANT_SUITES = {
    "flux additivity": test_flux.test_flux_additive,
    "flux monotonicity": test_flux.test_flux_monotone,
    "sequence JSON round trip": test_skeleton.test_json_round_trip,
    "normalization idempotence": test_skeleton.test_normalize_idempotent_on_canonical,
    "indicator round trip": test_features.test_indicator_round_trip,
    "Hausdorff brute force": test_classes.test_hausdorff_brute_force,
    "assignment optimality": test_tracking.test_assignment_optimal,
    "weight normalization": test_dpm.test_prune_weights_normalized,
}


def test_criterion_8_invariants(report):
    counts = {}
    for name, test in INVARIANT_SUITES.items():
        inner = test.hypothesis.inner_test
        seen = []

        def counted(*a, _inner=inner, _seen=seen, **kw):
            _seen.append(1)
            return _inner(*a, **kw)

        test.hypothesis.inner_test = counted
        try:
            test()
        finally:
            test.hypothesis.inner_test = inner
        counts[name] = len(seen)
    ok = settings.default.max_examples >= 100 and all(c >= 100 for c in counts.values())
    report(8, ok, " ".join(f"[{k}: {v}]" for k, v in counts.items()))
