import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from mprim.errors import DegenerateDirection, DegenerateLimb, MalformedInput
from mprim.flux import (FluxParams, GroupKinematics, anatomical_normalize, direction_g, energy,
                        energy_is_maximal, motion_flux, next_endpoint, primitive_between, primitives_to_csv,
                        read_primitive_csv, segment_sequence)
from mprim.geometry import arc_length, fit_spline
from mprim.skeleton import DEFAULT_SPEC, SkeletonSequence
from mprim.synth import min_jerk

G = np.array([0.0, 0.0, 1.0])


def bump_kinematics(bumps, T=3.0, rate=50.0, amp=0.3, limb=0.6):
    """Outer joint (and half of it on the middle joint) moves by minimum-jerk bumps between rests."""
    t = np.arange(int(round(T * rate)) + 1) / rate
    s = np.zeros_like(t)
    for a, b in bumps:
        s = s + amp * min_jerk((t - a) / (b - a))
    move = np.column_stack([s, 0 * s, s])
    pts = [np.zeros((len(t), 3)), np.tile([0, 0, 0.3], (len(t), 1)) + 0.5 * move,
           np.tile([0, 0, 0.6], (len(t), 1)) + move]
    return GroupKinematics(3, tuple(fit_spline(t, p) for p in pts), limb, G, rate)


def random_kinematics(seed, n=12):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 2, n)
    trs = tuple(fit_spline(t, rng.normal(size=(n, 3))) for _ in range(3))
    return GroupKinematics(1, trs, 1.0, G, 50.0)


def flux_oracle(kin, t1, t2):
    total = 0.0
    for tr in kin.trajectories:
        # break at knots and at sign changes bracketed on a dense grid
        u = np.linspace(t1, t2, 20001)
        f = lambda x: tr(x, 2) @ G  # noqa: E731
        flips = [brentq(f, u[i], u[i + 1], xtol=1e-15) for i in np.flatnonzero(f(u[:-1]) * f(u[1:]) < 0)]
        inner = sorted([k for k in tr.knots if t1 < k < t2] + list(flips))
        total += quad(lambda x: abs(f(x)), t1, t2, points=inner or None, limit=1000,
                      epsabs=1e-12, epsrel=1e-12)[0]
    return total


def test_flux_rest_and_empty():
    kin = bump_kinematics([])
    assert motion_flux(kin, 0.0, 3.0) == 0.0
    assert motion_flux(bump_kinematics([(1, 2)]), 1.3, 1.3) == 0.0


def test_flux_monotone_velocity():
    # outer joint v.g rises monotonically from 0 to 1 m/s on [0, 1]
    t = np.linspace(0, 1, 201)
    z = np.column_stack([0 * t, 0 * t, 0.5 * t * t])
    rest = np.zeros_like(z)
    kin = GroupKinematics(1, (fit_spline(t, rest), fit_spline(t, rest), fit_spline(t, z)), 1.0, G)
    tr = kin.trajectories[2]
    expected = abs(tr(1.0, 1)[2] - tr(0.0, 1)[2])
    assert motion_flux(kin, 0, 1) == pytest.approx(expected, abs=1e-9)
    assert motion_flux(kin, 0, 1) == pytest.approx(1.0, abs=5e-3)
    assert motion_flux(kin, 0, 1) == pytest.approx(flux_oracle(kin, 0, 1), abs=1e-6)


def test_energy_rest():
    kin = bump_kinematics([])
    assert energy(kin, 1.0, 1.0, FluxParams()) == 0.0
    assert energy(kin, 2.5, 0.5, FluxParams(beta_s=0.0)) == 0.0


def test_energy_term_by_term():
    kin = bump_kinematics([(1, 2)])
    p = FluxParams()
    t0, rho = 0.7, 1.63
    v2 = sum(np.sum(tr(x, 1) ** 2) for tr in kin.trajectories for x in (t0, rho))
    s = sum(arc_length(tr, t0, rho) for tr in kin.trajectories)
    expected = flux_oracle(kin, t0, rho) - 0.5 * p.beta_v * v2 + p.beta_s * s
    assert energy(kin, rho, t0, p) == pytest.approx(expected, abs=1e-6)


def test_next_endpoint_rest():
    assert next_endpoint(bump_kinematics([]), 0.0, 3.0, FluxParams()) is None


def test_next_endpoint_one_bump():
    kin = bump_kinematics([(1, 2)])
    rho = next_endpoint(kin, 0.0, 3.0, FluxParams())
    assert 1.9 <= rho <= 2.1
    grid = np.arange(0, 3.0 + 1e-9, 1e-3)
    e = energy(kin, grid, 0.0, FluxParams())
    first_max = grid[np.flatnonzero(e >= e.max() - FluxParams().tie_tol)[0]]
    assert 1.9 <= first_max <= 2.1


def test_next_endpoint_two_bumps():
    kin = bump_kinematics([(0.5, 1.3), (1.8, 2.6)])
    r1 = next_endpoint(kin, 0.0, 3.0, FluxParams())
    r2 = next_endpoint(kin, r1, 3.0, FluxParams())
    assert abs(r1 - 1.3) <= 0.02 and abs(r2 - 2.6) <= 0.02


def test_segment_sequence_examples():
    assert segment_sequence(bump_kinematics([]), FluxParams()) == []
    one = segment_sequence(bump_kinematics([(1, 2)]), FluxParams())
    assert len(one) == 1 and one[0].interval[0] == 0.0 and abs(one[0].interval[1] - 2.0) <= 0.02
    three = segment_sequence(bump_kinematics([(0.4, 1.0), (1.4, 2.0), (2.4, 3.0)], T=3.5), FluxParams())
    ends = np.array([p.interval[1] for p in three])
    assert len(three) == 3 and np.abs(ends - [1.0, 2.0, 3.0]).max() * 50 <= 5


def test_segment_maximality():
    kin = bump_kinematics([(0.5, 1.3), (1.8, 2.6)])
    p = FluxParams()
    for prim in segment_sequence(kin, p):
        assert energy_is_maximal(kin, prim, p, tol=p.tie_tol)


def test_anatomical_normalize():
    kin = bump_kinematics([(1, 2)], limb=2.0)
    prim = primitive_between(kin, 0.5, 2.5)
    out = anatomical_normalize(prim, kin)
    assert out.scale == 0.5
    for a, b in zip(prim.trajectories, out.trajectories):
        assert np.allclose(b(np.linspace(0.5, 2.5, 9)), 0.5 * a(np.linspace(0.5, 2.5, 9)))
        assert arc_length(b, 0.5, 2.5) == pytest.approx(0.5 * arc_length(a, 0.5, 2.5), abs=1e-7)
    unit = anatomical_normalize(prim, bump_kinematics([(1, 2)], limb=1.0))
    assert np.allclose(unit.trajectories[2].coeffs, prim.trajectories[2].coeffs)
    with pytest.raises(DegenerateLimb):
        anatomical_normalize(prim, bump_kinematics([(1, 2)], limb=0.0))


def _anchor_seq(lower, upper):
    t = np.zeros((len(lower), 18, 3))
    t[:, DEFAULT_SPEC.index("lowerneck")] = lower
    t[:, DEFAULT_SPEC.index("upperneck")] = upper
    return SkeletonSequence.from_positions(t, 50.0)


def test_direction_g():
    seq = _anchor_seq(np.zeros((3, 3)), np.tile([0, 0, 1.0], (3, 1)))
    assert np.allclose(direction_g(seq, 1), [0, 0, 1])
    with pytest.raises(DegenerateDirection):
        direction_g(_anchor_seq(np.zeros((2, 3)), np.zeros((2, 3))), 1)
    ang = np.linspace(-0.4, 0.4, 9)
    up = np.column_stack([np.sin(ang), 0 * ang, np.cos(ang)])
    g = direction_g(_anchor_seq(np.zeros((9, 3)), up), 1)
    mean = up.mean(0)
    assert np.allclose(g, mean / np.linalg.norm(mean)) and abs(np.linalg.norm(g) - 1) < 1e-9


def test_flux_params_validation():
    with pytest.raises(ValueError):
        FluxParams(g=np.array([0, 0, 2.0]))
    with pytest.raises(ValueError):
        FluxParams(grid_step=0)


def test_primitive_csv_round_trip():
    kin = bump_kinematics([(0.5, 1.3), (1.8, 2.6)])
    prims = segment_sequence(kin, FluxParams())
    rows = read_primitive_csv(primitives_to_csv(prims))
    assert [(r["start_frame"], r["end_frame"]) for r in rows] == [p.frames for p in prims]
    with pytest.raises(MalformedInput):
        read_primitive_csv("a,b\n1,2\n")


@given(st.integers(0, 2**31 - 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_flux_additive(seed, u, v, w):
    kin = random_kinematics(seed)
    a, b, c = np.sort(2.0 * np.array([u, v, w]))
    assert abs(motion_flux(kin, a, c) - motion_flux(kin, a, b) - motion_flux(kin, b, c)) <= 1e-6


@given(st.integers(0, 2**31 - 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_flux_monotone(seed, u, v, w):
    kin = random_kinematics(seed)
    t1, a, b = np.sort(2.0 * np.array([u, v, w]))
    fa, fb = motion_flux(kin, t1, a), motion_flux(kin, t1, b)
    assert 0.0 <= fa <= fb + 1e-12


@given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.9), st.floats(0.05, 1.9))
def test_flux_matches_quadrature(seed, u, v):
    kin = random_kinematics(seed)
    a, b = sorted((u, v))
    assert motion_flux(kin, a, b) == pytest.approx(flux_oracle(kin, a, b), rel=1e-9, abs=1e-6)


@given(st.lists(st.tuples(st.floats(0.2, 0.9), st.floats(0.2, 0.6)), min_size=1, max_size=3))
def test_segmentation_contiguous(spec):
    bumps, t = [], 0.3
    for dwell, dur in spec:
        bumps.append((t, t + dur))
        t += dur + dwell
    kin = bump_kinematics(bumps, T=t + 0.3)
    prims = segment_sequence(kin, FluxParams())
    if prims:
        assert prims[0].interval[0] == kin.domain[0]
    for p, q in zip(prims, prims[1:]):
        assert p.interval[1] == q.interval[0]


@given(st.integers(0, 2**31 - 1))
def test_zero_penalties_reach_end(seed):
    kin = random_kinematics(seed)
    assert next_endpoint(kin, 0.0, 2.0, FluxParams(beta_v=0.0, beta_s=0.0)) == 2.0


@given(st.floats(0.5, 2.0), st.floats(0.3, 1.0))
def test_scaling_after_discovery(limb, amp):
    kin = bump_kinematics([(0.5, 1.3), (1.8, 2.6)], amp=amp, limb=limb)
    prims = segment_sequence(kin, FluxParams())
    scaled = [anatomical_normalize(p, kin) for p in prims]
    assert [p.interval for p in scaled] == [p.interval for p in prims]
    for p, q in zip(prims, scaled):
        assert np.allclose(q.trajectories[2].coeffs, p.trajectories[2].coeffs / limb)
