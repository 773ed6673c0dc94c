"""Relation likelihood models: symmetry, invariance, sampling oracles, DP rule."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wayfinder.geometry import Rect
from wayfinder.relations import (
    AllZeroMassError, ConstraintDensity, DegenerateGeometryError, DPConfig,
    Geom, RelationLibrary, dp_ground, dp_probabilities,
)


@pytest.fixture(scope="module")
def lib():
    return RelationLibrary.default()


HALLWAY = Rect(0.0, -1.0, 12.0, 1.0)     # long in x
ROBOT = (0.5, 0.0, 0.0)                  # at the near end, facing +x


def disc(x, y, r=1.0):
    return Geom((x, y), r)


def test_near_monotone_in_distance(lib):
    lm = disc(0.0, 0.0, 1.0)
    close = lib["near"].score(disc(1.0, 0.0), lm, (0, 0, 0.0))
    farther = lib["near"].score(disc(10.0, 0.0), lm, (0, 0, 0.0))
    assert close > farther


def test_down_prefers_axis_over_perpendicular(lib):
    d = 8.0
    on_axis = lib["down"].score(disc(HALLWAY.center[0] + d, 0.0), HALLWAY, ROBOT)
    perp = lib["down"].score(disc(HALLWAY.center[0], d), HALLWAY, ROBOT)
    assert on_axis > perp
    # regression fixtures for the default parameters
    assert on_axis == pytest.approx(-2.2844566591511146, rel=1e-9)
    assert perp == pytest.approx(-133.28133491097216, rel=1e-9)


def test_left_right_mirror_symmetry(lib):
    robot = (0.0, 0.0, 0.7)
    h = np.array([math.cos(0.7), math.sin(0.7)])
    lat = np.array([-h[1], h[0]])
    base = np.array([1.0, 2.0])
    p = base[0] * h + base[1] * lat
    mirrored = base[0] * h - base[1] * lat
    lm = disc(5.0, 5.0, 1.0)
    s_left = lib["left"].score(disc(p[0], p[1]), lm, robot)
    s_right = lib["right"].score(disc(mirrored[0], mirrored[1]), lm, robot)
    assert s_left == pytest.approx(s_right, abs=1e-12)


@given(st.floats(-3.0, 3.0), st.floats(-50.0, 50.0), st.floats(-50.0, 50.0))
@settings(max_examples=40)
def test_rigid_transform_invariance(theta, tx, ty):
    lib = RelationLibrary.default()
    R = np.array([[math.cos(theta), -math.sin(theta)],
                  [math.sin(theta), math.cos(theta)]])
    t = np.array([tx, ty])

    def xf_point(p):
        return R @ np.asarray(p, float) + t

    robot = (1.0, 0.5, 0.3)
    fig = disc(4.0, 2.0, 1.2)
    lm = disc(6.0, -1.0, 2.0)
    robot2 = (*xf_point(robot[:2]), robot[2] + theta)
    fig2 = Geom(tuple(xf_point(fig.center)), fig.radius)
    lm2 = Geom(tuple(xf_point(lm.center)), lm.radius)
    for rel in ("near", "far", "left", "right", "past", "before", "after",
                "through", "across-from"):
        a = lib[rel].score(fig, lm, robot)
        b = lib[rel].score(fig2, lm2, robot2)
        assert a == pytest.approx(b, abs=1e-6), rel


def test_degenerate_geometry_rejected(lib):
    with pytest.raises(DegenerateGeometryError):
        lib["near"].score(Geom((0, 0), 0.0), disc(1, 1), (0, 0, 0))
    with pytest.raises(DegenerateGeometryError):
        lib["down"].constraint(Geom((0, 0), -1.0), (0, 0, 0))


def test_down_sample_mean_beyond_half_length(lib):
    rng = np.random.default_rng(7)
    L = HALLWAY.width
    robot_xy = np.array(ROBOT[:2])
    axis = np.array([1.0, 0.0])
    samples = []
    for _ in range(2000):
        s, _ = lib["down"].sample_constraint(HALLWAY, ROBOT, rng)
        samples.append(s)
    mean = np.mean(samples, axis=0)
    displacement = float((mean - robot_xy) @ axis)
    assert displacement > L / 2


def test_sample_mean_matches_density_mean(lib):
    rng = np.random.default_rng(3)
    n = 10_000
    dens = lib["down"].constraint(HALLWAY, ROBOT)
    pts = np.array([dens.sample(rng) for _ in range(n)])
    se = np.array([dens.sigma_s, dens.sigma_l]) / math.sqrt(n)
    # rotate into the density frame to compare against (0, 0)
    b = np.array([-dens.axis[1], dens.axis[0]])
    local = (pts - dens.mean) @ np.stack([dens.axis, b], axis=1)
    assert abs(local[:, 0].mean()) < 3 * se[0]
    assert abs(local[:, 1].mean()) < 3 * se[1]


def test_sample_constraint_deterministic(lib):
    a, _ = lib["near"].sample_constraint(HALLWAY, ROBOT, np.random.default_rng(42))
    b, _ = lib["near"].sample_constraint(HALLWAY, ROBOT, np.random.default_rng(42))
    assert np.allclose(a, b)


def test_mass_in_rect_total_and_split():
    dens = ConstraintDensity(np.array([2.0, 3.0]), np.array([1.0, 0.0]), 1.0, 2.0)
    big = Rect(-100, -100, 100, 100)
    assert dens.mass_in_rect(big) == pytest.approx(1.0, abs=1e-9)
    left_half = Rect(-100, -100, 2.0, 100)
    assert dens.mass_in_rect(left_half) == pytest.approx(0.5, abs=1e-9)
    json_roundtrip = ConstraintDensity.from_json(dens.to_json())
    assert np.allclose(json_roundtrip.cov, dens.cov)


# -- Dirichlet-process grounding ---------------------------------------------

def test_dp_probabilities_worked_example():
    probs = dp_probabilities([0.3, 0.1], DPConfig(alpha=1.0, base_density=0.05))
    assert probs == pytest.approx([2 / 3, 2 / 9, 1 / 9], abs=1e-12)
    assert sum(probs) == pytest.approx(1.0, abs=1e-12)


def test_dp_no_candidates_always_new():
    rng = np.random.default_rng(0)
    for _ in range(20):
        res = dp_ground([], DPConfig(), rng)
        assert res.kind == "new"
        assert res.chosen_prob == pytest.approx(1.0)


def test_dp_scale_invariance():
    dp1 = DPConfig(alpha=1.0, base_density=0.05)
    dp2 = DPConfig(alpha=1.0, base_density=0.05 * 7.5)
    a = dp_probabilities([0.3, 0.1], dp1)
    b = dp_probabilities([0.3 * 7.5, 0.1 * 7.5], dp2)
    assert a == pytest.approx(b, abs=1e-12)


def test_dp_invalid_config():
    with pytest.raises(ValueError):
        DPConfig(alpha=0.0)
    with pytest.raises(ValueError):
        DPConfig(base_density=-1.0)
    with pytest.raises(ValueError):
        dp_probabilities([-0.1], DPConfig())


def test_dp_sampling_frequencies_within_3_sigma():
    rng = np.random.default_rng(11)
    dp = DPConfig(alpha=1.0, base_density=0.05)
    n = 100_000
    counts = {0: 0, 1: 0, "new": 0}
    for _ in range(n):
        res = dp_ground([(0, 0.3), (1, 0.1)], dp, rng)
        counts[res.region_id if res.kind == "existing" else "new"] += 1
    expect = dp_probabilities([0.3, 0.1], dp)
    for key, p in zip((0, 1, "new"), expect):
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(counts[key] - n * p) < 3 * sigma, key
