"""Pose-graph and particle container tests, with Monte-Carlo and dense-solver
oracles for the Gaussian machinery."""

import json
import math

import numpy as np
import pytest

from wayfinder.config import FilterConfig
from wayfinder import semmap
from wayfinder.geometry import se2_compose
from wayfinder.semmap import (
    Belief, NonPSDCovarianceError, Particle, add_node_with_odometry,
    condition_pose_graph, information_matrix, map_estimate,
    marginal_covariance,
)

ODO_COV = np.diag([0.05 ** 2, 0.05 ** 2, 0.02 ** 2])


def make_chain(means, cov=ODO_COV):
    p = Particle.initial((0.0, 0.0, 0.0), "hallway")
    for k, m in enumerate(means):
        add_node_with_odometry(p, m, cov, step=k + 1)
    return p


def test_two_unit_steps_compose_to_two_meters():
    p = make_chain([(1.0, 0.0, 0.0), (1.0, 0.0, 0.0)])
    assert np.allclose(p.means[2], [2.0, 0.0, 0.0])
    assert len(p.nodes) == 3
    assert len(p.odometry_edges()) == 2


def test_zero_displacement_keeps_mean():
    p = make_chain([(0.0, 0.0, 0.0)])
    assert np.allclose(p.means[1], p.means[0])


def test_non_psd_covariance_rejected():
    p = make_chain([])
    bad = np.diag([1.0, -0.5, 0.1])
    with pytest.raises(NonPSDCovarianceError):
        add_node_with_odometry(p, (1, 0, 0), bad, step=1)
    asym = np.array([[1, 0.5, 0], [0, 1, 0], [0, 0, 1.0]])
    with pytest.raises(NonPSDCovarianceError):
        add_node_with_odometry(p, (1, 0, 0), asym, step=1)


def test_marginal_covariance_matches_monte_carlo():
    steps = 5
    mean = np.array([1.0, 0.0, 0.1])
    cov = np.diag([0.05 ** 2, 0.02 ** 2, 0.01 ** 2])
    p = make_chain([mean] * steps, cov=cov)
    analytic = marginal_covariance(p, steps)

    rng = np.random.default_rng(123)
    n = 100_000
    poses = np.zeros((n, 3))
    for _ in range(steps):
        u = rng.multivariate_normal(mean, cov, size=n)
        c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
        poses = np.stack([
            poses[:, 0] + c * u[:, 0] - s * u[:, 1],
            poses[:, 1] + s * u[:, 0] + c * u[:, 1],
            poses[:, 2] + u[:, 2],
        ], axis=1)
    sampled = np.cov(poses.T)
    err = np.linalg.norm(sampled - analytic) / np.linalg.norm(sampled)
    assert err < 0.05


def test_conditioning_consistent_chain_zero_residuals():
    p = make_chain([(1.0, 0.2, 0.1), (0.8, -0.1, -0.2), (1.2, 0.0, 0.3)])
    # perturb means, conditioning must restore the exact composition
    for k in range(1, len(p.means)):
        p.means[k] = p.means[k] + np.array([0.3, -0.2, 0.1])
    condition_pose_graph(p, FilterConfig())
    for e in p.odometry_edges():
        h = semmap.se2_between(p.means[e.a], p.means[e.b])
        assert np.allclose([h[0] - e.mean[0], h[1] - e.mean[1], h[2] - e.mean[2]],
                           0.0, atol=1e-12)


def test_conflicting_constraints_split_evenly():
    p = make_chain([(1.0, 0.0, 0.0)])
    # second, conflicting measurement of the same displacement
    p.edges.append(semmap.Edge(id=99, kind="odometry", a=0, b=1,
                               mean=(2.0, 0.0, 0.0), cov=ODO_COV))
    condition_pose_graph(p, FilterConfig(full_convergence=True))
    assert p.means[1][0] == pytest.approx(1.5, abs=1e-6)
    assert p.means[0][0] == pytest.approx(0.0, abs=1e-6)


def _random_loopy_particle(rng, n_nodes=10, n_extra=3):
    means = [(1.0 + 0.2 * rng.standard_normal(),
              0.2 * rng.standard_normal(),
              0.2 * rng.standard_normal()) for _ in range(n_nodes - 1)]
    p = make_chain(means)
    truth = [m.copy() for m in p.means]
    for _ in range(n_extra):
        a = int(rng.integers(0, n_nodes - 2))
        b = int(rng.integers(a + 1, n_nodes))
        rel = semmap.se2_between(truth[a], truth[b])
        noisy = (rel[0] + 0.05 * rng.standard_normal(),
                 rel[1] + 0.05 * rng.standard_normal(),
                 rel[2] + 0.02 * rng.standard_normal())
        p.edges.append(semmap.Edge(id=len(p.edges), kind="odometry",
                                   a=a, b=b, mean=noisy, cov=ODO_COV))
    for k in range(1, n_nodes):
        p.means[k] = p.means[k] + 0.05 * rng.standard_normal(3)
    return p


def test_conditioning_matches_dense_least_squares_oracle():
    from scipy.optimize import least_squares

    rng = np.random.default_rng(2024)
    for trial in range(20):
        p = _random_loopy_particle(rng)
        q = p.copy()
        condition_pose_graph(p, FilterConfig(full_convergence=True,
                                             gn_max_iters=100, gn_tol=1e-12))

        cons = semmap.pose_constraints(q)
        omega_chol = {e.id: np.linalg.cholesky(np.linalg.inv(e.cov))
                      for e in cons}
        x0_fixed = np.zeros(3)

        def unpack(x):
            return [x0_fixed] + [x[3 * k:3 * k + 3]
                                 for k in range(len(q.nodes) - 1)]

        def residuals(x):
            poses = unpack(x)
            out = []
            for e in cons:
                h = semmap.se2_between(poses[e.a], poses[e.b])
                r = np.array([h[0] - e.mean[0], h[1] - e.mean[1],
                              semmap.wrap_angle(h[2] - e.mean[2])])
                out.append(omega_chol[e.id].T @ r)
            return np.concatenate(out)

        x_init = np.concatenate([q.means[k] for k in range(1, len(q.nodes))])
        sol = least_squares(residuals, x_init, method="lm", xtol=1e-14,
                            ftol=1e-14, gtol=1e-14)
        dense = unpack(sol.x)
        for k in range(len(p.nodes)):
            assert np.allclose(p.means[k], dense[k], atol=1e-6), (trial, k)


def test_information_matrix_symmetric_psd():
    p = make_chain([(1.0, 0.0, 0.1), (1.0, 0.1, 0.0)])
    H = information_matrix(p)
    assert np.allclose(H, H.T, atol=1e-6)
    evals = np.linalg.eigvalsh(H)
    assert evals.min() > -1e-6


def test_anchor_stays_at_origin():
    rng = np.random.default_rng(5)
    p = _random_loopy_particle(rng)
    condition_pose_graph(p, FilterConfig(full_convergence=True))
    assert np.allclose(p.means[0], 0.0, atol=1e-9)


def test_map_estimate_tie_breaks():
    b = Belief.initial((0, 0, 0), "lobby", 3)
    assert map_estimate(b).particle_id == 0
    b.particles[0].log_weight = math.log(0.7)
    b.particles[1].log_weight = math.log(0.2)
    b.particles[2].log_weight = math.log(0.1)
    assert map_estimate(b).particle_id == 0
    b.particles[1].log_weight = math.log(0.7)
    b.particles[0].log_weight = math.log(0.2)
    assert map_estimate(b).particle_id == 1
    for p in b.particles:
        p.log_weight = 0.0
    assert map_estimate(b).particle_id == 0


def test_particle_deep_copy_isolation():
    p = make_chain([(1.0, 0.0, 0.0)])
    q = p.copy(new_id=7)
    before = json.dumps(semmap.SemanticMap.from_particle(p, 0).to_json(),
                        sort_keys=True)
    add_node_with_odometry(q, (1.0, 0.0, 0.0), ODO_COV, step=2)
    q.regions[0].observe_label("kitchen")
    q.means[0][0] = 99.0
    after = json.dumps(semmap.SemanticMap.from_particle(p, 0).to_json(),
                       sort_keys=True)
    assert before == after


def test_visited_extents_do_not_overlap():
    p = make_chain([(1.0, 0.0, 0.0)] * 4)
    # force a region split: later nodes belong to a second region
    r2 = semmap.Region(id=p.alloc_region_id(), rtype="kitchen")
    p.regions[r2.id] = r2
    for nid in (3, 4):
        p.regions[p.nodes[nid].region_id].node_ids.remove(nid)
        p.nodes[nid].region_id = r2.id
        r2.node_ids.append(nid)
    p.update_region_extent(0)
    p.update_region_extent(r2.id)
    a, b = p.regions[0].rect, p.regions[r2.id].rect
    assert a is not None and b is not None
    assert not a.interior_overlaps(b)


def test_snapshot_serialization_roundtrip():
    p = make_chain([(1.0, 0.0, 0.0)])
    snap = semmap.SemanticMap.from_particle(p, step=3)
    blob = json.loads(json.dumps(snap.to_json()))
    assert blob["step"] == 3
    assert len(blob["nodes"]) == 2
    assert blob["regions"][0]["status"] == "visited"
    assert blob["adjacency"] == [[0, 1]]
