"""Filter tests: hand-computed likelihoods, sampling-frequency oracles,
exchangeability, and topology invariants after every modification kind."""

import json
import math

import numpy as np
import pytest

from wayfinder.config import FilterConfig
from wayfinder.geometry import Rect
from wayfinder.relations import RelationLibrary
from wayfinder.rbpf import (AllZeroWeightError, AnnotationObservation,
                            AppearanceObservation, appearance_likelihood,
                            apply_language_mods, apply_observation_mods,
                            belief_rng, particle_rng, propose,
                            resample_if_needed, reweight, step, trace_record)
from wayfinder.semmap import (HYPOTHESIZED, VISITED, Belief, Particle, Region,
                              SemanticMap, condition_pose_graph)

CONFIG = FilterConfig()
RELATIONS = RelationLibrary.default()
COV = np.diag([1e-4, 1e-4, 1e-4])


def make_particle(rtype="lobby", pose=(0.0, 0.0, 0.0), pid=0):
    return Particle.initial(pose, rtype, particle_id=pid)


def add_hyp(particle, rtype, center, validity=0.8, radius=1.5):
    r = Region(id=particle.alloc_region_id(), rtype=rtype, status=HYPOTHESIZED,
               center=np.asarray(center, float), radius=radius,
               validity=validity)
    particle.regions[r.id] = r
    return r


def mod_kinds(particle):
    return [m.kind for m in particle.mods_this_step]


def check_particle(p):
    """Topology invariants: nodes partitioned by regions, extents present and
    non-overlapping, edges referencing live entities."""
    node_ids = [n.id for n in p.nodes]
    assert node_ids == list(range(len(p.nodes)))
    assert len(p.means) == len(p.nodes)
    covered = []
    for r in p.regions.values():
        covered.extend(r.node_ids)
        if r.status == VISITED:
            assert r.rect is not None or not r.node_ids
        else:
            assert r.center is not None
    assert sorted(covered) == node_ids
    for n in p.nodes:
        assert n.id in p.regions[n.region_id].node_ids
    vis = [r for r in p.regions.values()
           if r.status == VISITED and r.rect is not None]
    for i, a in enumerate(vis):
        for b in vis[i + 1:]:
            assert not a.rect.interior_overlaps(b.rect, tol=1e-6)
    for e in p.edges:
        if e.kind == "language-relation":
            assert e.a in p.regions and e.b in p.regions
        elif e.kind == "odometry":
            assert 0 <= e.a < len(p.nodes) and 0 <= e.b < len(p.nodes)


def fingerprint(belief):
    """Order-independent serialization for belief equality checks."""
    entries = []
    for p in sorted(belief.particles, key=lambda p: p.id):
        snap = SemanticMap.from_particle(p, belief.step).to_json()
        entries.append({"id": p.id, "log_weight": round(p.log_weight, 10),
                        "map": snap})
    return json.dumps(entries, sort_keys=True)


# -- appearance likelihood -----------------------------------------------------

def test_appearance_single_hypothesis_hand_value():
    p = make_particle("hallway")
    add_hyp(p, "kitchen", (8.0, 0.0), validity=0.8)
    z = AppearanceObservation("hallway")
    got = appearance_likelihood(p, z, CONFIG)
    assert abs(got - (0.9 * 0.8 + 0.1 * 0.2)) < 1e-12
    assert abs(got - 0.74) < 1e-12


def test_appearance_two_hypotheses_product():
    p = make_particle("hallway")
    add_hyp(p, "kitchen", (8.0, 0.0), validity=0.8)
    add_hyp(p, "lab", (-8.0, 0.0), validity=0.5)
    got = appearance_likelihood(p, AppearanceObservation("hallway"), CONFIG)
    assert abs(got - 0.74 * 0.5) < 1e-12
    assert abs(got - 0.37) < 1e-12


def test_appearance_no_hypotheses_is_one():
    p = make_particle()
    assert appearance_likelihood(p, AppearanceObservation("lobby"), CONFIG) == 1.0
    assert appearance_likelihood(p, None, CONFIG) == 1.0


def test_appearance_conflict_downweights():
    clean = make_particle("hallway")
    add_hyp(clean, "kitchen", (8.0, 0.0))
    tainted = make_particle("hallway")
    # hypothesis sitting inside the traversed hallway extent, different type
    add_hyp(tainted, "kitchen", (0.0, 0.0))
    lo = appearance_likelihood(tainted, AppearanceObservation("hallway"), CONFIG)
    hi = appearance_likelihood(clean, AppearanceObservation("hallway"), CONFIG)
    assert abs(lo - (0.1 * 0.8 + 0.9 * 0.2)) < 1e-12
    assert lo < hi


# -- proposal: language --------------------------------------------------------

def test_propose_plain_step_adds_one_node_one_edge():
    p = make_particle()
    n_nodes, n_edges, n_regions = len(p.nodes), len(p.edges), len(p.regions)
    propose(p, ((0.5, 0.0, 0.0), COV), (), AppearanceObservation("lobby"),
            particle_rng(0, 0, 1), CONFIG, RELATIONS)
    assert len(p.nodes) == n_nodes + 1
    assert len(p.edges) == n_edges + 1
    assert p.edges[-1].kind == "odometry"
    assert len(p.regions) == n_regions
    check_particle(p)


def test_annotation_with_visited_landmark_hypothesizes_figure():
    # grounding the landmark to the visited hallway leaves exactly one new
    # hypothesized kitchen plus the relation edge
    hits = 0
    for seed in range(40):
        p = make_particle("hallway")
        ann = AnnotationObservation("kitchen", "down", "hallway")
        apply_language_mods(p, [ann], particle_rng(seed, 0, 1), CONFIG,
                            RELATIONS)
        kinds = mod_kinds(p)
        if kinds == ["add-hypothesized-region", "add-relation-edge"]:
            hits += 1
            hyp = [r for r in p.regions.values() if r.is_hypothesized]
            assert len(hyp) == 1 and hyp[0].rtype == "kitchen"
            e = p.language_edges()[0]
            assert e.relation == "down"
            assert e.a == 0 and e.b == hyp[0].id
            assert e.pose is not None
        check_particle(p)
    # the landmark grounds to the visited hallway with probability 1/1.05
    assert hits >= 30


def test_annotation_with_unknown_landmark_hypothesizes_both():
    p = make_particle("lobby")
    ann = AnnotationObservation("kitchen", "down", "hallway")
    apply_language_mods(p, [ann], particle_rng(3, 0, 1), CONFIG, RELATIONS)
    hyp = {r.rtype for r in p.regions.values() if r.is_hypothesized}
    assert hyp == {"hallway", "kitchen"}
    (e,) = p.language_edges()
    assert p.regions[e.a].rtype == "hallway"
    assert p.regions[e.b].rtype == "kitchen"
    assert mod_kinds(p) == ["add-hypothesized-region", "add-hypothesized-region",
                            "add-relation-edge"]
    check_particle(p)


def test_figure_only_annotation_places_near_robot():
    p = make_particle("lobby", pose=(2.0, 1.0, 0.0))
    apply_language_mods(p, [AnnotationObservation("elevator-lobby")],
                        particle_rng(5, 0, 1), CONFIG, RELATIONS)
    hyp = [r for r in p.regions.values() if r.is_hypothesized]
    assert len(hyp) == 1 and hyp[0].rtype == "elevator-lobby"
    assert np.linalg.norm(hyp[0].center - np.array([2.0, 1.0])) < 10.0
    (e,) = p.language_edges()
    assert e.relation == "near" and e.a == 0
    check_particle(p)


def test_empty_annotation_is_noop():
    p = make_particle()
    before = fingerprint(Belief([p]))
    apply_language_mods(p, (), particle_rng(0, 0, 1), CONFIG, RELATIONS)
    apply_language_mods(p, None, particle_rng(0, 0, 1), CONFIG, RELATIONS)
    assert fingerprint(Belief([p])) == before


def test_modification_kind_frequency_matches_dp_probabilities():
    # visited hallway vs NEW: the landmark draw picks NEW with probability
    # (alpha * base) / (1 + alpha * base) = 0.05 / 1.05
    n = 10_000
    new_landmark = 0
    ann = AnnotationObservation("kitchen", "down", "hallway")
    for i in range(n):
        p = make_particle("hallway")
        apply_language_mods(p, [ann], particle_rng(991, i, 1), CONFIG,
                            RELATIONS)
        hyp_types = [r.rtype for r in p.regions.values() if r.is_hypothesized]
        assert hyp_types.count("kitchen") == 1    # figure is always NEW here
        new_landmark += hyp_types.count("hallway")
    p_new = 0.05 / 1.05
    sigma = math.sqrt(n * p_new * (1 - p_new))
    assert abs(new_landmark - n * p_new) <= 3 * sigma


# -- proposal: observations ----------------------------------------------------

def test_same_region_observation_grows_extent():
    p = make_particle("lobby")
    propose(p, ((1.0, 0.0, 0.0), COV), (), AppearanceObservation("lobby"),
            particle_rng(0, 0, 1), CONFIG, RELATIONS)
    r = p.current_region
    assert r.rect.contains((1.0, 0.0))
    assert r.label_counts["lobby"] == 2
    assert len(p.regions) == 1
    check_particle(p)


def test_transition_creates_new_visited_region():
    p = make_particle("lobby")
    propose(p, ((4.0, 0.0, 0.0), COV), (),
            AppearanceObservation("hallway", transition=True),
            particle_rng(0, 0, 1), CONFIG, RELATIONS)
    assert "new-visited-region" in mod_kinds(p)
    assert len(p.visited_regions()) == 2
    cur = p.current_region
    assert cur.rtype == "hallway" and cur.node_ids == [1]
    check_particle(p)


def test_transition_revisit_assigns_to_existing_region():
    p = make_particle("lobby")
    # out to a new region, then back into the lobby extent
    propose(p, ((4.0, 0.0, 0.0), COV), (),
            AppearanceObservation("hallway", transition=True),
            particle_rng(0, 0, 1), CONFIG, RELATIONS)
    propose(p, ((-4.0, 0.0, 0.0), COV), (),
            AppearanceObservation("lobby", transition=True),
            particle_rng(0, 0, 2), CONFIG, RELATIONS)
    assert "assign-node-to-region" in mod_kinds(p)
    assert len(p.visited_regions()) == 2
    assert p.current_region.id == 0
    assert p.current_region.node_ids == [0, 2]
    check_particle(p)


def test_constraint_resample_on_large_shift():
    p = make_particle("hallway")
    ann = AnnotationObservation("kitchen", "down", "hallway")
    rng = particle_rng(8, 0, 1)
    while True:    # draw until the landmark grounds to the visited hallway
        q = p.copy()
        apply_language_mods(q, [ann], rng, CONFIG, RELATIONS)
        if q.language_edges() and q.language_edges()[0].a == 0:
            p = q
            break
    e = p.language_edges()[0]
    fig_id = e.b
    old_center = np.array(p.regions[fig_id].center)
    e.loglik = -50.0    # pretend the placement was scored elsewhere
    apply_observation_mods(p, AppearanceObservation("hallway"),
                           particle_rng(9, 0, 2), CONFIG, RELATIONS)
    assert "resample-constraint" in mod_kinds(p)
    assert not np.allclose(p.regions[fig_id].center, old_center)
    assert e.loglik > -50.0
    check_particle(p)


def test_no_constraint_resample_on_small_shift():
    p = make_particle("hallway")
    add_hyp(p, "kitchen", (5.0, 0.0))
    apply_observation_mods(p, AppearanceObservation("hallway"),
                           particle_rng(1, 0, 1), CONFIG, RELATIONS)
    assert mod_kinds(p) == []    # no language edge, nothing to resample


def test_merge_hypothesis_into_visited():
    merged = 0
    for seed in range(30):
        p = make_particle("hallway")
        hyp = add_hyp(p, "kitchen", (3.0, 0.0))
        propose(p, ((3.0, 0.0, 0.0), COV), (),
                AppearanceObservation("kitchen", transition=True),
                particle_rng(seed, 0, 1), CONFIG, RELATIONS)
        check_particle(p)
        if "merge-hypothesized-into-visited" in mod_kinds(p):
            merged += 1
            assert hyp.id not in p.regions
            assert p.current_region.rtype == "kitchen"
            assert p.current_region.status == VISITED
    # center distance 0.75 under a 1.5 m kernel: merge odds ~ 0.88/0.93
    assert merged >= 20


def test_merge_rewires_edges_and_resamples_downstream():
    p = make_particle("lobby")
    hall = add_hyp(p, "hallway", (5.0, 0.0))
    kitchen = add_hyp(p, "kitchen", (9.0, 0.0))
    dens = RELATIONS["down"].constraint(hall.geom(), (0.0, 0.0, 0.0))
    from wayfinder.semmap import Edge
    p.edges.append(Edge(id=len(p.edges), kind="language-relation", a=hall.id,
                        b=kitchen.id, relation="down", density=dens,
                        loglik=float(dens.logpdf(kitchen.center)),
                        pose=(0.0, 0.0, 0.0)))
    merged = False
    for seed in range(30):
        q = p.copy()
        propose(q, ((5.0, 0.0, 0.0), COV), (),
                AppearanceObservation("hallway", transition=True),
                particle_rng(seed, 0, 1), CONFIG, RELATIONS)
        check_particle(q)
        if "merge-hypothesized-into-visited" in mod_kinds(q):
            merged = True
            assert "resample-constraint" in mod_kinds(q)
            (e,) = q.language_edges()
            assert e.a == q.current_region.id          # rewired to visited
            assert q.regions[e.b].is_hypothesized      # kitchen still a guess
            assert q.current_region.rtype == "hallway"
            break
    assert merged


# -- weighting -----------------------------------------------------------------

def test_reweight_no_observations_unchanged():
    p = make_particle()
    p.log_weight = -1.25
    propose(p, ((0.5, 0.0, 0.0), COV), (), None, particle_rng(0, 0, 1),
            CONFIG, RELATIONS)
    reweight(p, (), None, CONFIG, RELATIONS)
    assert p.log_weight == -1.25


def test_reweight_prefers_conforming_pair():
    conforming = make_particle("hallway", pose=(1.0, 0.0, 0.0))
    hall = conforming.current_region
    hall.rect = Rect(0.0, -1.0, 10.0, 1.0)
    kitchen = Region(id=conforming.alloc_region_id(), rtype="kitchen",
                     status=VISITED, rect=Rect(10.0, -2.0, 14.0, 2.0))
    conforming.regions[kitchen.id] = kitchen
    bare = make_particle("lobby", pose=(1.0, 0.0, 0.0))
    ann = AnnotationObservation("kitchen", "down", "hallway")
    w1 = reweight(conforming, [ann], None, CONFIG, RELATIONS)
    w2 = reweight(bare, [ann], None, CONFIG, RELATIONS)
    assert w1 > w2


def test_reweight_appearance_conflict_ordering():
    clean = make_particle("hallway")
    add_hyp(clean, "kitchen", (8.0, 0.0))
    tainted = make_particle("hallway")
    add_hyp(tainted, "kitchen", (0.0, 0.0))
    z = AppearanceObservation("hallway")
    assert reweight(clean, (), z, CONFIG, RELATIONS) > \
        reweight(tainted, (), z, CONFIG, RELATIONS)


# -- resampling ----------------------------------------------------------------

def set_weights(belief, weights):
    for p, w in zip(belief.particles, weights):
        p.log_weight = math.log(w) if w > 0 else float("-inf")


def typed_belief(types):
    return Belief([make_particle(t, pid=i) for i, t in enumerate(types)])


def test_resample_skipped_on_uniform_weights():
    b = typed_belief(["a"] * 10)
    set_weights(b, [0.1] * 10)
    before = [p.id for p in b.particles]
    resample_if_needed(b, belief_rng(0, 1), CONFIG)
    assert [p.id for p in b.particles] == before


def test_resample_degenerate_weights_keeps_only_survivor():
    b = typed_belief(["a", "b", "c"])
    set_weights(b, [1.0, 0.0, 0.0])
    resample_if_needed(b, belief_rng(0, 1), CONFIG)
    assert all(p.current_region.rtype == "a" for p in b.particles)
    assert sorted(p.id for p in b.particles) == [3, 4, 5]    # fresh ids
    w = b.weights()
    assert np.allclose(w, 1.0 / 3.0)


def test_resample_all_zero_weight_raises():
    b = typed_belief(["a", "b"])
    for p in b.particles:
        p.log_weight = float("-inf")
    with pytest.raises(AllZeroWeightError):
        resample_if_needed(b, belief_rng(0, 1), CONFIG)


def test_survivor_counts_match_weights():
    counts = {"a": 0, "b": 0, "c": 0}
    n_trials = 10_000
    for trial in range(n_trials):
        b = typed_belief(["a", "b", "c"])
        set_weights(b, [0.9, 0.05, 0.05])
        resample_if_needed(b, belief_rng(trial, 1), CONFIG)
        for p in b.particles:
            counts[p.current_region.rtype] += 1
    total = 3 * n_trials
    for t, w in (("a", 0.9), ("b", 0.05), ("c", 0.05)):
        sigma = math.sqrt(total * w * (1 - w))    # multinomial upper bound
        assert abs(counts[t] - total * w) <= 3 * sigma


def test_resample_is_order_independent():
    def build():
        b = typed_belief(["a", "b", "c"])
        set_weights(b, [0.9, 0.05, 0.05])
        return b
    b1 = build()
    b2 = build()
    b2.particles = list(reversed(b2.particles))
    resample_if_needed(b1, belief_rng(7, 1), CONFIG)
    resample_if_needed(b2, belief_rng(7, 1), CONFIG)
    assert fingerprint(b1) == fingerprint(b2)


# -- full step -----------------------------------------------------------------

def test_step_normalizes_weights():
    b = Belief.initial((0.0, 0.0, 0.0), "lobby", 8)
    ann = [AnnotationObservation("kitchen", "down", "hallway")]
    for t in range(3):
        step(b, ((0.5, 0.0, 0.0), COV), AppearanceObservation("lobby"),
             ann if t == 0 else None, seed=4, config=CONFIG,
             relations=RELATIONS)
        assert abs(float(np.sum(b.weights())) - 1.0) < 1e-9
        lin = sum(math.exp(p.log_weight) for p in b.particles)
        assert abs(lin - 1.0) < 1e-9
        for p in b.particles:
            check_particle(p)


def test_step_deterministic_world_exact_trajectory():
    b = Belief.initial((0.0, 0.0, 0.0), "lobby", 5)
    zero_cov = np.zeros((3, 3))
    for t in range(5):
        step(b, ((0.5, 0.0, 0.0), zero_cov), AppearanceObservation("lobby"),
             None, seed=11, config=CONFIG, relations=RELATIONS)
    prints = set()
    for p in b.particles:
        snap = SemanticMap.from_particle(p, b.step).to_json()
        snap.pop("particle_id")
        prints.add(json.dumps(snap, sort_keys=True))
    assert len(prints) == 1    # single effective hypothesis
    traj = b.map_particle().means
    for i, m in enumerate(traj):
        assert np.allclose(m, [0.5 * i, 0.0, 0.0], atol=1e-9)


def test_step_exchangeability_under_permutation():
    def build():
        return Belief.initial((0.0, 0.0, 0.0), "lobby", 6)
    ann = [AnnotationObservation("kitchen", "down", "hallway")]
    b1 = build()
    b2 = build()
    b2.particles = list(reversed(b2.particles))
    for t in range(2):
        a = ann if t == 0 else None
        step(b1, ((0.5, 0.0, 0.0), COV), AppearanceObservation("lobby"), a,
             seed=21, config=CONFIG, relations=RELATIONS)
        step(b2, ((0.5, 0.0, 0.0), COV), AppearanceObservation("lobby"), a,
             seed=21, config=CONFIG, relations=RELATIONS)
    assert fingerprint(b1) == fingerprint(b2)


def test_language_disabled_equals_empty_annotations():
    def run(alpha):
        b = Belief.initial((0.0, 0.0, 0.0), "lobby", 4)
        for _ in range(3):
            step(b, ((0.5, 0.0, 0.0), COV), AppearanceObservation("lobby"),
                 alpha, seed=2, config=CONFIG, relations=RELATIONS)
        return fingerprint(b)
    assert run(None) == run(())


def test_trace_records_are_json_lines_ready():
    b = Belief.initial((0.0, 0.0, 0.0), "lobby", 3)
    trace = []
    step(b, ((0.5, 0.0, 0.0), COV), AppearanceObservation("lobby"),
         [AnnotationObservation("kitchen", "down", "hallway")], seed=1,
         config=CONFIG, relations=RELATIONS, trace=trace)
    assert len(trace) == 1
    text = json.dumps(trace[0])
    rec = json.loads(text)
    assert rec["step"] == 1
    assert len(rec["particles"]) == 3
    for part in rec["particles"]:
        assert {"particle", "log_weight", "weight", "mods",
                "regions"} <= set(part)
        assert any(m["kind"] == "add-hypothesized-region" for m in part["mods"])


# -- posterior concentration ---------------------------------------------------

LOBBY = Rect(-2.0, -2.0, 2.0, 2.0)
HALL = Rect(2.0, -1.0, 12.0, 1.0)
KITCHEN_GT = Rect(12.0, -2.0, 16.0, 2.0)
KITCHEN_CENTER = np.array([14.0, 0.0])


def gt_region_name(x):
    if x <= 2.0:
        return "lobby"
    if x <= 12.0:
        return "hallway"
    return "kitchen"


def kitchen_mass(belief, radius=3.0):
    w = belief.weights()
    mass = 0.0
    for wi, p in zip(w, belief.particles):
        for r in p.regions.values():
            if r.rtype != "kitchen":
                continue
            if np.linalg.norm(np.asarray(r.extent_center()) - KITCHEN_CENTER) \
                    <= radius:
                mass += float(wi)
                break
    return mass


@pytest.mark.slow
def test_posterior_concentrates_after_hallway_observation():
    ann = [AnnotationObservation("kitchen", "down", "hallway", step=1)]
    wins = 0
    n_seeds = 100
    for seed in range(n_seeds):
        b = Belief.initial((0.0, 0.0, 0.0), "lobby", 20)
        x_prev = 0.0
        mass_before = None
        for t in range(1, 23):
            x = 0.5 * t
            z = AppearanceObservation(gt_region_name(x),
                                      transition=(gt_region_name(x)
                                                  != gt_region_name(x_prev)),
                                      pose=(x, 0.0, 0.0))
            step(b, ((0.5, 0.0, 0.0), COV), z, ann if t == 1 else None,
                 seed=seed, config=CONFIG, relations=RELATIONS)
            if t == 4:
                mass_before = kitchen_mass(b)
            x_prev = x
        if kitchen_mass(b) > mass_before:
            wins += 1
    assert wins >= 80
