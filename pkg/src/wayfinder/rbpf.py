"""Rao-Blackwellized particle filter over semantic-map hypotheses.

Each particle proposes graph modifications from language annotations and
region-appearance observations, conditions its pose Gaussian, and is then
reweighted by the likelihood of those observations under the map it had
before the proposal. Resampling is systematic and triggered by effective
sample size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from wayfinder.config import FilterConfig
from wayfinder.geometry import Rect
from wayfinder.relations import DPConfig, Geom, RelationLibrary, dp_ground
from wayfinder.semmap import (HYPOTHESIZED, VISITED, Belief, Edge, Particle,
                              Region, add_node_with_odometry,
                              condition_pose_graph)

_ROBOT_RADIUS = 0.3        # disc stand-in for the robot as a relation anchor
_HYP_RADIUS = 1.5
_SELF_RELATION = "near"    # placement relation for landmark-free annotations


class AllZeroWeightError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationObservation:
    """A language-derived environment fact treated as an observation: the
    named figure type, optionally related to a named landmark type."""

    figure: str
    relation: Optional[str] = None
    landmark: Optional[str] = None
    step: int = 0

    def __post_init__(self):
        if (self.relation is None) != (self.landmark is None):
            raise ValueError("relation present iff landmark present")


@dataclass(frozen=True)
class AppearanceObservation:
    """Perceived label of the robot's current region, plus whether this step
    crossed into a different region. Labels come from the perceptual type
    inventory."""

    observed_type: str
    transition: bool = False
    pose: tuple = (0.0, 0.0, 0.0)


@dataclass
class GraphModification:
    kind: str      # add-hypothesized-region | add-relation-edge |
    #                assign-node-to-region | new-visited-region |
    #                merge-hypothesized-into-visited | merge-visited-regions |
    #                resample-constraint
    payload: dict = field(default_factory=dict)

    def to_json(self):
        return {"kind": self.kind, **self.payload}


# -- rng streams --------------------------------------------------------------

def particle_rng(master_seed: int, particle_id: int, step: int):
    """Independent stream per (seed, particle, step); particle-list order can
    never influence the draws."""
    return np.random.default_rng(
        np.random.SeedSequence((master_seed & 0xFFFFFFFF, particle_id + 1, step)))


def belief_rng(master_seed: int, step: int):
    """Stream for belief-level barriers (resampling); id slot 0 is reserved."""
    return np.random.default_rng(
        np.random.SeedSequence((master_seed & 0xFFFFFFFF, 0, step)))


# -- shared helpers ------------------------------------------------------------

def _dp(config: FilterConfig) -> DPConfig:
    return DPConfig(alpha=config.dp_alpha, base_density=config.dp_base)


def _mod(particle: Particle, kind: str, **payload):
    particle.mods_this_step.append(GraphModification(kind, payload))


def _extent_rect(region) -> Rect:
    """Rectangular stand-in for a region's extent; hypothesized discs use
    their bounding square."""
    if region.rect is not None:
        return region.rect
    cx, cy = (float(c) for c in region.extent_center())
    r = max(float(region.radius), 1e-6)
    return Rect(cx - r, cy - r, cx + r, cy + r)


def _region_mass(density, region) -> float:
    return density.mass_in_rect(_extent_rect(region))


_MIN_ASSOC_SPAN = 1.5


def _assoc_rect(region) -> Rect:
    """Extent used when scoring a region against a placement density. A
    just-entered region's observed extent is a censored measurement of its
    footprint, so spans are widened to a minimum before integrating; raw
    slivers would make every young region look implausible and defer
    association until the extent happens to grow."""
    r = _extent_rect(region)
    gx = max(0.0, _MIN_ASSOC_SPAN - r.width) / 2.0
    gy = max(0.0, _MIN_ASSOC_SPAN - r.height) / 2.0
    if gx == 0.0 and gy == 0.0:
        return r
    return Rect(r.x0 - gx, r.y0 - gy, r.x1 + gx, r.y1 + gy)


def _robot_geom(pose) -> Geom:
    return Geom((float(pose[0]), float(pose[1])), _ROBOT_RADIUS)


def _sorted_regions(particle: Particle):
    return sorted(particle.regions.values(), key=lambda r: r.id)


# -- proposal: language ---------------------------------------------------------

def apply_language_mods(particle: Particle, annotations, rng,
                        config: FilterConfig = FilterConfig(),
                        relations: Optional[RelationLibrary] = None) -> Particle:
    """Ground each annotation against the particle's regions with a
    Dirichlet-process prior; NEW draws become hypothesized regions, and a
    relation edge ties the landmark (or the current region, for
    landmark-free annotations) to the figure."""
    if not annotations:
        return particle
    relations = relations if relations is not None else RelationLibrary.default()
    dp = _dp(config)
    pose = particle.pose
    for ann in annotations:
        lm_region = None
        if ann.landmark is not None:
            res = dp_ground(_typed_candidates(particle, ann.landmark, None),
                            dp, rng)
            if res.kind == "existing":
                lm_region = particle.regions[res.region_id]
            else:
                near = relations[_SELF_RELATION].constraint(
                    _robot_geom(pose), pose)
                lm_region = _add_hypothesized(particle, ann.landmark, near,
                                              rng, config)
        if lm_region is not None:
            relation = ann.relation
            density = relations[relation].constraint(lm_region.geom(), pose)
            anchor_id = lm_region.id
        else:
            relation = _SELF_RELATION
            density = relations[relation].constraint(_robot_geom(pose), pose)
            anchor_id = particle.current_region.id
        res = dp_ground(_typed_candidates(particle, ann.figure, density),
                        dp, rng)
        if res.kind == "existing":
            fig_region = particle.regions[res.region_id]
        else:
            fig_region = _add_hypothesized(particle, ann.figure, density,
                                           rng, config)
        if fig_region.id != anchor_id:
            edge = Edge(id=len(particle.edges), kind="language-relation",
                        a=anchor_id, b=fig_region.id, relation=relation,
                        density=density,
                        loglik=float(density.logpdf(fig_region.extent_center())),
                        pose=tuple(float(x) for x in pose))
            particle.edges.append(edge)
            _mod(particle, "add-relation-edge", relation=relation,
                 landmark=anchor_id, figure=fig_region.id)
    return particle


def _typed_candidates(particle: Particle, rtype: str, density):
    """DP candidates for grounding a named type: likelihood is the density
    mass over each extent, or the plain existence prior when the grounding
    carries no metric constraint."""
    cands = []
    for r in _sorted_regions(particle):
        if r.rtype != rtype:
            continue
        if density is not None:
            lik = _region_mass(density, r)
        else:
            lik = 1.0 if r.status == VISITED else r.validity
        cands.append((r.id, lik))
    return cands


def _add_hypothesized(particle: Particle, rtype: str, density, rng,
                      config: FilterConfig) -> Region:
    center = np.asarray(density.sample(rng), float)
    region = Region(id=particle.alloc_region_id(), rtype=rtype,
                    status=HYPOTHESIZED, center=center, radius=_HYP_RADIUS,
                    validity=config.validity_prior)
    particle.regions[region.id] = region
    _mod(particle, "add-hypothesized-region", region=region.id, type=rtype,
         center=[float(center[0]), float(center[1])])
    return region


# -- proposal: observations ----------------------------------------------------

def apply_observation_mods(particle: Particle, z: Optional[AppearanceObservation],
                           rng, config: FilterConfig = FilterConfig(),
                           relations: Optional[RelationLibrary] = None) -> Particle:
    """Fold a region-appearance observation into the topology: grow the
    current region, or handle a transition by revisit matching, region
    creation, and hypothesis merging."""
    if z is None:
        return particle
    relations = relations if relations is not None else RelationLibrary.default()
    node = particle.nodes[-1]
    pose = particle.means[-1]
    if not z.transition:
        cur = particle.current_region
        cur.observe_label(z.observed_type)
        particle.update_region_extent(cur.id)
        cur = _absorb_drift_split(particle, cur, pose, rng, config, relations)
        _resample_constraints_from(particle, cur, pose, rng, relations,
                                   threshold=config.constraint_resample_nats)
        # association is re-drawn as the observed extent grows, so a
        # hypothesis the first draw kept separate can still merge later
        _maybe_merge_hypothesis(particle, cur, pose, rng, config, relations)
        return particle

    prev = particle.regions[node.region_id]
    # the motion extension pre-assigned the node to the exited region
    prev.node_ids.remove(node.id)
    target = _match_visited(particle, pose, exclude=prev.id, config=config)
    if target is not None:
        node.region_id = target.id
        target.node_ids.append(node.id)
        target.observe_label(z.observed_type)
        particle.update_region_extent(target.id)
        particle.update_region_extent(prev.id)
        _mod(particle, "assign-node-to-region", node=node.id, region=target.id)
        target = _absorb_drift_split(particle, target, pose, rng, config,
                                     relations)
        _resample_constraints_from(particle, target, pose, rng, relations,
                                   threshold=config.constraint_resample_nats)
        _maybe_merge_hypothesis(particle, target, pose, rng, config, relations)
        return particle

    region = Region(id=particle.alloc_region_id(), rtype=z.observed_type,
                    status=VISITED, node_ids=[node.id])
    particle.regions[region.id] = region
    node.region_id = region.id
    region.observe_label(z.observed_type)
    particle.update_region_extent(region.id)
    particle.update_region_extent(prev.id)
    _mod(particle, "new-visited-region", node=node.id, region=region.id,
         type=region.rtype)
    region = _absorb_drift_split(particle, region, pose, rng, config, relations)
    _maybe_merge_hypothesis(particle, region, pose, rng, config, relations)
    return particle


def _match_visited(particle: Particle, pose, exclude: int,
                   config: FilterConfig) -> Optional[Region]:
    """Nearest visited region within the revisit radius. The region just
    exited is excluded: its extent always touches the boundary being
    crossed."""
    best = None
    best_d = None
    for r in sorted(particle.visited_regions(), key=lambda r: r.id):
        if r.id == exclude or r.rect is None:
            continue
        d = r.rect.distance_to(pose[:2])
        if d <= config.revisit_radius_m and (best_d is None or d < best_d):
            best, best_d = r, d
    return best


def _node_bbox(particle: Particle, region: Region):
    pts = np.array([particle.means[n][:2] for n in region.node_ids])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return Rect(float(lo[0]), float(lo[1]), float(hi[0]) + 1e-6,
                float(hi[1]) + 1e-6)


def _contained_frac(particle: Particle, inner: Region, outer_box: Rect) -> float:
    pts = [particle.means[n][:2] for n in inner.node_ids]
    hits = sum(1 for p in pts if outer_box.contains(p, tol=0.3))
    return hits / len(pts)


def _absorb_drift_split(particle: Particle, region: Region, pose, rng,
                        config: FilterConfig,
                        relations: RelationLibrary) -> Region:
    """Pose drift on a revisit can re-enter a region past the revisit radius,
    splitting one physical place across two visited map regions. When most of
    one same-typed region's poses lie inside the other's span they describe
    the same place, and the younger is folded into the elder."""
    if region.rect is None or not region.node_ids:
        return region
    while True:
        hit = None
        box = _node_bbox(particle, region)
        for other in sorted(particle.visited_regions(), key=lambda r: r.id):
            if (other.id == region.id or other.rtype != region.rtype
                    or other.pinned or region.pinned or not other.node_ids):
                continue
            obox = _node_bbox(particle, other)
            if _contained_frac(particle, region, obox) >= 0.5 \
                    or _contained_frac(particle, other, box) >= 0.5:
                hit = other
                break
        if hit is None:
            return region
        keep, gone = (region, hit) if region.id < hit.id else (hit, region)
        for nid in gone.node_ids:
            particle.nodes[nid].region_id = keep.id
            keep.node_ids.append(nid)
        gone.node_ids.clear()
        for label, count in gone.label_counts.items():
            keep.label_counts[label] = keep.label_counts.get(label, 0) + count
        keep.rtype = min(keep.label_counts,
                         key=lambda k: (-keep.label_counts[k], k))
        for e in particle.edges:
            if e.kind != "language-relation":
                continue
            if e.a == gone.id:
                e.a = keep.id
            if e.b == gone.id:
                e.b = keep.id
        particle.edges = [e for e in particle.edges
                          if not (e.kind == "language-relation" and e.a == e.b)]
        del particle.regions[gone.id]
        particle.update_region_extent(keep.id)
        _mod(particle, "merge-visited-regions", kept=keep.id, absorbed=gone.id)
        _reassociate_anchored(particle, keep, pose, rng, config, relations)
        region = keep


def _maybe_merge_hypothesis(particle: Particle, region: Region, pose, rng,
                            config: FilterConfig, relations: RelationLibrary):
    """DP draw deciding whether the newly visited region realizes one of the
    same-typed hypotheses. Merging removes the hypothesis, rewires its edges
    to the visited region, and re-draws constraints to figures that are
    still unobserved."""
    cands = []
    for h in _sorted_regions(particle):
        if not h.is_hypothesized or h.rtype != region.rtype:
            continue
        cands.append((h.id, _merge_likelihood(particle, h, region, relations)))
    if not cands:
        return
    res = dp_ground(cands, _dp(config), rng)
    if res.kind != "existing":
        return
    _merge_hyp_into(particle, res.region_id, region, pose, rng, relations)


def _merge_hyp_into(particle: Particle, hyp_id: int, region: Region, pose, rng,
                    relations: RelationLibrary):
    hyp = particle.regions.pop(hyp_id)
    for e in particle.edges:
        if e.kind != "language-relation":
            continue
        if e.a == hyp.id:
            e.a = region.id
        if e.b == hyp.id:
            e.b = region.id
    _mod(particle, "merge-hypothesized-into-visited", hypothesis=hyp.id,
         region=region.id)
    # realized geometry supersedes the guess it was sampled from
    _resample_constraints_from(particle, region, pose, rng, relations,
                               force=True)


def _reassociate_anchored(particle: Particle, landmark: Region, pose, rng,
                          config: FilterConfig, relations: RelationLibrary):
    """Folding a drift split moves every placement density anchored at the
    kept region, so the association draw for each figure still hypothesized
    off it is repeated against the visited regions of its type. Without this
    a hypothesis whose landmark was fragmented at draw time stays unmergeable
    even after the map heals."""
    for e in list(particle.language_edges()):
        if e.a != landmark.id:
            continue
        hyp = particle.regions.get(e.b)
        if hyp is None or not hyp.is_hypothesized:
            continue
        cands = []
        for r in _sorted_regions(particle):
            if r.status != VISITED or r.rtype != hyp.rtype or r.rect is None:
                continue
            cands.append((r.id, _merge_likelihood(particle, hyp, r, relations)))
        if not cands:
            continue
        res = dp_ground(cands, _dp(config), rng)
        if res.kind == "existing":
            _merge_hyp_into(particle, hyp.id, particle.regions[res.region_id],
                            pose, rng, relations)


def _merge_likelihood(particle: Particle, hyp: Region, region: Region,
                      relations: Optional[RelationLibrary] = None) -> float:
    """Mass of the hypothesis's placement density over the observed extent.
    The density is rebuilt from the landmark's current geometry, since the
    stored draw goes stale as extents grow. Odometry drift can leave the
    landmark fragmented into several visited pieces until the map heals, and
    the utterance does not say which piece it meant, so every visited region
    of the landmark's type is tried as the anchor and the best support wins.
    Hypotheses without a surviving edge fall back to a Gaussian kernel on
    the distance from the guess to the observed extent (centers would
    under-match long regions such as hallways)."""
    for e in particle.language_edges():
        if e.b != hyp.id:
            continue
        lm = particle.regions.get(e.a)
        if (lm is not None and e.relation is not None and e.pose is not None
                and relations is not None):
            rel = relations[e.relation]
            anchors = [lm] + [r for r in _sorted_regions(particle)
                              if r.status == VISITED and r.id != lm.id
                              and r.rtype == lm.rtype and r.rect is not None]
            return max(rel.constraint(a.geom(), e.pose)
                       .mass_in_rect(_assoc_rect(region)) for a in anchors)
        if e.density is not None:
            return e.density.mass_in_rect(_assoc_rect(region))
    d = _extent_rect(region).distance_to(hyp.extent_center())
    return math.exp(-0.5 * (d / max(hyp.radius, 1e-6)) ** 2)


def _resample_constraints_from(particle: Particle, landmark: Region, pose, rng,
                               relations: RelationLibrary, force: bool = False,
                               threshold: float = math.inf):
    """Re-draw hypothesized figure placements anchored at this landmark when
    the constraint's log-likelihood has drifted past the threshold (its
    extent changed), or unconditionally after a merge."""
    for e in particle.edges:
        if e.kind != "language-relation" or e.a != landmark.id:
            continue
        fig = particle.regions.get(e.b)
        if fig is None or not fig.is_hypothesized or e.relation is None:
            continue
        # the relation frame stays anchored at the utterance-time pose
        anchor_pose = e.pose if e.pose is not None else pose
        density = relations[e.relation].constraint(landmark.geom(), anchor_pose)
        if not force:
            ref = e.loglik if e.loglik is not None else 0.0
            if abs(float(density.logpdf(fig.extent_center())) - ref) <= threshold:
                continue
        center = np.asarray(density.sample(rng), float)
        fig.center = center
        e.density = density
        e.loglik = float(density.logpdf(center))
        _mod(particle, "resample-constraint", edge=e.id, figure=fig.id,
             relation=e.relation,
             center=[float(center[0]), float(center[1])])


# -- proposal ------------------------------------------------------------------

def propose(particle: Particle, u_t, annotations, z, rng,
            config: FilterConfig = FilterConfig(),
            relations: Optional[RelationLibrary] = None) -> Particle:
    """One particle's proposal: motion extension, then language-driven and
    observation-driven graph modifications, in that order.

    u_t is an (se2 displacement, covariance) pair, or None to stay put.
    The pre-proposal region set is stashed on the particle so reweighting
    can score the observations against the map that predicted them.
    """
    relations = relations if relations is not None else RelationLibrary.default()
    particle.mods_this_step = []
    particle.prior_regions = _snapshot_regions(particle)
    if u_t is not None:
        mean, cov = u_t
        add_node_with_odometry(particle, mean, cov,
                               step=particle.nodes[-1].step + 1)
    particle.prior_pose = particle.pose
    apply_language_mods(particle, annotations, rng, config, relations)
    apply_observation_mods(particle, z, rng, config, relations)
    return particle


@dataclass(frozen=True)
class _RegionPrior:
    """Frozen view of a region used for likelihoods against the previous map."""

    id: int
    rtype: str
    status: str
    rect: Optional[Rect]
    center: tuple
    radius: float
    validity: float

    def extent_center(self):
        if self.rect is not None:
            return self.rect.center
        return np.asarray(self.center, float)

    def geom(self) -> Geom:
        if self.rect is not None:
            return Geom(tuple(self.rect.center), self.rect.circumradius,
                        self.rect)
        return Geom(self.center, self.radius)


def _snapshot_regions(particle: Particle):
    out = []
    for r in _sorted_regions(particle):
        out.append(_RegionPrior(
            r.id, r.rtype, r.status,
            None if r.rect is None else Rect(*r.rect.as_list()),
            tuple(float(c) for c in r.extent_center()),
            float(r.extent_radius()), float(r.validity)))
    return out


# -- weighting -----------------------------------------------------------------

def reweight(particle: Particle, annotations, z,
             config: FilterConfig = FilterConfig(),
             relations: Optional[RelationLibrary] = None) -> float:
    """Fold the annotation and appearance likelihoods into the log-weight,
    both evaluated against the pre-proposal region set. Non-finite
    likelihoods eliminate the particle."""
    relations = relations if relations is not None else RelationLibrary.default()
    prior = getattr(particle, "prior_regions", None)
    if prior is None:
        prior = _snapshot_regions(particle)
    pose = getattr(particle, "prior_pose", particle.pose)
    log_l = 0.0
    for ann in (annotations or ()):
        log_l += math.log(_annotation_mass(prior, ann, pose, config, relations))
    if z is not None:
        log_l += math.log(_appearance_product(prior, config))
    lw = particle.log_weight + log_l
    particle.log_weight = lw if math.isfinite(lw) else float("-inf")
    return particle.log_weight


def _annotation_mass(regions, ann: AnnotationObservation, pose,
                     config: FilterConfig, relations: RelationLibrary) -> float:
    """Total Dirichlet-process mass of the annotation's figure grounding:
    existing candidates plus the new-region mass. A map already holding a
    conforming figure (or figure-landmark pair) scores higher than one
    without, while the new-region mass keeps every particle viable."""
    total = config.dp_alpha * config.dp_base
    figs = [r for r in regions if r.rtype == ann.figure]
    if ann.relation is None:
        for f in figs:
            total += 1.0 if f.status == VISITED else f.validity
        return total
    for lm in regions:
        if lm.rtype != ann.landmark:
            continue
        density = relations[ann.relation].constraint(lm.geom(), pose)
        for f in figs:
            total += _region_mass(density, f)
    return total


def appearance_likelihood(particle: Particle,
                          z: Optional[AppearanceObservation],
                          config: FilterConfig = FilterConfig()) -> float:
    """Likelihood of the appearance observation given the particle's
    unobserved regions: each hypothesis contributes its validity
    marginal, with the conditionals flipped when the hypothesis sits on
    traversed space of a different type. Empty product is 1."""
    if z is None:
        return 1.0
    return _appearance_product(_sorted_regions(particle), config)


def _appearance_product(regions, config: FilterConfig) -> float:
    visited = [(r.rect, r.rtype) for r in regions
               if r.status == VISITED and r.rect is not None]
    out = 1.0
    for h in regions:
        if h.status != HYPOTHESIZED:
            continue
        center = h.extent_center()
        conflict = any(rect.contains(center) and t != h.rtype
                       for rect, t in visited)
        out *= _validity_factor(h.validity, config.label_accuracy, conflict)
    return out


def _validity_factor(validity: float, accuracy: float, conflict: bool) -> float:
    """Marginal over the latent validity bit of one hypothesized region."""
    p_if_valid = (1.0 - accuracy) if conflict else accuracy
    p_if_invalid = accuracy if conflict else (1.0 - accuracy)
    return p_if_valid * validity + p_if_invalid * (1.0 - validity)


# -- resampling ----------------------------------------------------------------

def resample_if_needed(belief: Belief, rng,
                       config: FilterConfig = FilterConfig()) -> Belief:
    """Systematic resampling when the effective sample size drops below the
    configured fraction of N. Survivors are copies with fresh particle ids
    and uniform weights. Selection iterates particles in id order so the
    outcome is independent of list order."""
    lw = [p.log_weight for p in belief.particles]
    if not any(math.isfinite(x) for x in lw):
        raise AllZeroWeightError("every particle has zero weight")
    w = belief.weights()
    n = len(belief.particles)
    ess = 1.0 / float(np.sum(w ** 2))
    if ess >= config.ess_threshold_frac * n:
        return belief
    order = sorted(range(n), key=lambda i: belief.particles[i].id)
    cum = np.cumsum(w[order])
    cum[-1] = 1.0
    positions = (rng.random() + np.arange(n)) / n
    survivors = []
    j = 0
    for u in positions:
        while cum[j] < u:
            j += 1
        survivors.append(order[j])
    fresh = []
    for k, idx in enumerate(survivors):
        q = belief.particles[idx].copy(new_id=belief.next_particle_id + k)
        q.log_weight = -math.log(n)
        fresh.append(q)
    belief.next_particle_id += n
    belief.particles = fresh
    return belief


# -- one filter cycle ----------------------------------------------------------

def step(belief: Belief, u_t, z, annotations, seed: int,
         config: FilterConfig = FilterConfig(),
         relations: Optional[RelationLibrary] = None,
         trace: Optional[list] = None) -> Belief:
    """Advance the belief one cycle: per-particle propose, condition, and
    reweight, then belief-wide normalization and resampling. Deterministic
    given the master seed regardless of particle order."""
    relations = relations if relations is not None else RelationLibrary.default()
    t = belief.step + 1
    for p in belief.particles:
        rng = particle_rng(seed, p.id, t)
        propose(p, u_t, annotations, z, rng, config, relations)
        condition_pose_graph(p, config)
        reweight(p, annotations, z, config, relations)
    belief.step = t
    if not any(math.isfinite(p.log_weight) for p in belief.particles):
        raise AllZeroWeightError("every particle has zero weight")
    belief.normalize(config.weight_floor)
    resample_if_needed(belief, belief_rng(seed, t), config)
    if trace is not None:
        trace.append(trace_record(belief))
    return belief


# -- trace log -----------------------------------------------------------------

def trace_record(belief: Belief) -> dict:
    """JSON-ready summary of one filter step: per-particle weight,
    modification list, and region summary."""
    parts = []
    for p in belief.particles:
        parts.append({
            "particle": p.id,
            "log_weight": float(p.log_weight),
            "weight": float(math.exp(p.log_weight)),
            "mods": [m.to_json() for m in p.mods_this_step],
            "regions": [_region_json(r) for r in _sorted_regions(p)],
        })
    return {"step": belief.step, "particles": parts}


def _region_json(r) -> dict:
    return {"id": r.id, "type": r.rtype, "status": r.status,
            "rect": None if r.rect is None else r.rect.as_list(),
            "center": [float(c) for c in r.extent_center()],
            "radius": float(r.extent_radius())}


def write_trace(path, records):
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
