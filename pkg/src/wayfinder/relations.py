"""Spatial-relation likelihood models and the Dirichlet-process grounding rule.

Each relation defines a constraint density over figure-region centers: a 2D
Gaussian expressed in a relation frame derived from the landmark extent and
the robot pose, plus optional logistic score terms.  The same density is
used to sample hypothesized-region centers and to score existing regions;
probability mass inside a candidate region's extent gives a dimensionless
likelihood comparable with the DP base measure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from wayfinder.assets import load_json
from wayfinder.geometry import Rect, rot2, wrap_angle


class DegenerateGeometryError(ValueError):
    pass


class AllZeroMassError(ValueError):
    pass


@dataclass(frozen=True)
class Geom:
    """Minimal region geometry: center, circumradius, optional rectangle."""

    center: tuple
    radius: float
    rect: Optional[Rect] = None

    @property
    def length_width_axis(self):
        if self.rect is not None:
            axis = self.rect.principal_axis()
            if self.rect.width >= self.rect.height:
                return self.rect.width, self.rect.height, axis
            return self.rect.height, self.rect.width, axis
        return 2 * self.radius, 2 * self.radius, np.array([1.0, 0.0])


def geom_of(obj) -> Geom:
    if isinstance(obj, Geom):
        return obj
    if isinstance(obj, Rect):
        return Geom(tuple(obj.center), obj.circumradius, obj)
    rect = getattr(obj, "rect", None)
    if rect is not None:
        return Geom(tuple(rect.center), rect.circumradius, rect)
    center = getattr(obj, "center", None)
    radius = getattr(obj, "radius", None)
    if center is not None and radius is not None:
        return Geom(tuple(center), float(radius), None)
    raise TypeError(f"cannot extract geometry from {obj!r}")


def _check(geom: Geom, what):
    if geom.radius <= 0 or not np.all(np.isfinite(geom.center)):
        raise DegenerateGeometryError(f"{what} geometry is degenerate")


@dataclass
class ConstraintDensity:
    """Gaussian over figure centers: mean + axes (s along `axis`, l across)."""

    mean: np.ndarray         # world-frame 2-vector
    axis: np.ndarray         # unit vector of the s coordinate
    sigma_s: float
    sigma_l: float

    @property
    def cov(self):
        a = self.axis
        b = np.array([-a[1], a[0]])
        R = np.stack([a, b], axis=1)
        return R @ np.diag([self.sigma_s ** 2, self.sigma_l ** 2]) @ R.T

    def local(self, point):
        d = np.asarray(point, float) - self.mean
        b = np.array([-self.axis[1], self.axis[0]])
        return float(d @ self.axis), float(d @ b)

    def logpdf(self, point) -> float:
        s, l = self.local(point)
        return (-0.5 * (s / self.sigma_s) ** 2 - 0.5 * (l / self.sigma_l) ** 2
                - math.log(2 * math.pi * self.sigma_s * self.sigma_l))

    def sample(self, rng) -> np.ndarray:
        s = rng.normal(0.0, self.sigma_s)
        l = rng.normal(0.0, self.sigma_l)
        b = np.array([-self.axis[1], self.axis[0]])
        return self.mean + s * self.axis + l * b

    def mass_in_rect(self, rect: Rect) -> float:
        """Gaussian mass over the rectangle via axis-projection intervals.

        Exact for rectangles aligned with the density axes (the usual case in
        axis-aligned worlds); an upper bound otherwise.
        """
        corners = np.array([(rect.x0, rect.y0), (rect.x1, rect.y0),
                            (rect.x1, rect.y1), (rect.x0, rect.y1)], float)
        b = np.array([-self.axis[1], self.axis[0]])
        rel = corners - self.mean
        s_proj = rel @ self.axis
        l_proj = rel @ b

        def mass_1d(lo, hi, sigma):
            z = 1.0 / (sigma * math.sqrt(2))
            return 0.5 * (math.erf(hi * z) - math.erf(lo * z))

        return (mass_1d(s_proj.min(), s_proj.max(), self.sigma_s)
                * mass_1d(l_proj.min(), l_proj.max(), self.sigma_l))

    def to_json(self):
        return {"mean": [float(x) for x in self.mean],
                "axis": [float(x) for x in self.axis],
                "sigma_s": self.sigma_s, "sigma_l": self.sigma_l}

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["mean"], float), np.array(obj["axis"], float),
                   float(obj["sigma_s"]), float(obj["sigma_l"]))


def _logistic(x):
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@dataclass
class RelationModel:
    relation: str
    params: dict = field(default_factory=dict)

    def p(self, key, default):
        return float(self.params.get(key, default))

    # -- frame construction --------------------------------------------------

    def _frame(self, lm: Geom, robot_pose):
        """(mean, axis, sigma_s, sigma_l, aux) for this relation."""
        rx, ry, th = robot_pose
        rpos = np.array([rx, ry])
        lc = np.array(lm.center, float)
        L, W, p_axis = lm.length_width_axis
        h = np.array([math.cos(th), math.sin(th)])
        to_lm = lc - rpos
        nrm = np.linalg.norm(to_lm)
        direction = to_lm / nrm if nrm > 1e-9 else h

        def oriented_axis(away=True):
            a = np.array(p_axis, float)
            ref = to_lm if nrm > 0.3 else h
            if a @ ref < 0:
                a = -a
            return a if away else -a

        rel = self.relation
        if rel == "down" or rel == "up":
            a = oriented_axis(away=(rel == "down"))
            mu = lc + a * (self.p("along_frac", 0.55) * L + self.p("beyond", 1.0))
            return mu, a, self.p("sigma_s_frac", 0.25) * L + 0.1, \
                max(self.p("sigma_l_frac", 0.25) * W, 0.3)
        if rel in ("left", "right"):
            lat = np.array([-h[1], h[0]]) if rel == "left" else np.array([h[1], -h[0]])
            mu = rpos + lat * self.p("offset", 2.5) + h * self.p("ahead", 0.5)
            return mu, lat, self.p("sigma_s", 1.5), self.p("sigma_l", 2.0)
        if rel == "near":
            a = -direction
            mu = lc + a * (lm.radius + self.p("gap", 1.0))
            return mu, a, self.p("sigma_s", 1.5), max(lm.radius, 1.5)
        if rel == "far":
            a = -direction
            mu = lc + a * (lm.radius + self.p("gap", 8.0))
            return mu, a, self.p("sigma_s", 3.0), 3.0
        if rel == "past":
            mu = lc + h * (lm.radius + self.p("beyond", 1.5))
            return mu, h, self.p("sigma_s", 1.5), lm.radius + 1.0
        if rel == "before":
            mu = lc - h * (lm.radius + self.p("ahead_of", 1.0))
            return mu, -h, self.p("sigma_s", 1.0), lm.radius + 1.0
        if rel == "after":
            mu = lc + h * (lm.radius + self.p("beyond", 2.5))
            return mu, h, self.p("sigma_s", 2.0), lm.radius + 1.0
        if rel == "through":
            mu = lc + h * (lm.radius + self.p("beyond", 2.0))
            return mu, h, self.p("sigma_s", 1.5), max(min(W / 2, 1.0), 0.3)
        if rel == "across-from":
            mu = lc + direction * (lm.radius + self.p("beyond", 1.5))
            return mu, direction, self.p("sigma_s", 1.0), self.p("sigma_l", 1.5)
        if rel == "at-end-of":
            a = oriented_axis(away=True)
            mu = lc + a * (L / 2)
            return mu, a, max(L / 8, 0.5), max(W / 2, 0.5)
        # unknown relation: broad disc around the landmark
        return lc, direction, max(lm.radius, 2.0), max(lm.radius, 2.0)

    def constraint(self, landmark, robot_pose) -> ConstraintDensity:
        lm = geom_of(landmark)
        _check(lm, "landmark")
        mu, a, ss, sl = self._frame(lm, robot_pose)
        return ConstraintDensity(np.asarray(mu, float), np.asarray(a, float),
                                 float(ss), float(sl))

    # -- scoring -------------------------------------------------------------

    def score(self, figure, landmark, robot_pose) -> float:
        """Log-likelihood of the figure region under this relation."""
        fig, lm = geom_of(figure), geom_of(landmark)
        _check(fig, "figure")
        _check(lm, "landmark")
        dens = self.constraint(lm, robot_pose)
        base = dens.logpdf(fig.center)
        return base + self._extras(fig, lm, robot_pose)

    def _extras(self, fig: Geom, lm: Geom, robot_pose):
        rel = self.relation
        rx, ry, th = robot_pose
        rpos = np.array([rx, ry])
        h = np.array([math.cos(th), math.sin(th)])
        fc = np.array(fig.center, float)
        lc = np.array(lm.center, float)
        gap = max(0.0, float(np.linalg.norm(fc - lc)) - fig.radius - lm.radius)
        if rel == "near":
            return -gap / self.p("decay", 1.5)
        if rel == "far":
            return _logistic((gap - self.p("threshold", 5.0)) / 2.0)
        if rel in ("left", "right"):
            lat = np.array([-h[1], h[0]]) if rel == "left" else np.array([h[1], -h[0]])
            s = float((fc - rpos) @ lat)
            return _logistic(s / self.p("soft", 0.5))
        if rel in ("past", "after", "through"):
            s = float((fc - lc) @ h)
            return _logistic((s - lm.radius) / self.p("soft", 1.0))
        if rel == "before":
            s = float((fc - lc) @ h)
            return _logistic((-s - 0.5 * lm.radius) / self.p("soft", 1.0))
        return 0.0

    def sample_constraint(self, landmark, robot_pose, rng):
        """Draw a figure-center sample; returns (sample, density)."""
        dens = self.constraint(landmark, robot_pose)
        return dens.sample(rng), dens


class RelationLibrary:
    def __init__(self, models: dict):
        self.models = dict(models)

    def __getitem__(self, relation) -> RelationModel:
        if relation not in self.models:
            self.models[relation] = RelationModel(relation)
        return self.models[relation]

    def __contains__(self, relation):
        return True    # unknown relations fall back to a broad disc model

    @classmethod
    def from_json(cls, obj):
        return cls({name: RelationModel(name, params)
                    for name, params in obj.items()})

    @classmethod
    def default(cls) -> "RelationLibrary":
        return cls.from_json(load_json("relations.json"))


# -- Dirichlet-process grounding ---------------------------------------------

@dataclass(frozen=True)
class DPConfig:
    alpha: float = 1.0
    base_density: float = 0.05

    def __post_init__(self):
        if self.alpha <= 0 or self.base_density <= 0:
            raise ValueError("alpha and base density must be positive")


@dataclass(frozen=True)
class DPResult:
    kind: str                 # "existing" | "new"
    region_id: Optional[int]
    probs: tuple              # per-candidate probabilities, NEW last
    chosen_prob: float


def dp_probabilities(likelihoods, dp: DPConfig):
    """Normalized (existing..., NEW) probabilities."""
    ls = [float(x) for x in likelihoods]
    if any(l < 0 for l in ls):
        raise ValueError("likelihoods must be nonnegative")
    masses = ls + [dp.alpha * dp.base_density]
    total = sum(masses)
    if total <= 0 or not math.isfinite(total):
        raise AllZeroMassError("no probability mass in DP grounding")
    return [m / total for m in masses]


def dp_ground(candidates, dp: DPConfig, rng) -> DPResult:
    """candidates: sequence of (region_id, likelihood); samples existing|NEW."""
    ids = [rid for rid, _ in candidates]
    probs = dp_probabilities([l for _, l in candidates], dp)
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc or i == len(probs) - 1:
            if i < len(ids):
                return DPResult("existing", ids[i], tuple(probs), p)
            return DPResult("new", None, tuple(probs), p)
    raise AssertionError("unreachable")
