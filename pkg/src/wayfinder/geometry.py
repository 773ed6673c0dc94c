"""Planar geometry helpers: SE(2) poses, axis-aligned rectangles, segments."""

from __future__ import annotations

import math

import numpy as np


def wrap_angle(a):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    return np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi


def se2_compose(p, d):
    """Compose pose p (x, y, theta) with a relative displacement d in p's frame."""
    x, y, th = p
    dx, dy, dth = d
    c, s = math.cos(th), math.sin(th)
    return (
        x + c * dx - s * dy,
        y + s * dx + c * dy,
        float(wrap_angle(th + dth)),
    )


def se2_between(a, b):
    """Relative displacement taking pose a to pose b, expressed in a's frame."""
    ax, ay, ath = a
    bx, by, bth = b
    c, s = math.cos(ath), math.sin(ath)
    dx, dy = bx - ax, by - ay
    return (c * dx + s * dy, -s * dx + c * dy, float(wrap_angle(bth - ath)))


def rot2(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


class Rect:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    __slots__ = ("x0", "y0", "x1", "y1")

    def __init__(self, x0, y0, x1, y1):
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"degenerate rectangle ({x0},{y0})..({x1},{y1})")
        self.x0, self.y0, self.x1, self.y1 = float(x0), float(y0), float(x1), float(y1)

    @property
    def center(self):
        return np.array([(self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0])

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def circumradius(self):
        return math.hypot(self.width, self.height) / 2.0

    def contains(self, p, tol=1e-9):
        x, y = float(p[0]), float(p[1])
        return (self.x0 - tol <= x <= self.x1 + tol) and (self.y0 - tol <= y <= self.y1 + tol)

    def interior_overlaps(self, other: "Rect", tol=1e-9) -> bool:
        return (
            self.x0 < other.x1 - tol
            and other.x0 < self.x1 - tol
            and self.y0 < other.y1 - tol
            and other.y0 < self.y1 - tol
        )

    def clamp(self, p):
        """Closest point of the rectangle to p."""
        return np.array(
            [min(max(float(p[0]), self.x0), self.x1), min(max(float(p[1]), self.y0), self.y1)]
        )

    def distance_to(self, p):
        return float(np.linalg.norm(np.asarray(p, dtype=float) - self.clamp(p)))

    def principal_axis(self):
        """Unit vector along the longer side (x-axis wins ties)."""
        if self.height > self.width:
            return np.array([0.0, 1.0])
        return np.array([1.0, 0.0])

    def as_list(self):
        return [self.x0, self.y0, self.x1, self.y1]

    def __repr__(self):
        return f"Rect({self.x0}, {self.y0}, {self.x1}, {self.y1})"


def segment_crosses_boundary(a, b, rect: Rect):
    """True when segment a->b leaves or enters rect (endpoint containment differs)."""
    return rect.contains(a) != rect.contains(b)


def point_segment_distance(p, s0, s1):
    p = np.asarray(p, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    d = s1 - s0
    L2 = float(d @ d)
    if L2 == 0.0:
        return float(np.linalg.norm(p - s0))
    t = min(1.0, max(0.0, float((p - s0) @ d) / L2))
    return float(np.linalg.norm(p - (s0 + t * d)))


def polyline_length(points) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def cumulative_turn(points) -> float:
    """Sum of absolute heading changes along a polyline."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return 0.0
    seg = np.diff(pts, axis=0)
    keep = np.linalg.norm(seg, axis=1) > 1e-12
    seg = seg[keep]
    if len(seg) < 2:
        return 0.0
    headings = np.arctan2(seg[:, 1], seg[:, 0])
    return float(np.sum(np.abs(wrap_angle(np.diff(headings)))))
