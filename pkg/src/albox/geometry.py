"""Oriented rectangles, convex polygon clipping, and rotated IoU.

All operations are pure functions on immutable values. Intersection areas
are computed exactly (up to float64) by Sutherland-Hodgman half-plane
clipping followed by the shoelace formula; no rasterization, no torch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidBoxError

HALF_PI = math.pi / 2.0

# On-edge vertex classification during clipping. Chosen for float64
# robustness at pixel scales up to ~2e4.
EDGE_TOL = 1e-9

# Intersection areas below this are shoelace sign noise; snap to zero.
AREA_SNAP = 1e-12


@dataclass(frozen=True)
class RotatedBox:
    """Oriented rectangle: center, side lengths, CCW rotation in radians.

    The canonical angle range is [-pi/2, pi/2). The raw constructor
    rejects out-of-range angles; use :meth:`create` to normalize arbitrary
    input by quarter-turn shifts (each shift swaps w and h).
    """

    cx: float
    cy: float
    w: float
    h: float
    angle: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h", "angle"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise InvalidBoxError(f"box field {name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.w <= 0 or self.h <= 0:
            raise InvalidBoxError(f"box sides must be positive, got w={self.w}, h={self.h}")
        if not (-HALF_PI <= self.angle < HALF_PI):
            raise InvalidBoxError(
                f"angle {self.angle} outside canonical range [-pi/2, pi/2)"
            )

    @staticmethod
    def create(cx: float, cy: float, w: float, h: float, angle: float) -> "RotatedBox":
        """Build a box, normalizing the angle into [-pi/2, pi/2).

        A rectangle is invariant under half-turn rotation, and a quarter
        turn is absorbed by swapping w and h, so every input has a
        representative in the canonical range.
        """
        if not (isinstance(angle, (int, float)) and math.isfinite(angle)):
            raise InvalidBoxError(f"angle must be finite, got {angle!r}")
        a = math.fmod(float(angle), math.pi)  # rectangles repeat every pi
        if a < -HALF_PI:
            a += math.pi
        if a >= HALF_PI:  # quarter-turn shift swaps the sides
            a -= HALF_PI
            w, h = h, w
        return RotatedBox(float(cx), float(cy), float(w), float(h), a)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class ConvexPolygon:
    """Counterclockwise vertex loop of a convex polygon."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ValueError(f"polygon needs >= 3 vertices, got {len(self.vertices)}")

    @property
    def area(self) -> float:
        return _shoelace(self.vertices)


def _shoelace(vertices) -> float:
    """Signed area via the shoelace formula (positive for CCW loops)."""
    total = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return 0.5 * total


def box_to_polygon(box: RotatedBox) -> ConvexPolygon:
    """Corners of the box rotated about its center, in CCW order."""
    c, s = math.cos(box.angle), math.sin(box.angle)
    hw, hh = 0.5 * box.w, 0.5 * box.h
    corners = []
    for dx, dy in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)):
        corners.append((box.cx + dx * c - dy * s, box.cy + dx * s + dy * c))
    return ConvexPolygon(tuple(corners))


def _clip_halfplane(vertices, px, py, qx, qy):
    """Keep the part of a CCW polygon on the left of directed edge p->q."""
    ex, ey = qx - px, qy - py
    out = []
    n = len(vertices)
    for i in range(n):
        cx, cy = vertices[i]
        bx, by = vertices[i - 1]
        cur_side = ex * (cy - py) - ey * (cx - px)
        prev_side = ex * (by - py) - ey * (bx - px)
        cur_in = cur_side >= -EDGE_TOL
        prev_in = prev_side >= -EDGE_TOL
        if cur_in != prev_in:
            # Edge crosses the clip line; prev_side != cur_side here.
            t = prev_side / (prev_side - cur_side)
            out.append((bx + t * (cx - bx), by + t * (cy - by)))
        if cur_in:
            out.append((cx, cy))
    return out


def intersection_area(a: ConvexPolygon, b: ConvexPolygon) -> float:
    """Area of the intersection of two convex polygons, in squared pixels."""
    vertices = list(a.vertices)
    clip = b.vertices
    n = len(clip)
    for i in range(n):
        if not vertices:
            return 0.0
        px, py = clip[i]
        qx, qy = clip[(i + 1) % n]
        vertices = _clip_halfplane(vertices, px, py, qx, qy)
    if len(vertices) < 3:
        return 0.0
    area = abs(_shoelace(vertices))
    return 0.0 if area < AREA_SNAP else area


def rotated_iou(a: RotatedBox, b: RotatedBox) -> float:
    """Intersection over union of two oriented rectangles, in [0, 1].

    The operand order is canonicalized before clipping so that the result
    is exactly symmetric in its arguments.
    """
    first, second = a, b
    if (b.cx, b.cy, b.w, b.h, b.angle) < (a.cx, a.cy, a.w, a.h, a.angle):
        first, second = b, a
    inter = intersection_area(box_to_polygon(first), box_to_polygon(second))
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union
