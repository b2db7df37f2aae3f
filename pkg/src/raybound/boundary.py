"""Incoming boundary data, including the two-level A/B source whose jump
drives every downstream discontinuity measurement.

The two-level source splits the boundary along ``gamma`` (two boundary
points for d=2, a planar circle on the sphere for d=3) into arcs A and B;
``A union gamma`` radiates intensity I into every incoming direction and B
radiates nothing.  Its discontinuity set is the full incoming fan over
each gamma point.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NotIncoming
from .geometry import _unit

# boundary points within this arc-length fraction of gamma count as gamma
ON_GAMMA_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DiscontinuitySet:
    """Phase-space discontinuity locus of a boundary source.

    For the two-level source this is {(x, xi) : x on gamma, n(x).xi < 0};
    ``base_points`` carries the gamma points themselves (d=2) or a sampled
    ring of them (d=3), each paired with the full incoming direction fan.
    """

    has_discontinuity: bool
    base_points: tuple
    reason: str = ""


class BoundarySource:
    """Incoming radiance prescribed on the inflow part of the boundary."""

    def __init__(self, geometry, kind, value=None, fn=None, gamma=None, side_a="positive"):
        self.geometry = geometry
        self.kind = kind
        self.value = value
        self.fn = fn
        self.gamma = gamma
        self.side_a = side_a
        if kind not in ("constant", "direction_smooth", "space_smooth", "piecewise_ab"):
            raise ValueError("unknown source kind %r" % kind)
        if kind == "piecewise_ab":
            if geometry.dim == 2:
                a1, a2 = gamma
                self._a1 = float(a1)
                self._arc = (float(a2) - float(a1)) % (2.0 * np.pi)
                if self._arc == 0.0:
                    raise ValueError("gamma angles must be distinct")
            else:
                normal, offset = gamma
                self._plane_normal = _unit(normal)
                self._plane_offset = float(offset)
                # the plane must actually cut the sphere
                h = abs(offset - float(np.dot(self._plane_normal, geometry.center)))
                if h >= geometry.radius:
                    raise ValueError("gamma plane does not intersect the boundary sphere")
            if value is None or not np.isfinite(value):
                raise ValueError("piecewise source needs a finite intensity I")

    # -- constructors -------------------------------------------------------

    @classmethod
    def constant(cls, geometry, value):
        return cls(geometry, "constant", value=float(value))

    @classmethod
    def direction_smooth(cls, geometry, fn):
        """f0(y, xi) continuous in xi for each y; fn maps ((n,d) positions,
        (d,) or (n,d) directions) to (n,) radiances."""
        return cls(geometry, "direction_smooth", fn=fn)

    @classmethod
    def space_smooth(cls, geometry, fn):
        """f0(., xi) continuous on the inflow boundary for each xi."""
        return cls(geometry, "space_smooth", fn=fn)

    @classmethod
    def piecewise_ab(cls, geometry, intensity, gamma, side_a="positive"):
        """Two-level source: I on (A union gamma), 0 on B.

        d=2: ``gamma`` is a pair of boundary angles (a1, a2); side
        "positive" makes A the counterclockwise arc from a1 to a2.
        d=3: ``gamma`` is (plane_normal, plane_offset); side "positive"
        makes A the cap where normal . y > offset.
        """
        if side_a not in ("positive", "negative"):
            raise ValueError("side_a must be 'positive' or 'negative'")
        return cls(geometry, "piecewise_ab", value=float(intensity), gamma=gamma,
                   side_a=side_a)

    # -- evaluation ---------------------------------------------------------

    def side_of(self, positions):
        """+1 on A, -1 on B, 0 on gamma (within tolerance); vectorized."""
        if self.kind != "piecewise_ab":
            raise ValueError("side classification only applies to the two-level source")
        positions = np.asarray(positions, dtype=float)
        single = positions.ndim == 1
        pts = positions[None, :] if single else positions
        if self.geometry.dim == 2:
            theta = self.geometry.boundary_param(pts)
            rel = (theta - self._a1) % (2.0 * np.pi)
            on_gamma = (np.minimum(rel, 2.0 * np.pi - rel) < ON_GAMMA_TOL) | (
                np.abs(rel - self._arc) < ON_GAMMA_TOL
            )
            in_ccw = rel < self._arc
        else:
            gap = pts @ self._plane_normal - self._plane_offset
            on_gamma = np.abs(gap) < ON_GAMMA_TOL * self.geometry.diameter
            in_ccw = gap > 0
        in_a = in_ccw if self.side_a == "positive" else ~in_ccw
        out = np.where(on_gamma, 0, np.where(in_a, 1, -1))
        return int(out[0]) if single else out

    def eval_many(self, positions, xi=None):
        """Vectorized source values; no inflow validation (caller's duty)."""
        positions = np.asarray(positions, dtype=float)
        single = positions.ndim == 1
        pts = positions[None, :] if single else positions
        if self.kind == "constant":
            out = np.full(pts.shape[0], self.value)
        elif self.kind == "piecewise_ab":
            out = np.where(self.side_of(pts) >= 0, self.value, 0.0)
        else:
            out = np.asarray(self.fn(pts, xi), dtype=float)
        return float(out[0]) if single else out

    def sup_norm(self, n_probe=512, rng=0):
        """sup |f0|; exact for constant/two-level, sampled for callables."""
        if self.kind == "constant":
            return abs(self.value)
        if self.kind == "piecewise_ab":
            return abs(self.value)
        rng = np.random.default_rng(rng)
        if self.geometry.dim == 2:
            theta = rng.uniform(0, 2 * np.pi, n_probe)
            pts = self.geometry.point_at(theta)
        else:
            v = rng.normal(size=(n_probe, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            pts = self.geometry.center + self.geometry.radius * v
        best = 0.0
        for _ in range(8):
            if self.geometry.dim == 2:
                ang = rng.uniform(0, 2 * np.pi, n_probe)
                xi = np.stack([np.cos(ang), np.sin(ang)], axis=1)
            else:
                xi = rng.normal(size=(n_probe, 3))
                xi /= np.linalg.norm(xi, axis=1, keepdims=True)
            best = max(best, float(np.max(np.abs(self.fn(pts, xi)))))
        return best


def eval_source(source, y, xi):
    """Source radiance f0(y, xi) at an incoming boundary pair.

    ``y`` is a BoundaryPoint; raises NotIncoming unless n(y) . xi < 0.
    For the two-level source the value depends only on which side of gamma
    the point lies: I on (A union gamma), 0 on B.
    """
    xi = _unit(xi)
    if float(np.dot(y.normal, xi)) >= 0:
        raise NotIncoming("n(y).xi = %.3e >= 0" % float(np.dot(y.normal, xi)))
    return float(source.eval_many(y.position, xi))


def discontinuity_set(source, n_base=64):
    """Discontinuity locus of the source data.

    Two-level sources: each gamma point paired with its full incoming fan
    (for d=3 the gamma circle is returned as ``n_base`` sampled points).
    Constant and smooth sources yield an empty set with the flag cleared.
    """
    if source.kind != "piecewise_ab":
        return DiscontinuitySet(False, (), reason="source is continuous (%s)" % source.kind)
    geom = source.geometry
    if geom.dim == 2:
        a1 = source._a1
        a2 = (source._a1 + source._arc) % (2.0 * np.pi)
        base = tuple(geom.boundary_point_at(a) for a in (a1, a2))
    else:
        base = tuple(
            geom.boundary_point(p) for p in _gamma_circle_points(source, n_base)
        )
    return DiscontinuitySet(True, base)


def _gamma_circle_points(source, n):
    """Sample the gamma circle cut by the plane on the sphere boundary."""
    geom = source.geometry
    m = source._plane_normal
    h = source._plane_offset - float(np.dot(m, geom.center))
    ring_r = np.sqrt(geom.radius**2 - h**2)
    # orthonormal frame spanning the plane
    seed = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(seed, m)) > 0.9:
        seed = np.array([0.0, 1.0, 0.0])
    e1 = seed - np.dot(seed, m) * m
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(m, e1)
    phi = 2.0 * np.pi * np.arange(n) / n
    return (
        geom.center
        + h * m
        + ring_r * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
    )
