"""Convex domains, subdomain partitions, and ray-tracing queries.

Domains are disks (d=2), balls (d=3), and convex polygons (d=2, stress
tests only).  All chord and interface intersections are roots of linear or
quadratic equations, so ray tracing is exact to floating-point roundoff;
there is no iterative root finding anywhere in this module.

Conventions: a backward ray from ``x`` in direction ``xi`` is the set
``{x - t*xi : t >= 0}``.  ``tau(geom, x, xi, -1)`` is the distance along
that ray to the boundary, ``tau(geom, x, xi, +1)`` the distance along the
forward ray ``x + t*xi``.  The entry point of the characteristic through
``(x, xi)`` is ``backtrace_point(geom, x, xi)``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import CrossingBoundExceeded, NotInDomain

logger = logging.getLogger("raybound.geometry")

GRAZING_TOL = 1e-8
_GOLDEN = (1.0 + 5.0**0.5) / 2.0


def _unit(xi, tol=1e-12):
    xi = np.asarray(xi, dtype=float)
    norm = np.linalg.norm(xi, axis=-1)
    if np.any(np.abs(norm - 1.0) > tol):
        raise ValueError("direction must be a unit vector (|xi| = 1 within %g)" % tol)
    return xi


@dataclass(frozen=True, eq=False)
class BoundaryPoint:
    """A point on the domain boundary with its outward unit normal.

    ``param`` is the surface parameter: polar angle for the disk, a
    (colatitude, azimuth) pair for the ball, arc length for polygons.
    """

    position: np.ndarray
    normal: np.ndarray
    param: object


@dataclass(frozen=True, eq=False)
class RaySegment:
    """Characteristic segment ``{x - t*xi : t in [0, span]}``."""

    origin: np.ndarray
    direction: np.ndarray
    span: float

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", _unit(self.direction))
        if self.span < 0:
            raise ValueError("span must be nonnegative")


class DomainGeometry:
    """Base class for bounded convex domains."""

    dim = None
    diameter = None

    def contains(self, x, tol=0.0):
        """Boolean mask: is each point inside the closed domain (+tol)."""
        raise NotImplementedError

    def require_inside(self, x):
        """Raise NotInDomain if any point is outside closure(domain) beyond
        the 1e-9 * diameter tolerance."""
        d = self.signed_distance(x)
        bad = d > 1e-9 * self.diameter
        if np.any(bad):
            worst = float(np.max(d))
            raise NotInDomain(
                "point outside domain closure by %.3e (tolerance %.3e)"
                % (worst, 1e-9 * self.diameter)
            )

    def signed_distance(self, x):
        """Distance to the boundary, negative inside."""
        raise NotImplementedError

    def tau_many(self, x, xi, sign):
        """Vectorized exit distances; ``x`` (..., d), ``xi`` (d,) or (..., d)."""
        raise NotImplementedError

    def normal_many(self, y):
        raise NotImplementedError

    def boundary_point(self, y):
        """Wrap a position on (or near) the boundary as a BoundaryPoint."""
        raise NotImplementedError


class Disk(DomainGeometry):
    """Disk (d=2) or -- see :class:`Ball` -- its 3D counterpart."""

    dim = 2

    def __init__(self, center=(0.0, 0.0), radius=1.0):
        self.center = np.asarray(center, dtype=float)
        if self.center.shape != (self.dim,):
            raise ValueError("center must have dimension %d" % self.dim)
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.diameter = 2.0 * self.radius

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x - self.center, axis=-1)
        return r <= self.radius + tol

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def _chord_coeffs(self, x, xi):
        # quadratic t^2 - 2ate. b*t + cc = 0 along x -+ t*xi
        u = np.asarray(x, dtype=float) - self.center
        b = np.sum(u * xi, axis=-1)
        cc = np.sum(u * u, axis=-1) - self.radius**2
        return b, cc

    def tau_many(self, x, xi, sign):
        b, cc = self._chord_coeffs(x, xi)
        q = np.sqrt(np.maximum(b * b - cc, 0.0))
        # Positive root of t^2 - 2bt + cc = 0 (backward ray) is b + q; the
        # citardauq form -cc/(q - b) avoids cancellation when b < 0.
        cc = np.minimum(cc, 0.0)  # clamp roundoff for points on the boundary
        if sign < 0:
            naive, denom = b + q, q - b
        else:
            naive, denom = q - b, q + b
        safe = np.where(denom > 0, denom, 1.0)
        stable = np.where(denom > 0, -cc / safe, 0.0)
        use_naive = (sign < 0) & (b >= 0) | (sign > 0) & (b <= 0)
        return np.where(use_naive, naive, stable)

    def normal_many(self, y):
        u = np.asarray(y, dtype=float) - self.center
        r = np.linalg.norm(u, axis=-1, keepdims=True)
        return u / r

    def boundary_param(self, y):
        u = np.asarray(y, dtype=float) - self.center
        return np.arctan2(u[..., 1], u[..., 0])

    def point_at(self, theta):
        theta = np.asarray(theta, dtype=float)
        pos = self.center + self.radius * np.stack(
            [np.cos(theta), np.sin(theta)], axis=-1
        )
        return pos

    def boundary_point(self, y):
        y = np.asarray(y, dtype=float)
        n = self.normal_many(y)
        pos = self.center + self.radius * n
        return BoundaryPoint(pos, n, float(self.boundary_param(y)))

    def boundary_point_at(self, theta):
        pos = self.point_at(theta)
        n = self.normal_many(pos)
        return BoundaryPoint(pos, n, float(theta))

    def boundary_measure(self):
        return 2.0 * np.pi * self.radius


class Ball(Disk):
    """Ball in R^3; chord algebra is shared with the disk."""

    dim = 3

    def __init__(self, center=(0.0, 0.0, 0.0), radius=1.0):
        super().__init__(center=center, radius=radius)

    def boundary_param(self, y):
        u = np.asarray(y, dtype=float) - self.center
        r = np.linalg.norm(u, axis=-1)
        colat = np.arccos(np.clip(u[..., 2] / r, -1.0, 1.0))
        azim = np.arctan2(u[..., 1], u[..., 0])
        return np.stack([colat, azim], axis=-1)

    def boundary_point(self, y):
        y = np.asarray(y, dtype=float)
        n = self.normal_many(y)
        pos = self.center + self.radius * n
        colat, azim = self.boundary_param(pos)
        return BoundaryPoint(pos, n, (float(colat), float(azim)))

    def boundary_measure(self):
        return 4.0 * np.pi * self.radius**2


class ConvexPolygon(DomainGeometry):
    """Convex polygon with counterclockwise vertices.

    The boundary is only piecewise C^1, so polygon domains are excluded
    from the jump-decay studies that assume a C^1 boundary; they exist for
    ray-tracing stress tests.
    """

    dim = 2
    piecewise_c1 = True

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("vertices must be an (n>=3, 2) array")
        edges = np.roll(v, -1, axis=0) - v
        cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(
            edges, -1, axis=0
        )[:, 0]
        scale = np.max(np.abs(edges))
        if np.any(cross < -1e-12 * scale**2):
            raise ValueError("vertices must describe a convex counterclockwise polygon")
        self.vertices = v
        lengths = np.linalg.norm(edges, axis=1)
        # outward normal of each CCW edge
        self.edge_normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1) / lengths[
            :, None
        ]
        self.edge_lengths = lengths
        self.perimeter = float(np.sum(lengths))
        self.diameter = float(
            np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1))
        )
        self.center = np.mean(v, axis=0)

    def _edge_gaps(self, x):
        # (x - v_i) . n_i for every edge; <= 0 inside
        x = np.asarray(x, dtype=float)
        return np.einsum(
            "...ej,ej->...e", x[..., None, :] - self.vertices, self.edge_normals
        )

    def signed_distance(self, x):
        return np.max(self._edge_gaps(x), axis=-1)

    def contains(self, x, tol=0.0):
        return self.signed_distance(x) <= tol

    def tau_many(self, x, xi, sign):
        a = self._edge_gaps(x)
        s = np.einsum("...j,ej->...e", np.broadcast_to(xi, np.shape(a)[:-1] + (2,)), self.edge_normals)
        if sign < 0:
            s = -s  # backward ray x - t*xi
        # constraint a + t*s <= 0; exits through edges with s > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            t_exit = np.where(s > 1e-15, -a / np.where(s > 1e-15, s, 1.0), np.inf)
        tau = np.min(t_exit, axis=-1)
        return np.maximum(tau, 0.0)

    def normal_many(self, y):
        gaps = self._edge_gaps(y)
        idx = np.argmax(gaps, axis=-1)
        return self.edge_normals[idx]

    def boundary_param(self, y):
        # arc length from vertex 0, walking CCW
        y = np.asarray(y, dtype=float)
        gaps = self._edge_gaps(y)
        idx = int(np.argmax(gaps))
        along = float(
            np.dot(y - self.vertices[idx], (np.roll(self.vertices, -1, axis=0)[idx] - self.vertices[idx]))
            / self.edge_lengths[idx]
        )
        return float(np.sum(self.edge_lengths[:idx]) + np.clip(along, 0.0, self.edge_lengths[idx]))

    def boundary_point(self, y):
        y = np.asarray(y, dtype=float)
        return BoundaryPoint(y, self.normal_many(y), self.boundary_param(y))

    def point_at_arclength(self, s):
        s = float(s) % self.perimeter
        acc = 0.0
        for i, L in enumerate(self.edge_lengths):
            if s <= acc + L or i == len(self.edge_lengths) - 1:
                frac = (s - acc) / L
                v0 = self.vertices[i]
                v1 = np.roll(self.vertices, -1, axis=0)[i]
                return v0 + frac * (v1 - v0)
            acc += L

    def boundary_measure(self):
        return self.perimeter


# ---------------------------------------------------------------------------
# subdomain partitions (generalized convexity)


@dataclass(frozen=True)
class CircleInterface:
    """Circle (d=2) or sphere (d=3) concentric with the domain."""

    radius: float


@dataclass(frozen=True)
class CutInterface:
    """Straight chord (d=2) or plane (d=3): {x : normal . x = offset}."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        object.__setattr__(self, "normal", _unit(self.normal))


class SubdomainPartition:
    """Partition of the domain by nested concentric circles/spheres or by
    straight cuts.

    Circle interfaces must have strictly decreasing radii; the region label
    of a point is the number of circles that strictly contain it (0 is the
    outermost region).  For cuts the label is a binary code over the cut
    list (bit i set when normal_i . x > offset_i).  Mixing both kinds in
    one partition is not supported.
    """

    def __init__(self, interfaces=(), max_crossings=None):
        interfaces = tuple(interfaces)
        kinds = {type(i) for i in interfaces}
        if kinds <= {CircleInterface}:
            self.kind = "circles" if interfaces else "empty"
            radii = [i.radius for i in interfaces]
            if any(r2 >= r1 for r1, r2 in zip(radii, radii[1:])):
                raise ValueError("circle interface radii must be strictly decreasing")
            if any(r <= 0 for r in radii):
                raise ValueError("circle interface radii must be positive")
            self._radii = np.asarray(radii, dtype=float)
            default_crossings = 2 * len(interfaces)
        elif kinds == {CutInterface}:
            self.kind = "cuts"
            self._cut_normals = np.stack([i.normal for i in interfaces])
            self._cut_offsets = np.asarray([i.offset for i in interfaces], dtype=float)
            default_crossings = len(interfaces)
        else:
            raise ValueError("a partition uses either circle interfaces or cuts, not both")
        self.interfaces = interfaces
        self.max_crossings = default_crossings if max_crossings is None else int(max_crossings)

    @property
    def n_regions(self):
        if self.kind == "cuts":
            return 2 ** len(self.interfaces)
        return len(self.interfaces) + 1

    def region_of(self, x, geometry):
        """Vectorized region labels for points inside the domain."""
        x = np.asarray(x, dtype=float)
        if self.kind == "cuts":
            side = np.einsum("...j,cj->...c", x, self._cut_normals) > self._cut_offsets
            return np.sum(side * (2 ** np.arange(len(self.interfaces))), axis=-1)
        if self.kind == "empty":
            return np.zeros(x.shape[:-1], dtype=np.int64)
        r = np.linalg.norm(x - geometry.center, axis=-1)
        return np.sum(r[..., None] < self._radii, axis=-1)

    def crossing_candidates(self, x, xi, geometry):
        """All interface hit times of the backward ray, unsorted/unfiltered.

        Returns an (..., n_candidates) array with NaN for misses.
        """
        x = np.asarray(x, dtype=float)
        if self.kind == "empty":
            return np.full(x.shape[:-1] + (0,), np.nan)
        if self.kind == "cuts":
            s = np.einsum("...j,cj->...c", np.broadcast_to(xi, x.shape), self._cut_normals)
            a = np.einsum("...j,cj->...c", x, self._cut_normals) - self._cut_offsets
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(np.abs(s) > 1e-14, a / np.where(np.abs(s) > 1e-14, s, 1.0), np.nan)
            return t
        u = x - geometry.center
        b = np.sum(u * xi, axis=-1)[..., None]
        cc = (np.sum(u * u, axis=-1)[..., None]) - self._radii**2
        disc = b * b - cc
        with np.errstate(invalid="ignore"):
            q = np.sqrt(disc)
        lo, hi = b - q, b + q
        return np.concatenate([lo, hi], axis=-1)

    def validate_crossing_bound(self, geometry, n_rays=512, rng=None):
        """Randomized check of the declared crossing bound.

        Draws random interior chords and raises CrossingBoundExceeded if any
        of them crosses the interface union more than ``max_crossings`` times.
        """
        rng = np.random.default_rng(rng)
        pts = sample_interior(geometry, n_rays, rng)
        if geometry.dim == 2:
            ang = rng.uniform(0, 2 * np.pi, n_rays)
            dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        else:
            dirs = rng.normal(size=(n_rays, 3))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        for p, d in zip(pts, dirs):
            interface_times(self, geometry, p, d, float(geometry.tau_many(p, d, -1)))


def sample_interior(geometry, n, rng):
    """Rejection-sample n points uniformly from the domain interior."""
    out = []
    if isinstance(geometry, ConvexPolygon):
        lo = np.min(geometry.vertices, axis=0)
        hi = np.max(geometry.vertices, axis=0)
    else:
        lo = geometry.center - geometry.radius
        hi = geometry.center + geometry.radius
    while len(out) < n:
        cand = rng.uniform(lo, hi, size=(2 * n, geometry.dim))
        good = cand[geometry.contains(cand, tol=-1e-12 * geometry.diameter)]
        out.extend(good[: n - len(out)])
    return np.asarray(out)


# ---------------------------------------------------------------------------
# spec-level operations


def tau(geometry, x, xi, sign=-1):
    """Distance from x to the boundary along -xi (sign=-1) or +xi (sign=+1).

    Parameters
    ----------
    geometry : DomainGeometry
    x : array-like, point in closure(domain)
    xi : array-like, unit direction
    sign : -1 for the backward ray x - t*xi, +1 for the forward ray

    Returns
    -------
    float, the exit distance (>= 0).
    """
    x = np.asarray(x, dtype=float)
    xi = _unit(xi)
    geometry.require_inside(x)
    return float(geometry.tau_many(x, xi, sign))


def backtrace_point(geometry, x, xi):
    """Entry point of the characteristic through (x, xi), with its normal.

    Returns the BoundaryPoint at ``x - tau(x, xi, -1) * xi``.  Grazing
    configurations (|n . xi| < 1e-8) are valid but logged as warnings.
    """
    x = np.asarray(x, dtype=float)
    xi = _unit(xi)
    geometry.require_inside(x)
    t = float(geometry.tau_many(x, xi, -1))
    bp = geometry.boundary_point(x - t * xi)
    ndotxi = float(np.dot(bp.normal, xi))
    if abs(ndotxi) < GRAZING_TOL:
        logger.warning("grazing backtrace at %s (n.xi = %.3e)", bp.position, ndotxi)
    return bp


def interface_times(partition, geometry, x, xi, span):
    """Ordered times where the backward ray hits a partition interface.

    Returns strictly increasing times in [0, span]; duplicates within
    1e-12 * diameter (e.g. a ray tangent to an inner circle) are merged.
    Raises CrossingBoundExceeded when more crossings are found than the
    partition's declared bound.
    """
    x = np.asarray(x, dtype=float)
    xi = _unit(xi)
    cand = partition.crossing_candidates(x, xi, geometry)
    cand = cand[np.isfinite(cand)]
    tol = 1e-12 * geometry.diameter
    cand = cand[(cand >= -tol) & (cand <= span + tol)]
    if cand.size == 0:
        return np.empty(0)
    cand = np.sort(np.clip(cand, 0.0, span))
    keep = np.concatenate([[True], np.diff(cand) > tol])
    times = cand[keep]
    if times.size > partition.max_crossings:
        raise CrossingBoundExceeded(
            "ray crossed %d interfaces, declared bound is %d"
            % (times.size, partition.max_crossings)
        )
    return times


def fibonacci_sphere(n):
    """Quasi-uniform points on the unit sphere with equal weights 4*pi/n."""
    i = np.arange(n, dtype=float) + 0.5
    colat = np.arccos(1.0 - 2.0 * i / n)
    azim = 2.0 * np.pi * i / _GOLDEN
    pts = np.stack(
        [np.cos(azim) * np.sin(colat), np.sin(azim) * np.sin(colat), np.cos(colat)],
        axis=1,
    )
    w = np.full(n, 4.0 * np.pi / n)
    return pts, w


def boundary_quadrature(geometry, n_nodes):
    """Quadrature nodes and weights on the boundary.

    Disk: uniform angles theta_k = 2*pi*k/n with equal weights summing to
    the circumference.  Ball: Fibonacci points with equal weights summing
    to the sphere area.  Polygon: uniform arc-length placement.

    Returns a list of (BoundaryPoint, weight) pairs.
    """
    if n_nodes < 4:
        raise ValueError("n_nodes must be at least 4")
    if isinstance(geometry, Ball):
        pts, w = fibonacci_sphere(n_nodes)
        w = w * geometry.radius**2
        out = []
        for p, wi in zip(pts, w):
            pos = geometry.center + geometry.radius * p
            out.append((geometry.boundary_point(pos), float(wi)))
        return out
    if isinstance(geometry, Disk):
        theta = 2.0 * np.pi * np.arange(n_nodes) / n_nodes
        w = 2.0 * np.pi * geometry.radius / n_nodes
        return [(geometry.boundary_point_at(t), w) for t in theta]
    if isinstance(geometry, ConvexPolygon):
        s = geometry.perimeter * (np.arange(n_nodes) + 0.5) / n_nodes
        w = geometry.perimeter / n_nodes
        return [(geometry.boundary_point(geometry.point_at_arclength(si)), w) for si in s]
    raise TypeError("unsupported geometry %r" % type(geometry))


def quadrature_arrays(quad):
    """Split a boundary quadrature into (positions, normals, weights) arrays."""
    pos = np.array([bp.position for bp, _ in quad])
    nrm = np.array([bp.normal for bp, _ in quad])
    w = np.array([w for _, w in quad])
    return pos, nrm, w


def projection_weight(x, y, normal, dim):
    """Jacobian |n(y).(x-y)| / |x-y|^d of the direction->boundary change of
    variables y = P_x(xi'); used to rewrite direction-space integrals over
    the unit sphere as boundary integrals."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    dist = np.linalg.norm(diff, axis=-1)
    return np.abs(np.sum(normal * diff, axis=-1)) / dist**dim
