"""Neumann-series solution of the transport boundary value problem.

The solution is built as the collision expansion f = sum_n f^(n): the
unscattered term is evaluated pointwise by exact ray tracing (it carries
every boundary-induced discontinuity and is never interpolated for
downstream jump work), while the scattered terms live on a Cartesian grid
times a direction set and are produced by repeated application of the
scattering sweep

    f^(n+1)(x, xi) = int_0^tau mu_s exp(-depth) S^(n)(x - s xi, xi) ds,

with S^(n) the direction-quadrature scattering source of the previous
term, interpolated multilinearly off the grid.  Iteration count comes
from the certified geometric tail bound sup|f0| * M^(N+1) / (1 - M) with
the contraction factor M = sup(1 - exp(-depth along full chords)) taken
from a dense sample and inflated for safety; the per-step contraction
inequality is asserted on every iterate.

A compiled kernel handles the common case (disk, circle/cut interfaces,
constant coefficients); a vectorized numpy path covers everything else
(balls, polygons, smooth coefficient fields) and is bit-checked against
the kernel in the tests.
"""

import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import IterationBudgetExceeded, NotContractive, NotOutgoing
from .geometry import Ball, ConvexPolygon, Disk, fibonacci_sphere, _unit
from .media import (
    DEFAULT_QUAD_ORDER,
    _leggauss01,
    optical_depth_many,
    phase_matrix,
)

logger = logging.getLogger("raybound.solver")

try:  # pragma: no cover - exercised implicitly by the fast path
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]

    prange = range


def _fast_path_enabled():
    return HAVE_NUMBA and os.environ.get("RAYBOUND_NO_NUMBA", "") != "1"


class DirectionSet:
    """Unit directions with quadrature weights summing exactly to the
    sphere measure (2*pi or 4*pi); constants integrate exactly."""

    def __init__(self, vectors, weights, dim):
        self.vectors = np.asarray(vectors, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.dim = dim
        self.n = len(self.vectors)

    @classmethod
    def uniform_circle(cls, n):
        theta = 2.0 * np.pi * np.arange(n) / n
        vec = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return cls(vec, np.full(n, 2.0 * np.pi / n), 2)

    @classmethod
    def fibonacci(cls, n):
        pts, w = fibonacci_sphere(n)
        return cls(pts, w, 3)

    @classmethod
    def for_dim(cls, dim, n):
        return cls.uniform_circle(n) if dim == 2 else cls.fibonacci(n)

    @property
    def angles(self):
        if self.dim != 2:
            raise ValueError("angles only defined for d=2 direction sets")
        return np.arctan2(self.vectors[:, 1], self.vectors[:, 0]) % (2.0 * np.pi)


class GridSpec:
    """Regular Cartesian grid of nodes covering the domain bounding box."""

    def __init__(self, origin, h, npts):
        self.origin = np.asarray(origin, dtype=float)
        self.h = float(h)
        self.npts = tuple(int(n) for n in npts)
        self.dim = len(self.npts)

    @classmethod
    def cover(cls, geometry, h):
        if isinstance(geometry, ConvexPolygon):
            lo = np.min(geometry.vertices, axis=0)
            hi = np.max(geometry.vertices, axis=0)
        else:
            lo = geometry.center - geometry.radius
            hi = geometry.center + geometry.radius
        extent = hi - lo
        ncells = np.maximum(1, np.ceil(extent / h - 1e-9).astype(int))
        mid = 0.5 * (lo + hi)
        origin = mid - 0.5 * ncells * h
        return cls(origin, h, ncells + 1)

    def axes(self):
        return [self.origin[i] + self.h * np.arange(self.npts[i]) for i in range(self.dim)]

    def nodes(self):
        """All node coordinates, shape (*npts, dim), 'ij' indexed."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def inside_mask(self, geometry):
        return geometry.contains(self.nodes(), tol=1e-12 * geometry.diameter)


def _interp_uniform(values, origin, h, pts):
    """Multilinear interpolation of grid values at points (n, d)."""
    pts = np.asarray(pts, dtype=float)
    d = pts.shape[-1]
    g = (pts - origin) / h
    out = np.zeros(pts.shape[:-1])
    idx = []
    frac = []
    for ax in range(d):
        gi = np.clip(g[..., ax], 0.0, values.shape[ax] - 1 - 1e-12)
        i0 = gi.astype(np.int64)
        idx.append(i0)
        frac.append(gi - i0)
    for corner in range(1 << d):
        w = 1.0
        ix = []
        for ax in range(d):
            if corner >> ax & 1:
                w = w * frac[ax]
                ix.append(idx[ax] + 1)
            else:
                w = w * (1.0 - frac[ax])
                ix.append(idx[ax])
        out += w * values[tuple(ix)]
    return out


def _extend_outside(values, inside, passes=3):
    """Clamped extension: fill nodes outside the domain from the average of
    already-known neighbors so multilinear stencils near the boundary see
    one-sided values instead of zeros.

    ``values`` may carry trailing axes (e.g. a direction axis) beyond the
    spatial shape of ``inside``; all slices share the fill pattern.
    """
    out = values.copy()
    known = inside.copy()
    d = inside.ndim
    trailing = values.ndim - d
    offsets = [
        tuple(i - 1 for i in off)
        for off in np.ndindex(*([3] * d))
        if any(i != 1 for i in off)
    ]
    for _ in range(passes):
        if known.all():
            break
        acc = np.zeros_like(out)
        cnt = np.zeros(inside.shape)
        for o in offsets:
            src = tuple(
                slice(max(-oo, 0), inside.shape[ax] - max(oo, 0))
                for ax, oo in enumerate(o)
            )
            dst = tuple(
                slice(max(oo, 0), inside.shape[ax] - max(-oo, 0))
                for ax, oo in enumerate(o)
            )
            k_src = known[src]
            if trailing:
                acc[dst] += np.where(k_src[..., None], out[src], 0.0)
            else:
                acc[dst] += np.where(k_src, out[src], 0.0)
            cnt[dst] += k_src
        newly = (~known) & (cnt > 0)
        if trailing:
            out[newly] = acc[newly] / cnt[newly][..., None]
        else:
            out[newly] = acc[newly] / cnt[newly]
        known = known | newly
    return out


# ---------------------------------------------------------------------------
# unscattered (ballistic) term: exact pointwise ray tracing


def ballistic_term(geometry, partition, medium, source, x, xi, quad_order=DEFAULT_QUAD_ORDER):
    """Unscattered radiance exp(-depth along full backward chord) * f0(P, xi).

    Pointwise-exact: no grid or interpolation is involved, so boundary
    discontinuities survive intact.  ``x`` may be a point or an (n, d)
    batch; ``xi`` a single direction or a matching batch.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    xi_arr = np.broadcast_to(np.asarray(xi, dtype=float), pts.shape)
    taus = geometry.tau_many(pts, xi_arr, -1)
    depth = optical_depth_many(medium, geometry, partition, pts, xi_arr, taus, quad_order)
    entries = pts - taus[:, None] * xi_arr
    vals = np.exp(-depth) * source.eval_many(entries, xi_arr)
    return float(vals[0]) if single else vals


# ---------------------------------------------------------------------------
# contraction estimate


@dataclass(frozen=True)
class ConvergenceCert:
    """Certified geometric-tail certificate for a truncated Neumann sum."""

    m: float  # inflated contraction factor used in all bounds
    m_sampled: float  # raw sampled maximum of 1 - exp(-chord depth)
    n_terms: int  # index of the last term included in the sum
    tail_bound: float  # sup|f0| * m^(n_terms+1) / (1 - m), or 0 if exact
    sup_f0: float


def estimate_contraction(
    geometry, partition, medium, n_space=64, n_dirs=64, quad_order=DEFAULT_QUAD_ORDER
):
    """(sampled, certified) contraction factor from a dense (x, xi) net.

    Maximizes 1 - exp(-depth along the full backward chord) over an
    n_space^d interior net times n_dirs directions; the certified value
    inflates the maximal optical depth by 5% so the sampled maximum
    falling slightly short of the true supremum stays on the safe side.
    """
    grid = GridSpec.cover(geometry, geometry.diameter / max(n_space - 1, 1))
    nodes = grid.nodes().reshape(-1, grid.dim)
    nodes = nodes[geometry.contains(nodes, tol=-1e-12 * geometry.diameter)]
    dirs = DirectionSet.for_dim(grid.dim, n_dirs).vectors
    worst = 0.0
    for d in dirs:
        taus = geometry.tau_many(nodes, d, -1)
        dep = optical_depth_many(medium, geometry, partition, nodes, d, taus, quad_order)
        worst = max(worst, float(np.max(dep)))
    m_sampled = 1.0 - math.exp(-worst)
    m_cert = 1.0 - math.exp(-1.05 * worst)
    return m_sampled, m_cert


# ---------------------------------------------------------------------------
# scattering sweep (one Neumann step)

_GL_CACHE = {}


def _gl01(order):
    if order not in _GL_CACHE:
        _GL_CACHE[order] = _leggauss01(order)
    return _GL_CACHE[order]


@njit(parallel=True, cache=True)
def _sweep_kernel_2d(
    nodes,
    xi,
    center,
    rho,
    circ_r,
    cuts,
    mu_t_tab,
    mu_s_tab,
    glz,
    glw,
    phi,
    ox,
    oy,
    h,
    out,
):  # pragma: no cover - compiled
    n = nodes.shape[0]
    ncirc = circ_r.shape[0]
    ncut = cuts.shape[0]
    nxg = phi.shape[0]
    nyg = phi.shape[1]
    q = glz.shape[0]
    for i in prange(n):
        px = nodes[i, 0]
        py = nodes[i, 1]
        ux = px - center[0]
        uy = py - center[1]
        b = ux * xi[0] + uy * xi[1]
        cc = ux * ux + uy * uy - rho * rho
        if cc > 0.0:
            cc = 0.0
        disc = b * b - cc
        qr = math.sqrt(disc) if disc > 0.0 else 0.0
        if b >= 0.0:
            tau = b + qr
        else:
            denom = qr - b
            tau = -cc / denom if denom > 0.0 else 0.0
        # interface crossing times in (0, tau)
        buf = np.empty(2 * ncirc + ncut + 2)
        nb = 0
        for c in range(ncirc):
            dc = b * b - (ux * ux + uy * uy - circ_r[c] * circ_r[c])
            if dc > 0.0:
                sq = math.sqrt(dc)
                t1 = b - sq
                t2 = b + sq
                if 0.0 < t1 < tau:
                    buf[nb] = t1
                    nb += 1
                if 0.0 < t2 < tau:
                    buf[nb] = t2
                    nb += 1
        for c in range(ncut):
            sd = cuts[c, 0] * xi[0] + cuts[c, 1] * xi[1]
            if abs(sd) > 1e-14:
                t1 = (cuts[c, 0] * px + cuts[c, 1] * py - cuts[c, 2]) / sd
                if 0.0 < t1 < tau:
                    buf[nb] = t1
                    nb += 1
        # insertion sort of the few crossing times
        for a in range(1, nb):
            key = buf[a]
            j = a - 1
            while j >= 0 and buf[j] > key:
                buf[j + 1] = buf[j]
                j -= 1
            buf[j + 1] = key
        acc = 0.0
        depth0 = 0.0
        seg_a = 0.0
        for seg in range(nb + 1):
            seg_b = buf[seg] if seg < nb else tau
            if seg_b > seg_a:
                smid = 0.5 * (seg_a + seg_b)
                mx = px - smid * xi[0]
                my = py - smid * xi[1]
                if ncut > 0:
                    reg = 0
                    for c in range(ncut):
                        if cuts[c, 0] * mx + cuts[c, 1] * my > cuts[c, 2]:
                            reg += 1 << c
                else:
                    reg = 0
                    rr = (mx - center[0]) ** 2 + (my - center[1]) ** 2
                    for c in range(ncirc):
                        if rr < circ_r[c] * circ_r[c]:
                            reg += 1
                mut = mu_t_tab[reg]
                mus = mu_s_tab[reg]
                if mus > 0.0:
                    dl = seg_b - seg_a
                    for g in range(q):
                        s = seg_a + dl * glz[g]
                        sx = px - s * xi[0]
                        sy = py - s * xi[1]
                        gx = (sx - ox) / h
                        gy = (sy - oy) / h
                        if gx < 0.0:
                            gx = 0.0
                        elif gx > nxg - 1.000000000001:
                            gx = nxg - 1.000000000001
                        if gy < 0.0:
                            gy = 0.0
                        elif gy > nyg - 1.000000000001:
                            gy = nyg - 1.000000000001
                        ix = int(gx)
                        iy = int(gy)
                        fx = gx - ix
                        fy = gy - iy
                        pv = (
                            (1.0 - fx) * (1.0 - fy) * phi[ix, iy]
                            + fx * (1.0 - fy) * phi[ix + 1, iy]
                            + (1.0 - fx) * fy * phi[ix, iy + 1]
                            + fx * fy * phi[ix + 1, iy + 1]
                        )
                        acc += (
                            mus
                            * math.exp(-(depth0 + mut * (s - seg_a)))
                            * dl
                            * glw[g]
                            * pv
                        )
                depth0 += mut * (seg_b - seg_a)
            seg_a = seg_b
        out[i] = acc


class ScatteringSweep:
    """One application of the scattering integral operator on the grid.

    Bundles the static data (interior nodes, interface tables, direction
    set, phase matrix) and dispatches each direction either to the
    compiled kernel or to the generic vectorized path.
    """

    def __init__(self, geometry, partition, medium, grid, directions,
                 quad_order=DEFAULT_QUAD_ORDER, use_fast=None):
        self.geometry = geometry
        self.partition = partition
        self.medium = medium
        self.grid = grid
        self.directions = directions
        self.quad_order = quad_order
        self.inside = grid.inside_mask(geometry)
        self.nodes = grid.nodes()[self.inside]
        self.pm_w = phase_matrix(medium, directions) * directions.weights[None, :]
        self.isotropic = medium.phase == "isotropic"
        if use_fast is None:
            use_fast = (
                _fast_path_enabled()
                and grid.dim == 2
                and type(geometry) is Disk
                and medium.is_constant
            )
        self.use_fast = use_fast
        if self.use_fast:
            self._mu_t_tab, self._mu_s_tab = medium.constant_tables
            if self.partition.kind == "cuts":
                self._circ = np.empty(0)
                self._cuts = np.array(
                    [[i.normal[0], i.normal[1], i.offset] for i in partition.interfaces]
                )
            else:
                self._circ = np.array([i.radius for i in partition.interfaces])
                self._cuts = np.empty((0, 3))

    def phi_grids(self, f_grid):
        """Direction-contracted scattering source on the grid, extended
        outside the domain for interpolation.

        Isotropic media give one scalar grid; anisotropic phase gives one
        grid per outgoing direction (last axis).
        """
        if self.isotropic:
            phi = f_grid @ (self.pm_w[0])
            return _extend_outside(phi, self.inside)
        return _extend_outside(f_grid @ self.pm_w.T, self.inside)

    def step(self, f_grid):
        """Apply the scattering operator to one Neumann term grid."""
        phi = self.phi_grids(f_grid)
        out = np.zeros(f_grid.shape)
        vals = np.empty(len(self.nodes))
        glz, glw = _gl01(self.quad_order)
        for k in range(self.directions.n):
            phi_k = phi if self.isotropic else np.ascontiguousarray(phi[..., k])
            xi = self.directions.vectors[k]
            if self.use_fast:
                _sweep_kernel_2d(
                    self.nodes,
                    xi,
                    self.geometry.center,
                    self.geometry.radius,
                    self._circ,
                    self._cuts,
                    self._mu_t_tab,
                    self._mu_s_tab,
                    glz,
                    glw,
                    phi_k,
                    self.grid.origin[0],
                    self.grid.origin[1],
                    self.grid.h,
                    vals,
                )
            else:
                vals = self._step_direction_numpy(xi, phi_k)
            out[..., k][self.inside] = vals
        return out

    def _step_direction_numpy(self, xi, phi_k, chunk=8192):
        geom, part, med = self.geometry, self.partition, self.medium
        glz, glw = _gl01(self.quad_order)
        n = len(self.nodes)
        out = np.empty(n)
        grid_dim = self.grid.dim
        for lo in range(0, n, chunk):
            pts = self.nodes[lo : lo + chunk]
            m = len(pts)
            xs = np.broadcast_to(xi, (m, grid_dim))
            taus = geom.tau_many(pts, xs, -1)
            cand = part.crossing_candidates(pts, xs, geom)
            cand = np.where(
                np.isfinite(cand) & (cand > 0.0) & (cand < taus[:, None]),
                cand,
                taus[:, None],
            )
            breaks = np.concatenate(
                [np.zeros((m, 1)), np.sort(cand, axis=1), taus[:, None]], axis=1
            )
            a, b = breaks[:, :-1], breaks[:, 1:]
            nseg = a.shape[1]
            # cumulative depth at each segment start
            seg_dep = np.empty((m, nseg))
            for j in range(nseg):
                sv = a[:, j, None] + (b[:, j] - a[:, j])[:, None] * glz
                p = pts[:, None, :] - sv[..., None] * xi
                mu = med.mu_t_at(p.reshape(-1, grid_dim), geom, part).reshape(m, -1)
                seg_dep[:, j] = (b[:, j] - a[:, j]) * (mu @ glw)
            cum = np.concatenate([np.zeros((m, 1)), np.cumsum(seg_dep, axis=1)], axis=1)[
                :, :-1
            ]
            total = np.zeros(m)
            for j in range(nseg):
                dl = b[:, j] - a[:, j]
                sv = a[:, j, None] + dl[:, None] * glz
                p = (pts[:, None, :] - sv[..., None] * xi).reshape(-1, grid_dim)
                mus = med.mu_s_at(p, geom, part).reshape(m, -1)
                # partial depth inside the segment via nested quadrature
                inner = sv[..., None] - a[:, j, None, None]
                pin = (
                    pts[:, None, None, :]
                    - (a[:, j, None, None] + inner * glz[None, None, :])[..., None] * xi
                )
                mut = med.mu_t_at(pin.reshape(-1, grid_dim), geom, part).reshape(
                    m, len(glz), len(glz)
                )
                part_dep = inner[..., 0] * (mut @ glw)
                weight = np.exp(-(cum[:, j, None] + part_dep)) * mus
                pv = _interp_uniform(
                    phi_k, self.grid.origin, self.grid.h, p
                ).reshape(m, -1)
                total += dl * ((weight * pv) @ glw)
            out[lo : lo + chunk] = total
        return out


def scattering_source(field, medium, x, xi, values=None):
    """Direction-quadrature scattering source at a grid node.

    Sums w_j * p(xi, xi_j) * f(x, xi_j) over the field's direction set;
    for isotropic media the result is independent of ``xi``.  ``x`` must
    coincide with an interior grid node; pass ``values`` to use a specific
    term grid instead of the field's total.
    """
    grid = field.grid
    x = np.asarray(x, dtype=float)
    g = (x - grid.origin) / grid.h
    idx = np.round(g).astype(int)
    if np.any(np.abs(g - idx) > 1e-9) or not field.inside[tuple(idx)]:
        raise ValueError("x must be an interior grid node")
    f_here = (field.total_grid if values is None else values)[tuple(idx)]
    pm = phase_matrix(medium, field.directions)
    xi = _unit(xi)
    # row of the phase matrix for this outgoing direction
    if medium.phase == "isotropic":
        row = pm[0]
    else:
        cos = np.clip(field.directions.vectors @ xi, -1.0, 1.0)
        from .media import _hg_kernel

        row = _hg_kernel(cos, medium.g, medium.dim)
    return float(np.sum(field.directions.weights * row * f_here))


def neumann_step(geometry, partition, medium, grid, directions, prev_term,
                 quad_order=DEFAULT_QUAD_ORDER, use_fast=None):
    """One scattering iteration: term n -> term n+1 on the grid.

    Returns (next_term, sup_norm).  The supremum is recorded so callers
    can assert the per-step contraction inequality.
    """
    sweep = ScatteringSweep(
        geometry, partition, medium, grid, directions, quad_order, use_fast
    )
    nxt = sweep.step(prev_term)
    return nxt, float(np.max(np.abs(nxt)))


# ---------------------------------------------------------------------------
# solved field


class RadianceField:
    """Solved radiance: exact unscattered evaluator plus gridded remainder.

    ``uncollided_grid`` exists for dumps and visualization only; all
    evaluation of the unscattered part re-traces rays exactly so that the
    stored interpolant never smears a discontinuity.
    """

    def __init__(self, geometry, partition, medium, source, grid, directions,
                 cert, collided_grid=None, uncollided_grid=None, total_grid=None,
                 term_sups=None, kept_terms=None, quad_order=DEFAULT_QUAD_ORDER):
        self.geometry = geometry
        self.partition = partition
        self.medium = medium
        self.source = source
        self.grid = grid
        self.directions = directions
        self.cert = cert
        self.quad_order = quad_order
        self.term_sups = list(term_sups or [])
        self.kept_terms = list(kept_terms or [])
        self.inside = grid.inside_mask(geometry) if grid is not None else None
        self.uncollided_grid = uncollided_grid
        self.collided_grid = collided_grid
        self.total_grid = total_grid
        if collided_grid is not None:
            self._collided_ext = _extend_outside(collided_grid, self.inside)
        else:
            self._collided_ext = None

    # -- evaluation -----------------------------------------------------

    def eval_uncollided(self, x, xi):
        return ballistic_term(
            self.geometry, self.partition, self.medium, self.source, x, xi,
            self.quad_order,
        )

    def _direction_weights(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.directions.dim == 2:
            theta = math.atan2(xi[1], xi[0]) % (2.0 * np.pi)
            step = 2.0 * np.pi / self.directions.n
            k0 = int(theta // step) % self.directions.n
            k1 = (k0 + 1) % self.directions.n
            f = (theta - k0 * step) / step
            return [(k0, 1.0 - f), (k1, f)]
        # d=3: inverse-distance blend of the three nearest directions
        d2 = np.sum((self.directions.vectors - xi) ** 2, axis=1)
        near = np.argsort(d2)[:3]
        if d2[near[0]] < 1e-24:
            return [(int(near[0]), 1.0)]
        inv = 1.0 / np.sqrt(d2[near])
        inv /= inv.sum()
        return [(int(k), float(w)) for k, w in zip(near, inv)]

    def eval_collided(self, x, xi=None, k=None):
        """Interpolated scattered part; continuous, so interpolation is
        legitimate here (and only here)."""
        if self._collided_ext is None:
            return np.zeros(np.shape(np.asarray(x))[:-1]) if np.ndim(x) > 1 else 0.0
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x[None, :] if single else x
        if k is not None:
            vals = _interp_uniform(
                self._collided_ext[..., k], self.grid.origin, self.grid.h, pts
            )
        else:
            vals = 0.0
            for kk, w in self._direction_weights(xi):
                vals = vals + w * _interp_uniform(
                    self._collided_ext[..., kk], self.grid.origin, self.grid.h, pts
                )
        return float(vals[0]) if single else vals

    def eval(self, x, xi, k=None):
        """Total field f = unscattered + scattered at (x, xi)."""
        x = np.asarray(x, dtype=float)
        xi = _unit(xi)
        unc = self.eval_uncollided(x, xi)
        if x.ndim == 1 and abs(float(self.geometry.signed_distance(x))) <= 1e-12 * self.geometry.diameter:
            bp = self.geometry.boundary_point(x)
            if float(bp.normal @ xi) < 0:
                # incoming boundary pair: scattered part vanishes identically
                # (zero-length path), so the inflow data is recovered exactly
                return unc
        return unc + self.eval_collided(x, xi=xi, k=k)

    def trace(self, y, xi, offsets=None):
        """Outgoing boundary value, extended by a one-sided limit.

        Exact unscattered value plus the scattered part sampled at
        y - t*xi for t in {2h, h, h/2} and polynomially extrapolated to
        t = 0.  Raises NotOutgoing unless n(y) . xi > 0.
        """
        xi = _unit(xi)
        bp = self.geometry.boundary_point(np.asarray(y, dtype=float))
        if float(bp.normal @ xi) <= 0:
            raise NotOutgoing("n(y).xi = %.3e <= 0" % float(bp.normal @ xi))
        unc = self.eval_uncollided(bp.position, xi)
        if self._collided_ext is None:
            return unc
        h = self.grid.h
        t = np.asarray(offsets if offsets is not None else [2.0 * h, h, 0.5 * h])
        pts = bp.position[None, :] - t[:, None] * xi[None, :]
        vals = self.eval_collided(pts, xi=xi)
        return unc + float(np.polynomial.polynomial.polyfit(t, vals, len(t) - 1)[0])

    # -- bookkeeping ------------------------------------------------------

    def check_split_identity(self, tol=1e-12):
        """|F0 + F1 - total| on the grid (separately accumulated sums)."""
        if self.total_grid is None:
            return 0.0
        gap = np.max(
            np.abs(self.uncollided_grid + self.collided_grid - self.total_grid)
        )
        if gap > tol * max(1.0, float(np.max(np.abs(self.total_grid)))):
            raise RuntimeError("split bookkeeping identity violated: %.3e" % gap)
        return float(gap)


def solve(geometry, partition, medium, source, grid=None, directions=None,
          tol=1e-6, quad_order=DEFAULT_QUAD_ORDER, max_terms=500, keep_terms=0,
          use_fast=None, contraction_net=(64, 64)):
    """Sum the Neumann series to a certified tolerance.

    Parameters
    ----------
    grid, directions : GridSpec, DirectionSet
        Discretization of the scattered terms.  May be omitted only for
        purely absorbing media (mu_s identically zero), where the series
        truncates at the unscattered term.
    tol : float
        Bound on the discarded tail sup|f0| * M^(N+1) / (1 - M).
    keep_terms : int
        Number of leading scattered term grids (term 1, 2, ...) to retain
        on the returned field for inspection.

    Returns
    -------
    RadianceField with a ConvergenceCert; raises NotContractive when the
    certified contraction factor reaches 1 - 1e-6.
    """
    sup_f0 = source.sup_norm()
    m_sampled, m_cert = estimate_contraction(
        geometry, partition, medium,
        n_space=contraction_net[0], n_dirs=contraction_net[1], quad_order=quad_order,
    )
    if m_cert >= 1.0 - 1e-6:
        raise NotContractive(
            "certified contraction factor %.9f >= 1 - 1e-6; "
            "sup(mu_t) * diameter too large for a useful geometric bound" % m_cert
        )

    pure_absorber = medium.is_constant and np.all(medium.constant_tables[1] == 0.0)
    if pure_absorber:
        cert = ConvergenceCert(m_cert, m_sampled, 0, 0.0, sup_f0)
        field = RadianceField(
            geometry, partition, medium, source, grid, directions, cert,
            quad_order=quad_order,
        )
        if grid is not None and directions is not None:
            inside = grid.inside_mask(geometry)
            nodes = grid.nodes()[inside]
            f0 = np.zeros(tuple(grid.npts) + (directions.n,))
            for k in range(directions.n):
                f0[..., k][inside] = ballistic_term(
                    geometry, partition, medium, source, nodes,
                    directions.vectors[k], quad_order,
                )
            field = RadianceField(
                geometry, partition, medium, source, grid, directions, cert,
                collided_grid=np.zeros_like(f0), uncollided_grid=f0,
                total_grid=f0.copy(), term_sups=[float(np.max(np.abs(f0)))],
                quad_order=quad_order,
            )
        return field

    if grid is None or directions is None:
        raise ValueError("scattering media need a grid and a direction set")

    # number of terms from the a-priori geometric bound
    if sup_f0 == 0.0:
        n_terms = 0
    else:
        n_terms = max(
            0,
            math.ceil(
                math.log(tol * (1.0 - m_cert) / sup_f0) / math.log(m_cert) - 1.0
            ),
        )
    if n_terms > max_terms:
        raise IterationBudgetExceeded(
            "certified bound needs %d terms > max_terms = %d (tol %.1e, M %.4f)"
            % (n_terms, max_terms, tol, m_cert)
        )

    inside = grid.inside_mask(geometry)
    nodes = grid.nodes()[inside]
    f0 = np.zeros(tuple(grid.npts) + (directions.n,))
    for k in range(directions.n):
        f0[..., k][inside] = ballistic_term(
            geometry, partition, medium, source, nodes, directions.vectors[k],
            quad_order,
        )
    sups = [float(np.max(np.abs(f0)))]
    sweep = ScatteringSweep(
        geometry, partition, medium, grid, directions, quad_order, use_fast
    )
    collided = np.zeros_like(f0)
    total = f0.copy()
    kept = []
    term = f0
    tail = sup_f0 * m_cert ** (n_terms + 1) / (1.0 - m_cert)
    for n in range(1, n_terms + 1):
        term = sweep.step(term)
        sup_n = float(np.max(np.abs(term)))
        # per-step contraction inequality from the iteration's own bound
        if sup_n > m_cert * sups[-1] + 1e-14 * sup_f0:
            raise RuntimeError(
                "contraction inequality violated at term %d: %.3e > %.4f * %.3e"
                % (n, sup_n, m_cert, sups[-1])
            )
        sups.append(sup_n)
        collided += term
        total += term
        if n <= keep_terms:
            kept.append(term.copy())
        if sup_n == 0.0:
            tail = 0.0
            n_terms = n
            break
        logger.debug("term %d sup %.3e", n, sup_n)

    cert = ConvergenceCert(m_cert, m_sampled, n_terms, tail, sup_f0)
    field = RadianceField(
        geometry, partition, medium, source, grid, directions, cert,
        collided_grid=collided, uncollided_grid=f0, total_grid=total,
        term_sups=sups, kept_terms=kept, quad_order=quad_order,
    )
    field.check_split_identity()
    bound = sup_f0 / (1.0 - m_cert)
    worst = float(np.max(np.abs(total)))
    if worst > bound * (1.0 + 1e-12):
        raise RuntimeError("uniform bound violated: %.6e > %.6e" % (worst, bound))
    if source.kind in ("constant", "piecewise_ab") and source.value >= 0.0:
        if float(np.min(total)) < -1e-13 * max(sup_f0, 1.0):
            raise RuntimeError("nonnegative source produced a negative field value")
    return field


def trace_on_gamma_plus(field, y, xi):
    """Outgoing trace of the solved field at (y, xi) on the outflow boundary."""
    return field.trace(y, xi)


# ---------------------------------------------------------------------------
# residual verification


@dataclass(frozen=True)
class ResidualReport:
    integral_max: float
    differential_max: float
    n_samples: int


def residual_check(field, n_samples=200, rng=None, dt=None):
    """Max mismatch of the solved field against the integral equation and
    the differential transport balance.

    Integral form: both sides evaluated at random interior off-grid points
    with directions from the field's set (unscattered part exact, the
    scattering integral interpolated).  Differential form: centered
    difference of the directional derivative along the characteristic
    inside one smooth segment, checked against mu_s * source - mu_t * f.
    """
    rng = np.random.default_rng(rng)
    geom, part, med = field.geometry, field.partition, field.medium
    from .geometry import sample_interior

    sweep = ScatteringSweep(
        geom, part, med, field.grid, field.directions, field.quad_order,
        use_fast=False,
    )
    phi = sweep.phi_grids(field.total_grid)
    glz, glw = _gl01(field.quad_order)
    worst_int = 0.0
    worst_diff = 0.0
    dt = dt if dt is not None else 0.25 * field.grid.h
    pts = sample_interior(geom, n_samples, rng)
    ks = rng.integers(0, field.directions.n, n_samples)
    for x, k in zip(pts, ks):
        k = int(k)
        xi = field.directions.vectors[k]
        phi_k = phi if sweep.isotropic else np.ascontiguousarray(phi[..., k])
        lhs = field.eval_uncollided(x, xi) + field.eval_collided(x, k=k)
        # scattering integral along the chord (single-point sweep)
        sweep_nodes = sweep.nodes
        sweep.nodes = x[None, :]
        scat = float(sweep._step_direction_numpy(xi, phi_k)[0])
        sweep.nodes = sweep_nodes
        rhs = field.eval_uncollided(x, xi) + scat
        worst_int = max(worst_int, abs(lhs - rhs))

        # differential form within one smooth segment
        cand = part.crossing_candidates(x[None, :], xi[None, :], geom)
        cand = cand[np.isfinite(cand)]
        if cand.size and np.min(np.abs(cand)) < 2.0 * dt:
            continue  # straddles an interface; skip this sample
        tau_fwd = float(geom.tau_many(x, xi, +1))
        tau_bwd = float(geom.tau_many(x, xi, -1))
        if tau_fwd < dt or tau_bwd < dt:
            continue
        f_p = field.eval_uncollided(x + dt * xi, xi) + field.eval_collided(x + dt * xi, k=k)
        f_m = field.eval_uncollided(x - dt * xi, xi) + field.eval_collided(x - dt * xi, k=k)
        f_0 = field.eval_uncollided(x, xi) + field.eval_collided(x, k=k)
        deriv = (f_p - f_m) / (2.0 * dt)
        mut = med.mu_t_at(x, geom, part)
        mus = med.mu_s_at(x, geom, part)
        src = float(
            _interp_uniform(phi_k, field.grid.origin, field.grid.h, x[None, :])[0]
        )
        worst_diff = max(worst_diff, abs(deriv + mut * f_0 - mus * src))
    return ResidualReport(worst_int, worst_diff, n_samples)
