"""Attenuation line integrals, jump-derived sinograms, and filtered
backprojection.

The decay law turns each measured exit jump into a line integral of the
attenuation coefficient: g = -log(jump / I).  Arranging the source split
so that one discontinuity characteristic realizes each (angle, offset)
chord of a parallel-beam grid yields a sinogram, inverted by Ram-Lak
filtered backprojection.  ``forward_xray`` integrates the attenuation
directly and serves as the independent oracle for the whole chain.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .boundary import BoundarySource
from .errors import DynamicRangeExhausted, GridTooCoarse
from .jump import PredictedDiscontinuity, extract_jump
from .media import optical_depth
from .solver import solve

logger = logging.getLogger("raybound.xray")

JUMP_FLOOR_FRACTION = 1e-12


def forward_xray(medium, geometry, partition, theta, s, quad_order=8):
    """Line integral of mu_t over the chord with normal angle ``theta`` and
    signed offset ``s`` from the domain center (parallel-beam convention).

    Chords that miss the domain (|s| >= radius) integrate to zero.
    """
    rho = geometry.radius
    if abs(s) >= rho * (1.0 - 1e-14):
        return 0.0
    nrm = np.array([math.cos(theta), math.sin(theta)])
    omega = np.array([-math.sin(theta), math.cos(theta)])
    p = geometry.center + s * nrm
    fwd = float(geometry.tau_many(p, omega, +1))
    bwd = float(geometry.tau_many(p, omega, -1))
    exit_pos = p + fwd * omega
    return optical_depth(
        medium, geometry, partition, exit_pos, omega, fwd + bwd, quad_order
    )


@dataclass(frozen=True)
class ChordExperiment:
    """One planned measurement: the source split realizing one chord."""

    theta: float
    s: float
    entry_angle: float
    exit_angle: float
    tangent: bool  # |s| at the rim: zero-length chord, value 0 by the law


def plan_parallel_scan(geometry, n_angles, n_offsets):
    """Experiment plan covering a uniform (angle, offset) parallel grid.

    For each chord the split points gamma are placed at its two boundary
    ends; the measured characteristic enters at the end where the chord
    direction is incoming.
    """
    rho = geometry.radius
    thetas = np.pi * np.arange(n_angles) / n_angles
    offsets = np.linspace(-rho, rho, n_offsets)
    plan = []
    for theta in thetas:
        nrm = np.array([math.cos(theta), math.sin(theta)])
        omega = np.array([-math.sin(theta), math.cos(theta)])
        for s in offsets:
            if abs(s) >= rho * (1.0 - 1e-12):
                plan.append(ChordExperiment(float(theta), float(s), 0.0, 0.0, True))
                continue
            p = geometry.center + s * nrm
            fwd = float(geometry.tau_many(p, omega, +1))
            bwd = float(geometry.tau_many(p, omega, -1))
            entry = geometry.boundary_point(p - bwd * omega)
            exit_ = geometry.boundary_point(p + fwd * omega)
            plan.append(
                ChordExperiment(
                    float(theta), float(s), float(entry.param), float(exit_.param), False
                )
            )
    return plan


@dataclass(eq=False)
class Sinogram:
    """Parallel-beam samples g(theta_m, s_q) of the attenuation transform."""

    thetas: np.ndarray
    offsets: np.ndarray
    values: np.ndarray  # (n_angles, n_offsets)
    inpainted: np.ndarray = None  # bool mask of filled-in entries

    def __post_init__(self):
        if self.inpainted is None:
            self.inpainted = np.zeros(self.values.shape, dtype=bool)

    @property
    def n_inpainted(self):
        return int(np.sum(self.inpainted))

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("theta,s,g\n")
            for i, th in enumerate(self.thetas):
                for j, s in enumerate(self.offsets):
                    fh.write(
                        "%.12e,%.12e,%.12e\n" % (th, s, self.values[i, j])
                    )

    @classmethod
    def load_csv(cls, path):
        raw = np.genfromtxt(path, delimiter=",", names=True)
        thetas = np.unique(raw["theta"])
        offsets = np.unique(raw["s"])
        vals = raw["g"].reshape(len(thetas), len(offsets))
        return cls(thetas, offsets, vals)


def jump_to_sinogram(
    plan,
    geometry,
    partition,
    medium,
    intensity=1.0,
    mode="extracted",
    solver_kwargs=None,
    eps0=None,
    jump_floor=JUMP_FLOOR_FRACTION,
):
    """Assemble a sinogram from the planned chord experiments.

    mode "extracted" runs the full measurement per chord: a two-level
    source split at the chord ends, a solve, and one-sided-limit jump
    extraction at the exit.  mode "exact" substitutes the decay-law value
    (the analytic line integral), isolating inversion error from
    extraction error.  Entries whose measured jump falls below
    ``jump_floor * intensity`` are marked missing and inpainted linearly
    along the offset axis; a predicted jump below the floating-point
    range raises DynamicRangeExhausted instead of silently inpainting.
    """
    if mode not in ("extracted", "exact"):
        raise ValueError("mode must be 'extracted' or 'exact'")
    solver_kwargs = dict(solver_kwargs or {})
    solver_kwargs.setdefault("contraction_net", (12, 12))
    thetas = np.unique([e.theta for e in plan])
    offsets = np.unique([e.s for e in plan])
    values = np.zeros((len(thetas), len(offsets)))
    missing = np.zeros(values.shape, dtype=bool)
    t_index = {t: i for i, t in enumerate(thetas)}
    s_index = {s: j for j, s in enumerate(offsets)}
    for exp in plan:
        i, j = t_index[exp.theta], s_index[exp.s]
        if exp.tangent:
            values[i, j] = 0.0
            continue
        depth = forward_xray(medium, geometry, partition, exp.theta, exp.s)
        if depth > 690.0:
            raise DynamicRangeExhausted(
                "predicted jump exp(-%.1f) underflows; chord (%g, %g) is unmeasurable"
                % (depth, exp.theta, exp.s)
            )
        if mode == "exact":
            values[i, j] = depth
            continue
        src = BoundarySource.piecewise_ab(
            geometry, intensity, (exp.entry_angle, exp.exit_angle)
        )
        fld = solve(geometry, partition, medium, src, **solver_kwargs)
        omega = np.array([-math.sin(exp.theta), math.cos(exp.theta)])
        base = geometry.boundary_point_at(exp.entry_angle)
        exit_ = geometry.boundary_point_at(exp.exit_angle)
        chord = float(geometry.tau_many(exit_.position, omega, -1))
        pd = PredictedDiscontinuity(
            base, omega, exit_, chord,
            abs(float(exit_.normal @ omega)) < 1e-6,
        )
        eps = None
        if eps0 is not None:
            eps = np.array([4.0, 2.0, 1.0]) * eps0
        meas = extract_jump(fld, pd, eps_list=eps)
        if meas.extracted <= jump_floor * intensity:
            missing[i, j] = True
        else:
            values[i, j] = -math.log(meas.extracted / intensity)
    if np.any(missing):
        logger.warning("inpainting %d sinogram entries", int(np.sum(missing)))
        for i in range(len(thetas)):
            bad = missing[i]
            if np.any(bad):
                good = ~bad
                values[i, bad] = np.interp(
                    offsets[bad], offsets[good], values[i, good]
                )
    return Sinogram(thetas, offsets, values, missing)


# ---------------------------------------------------------------------------
# filtered backprojection


def ram_lak_kernel(n_offsets, spacing):
    """Discrete ramp-filter kernel on 2n-1 taps, band-limited to the
    offset Nyquist frequency."""
    j = np.arange(-(n_offsets - 1), n_offsets)
    kernel = np.zeros(j.size)
    kernel[j == 0] = 1.0 / (4.0 * spacing**2)
    odd = j % 2 != 0
    kernel[odd] = -1.0 / (np.pi**2 * j[odd] ** 2 * spacing**2)
    return kernel


@dataclass(eq=False)
class ReconstructedImage:
    """Attenuation map on an N x N grid over the bounding square."""

    values: np.ndarray  # (n, n), [i, j] at (xs[i], ys[j])
    xs: np.ndarray
    ys: np.ndarray
    mask: np.ndarray  # support mask (inside the domain)

    def save_pgm(self, path):
        """16-bit ASCII PGM; the scale mapping gray levels back to
        attenuation values is recorded in the header comment."""
        vmax = float(np.max(self.values))
        scale = 65535.0 / vmax if vmax > 0 else 1.0
        img = np.clip(np.round(self.values * scale), 0, 65535).astype(int)
        with open(path, "w") as fh:
            fh.write("P2\n# raybound reconstruction; value = gray / %.12e\n" % scale)
            fh.write("%d %d\n65535\n" % (img.shape[0], img.shape[1]))
            # rows top-to-bottom = decreasing y; columns = increasing x
            for j in range(img.shape[1] - 1, -1, -1):
                fh.write(" ".join(str(v) for v in img[:, j]) + "\n")

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("x,y,mu\n")
            for i, x in enumerate(self.xs):
                for j, y in enumerate(self.ys):
                    fh.write("%.12e,%.12e,%.12e\n" % (x, y, self.values[i, j]))


def fbp_reconstruct(sino, n_image, geometry=None, center=(0.0, 0.0), radius=None):
    """Parallel-beam filtered backprojection of a sinogram.

    Ram-Lak filtering by zero-padded discrete convolution per angle, then
    backprojection with linear interpolation in the offset.  The output is
    masked to the circular support.  Requires at least 60 angles and an
    odd offset count of at least 65.
    """
    n_angles, n_off = sino.values.shape
    if n_off < 65 or n_off % 2 == 0:
        raise GridTooCoarse("need an odd offset count >= 65, got %d" % n_off)
    if n_angles < 60:
        raise GridTooCoarse("need >= 60 angles, got %d" % n_angles)
    if geometry is not None:
        center = geometry.center
        radius = geometry.radius
    if radius is None:
        radius = float(np.max(np.abs(sino.offsets)))
    ds = float(sino.offsets[1] - sino.offsets[0])
    kernel = ram_lak_kernel(n_off, ds)
    filtered = np.empty_like(sino.values)
    for m in range(n_angles):
        # full zero-padded convolution, sliced back to the sample positions
        full = np.convolve(sino.values[m], kernel)
        filtered[m] = ds * full[n_off - 1 : 2 * n_off - 1]
    xs = center[0] + np.linspace(-radius, radius, n_image)
    ys = center[1] + np.linspace(-radius, radius, n_image)
    xg, yg = np.meshgrid(xs - center[0], ys - center[1], indexing="ij")
    recon = np.zeros((n_image, n_image))
    for m, theta in enumerate(sino.thetas):
        t = xg * math.cos(theta) + yg * math.sin(theta)
        recon += np.interp(t, sino.offsets, filtered[m], left=0.0, right=0.0)
    recon *= np.pi / n_angles
    rr = np.sqrt(xg**2 + yg**2)
    mask = rr <= radius
    recon[~mask] = 0.0
    return ReconstructedImage(recon, xs, ys, mask)


def image_error(recon, truth, mask_radius_fraction=0.8):
    """(relative L2, max abs) error over the interior mask r < 0.8 * radius
    (the rim ring is excluded: it carries the usual reconstruction ringing).

    ``truth`` is a callable mapping (n, 2) points to attenuation values,
    or an array matching the reconstruction grid.
    """
    xg, yg = np.meshgrid(recon.xs, recon.ys, indexing="ij")
    cx = 0.5 * (recon.xs[0] + recon.xs[-1])
    cy = 0.5 * (recon.ys[0] + recon.ys[-1])
    radius = 0.5 * (recon.xs[-1] - recon.xs[0])
    rr = np.sqrt((xg - cx) ** 2 + (yg - cy) ** 2)
    mask = rr < mask_radius_fraction * radius
    if callable(truth):
        pts = np.stack([xg[mask], yg[mask]], axis=1)
        t = truth(pts)
    else:
        t = np.asarray(truth)[mask]
    diff = recon.values[mask] - t
    rel_l2 = float(np.linalg.norm(diff) / np.linalg.norm(t))
    return rel_l2, float(np.max(np.abs(diff)))
