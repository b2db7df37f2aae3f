"""Optical depth, attenuation, and phase function tests."""

import numpy as np
import pytest
from scipy.integrate import quad

from raybound.errors import SpanExceedsChord
from raybound.geometry import (
    CircleInterface,
    Disk,
    SubdomainPartition,
    fibonacci_sphere,
    sample_interior,
    tau,
)
from raybound.media import MediumModel, attenuation, optical_depth, phase_eval


@pytest.fixture
def disk():
    return Disk()


@pytest.fixture
def empty(disk):
    return SubdomainPartition()


@pytest.fixture
def two_region():
    return SubdomainPartition([CircleInterface(0.5)])


def test_depth_homogeneous(disk, empty):
    med = MediumModel([1.0], [0.0])
    assert optical_depth(med, disk, empty, (0.0, 0.0), (1.0, 0.0), 1.0) == pytest.approx(
        1.0, rel=1e-13
    )


def test_depth_two_region_diameter(disk, two_region):
    med = MediumModel([1.0, 2.0], [0.0, 0.0])
    d = optical_depth(med, disk, two_region, (1.0, 0.0), (1.0, 0.0), 2.0)
    assert d == pytest.approx(3.0, rel=1e-12)


def test_depth_zero_span(disk, empty):
    med = MediumModel([1.0], [0.5])
    assert optical_depth(med, disk, empty, (0.3, 0.1), (0.0, 1.0), 0.0) == 0.0


def test_depth_span_exceeds_chord(disk, empty):
    med = MediumModel([1.0], [0.0])
    with pytest.raises(SpanExceedsChord):
        optical_depth(med, disk, empty, (0.0, 0.0), (1.0, 0.0), 1.5)


def test_attenuation_examples(disk, empty, two_region):
    med = MediumModel([1.0], [0.0])
    assert attenuation(med, disk, empty, (1.0, 0.0), (1.0, 0.0), 2.0) == pytest.approx(
        np.exp(-2.0), rel=1e-12
    )
    assert attenuation(med, disk, empty, (0.5, 0.2), (0.0, 1.0), 0.0) == 1.0
    med2 = MediumModel([1.0, 2.0], [0.0, 0.0])
    assert attenuation(med2, disk, two_region, (1.0, 0.0), (1.0, 0.0), 2.0) == pytest.approx(
        np.exp(-3.0), rel=1e-12
    )


def test_depth_additivity(disk, two_region):
    med = MediumModel([0.7, 1.9], [0.0, 0.0])
    rng = np.random.default_rng(21)
    for _ in range(100):
        x = sample_interior(disk, 1, rng)[0]
        ang = rng.uniform(0, 2 * np.pi)
        xi = np.array([np.cos(ang), np.sin(ang)])
        span = tau(disk, x, xi, -1)
        a = rng.uniform(0, span)
        b = span - a
        whole = optical_depth(med, disk, two_region, x, xi, a + b)
        parts = optical_depth(med, disk, two_region, x, xi, a) + optical_depth(
            med, disk, two_region, x - a * xi, xi, b
        )
        assert whole == pytest.approx(parts, abs=1e-12)


def test_attenuation_monotone_in_span(disk, two_region):
    med = MediumModel([1.0, 2.0], [0.0, 0.0])
    x = np.array([0.9, 0.1])
    xi = np.array([1.0, 0.0])
    span = tau(disk, x, xi, -1)
    s = np.linspace(0.0, span, 40)
    vals = [attenuation(med, disk, two_region, x, xi, si) for si in s]
    assert all(v1 >= v2 - 1e-14 for v1, v2 in zip(vals, vals[1:]))


def test_depth_smooth_field_against_reference(disk, empty):
    # closed-form radial coefficient checked against adaptive quadrature
    med = MediumModel([lambda p: 1.0 + 0.5 * np.sum(p * p, axis=-1)], [0.0])
    x = np.array([0.4, 0.3])
    xi = np.array([np.cos(0.7), np.sin(0.7)])
    span = tau(disk, x, xi, -1)

    def integrand(s):
        p = x - s * xi
        return 1.0 + 0.5 * float(p @ p)

    ref, _ = quad(integrand, 0.0, span, epsabs=1e-13)
    got = optical_depth(med, disk, empty, x, xi, span)
    assert got == pytest.approx(ref, rel=1e-12)


def test_mu_outside_domain_is_zero(disk, empty):
    med = MediumModel([1.0], [0.5])
    assert med.mu_t_at(np.array([2.0, 0.0]), disk, empty) == 0.0
    assert med.mu_s_at(np.array([0.0, -3.0]), disk, empty) == 0.0


def test_mu_s_exceeding_mu_t_rejected(disk, empty):
    med = MediumModel([1.0], [1.5])
    with pytest.raises(ValueError, match="mu_s"):
        med.validate(disk, empty)


def test_negative_coefficients_rejected():
    with pytest.raises(ValueError):
        MediumModel([-1.0], [0.0])


def test_phase_isotropic_values(disk):
    med2 = MediumModel([1.0], [0.5], dim=2)
    med3 = MediumModel([1.0], [0.5], dim=3)
    assert phase_eval(med2, (0, 0), (1, 0), (0, 1)) == pytest.approx(1.0 / (2 * np.pi))
    assert phase_eval(med3, (0, 0, 0), (1, 0, 0), (0, 0, 1)) == pytest.approx(
        1.0 / (4 * np.pi)
    )


def test_phase_hg_zero_asymmetry_is_isotropic():
    med = MediumModel([1.0], [0.5], phase="hg", g=0.0, dim=2)
    assert phase_eval(med, (0, 0), (1, 0), (0, 1)) == pytest.approx(1.0 / (2 * np.pi))


@pytest.mark.parametrize("g", [0.0, 0.3, -0.6, 0.85])
def test_phase_normalization_2d(g):
    med = MediumModel([1.0], [0.5], phase="hg", g=g, dim=2)
    n = 256
    ang = 2 * np.pi * np.arange(n) / n
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    xi = np.array([1.0, 0.0])
    total = (2 * np.pi / n) * sum(phase_eval(med, (0, 0), xi, d) for d in dirs)
    assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("g", [0.0, 0.5])
def test_phase_normalization_3d(g):
    med = MediumModel([1.0], [0.5], phase="hg", g=g, dim=3)
    pts, w = fibonacci_sphere(512)
    xi = np.array([0.0, 0.0, 1.0])
    total = sum(wi * phase_eval(med, (0, 0, 0), xi, p) for p, wi in zip(pts, w))
    assert total == pytest.approx(1.0, abs=1e-4)


def test_hg_asymmetry_bounds():
    with pytest.raises(ValueError):
        MediumModel([1.0], [0.5], phase="hg", g=1.0)


def test_constant_tables(disk):
    med = MediumModel([1.0, 2.0], [0.5, 0.25])
    mt, ms = med.constant_tables
    np.testing.assert_allclose(mt, [1.0, 2.0])
    np.testing.assert_allclose(ms, [0.5, 0.25])
    smooth = MediumModel([lambda p: np.ones(p.shape[0])], [0.0])
    assert not smooth.is_constant
