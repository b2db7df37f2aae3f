"""Shared fixtures: the expensive reference solves are session-scoped so
the per-module tests and the acceptance suite reuse one solve each."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from raybound.boundary import BoundarySource
from raybound.geometry import CircleInterface, Disk, SubdomainPartition
from raybound.media import MediumModel
from raybound.solver import DirectionSet, GridSpec, solve


@pytest.fixture(scope="session")
def unit_disk():
    return Disk()


@pytest.fixture(scope="session")
def bench64(unit_disk):
    """Homogeneous scattering benchmark (mu_t=1, mu_s=0.5, unit inflow)
    at h=1/64 with 64 directions, first two scattered terms retained."""
    return solve(
        unit_disk,
        SubdomainPartition(),
        MediumModel([1.0], [0.5]),
        BoundarySource.constant(unit_disk, 1.0),
        grid=GridSpec.cover(unit_disk, 1.0 / 64),
        directions=DirectionSet.uniform_circle(64),
        tol=1e-6,
        keep_terms=2,
    )


@pytest.fixture(scope="session")
def bench128(unit_disk):
    """Same benchmark at h=1/128 with 128 directions (refinement stage)."""
    return solve(
        unit_disk,
        SubdomainPartition(),
        MediumModel([1.0], [0.5]),
        BoundarySource.constant(unit_disk, 1.0),
        grid=GridSpec.cover(unit_disk, 1.0 / 128),
        directions=DirectionSet.uniform_circle(128),
        tol=1e-6,
    )


def solve_two_level(disk, mu_s, h, n_dirs, tol, phase="isotropic", g=0.0,
                    inner_mu_t=None, intensity=1.0):
    """Two-level source solve used by the jump studies: gamma at +-pi/2,
    right half radiating; optionally a two-region attenuation map."""
    if inner_mu_t is None:
        part = SubdomainPartition()
        med = MediumModel([1.0], [mu_s], phase=phase, g=g)
    else:
        part = SubdomainPartition([CircleInterface(0.5)])
        med = MediumModel([1.0, inner_mu_t], [mu_s, mu_s], phase=phase, g=g)
    src = BoundarySource.piecewise_ab(disk, intensity, (-np.pi / 2, np.pi / 2))
    return solve(
        disk,
        part,
        med,
        src,
        grid=GridSpec.cover(disk, h),
        directions=DirectionSet.uniform_circle(n_dirs),
        tol=tol,
    )


@pytest.fixture(scope="session")
def ab128(unit_disk):
    """Two-level source, homogeneous mu_t=1, mu_s=0.5, h=1/128, 128 dirs."""
    return solve_two_level(unit_disk, 0.5, 1.0 / 128, 128, tol=2e-4)


@pytest.fixture(scope="session")
def ab128_two_region(unit_disk):
    """Two-level source over the two-region map (inner disk mu_t=2)."""
    return solve_two_level(unit_disk, 0.5, 1.0 / 128, 128, tol=2e-4, inner_mu_t=2.0)
