import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

import oracles
from l2ext import ecat, spectral
from l2ext.ecat import VirtualModule
from l2ext.fiber import TorusGrid
from l2ext.homology import homology
from l2ext.spectral import SpectralDensity
from l2ext.topology import koszul_complex

from test_oracles import FROZEN_T2_AREA, FROZEN_T2_SLOPE


def test_closed_form_examples():
    assert spectral.closed_form_density(1.0, 2.0) == 1.0
    assert_allclose(spectral.closed_form_density(2.0, 2.0), 0.5)
    lam = np.array([1e-4, 1e-3])
    assert_allclose(spectral.closed_form_density(1.0, lam), lam / np.pi, rtol=1e-6)


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0])
def test_closed_form_matches_sublevel_oracle(nu):
    lam = np.geomspace(1e-4, 3, 80)
    assert_allclose(spectral.closed_form_density(nu, lam), oracles.circle_power_density(nu, lam), atol=1e-12)


def test_lattice_density_close_to_closed_form():
    f = spectral.density(ecat.x_module(1.0, 0.0), np.geomspace(1e-2, 2, 200))
    assert np.abs(f.values - spectral.closed_form_density(1.0, f.lambdas)).max() < 1e-3


def test_density_values_bounded_and_monotone():
    f = spectral.density(ecat.direct_sum(ecat.x_module(1, 0), ecat.x_module(2, 1)))
    assert np.all(np.diff(f.values) >= 0)
    assert f.values.min() >= 0 and f.values.max() <= 2


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("theta", [0.0, 2 * np.pi / 3])
def test_ns_of_x_modules(nu, theta):
    fit = spectral.ns_estimate(spectral.density(ecat.x_module(nu, theta)))
    assert abs(fit.ns - 1 / nu) <= 0.05 / nu
    assert_allclose(fit.capacity * fit.ns, 1.0)


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0])
def test_capacity_of(nu):
    assert abs(spectral.capacity_of(ecat.x_module(nu, 1.0)) - nu) <= 0.05 * nu


def test_projective_has_trivial_torsion():
    f = spectral.density(VirtualModule.projective(2))
    assert f.is_zero()
    fit = spectral.ns_estimate(f)
    assert fit.ns == math.inf and fit.capacity == 0
    assert spectral.capacity_of(VirtualModule.projective(1)) == 0
    assert fit.to_json()["ns"] == "inf"


def test_fit_error_on_narrow_window():
    f = spectral.density(ecat.x_module(1.0, 0.0))
    with pytest.raises(spectral.FitError):
        spectral.ns_estimate(f, (0.1, 0.11))


def test_additivity_and_max_capacity():
    x1, x2 = ecat.x_module(1.0, 0.0), ecat.x_module(2.0, 2 * np.pi / 3)
    lam = spectral.log_lambdas()
    f1, f2 = spectral.density(x1, lam), spectral.density(x2, lam)
    f = spectral.density(ecat.direct_sum(x1, x2), lam)
    assert np.abs(f.values - (f1.values + f2.values)).max() <= 1e-12
    assert abs(spectral.capacity_of(ecat.direct_sum(x1, x2)) - 2.0) <= 0.1


def test_torus2_h0_ns_against_oracle():
    f = homology(koszul_complex(2), 0).torsion_density
    fit = spectral.ns_estimate(f)
    assert abs(fit.ns - FROZEN_T2_SLOPE) <= 0.1 * FROZEN_T2_SLOPE
    assert abs(fit.capacity - 0.5) <= 0.05
    # the lattice density tracks the sublevel-area oracle itself
    for lam, area in FROZEN_T2_AREA.items():
        if lam >= 0.2:
            assert abs(f(lam) - area) < 2e-3


def closed(nu, lam=None):
    lam = spectral.log_lambdas(1e-9, 2.0) if lam is None else lam
    return SpectralDensity(lam, spectral.closed_form_density(nu, lam), 0, TorusGrid(1, 2**40), 1)


def test_dilatational_examples():
    c = spectral.dilatationally_equivalent(closed(1.0), closed(1.0))
    assert_allclose(c, 10 ** (1 / 32))
    assert spectral.dilatationally_equivalent(closed(1.0), closed(2.0), 1e3) is None
    a = spectral.density(ecat.x_module(1.0, 0.0))
    b = spectral.density(ecat.x_module(1.0, 2.0))
    c = spectral.dilatationally_equivalent(a, b, 10)
    assert c is not None and c < 1.5


def test_dilatation_of_rescaled_density():
    lam = spectral.log_lambdas(1e-9, 2.0)
    f = SpectralDensity(lam, spectral.closed_form_density(1.0, 3 * lam), 0, TorusGrid(1, 2**40), 1)
    c = spectral.dilatationally_equivalent(f, closed(1.0), 100)
    assert 3 <= c <= 3 * 10 ** (1 / 32)


def test_capacity_sandwich_examples():
    assert spectral.exact_sequence_capacity_check(1.0, 3.0, 2.0)
    assert spectral.exact_sequence_capacity_check(0.0, 0.0, 0.0)
    assert not spectral.exact_sequence_capacity_check(3.0, 1.0, 1.0)


def test_csv_and_json_exports():
    f = spectral.density(ecat.x_module(1.0, 0.0), spectral.log_lambdas(1e-2, 1, 4))
    lines = f.to_csv().splitlines()
    assert lines[0] == "lambda,F" and len(lines) == len(f.lambdas) + 1
    assert float(lines[1].split(",")[0]) == f.lambdas[0]
    fit = spectral.ns_estimate(spectral.density(ecat.x_module(1.0, 0.0)))
    assert set(fit.to_json()) == {"ns", "capacity", "window", "stderr"}


@settings(max_examples=15, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.0, 2 * np.pi))
def test_density_monotone_and_dual_invariant(nu, theta):
    g = TorusGrid(1, 512)
    x = ecat.x_module(nu, theta)
    lam = spectral.log_lambdas(1e-3, 2, 16)
    f = spectral.density(x, lam, g)
    assert np.all(np.diff(f.values) >= 0)
    e = spectral.density(ecat.dual_torsion(x, g), lam, g)
    assert_allclose(e.values, f.values, atol=1e-12)
