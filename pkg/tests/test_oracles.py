import numpy as np
from numpy.testing import assert_allclose

import oracles

# recorded before the lattice engine existed
FROZEN_T2_AREA = {
    0.05: 0.0001989747719123882,
    0.1: 0.0007962725934201474,
    0.2: 0.0031910899414057227,
    0.5: 0.02021358849683343,
}
FROZEN_T2_SLOPE = 2.0015180537118225
FROZEN_SUBDIVIDED = {0.01: 0.00636622, 0.1: 0.06368853, 0.5: 0.32172249}


def test_t2_area_frozen():
    for lam, val in FROZEN_T2_AREA.items():
        assert_allclose(oracles.torus2_sublevel_area(lam), val, rtol=1e-9)


def test_t2_area_small_lambda_asymptotics():
    # area of a disk of radius lam, normalized by (2 pi)^2
    for lam in (1e-3, 1e-2):
        assert_allclose(oracles.torus2_sublevel_area(lam), lam**2 / (4 * np.pi), rtol=1e-4)


def test_t2_slope_frozen():
    assert_allclose(oracles.torus2_ns_slope(), FROZEN_T2_SLOPE, rtol=1e-9)
    assert abs(FROZEN_T2_SLOPE - 2) < 0.01


def test_circle_oracle_matches_arccos_form():
    lam = np.geomspace(1e-3, 2, 50)
    assert_allclose(oracles.circle_power_density(1.0, lam), np.arccos(1 - lam**2 / 2) / np.pi, atol=1e-12)


def test_subdivided_oracle_frozen():
    lams = np.array(list(FROZEN_SUBDIVIDED))
    assert_allclose(oracles.subdivided_circle_density(lams), list(FROZEN_SUBDIVIDED.values()), atol=1e-8)
