import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from l2ext import fiber
from l2ext.fiber import SampledMatrix, TorusGrid
from l2ext.laurent import LaurentMatrix, LaurentPoly
from l2ext.topology import koszul_complex

z = LaurentPoly.var(0, 1)
ZM1 = LaurentMatrix.from_rows([[z - 1]], 1)
T2 = koszul_complex(2)


def test_grid_basics():
    g = TorusGrid(2, 8)
    assert g.size == 64
    assert_allclose(g.weight * g.size, 1.0)
    assert g.angles.shape == (64, 2)
    assert_allclose(g.angles[1], [0, 2 * np.pi / 8])  # last coordinate runs fastest
    with pytest.raises(ValueError):
        TorusGrid(1, 1)


def test_default_points():
    assert TorusGrid.default(1).points_per_dim == 4096
    assert TorusGrid.default(2).points_per_dim == 256
    assert TorusGrid.default(3).points_per_dim == 32


def test_sample_fourth_roots():
    s = fiber.sample(ZM1, TorusGrid(1, 4))
    assert_allclose(s.values[:, 0, 0], [0, 1j - 1, -2, -1j - 1], atol=1e-15)
    assert s.provenance == "laurent"


def test_sample_identity_and_torus_row():
    s = fiber.sample(LaurentMatrix.identity(2, 1), TorusGrid(1, 16))
    assert_allclose(s.values, np.broadcast_to(np.eye(2), (16, 2, 2)))
    d1 = fiber.sample(T2.d(1), TorusGrid(2, 8))
    assert d1.values.shape == (64, 1, 2)
    ang = TorusGrid(2, 8).angles
    assert_allclose(d1.values[:, 0, 1], np.exp(1j * ang[:, 1]) - 1, atol=1e-14)


def test_singular_values_examples():
    s = SampledMatrix(TorusGrid(1, 2), np.array([[[2.0]], [[0.5]]]), "scalar-symbol")
    assert_allclose(fiber.singular_values(s)[:, 0], [2, 0.5])
    g = TorusGrid(1, 4)
    assert_allclose(fiber.singular_values(fiber.sample(ZM1, g))[2], [2])
    g2 = TorusGrid(2, 16)
    sv = fiber.singular_values(fiber.sample(T2.d(1), g2))[:, 0]
    zz = np.exp(1j * g2.angles) - 1
    assert_allclose(sv, np.sqrt((np.abs(zz) ** 2).sum(axis=1)), atol=1e-12)


def test_singular_values_ascending():
    s = SampledMatrix(TorusGrid(1, 2), np.array([np.diag([3.0, 1.0, 2.0])] * 2), "scalar-symbol")
    assert_allclose(fiber.singular_values(s)[0], [1, 2, 3])


def test_rank_profile_examples():
    prof = fiber.rank_profile(fiber.sample(ZM1, TorusGrid(1, 4)))
    assert_array_equal(prof.fiber_ranks, [0, 1, 1, 1])
    assert prof.generic_rank == 1
    zero = LaurentMatrix.zeros(2, 3, 1)
    assert fiber.rank_profile(fiber.sample(zero, TorusGrid(1, 8))).generic_rank == 0
    d2 = fiber.rank_profile(fiber.sample(T2.d(2), TorusGrid(2, 8)))
    assert d2.generic_rank == 1
    assert_array_equal(np.flatnonzero(d2.fiber_ranks == 0), [0])


def test_vn_dims_examples():
    assert fiber.vn_dim_kernel(ZM1) == 0
    assert fiber.vn_dim_kernel(LaurentMatrix.zeros(1, 1, 1)) == 1
    assert fiber.vn_dim_kernel(T2.d(2)) == 0
    assert fiber.vn_dim_image_closure(ZM1) == 1
    assert fiber.vn_dim_image_closure(LaurentMatrix.identity(3, 1)) == 3
    assert fiber.vn_dim_image_closure(T2.d(1)) == 1


@pytest.mark.parametrize("n", [4, 8, 16])
def test_integrality_across_grids(n):
    for c in (koszul_complex(1), koszul_complex(2), koszul_complex(3)):
        for i in range(1, c.top + 1):
            a = c.d(i)
            g = TorusGrid(c.num_vars, n)
            k = fiber.vn_dim_kernel(a, g)
            assert k == fiber.vn_dim_kernel(a)
            assert k + fiber.vn_dim_image_closure(a, g) == a.cols
            assert fiber.vn_dim_image_closure(a.adjoint(), g) == fiber.vn_dim_image_closure(a, g)


def test_rank_profile_unitary_invariance():
    rng = np.random.default_rng(3)
    g = TorusGrid(2, 16)
    s = fiber.sample(T2.d(2), g)
    q, _ = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    rotated = SampledMatrix(g, q @ s.values, "scalar-symbol")
    assert_array_equal(fiber.rank_profile(s).fiber_ranks, fiber.rank_profile(rotated).fiber_ranks)


def test_abs_power_symbol():
    g = TorusGrid(1, 8)
    s = fiber.sample(fiber.abs_power(np.pi, 2.0), g)
    assert s.provenance == "scalar-symbol"
    assert_allclose(s.values[:, 0, 0], np.abs(np.exp(1j * g.angles[:, 0]) + 1) ** 2, atol=1e-14)


def test_fiber_abs_is_polar_part():
    g = TorusGrid(2, 8)
    s = fiber.sample(T2.d(1), g)
    a = fiber.fiber_abs(s).values
    assert_allclose(a @ a, np.conj(np.swapaxes(s.values, 1, 2)) @ s.values, atol=1e-12)
    assert_allclose(a, np.conj(np.swapaxes(a, 1, 2)), atol=1e-14)


def test_kernel_and_cokernel_bases():
    vals = fiber.sample(T2.d(1), TorusGrid(2, 8)).values
    k = fiber.fiber_kernel_basis(vals, 1)
    assert np.abs(vals @ k)[1:].max() < 1e-12
    c = fiber.fiber_cokernel_basis(fiber.sample(T2.d(2), TorusGrid(2, 8)).values, 1)
    d2 = fiber.sample(T2.d(2), TorusGrid(2, 8)).values
    assert np.abs(np.conj(np.swapaxes(c, 1, 2)) @ d2).max() < 1e-12


def test_threads_deterministic():
    g = TorusGrid(2, 128)
    s = fiber.sample(T2.d(1), g)
    fiber.set_threads(1)
    a = fiber.singular_values(s)
    fiber.set_threads(4)
    try:
        b = fiber.singular_values(s)
    finally:
        fiber.set_threads(1)
    assert_array_equal(a, b)


def test_combinators_stay_laurent():
    assert isinstance(fiber.hstack_symbols(ZM1, ZM1), LaurentMatrix)
    mixed = fiber.hstack_symbols(ZM1, fiber.abs_power(0.0, 1.0))
    assert mixed.shape == (1, 2)
    g = TorusGrid(1, 8)
    pinned = fiber.hstack_symbols(fiber.sample(ZM1, g), ZM1)
    assert isinstance(pinned, SampledMatrix) and pinned.grid == g
