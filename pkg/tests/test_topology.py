import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

import oracles
from l2ext import ecat, fiber, homology, spectral, topology
from l2ext.ecat import VirtualModule
from l2ext.fiber import TorusGrid
from l2ext.homology import ChainError, FreeChainComplex
from l2ext.laurent import LaurentMatrix, LaurentPoly
from l2ext.topology import TopologyError, UnitaryRep

z = LaurentPoly.var(0, 1)
G1 = TorusGrid(1, 1024)


def test_koszul_shapes():
    t2 = topology.koszul_complex(2)
    assert t2.ranks == (1, 2, 1)
    z1, z2 = LaurentPoly.var(0, 2), LaurentPoly.var(1, 2)
    assert t2.d(1) == LaurentMatrix.from_rows([[z1 - 1, z2 - 1]], 2)
    assert t2.d(2) == LaurentMatrix.from_rows([[-(z2 - 1)], [z1 - 1]], 2)
    assert topology.koszul_complex(3).ranks == (1, 3, 3, 1)
    assert homology.validate(topology.koszul_complex(3)).ok


@pytest.mark.parametrize("n", [2, 3])
def test_product_of_circles_is_koszul(n):
    name = "*".join(["circle"] * n)
    prod = topology.preset_complex(name).complex
    k = topology.koszul_complex(n)
    assert prod.ranks == k.ranks
    assert all(a == b for a, b in zip(prod.boundaries, k.boundaries))


def test_presets():
    c = topology.preset_complex("circle")
    assert c.complex.ranks == (1, 1) and c.orientable_manifold and c.top_dim == 1
    sub = topology.preset_complex("circle_subdivided").complex
    assert sub.ranks == (2, 2) and homology.validate(sub).ok
    assert topology.preset_complex("torus3").complex.ranks == (1, 3, 3, 1)
    assert not topology.preset_complex("circle_sq").orientable_manifold
    with pytest.raises(TopologyError):
        topology.preset_complex("klein")


def test_unitary_rep_validation():
    with pytest.raises(TopologyError):
        UnitaryRep(1, (np.array([[2.0]]),))
    a = np.array([[0, 1], [1, 0]], dtype=complex)
    b = np.diag([1, -1]).astype(complex)
    with pytest.raises(TopologyError):
        UnitaryRep(2, (a, b))
    r = UnitaryRep.diagonal([[0.3, 1.2], [np.pi, 0.0]])
    back = UnitaryRep.from_json(json.loads(json.dumps(r.to_json())))
    for g, h in zip(r.generators, back.generators):
        assert_allclose(g, h)
    alt = UnitaryRep.from_json({"dim": 1, "generators": [[[{"re": -1.0}]]]})
    assert_allclose(alt.generators[0], [[-1]])


def test_twist_trivial_is_identity():
    c = topology.preset_complex("circle").complex
    tc = topology.twist(c, UnitaryRep.trivial(1))
    assert tc.d(1) == c.d(1)


def test_twist_sign():
    c = topology.preset_complex("circle").complex
    tc = topology.twist(c, topology.named_rep("sign", 1))
    assert (tc.d(1) - LaurentMatrix.from_rows([[-z - 1]], 1)).max_abs_coeff() < 1e-12
    h = homology.homology(tc, 0, G1)
    assert h.betti == 0
    lam = h.torsion_density.lambdas
    sel = lam >= 1e-2
    assert np.abs(h.torsion_density.values[sel] - spectral.closed_form_density(1.0, lam[sel])).max() < 2e-3
    sv = fiber.singular_values(fiber.sample(tc.d(1), G1))[:, 0]
    assert abs(G1.angles[np.argmin(sv), 0] - np.pi) < 1e-12


def test_twist_direct_sum_rep_adds_densities():
    c = topology.preset_complex("circle").complex
    lam = spectral.log_lambdas(1e-2, 2.0)
    parts = [homology.homology(topology.twist(c, UnitaryRep.diagonal([[t]])), 0, G1, lambdas=lam).torsion_density
             for t in (0.0, np.pi)]
    whole = homology.homology(topology.twist(c, topology.named_rep("diag_pm", 1)), 0, G1, lambdas=lam)
    assert whole.torsion_density.total_dim == 2
    assert_allclose(whole.torsion_density.values, parts[0].values + parts[1].values, atol=1e-12)


def test_twist_variable_mismatch():
    with pytest.raises(TopologyError):
        topology.twist(topology.koszul_complex(2), UnitaryRep.trivial(1))


def test_tor_circle():
    res = topology.koszul_resolution(1)
    t0 = topology.tor(0, res, TorusGrid(1, 4096))
    assert t0.betti == 0
    f = t0.torsion_density
    sel = f.lambdas >= 1e-2
    assert np.abs(f.values[sel] - spectral.closed_form_density(1.0, f.lambdas[sel])).max() < 1e-3
    for q in (1, 2, 5):
        e = topology.tor(q, res)
        assert e.betti == 0 and e.torsion_trivial


def test_tor_torus2_ns():
    t0 = topology.tor(0, topology.koszul_resolution(2))
    fit = spectral.ns_estimate(t0.torsion_density)
    assert abs(fit.ns - oracles.torus2_ns_slope(0.02, 0.3, 40)) < 0.1 * 2


def test_tor_rejects_invalid_resolution():
    one = LaurentMatrix.from_rows([[1]], 1)
    with pytest.raises(ChainError):
        topology.tor(0, FreeChainComplex(1, (1, 1, 1), [one, one]))
    with pytest.raises(TopologyError):
        topology.tor(-1, topology.koszul_resolution(1))


@pytest.mark.parametrize("name", ["circle", "circle_subdivided", "circle_sq"])
def test_cover_sequence(name):
    p = topology.preset_complex(name)
    rep = topology.cover_sequence_check(p.complex, p.cover_presentations)
    assert rep.passed, rep.details


def test_cover_sequence_circle_sq_ns():
    h0 = homology.homology(topology.preset_complex("circle_sq").complex, 0)
    assert abs(spectral.ns_estimate(h0.torsion_density).ns - 0.5) < 0.025


def test_cover_sequence_needs_one_variable():
    with pytest.raises(TopologyError):
        topology.cover_sequence_check(topology.koszul_complex(2), {})


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_mu_lower_repeated_summand(n):
    x = ecat.direct_sum(*[ecat.x_module(1.0, 0.0)] * n)
    assert topology.mu_lower(x, G1) == n
    up = topology.mu_upper(x, G1)
    assert up is not None and up.upper == n


def test_mu_distinct_angles():
    x = ecat.direct_sum(ecat.x_module(1.0, 0.0), ecat.x_module(1.0, np.pi))
    b = topology.mu_bounds(x, G1)
    assert (b.lower, b.upper) == (1, 1)
    cert = b.upper_certificate
    assert cert["generators"] == 1 and len(cert["clusters"]) == 2 and cert["margin"] > 0
    data = json.loads(json.dumps(b.to_json()))
    assert data["lower"] == 1 and data["upper"] == 1


def test_mu_mixed_exponents():
    x = ecat.direct_sum(ecat.x_module(1.0, 0.0), ecat.x_module(2.0, np.pi))
    assert topology.mu_lower(x, G1) == 1
    assert topology.mu_upper(x, G1).upper == 1


def test_mu_null_module():
    x = VirtualModule.of(LaurentMatrix.from_rows([[z + 3]], 1))
    assert topology.mu_lower(x, G1) == 0
    assert topology.mu_upper(x, G1).upper == 0


def test_two_point_epi():
    ok, margin = topology.two_point_epi(0.0, 1.0, np.pi, 1.0)
    assert ok and margin > 0
    ok, _ = topology.two_point_epi(0.0, 1.0, 0.0, 1.0, TorusGrid(1, 1024))
    assert not ok


def test_mu_sandwich():
    xs = [ecat.x_module(1.0, 0.0), ecat.x_module(2.0, 0.0), ecat.x_module(1.0, np.pi),
          ecat.direct_sum(ecat.x_module(1.0, 0.0), ecat.x_module(1.0, 0.0))]
    for a in xs:
        for b in xs:
            m = topology.mu_lower(ecat.direct_sum(a, b), G1)
            ma, mb = topology.mu_lower(a, G1), topology.mu_lower(b, G1)
            assert max(ma, mb) <= m <= ma + mb


def test_mu_lower_invariant_under_units():
    x = ecat.direct_sum(ecat.x_module(1.0, 0.0), VirtualModule.of(LaurentMatrix.from_rows([[z - 1]], 1)))
    alpha = fiber.matmul_symbols(LaurentMatrix.from_rows([[z + 3, 0], [1, 2 * z ** -1]], 1), x.alpha)
    y = VirtualModule(x.rank_src, x.rank_dst, alpha)
    assert topology.mu_lower(x, G1) == topology.mu_lower(y, G1) == 2


def test_morse_circle():
    rep = topology.morse_bounds(topology.preset_complex("circle"))
    assert rep.bounds == (1, 1)
    assert rep.entries[0].mu.upper == 1
    assert topology.morse_bounds(topology.preset_complex("circle"), topology.named_rep("trivial2", 1)).bounds == (1, 1)
    assert json.loads(json.dumps(rep.to_json()))["rep_dim"] == 1


def test_morse_torus2():
    rep = topology.morse_bounds(topology.preset_complex("torus2"), with_upper=False)
    assert all(b >= 1 for b in rep.bounds)
    assert rep.bounds == (1, 2, 1)


def test_morse_projective_h0():
    c = FreeChainComplex(1, (1, 0), [LaurentMatrix.zeros(1, 0, 1)])
    assert topology.morse_bounds(c).bounds[0] >= 1


@pytest.mark.parametrize("name,grid", [("circle", None), ("torus2", None), ("torus3", TorusGrid(3, 32))])
def test_brooks(name, grid):
    assert topology.brooks_h0_check(topology.preset_complex(name), grid).passed
