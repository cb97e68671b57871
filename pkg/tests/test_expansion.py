import numpy as np
import pytest

from helmhomog import fem
from helmhomog.correctors import CorrectorSet, HomogenizedCoeffs, homogenize_ensemble
from helmhomog.expansion import (CorrectorLookup, RegionEmpty, ScatterSetup, compute_Heps,
                                 diagnostics_FG, error_report, exterior_alpha_mask,
                                 heterogeneous_coefficients, homogenized_operator,
                                 run_realization, solve_U1, solve_u0, two_scale_expand,
                                 u0_derivatives)
from helmhomog.microstructure import MediumParams
from helmhomog.scattering import PlaneWave, TruncationClosure

from conftest import default_process

EPS = 0.5
CLOSURE = TruncationClosure(4.0, 5.0, 1.0, 2.0, kind="PML_BOX", pml_width=0.6)


def make_setup(amplitude=1.0):
    return ScatterSetup.build(CLOSURE, 0.05, PlaneWave(5.0, amplitude=amplitude))


@pytest.fixture(scope="module")
def case(small_correctors):
    ms, cs = small_correctors
    hc = HomogenizedCoeffs.from_correctors([cs])
    setup = make_setup()
    hom = homogenized_operator(setup, hc)
    u0 = solve_u0(hc, setup, hom)
    lookup = CorrectorLookup(cs, EPS)
    a, n = heterogeneous_coefficients(setup, MediumParams(), EPS, ms, lookup)
    return dict(ms=ms, cs=cs, hc=hc, setup=setup, hom=hom, u0=u0, lookup=lookup, a=a, n=n)


def zero_set(cs):
    z = np.zeros_like(cs.phi)
    return CorrectorSet(cs.mesh, cs.dofs, z, z, z, cs.massive_T, cs.a_elem, cs.n_elem)


def test_lookup_alignment(case):
    assert case["lookup"].is_aligned(case["setup"])
    assert not CorrectorLookup(case["cs"], 0.3).is_aligned(case["setup"])
    with pytest.raises(ValueError):
        CorrectorLookup(case["cs"], 0.0)


def test_aligned_medium_equals_centroid_sampling(case):
    fallback = heterogeneous_coefficients(case["setup"], MediumParams(), EPS, case["ms"])
    mismatch = np.mean(fallback[1] != case["n"])
    assert mismatch < 1e-3
    out = ~case["setup"].in_d
    assert np.all(case["n"][out] == 1.0)


def test_u0_background_is_incident():
    setup = make_setup()
    sol = solve_u0(HomogenizedCoeffs.constant(1.0, 1.0), setup)
    assert np.max(np.abs(sol.scattered)) == 0.0


def test_u0_deterministic_and_residual(case):
    again = solve_u0(case["hc"], case["setup"])
    assert np.max(np.abs(again.values - case["u0"].values)) < 1e-12
    from helmhomog.scattering import contrast_operator
    setup = case["setup"]
    sol = case["u0"]
    A = case["hom"].A
    C = contrast_operator(setup.mesh, setup.dofs, sol.a_elem, sol.n_elem, 5.0)
    rhs = -(C @ sol.incident_values)
    assert np.linalg.norm(A @ sol.scattered - rhs) <= 1e-8 * np.linalg.norm(rhs)


def test_two_scale_trivial_cases(case):
    setup, u0 = case["setup"], case["u0"].values
    w0 = two_scale_expand(setup, u0, CorrectorLookup(zero_set(case["cs"]), EPS))
    assert np.array_equal(w0, u0)
    w = two_scale_expand(setup, u0, case["lookup"])
    outside = ~setup.closed_d_vertices()
    assert np.array_equal(w[setup.dofs.vertex_dof[outside]], u0[setup.dofs.vertex_dof[outside]])


def test_two_scale_bound(case):
    setup, u0, cs = case["setup"], case["u0"].values, case["cs"]
    w = two_scale_expand(setup, u0, case["lookup"])
    lhs = fem.norm_region(setup.mesh, setup.dofs, w - u0, fem.SCATTERER_D, "L2")
    grad = fem.norm_region(setup.mesh, setup.dofs, u0, fem.SCATTERER_D, "H1semi")
    assert lhs <= EPS * np.max(np.abs(cs.phi)) * grad * 1.1


def test_heps_trivial_and_support(case):
    setup, u0 = case["setup"], case["u0"].values
    hc = case["hc"]
    a = case["a"].copy()
    a[setup.in_d] = hc.a_hom
    H, dn = compute_Heps(setup, CorrectorLookup(zero_set(case["cs"]), EPS), hc, u0, a, case["n"])
    assert np.max(np.abs(H)) == 0.0
    H, dn = compute_Heps(setup, case["lookup"], hc, u0, case["a"], case["n"])
    assert not np.any(H[~setup.in_d]) and not np.any(dn[~setup.in_d])
    assert np.any(H[setup.in_d])


def test_u1_zero_and_linear(case):
    setup, hc, hom, u0 = case["setup"], case["hc"], case["hom"], case["u0"].values
    nt = setup.mesh.n_triangles
    zero = solve_U1(setup, hc, np.zeros((nt, 2)), np.zeros(nt), u0, hom)
    assert not np.any(zero.values)
    H, dn = compute_Heps(setup, case["lookup"], hc, u0, case["a"], case["n"])
    one = solve_U1(setup, hc, H, dn, u0, hom).values
    two = solve_U1(setup, hc, 2 * H, 2 * dn, u0, hom).values
    assert np.max(np.abs(two - 2 * one)) <= 1e-12 * np.max(np.abs(two)) * 10


def test_heps_ensemble_mean_is_zero():
    hc, sets = homogenize_ensemble(default_process(period=10.0), MediumParams(), 1e7, 10.0, 0.1,
                                   8, 17, keep_sets=True)
    setup = make_setup()
    u0 = solve_u0(hc, setup).values
    ints = []
    for cs in sets:
        lk = CorrectorLookup(cs, EPS)
        a, n = heterogeneous_coefficients(setup, MediumParams(), EPS, None, lk)
        H, _ = compute_Heps(setup, lk, hc, u0, a, n)
        ints.append(np.sum(H * setup.mesh.areas[:, None], axis=0))
    ints = np.array(ints)
    for part in (ints.real, ints.imag):
        se = part.std(axis=0, ddof=1) / np.sqrt(len(part))
        assert np.all(np.abs(part.mean(axis=0)) <= 3 * se)


def test_diagnostics_trivial_and_scaling(case):
    setup, u0 = case["setup"], case["u0"].values
    assert diagnostics_FG(setup, CorrectorLookup(zero_set(case["cs"]), EPS), u0,
                          case["a"], case["n"]) == (0.0, 0.0)
    base = diagnostics_FG(setup, case["lookup"], u0, case["a"], case["n"])
    frozen = CorrectorLookup(case["cs"], EPS)
    frozen._locate = case["lookup"]._locate            # same sample points, doubled prefactor
    frozen.epsilon = 2 * EPS
    scaled = diagnostics_FG(setup, frozen, u0, case["a"], case["n"])
    assert np.allclose(scaled, 2 * np.array(base), rtol=1e-10)


def test_u0_derivatives_of_linear_field():
    setup = make_setup()
    u = setup.mesh.vertices @ np.array([0.3, -1.1])
    d, dd = u0_derivatives(setup, u)
    sel = setup.dofs.vertex_dof[setup.closed_d_vertices()]
    assert np.allclose(d[0][sel], 0.3) and np.allclose(d[1][sel], -1.1)
    assert np.max(np.abs(dd)) < 1e-10


def test_error_report_trivial_and_additive(case):
    setup, u0 = case["setup"], case["u0"].values
    zero = np.zeros_like(u0)
    row = error_report(setup, u0, u0, u0, zero, 0.25, EPS, 1)
    assert row.err_L2_box == row.err_H1_ext == row.err_L2_ext_U1 == row.err_H1_ext_U1 == 0.0
    rng = np.random.default_rng(0)
    ue = u0 + rng.normal(size=u0.shape) * 0.01
    assert error_report(setup, ue, u0, ue, zero, 0.25, EPS, 1).err_H1_D_2scale == 0.0
    d = ue - u0
    m, s = setup.mesh, setup.dofs
    box = fem.norm_region(m, s, d, (fem.EXTERIOR, fem.SCATTERER_D), "L2")
    parts = [fem.norm_region(m, s, d, t, "L2") for t in (fem.EXTERIOR, fem.SCATTERER_D)]
    assert box ** 2 == pytest.approx(parts[0] ** 2 + parts[1] ** 2, rel=1e-12)


def test_alpha_region(case):
    setup = case["setup"]
    small = exterior_alpha_mask(setup, 0.1)
    large = exterior_alpha_mask(setup, 0.5)
    assert np.all(large <= small) and large.sum() < small.sum()
    assert not np.any(small & (setup.mesh.tags != fem.EXTERIOR))
    with pytest.raises(RegionEmpty):
        exterior_alpha_mask(setup, 5.0)


def test_u1_improves_exterior_and_phase_invariance(case):
    res = run_realization(case["setup"], case["cs"], case["hc"], MediumParams(), EPS, 0.25,
                          case["u0"], case["hom"], case["ms"], seed=3)
    row = res.row
    assert row.ok and row.err_L2_ext_U1 < row.err_L2_ext_U0
    # rotate the incident phase: every norm is unchanged
    setup = make_setup(amplitude=np.exp(0.7j))
    hom = homogenized_operator(setup, case["hc"])
    u0 = solve_u0(case["hc"], setup, hom)
    rot = run_realization(setup, case["cs"], case["hc"], MediumParams(), EPS, 0.25, u0, hom,
                          case["ms"], seed=3).row
    for f in ("err_L2_box", "err_H1_ext", "err_H1_D_2scale", "err_L2_ext_U1",
              "err_H1_ext_U1", "diag_F", "diag_G"):
        assert getattr(rot, f) == pytest.approx(getattr(row, f), rel=1e-10)
