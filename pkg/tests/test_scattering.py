import logging

import numpy as np
import pytest

from helmhomog import fem
from helmhomog.benchmarks import cylinder_series
from helmhomog.scattering import (PlaneWave, TooCloseToBoundary, TruncationClosure,
                                  background_coefficients, exterior_eval,
                                  exterior_from_solution, recover_flux, solve_helmholtz,
                                  square_boundary)

K = 5.0
WAVELENGTH = 2 * np.pi / K
RADIUS, N_IN = 0.5, 2.0


def disk_coefficients(mesh):
    inside = fem.element_average(mesh, lambda p: (np.hypot(p[:, 0], p[:, 1]) < RADIUS) * 1.0, 4)
    a, _ = background_coefficients(mesh)
    return a, 1.0 + (N_IN - 1.0) * inside


def cylinder_setup(per_wavelength, amplitude=1.0, angle=0.0):
    h = WAVELENGTH / per_wavelength
    n_box = 2 * round(1.5 * WAVELENGTH / h)
    n_d = 2 * round(0.7 / h)
    side, d_side, w = n_box * h, n_d * h, round(0.5 * WAVELENGTH / h) * h
    closure = TruncationClosure(side, K, scatterer_side=d_side, kind="PML_BOX", pml_width=w)
    mesh, dofs = closure.build_mesh(h)
    a, n = disk_coefficients(mesh)
    inc = PlaneWave.from_angle(K, angle, amplitude)
    return closure, solve_helmholtz(closure, mesh, dofs, a, n, inc), inc, d_side


@pytest.fixture(scope="module")
def cylinder():
    return cylinder_setup(40)


def test_plane_wave_basics():
    pw = PlaneWave(2.0, (3.0, 4.0))
    assert np.linalg.norm(pw.direction) == pytest.approx(1.0, abs=1e-14)
    x = np.array([[0.3, -0.1]])
    g = pw.gradient(x)
    assert np.allclose(g, 2j * pw(x)[:, None] * np.array([0.6, 0.8]))
    with pytest.raises(ValueError):
        PlaneWave(-1.0)


def test_closure_validation(caplog):
    with pytest.raises(ValueError):
        TruncationClosure(2.0, K, scatterer_side=2.0)
    with pytest.raises(ValueError):
        TruncationClosure(4.0, K, kind="DTN")
    with pytest.raises(ValueError):
        TruncationClosure(4.0, K, kind="PML_BOX")
    with caplog.at_level(logging.WARNING):
        TruncationClosure(2.5, K)
    assert "below one wavelength" in caplog.text


@pytest.mark.parametrize("kind", ["IMPEDANCE_BOX", "PML_BOX"])
def test_background_medium_returns_incident(kind):
    closure = TruncationClosure(4.0, K, kind=kind, pml_width=0.5 if kind == "PML_BOX" else 0.0)
    mesh, dofs = closure.build_mesh(0.1)
    a, n = background_coefficients(mesh)
    inc = PlaneWave.from_angle(K, 0.3)
    sol = solve_helmholtz(closure, mesh, dofs, a, n, inc)
    phys = (fem.EXTERIOR, fem.SCATTERER_D)
    dev = fem.norm_region(mesh, dofs, sol.scattered, phys)
    assert dev <= 0.02 * fem.norm_region(mesh, dofs, sol.values, phys)


def test_pml_stretch_only_in_layer():
    closure = TruncationClosure(4.0, K, kind="PML_BOX", pml_width=0.5)
    mesh, _ = closure.build_mesh(0.1)
    s = closure.stretch(mesh)
    inner = mesh.tags != fem.PML
    assert np.all(s[inner] == 1.0)
    assert np.all(s[~inner].imag >= 0) and s[~inner].imag.max() > 0


def test_cylinder_matches_series(cylinder):
    closure, sol, inc, _ = cylinder
    ref = cylinder_series(sol.mesh.vertices, K, RADIUS, N_IN)
    phys = (fem.EXTERIOR, fem.SCATTERER_D)
    err = fem.norm_region(sol.mesh, sol.dofs, sol.values - ref, phys)
    assert err / fem.norm_region(sol.mesh, sol.dofs, ref, phys) <= 0.02


def _observation_circle(radius=1.3, m=64):
    t = 2 * np.pi * np.arange(m) / m
    return radius * np.column_stack([np.cos(t), np.sin(t)])


def test_exterior_representation_matches_series(cylinder):
    closure, sol, inc, d_side = cylinder
    bd = square_boundary(sol.mesh, (0.0, 0.0), d_side)
    pts = _observation_circle()
    val = exterior_from_solution(sol, bd, inc, pts)
    ref = cylinder_series(pts, K, RADIUS, N_IN)
    assert np.linalg.norm(val - ref) / np.linalg.norm(ref) <= 0.03
    nodal = fem.eval_field(sol.mesh, sol.dofs, sol.values, pts)
    assert np.linalg.norm(val - nodal) / np.linalg.norm(nodal) <= 0.03
    with pytest.raises(TooCloseToBoundary):
        exterior_from_solution(sol, bd, inc, [[d_side / 2 + 0.01, 0.0]])


def test_linearity_in_amplitude(cylinder):
    closure, sol, inc, d_side = cylinder
    _, sol2, inc2, _ = cylinder_setup(40, amplitude=2.5 - 1j)
    scale = 2.5 - 1j
    assert np.max(np.abs(sol2.values - scale * sol.values)) <= 1e-12 * 10 * np.max(np.abs(sol2.values))
    bd = square_boundary(sol.mesh, (0.0, 0.0), d_side)
    pts = _observation_circle(m=8)
    v1 = exterior_from_solution(sol, bd, inc, pts)
    v2 = exterior_from_solution(sol2, bd, inc2, pts)
    assert np.allclose(v2, scale * v1, rtol=1e-10, atol=0)


def test_reflection_symmetry(cylinder):
    # reflection across x = y maps the mesh, the disk and the incidence onto themselves
    closure, sol, inc, d_side = cylinder
    _, solr, incr, _ = cylinder_setup(40, angle=np.pi / 2)
    pts = _observation_circle(m=16)
    bd = square_boundary(sol.mesh, (0.0, 0.0), d_side)
    v = exterior_from_solution(sol, bd, inc, pts)
    vr = exterior_from_solution(solr, bd, incr, pts[:, ::-1])
    assert np.allclose(v, vr, rtol=1e-7)


def test_incident_only_representation():
    mesh, dofs = fem.build_box_mesh(6.0, 0.05, ((0.0, 0.0), 2.0))
    bd = square_boundary(mesh, (0.0, 0.0), 2.0)
    inc = PlaneWave.from_angle(K, 0.7)
    mid = mesh.vertices[bd.edges].mean(axis=1)
    flux = np.sum(inc.gradient(mid) * bd.edge_normals, axis=1)
    pts = _observation_circle(1.0 + WAVELENGTH + 0.1, 32)
    out = exterior_eval(mesh, bd, inc(mesh.vertices), flux, inc, pts)
    assert np.max(np.abs(out - inc(pts))) <= 0.01


def _flux_case(step, func, grad):
    mesh, dofs = fem.build_box_mesh(4.0, step, ((0.0, 0.0), 2.0))
    bd = square_boundary(mesh, (0.0, 0.0), 2.0)
    a, n = background_coefficients(mesh)
    p = recover_flux(mesh, dofs, func(mesh.vertices), a, n, 0.0, bd)
    mid = mesh.vertices[bd.edges].mean(axis=1)
    exact = np.sum(grad(mid) * bd.edge_normals, axis=1)
    return p, exact


def test_flux_of_linear_and_constant():
    alpha = np.array([1.3, -0.4])
    p, exact = _flux_case(0.1, lambda v: v @ alpha, lambda m: np.broadcast_to(alpha, m.shape))
    assert np.allclose(p, exact, atol=1e-10)
    p, _ = _flux_case(0.1, lambda v: np.full(len(v), 3.0), lambda m: 0 * m)
    assert np.max(np.abs(p)) < 1e-10


def test_flux_manufactured_harmonic_order():
    u = lambda v: v[:, 0] ** 2 * v[:, 1] - v[:, 1] ** 3 / 3
    g = lambda m: np.column_stack([2 * m[:, 0] * m[:, 1], m[:, 0] ** 2 - m[:, 1] ** 2])
    errs = []
    for step in (0.1, 0.05, 0.025):
        p, exact = _flux_case(step, u, g)
        errs.append(np.max(np.abs(p - exact)))
    assert errs[0] / errs[1] >= 1.7 and errs[1] / errs[2] >= 1.7
