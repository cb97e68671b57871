import numpy as np
import pytest

from helmhomog import fem
from helmhomog.correctors import (CorrectorCache, HomogenizedCoeffs, beta_residual, cache_key,
                                  compute_correctors, flux_and_commutator, homogenize_ensemble,
                                  read_cache, realization_correctors, sigma_residual, solve_beta,
                                  solve_phi, torus_coefficients, write_cache)
from helmhomog.microstructure import MediumParams, sample_matern2

from conftest import default_process


def laminate(step, low=1.0, high=4.0, n_low=1.5, n_high=0.5):
    mesh, dofs = fem.build_torus_mesh(1.0, step)
    left = mesh.centroids[:, 0] < 0.5
    a = np.where(left, low, high)[:, None, None] * np.eye(2)
    n = np.where(left, n_low, n_high)
    return mesh, dofs, a, n


def _mean_free_profile(x, slope_left, slope_right):
    return np.where(x <= 0.5, slope_left * x, slope_left * 0.5 + slope_right * (x - 0.5))


def test_constant_medium_has_zero_correctors():
    mesh, dofs = fem.build_torus_mesh(2.0, 0.25)
    a = np.broadcast_to(2.5 * np.eye(2), (mesh.n_triangles, 2, 2))
    cs = compute_correctors(mesh, dofs, a, np.full(mesh.n_triangles, 1.3), 1e7)
    for f in (cs.phi, cs.beta, cs.sigma):
        assert np.max(np.abs(f)) < 1e-12
    energy, flux, nbar = cs.apparent_coefficients()
    assert np.allclose(energy, 2.5 * np.eye(2), atol=1e-12)
    fl = flux_and_commutator(mesh, dofs, cs.phi, a, 2.5 * np.eye(2))
    assert np.max(np.abs(fl.q)) < 1e-12 and np.max(np.abs(fl.xi)) < 1e-12


def test_equal_phases_give_scalar_exactly():
    params = MediumParams.scalar(1.7, 1.7, 1.0, 1.0)
    hc = homogenize_ensemble(default_process(period=5.0), params, 1e7, 5.0, 0.25, 2, 11)
    assert np.allclose(hc.a_hom, 1.7 * np.eye(2), atol=1e-12)


def test_laminate_phi_matches_1d_corrector():
    # a (phi' + 1) = 1.6 gives slopes 0.6 and -0.6 on the two phases
    fine = np.arange(4096) / 4096 + 0.5 / 4096
    shift = np.mean(_mean_free_profile(fine, 0.6, -0.6))
    for step in (1 / 16, 1 / 32):
        mesh, dofs, a, n = laminate(step)
        phi = solve_phi(mesh, dofs, a, 1e7)
        ref = _mean_free_profile(mesh.vertices[:, 0], 0.6, -0.6) - shift
        err = np.sqrt(np.mean(np.abs(phi[0][dofs.vertex_dof] - ref) ** 2))
        assert err <= step
        assert np.max(np.abs(phi[1])) < 1e-10


def test_laminate_beta_matches_1d_profile():
    mesh, dofs, a, n = laminate(1 / 32)
    beta = solve_beta(mesh, dofs, n, 1.0, 1e7)
    x = mesh.vertices[:, 0]
    ref = _mean_free_profile(x, 0.5, -0.5)
    ref -= np.mean(_mean_free_profile(np.arange(4096) / 4096 + 0.5 / 4096, 0.5, -0.5))
    assert np.max(np.abs(beta[0][dofs.vertex_dof] - ref)) <= 1 / 32
    assert np.max(np.abs(beta[1])) < 1e-10


def test_laminate_effective_coefficients():
    mesh, dofs, a, n = laminate(1 / 64)
    energy, flux, nbar = compute_correctors(mesh, dofs, a, n, 1e7).apparent_coefficients()
    assert np.allclose(np.diag(energy), [1.6, 2.5], rtol=1e-3)
    assert nbar == pytest.approx(1.0, abs=1e-14)


def test_flux_commutator_identity(small_correctors):
    _, cs = small_correctors
    a_hom = np.array([[2.27, 0.01], [0.01, 2.26]])
    fl = flux_and_commutator(cs.mesh, cs.dofs, cs.phi, cs.a_elem, a_hom)
    for i in range(2):
        g = fem.element_gradient(cs.mesh, cs.dofs, cs.phi[i])
        assert np.max(np.abs(fl.xi[i] - fl.q[i] + g @ a_hom.T)) < 1e-12


def test_sigma_skew_and_means(small_correctors):
    _, cs = small_correctors
    for i in range(2):
        assert np.array_equal(cs.sigma_component(i, 0, 1), -cs.sigma_component(i, 1, 0))
        assert not np.any(cs.sigma_component(i, 0, 0))
        S = cs.sigma_matrix(i)
        assert np.array_equal(S, -np.swapaxes(S, -1, -2))
    assert np.max(np.abs(cs.means())) <= 1e-8


def test_energy_and_flux_forms_agree(small_correctors):
    _, cs = small_correctors
    energy, flux, _ = cs.apparent_coefficients()
    assert np.allclose(energy, flux, rtol=0, atol=1e-6)
    assert np.allclose(energy, energy.T, atol=1e-12)


def test_voigt_reuss_and_nhom(small_correctors):
    ms, cs = small_correctors
    energy, _, nbar = cs.apparent_coefficients()
    w = cs.mesh.areas / cs.mesh.areas.sum()
    vf = float(np.dot(w, cs.n_elem == 0.5))          # discrete inclusion fraction
    harmonic = 1 / ((1 - vf) / 2.0 + vf / 3.5)
    arithmetic = (1 - vf) * 2.0 + vf * 3.5
    ev = np.linalg.eigvalsh(energy)
    assert harmonic <= ev.min() and ev.max() <= arithmetic
    assert abs(nbar - (1.5 - vf)) <= 1e-10


def test_massive_bias_shrinks_with_T():
    ms = sample_matern2(default_process(seed=4, period=6.0))
    mesh, dofs = fem.build_torus_mesh(6.0, 0.1)
    a, n = torus_coefficients(mesh, ms, MediumParams())
    vals = {T: compute_correctors(mesh, dofs, a, n, T).apparent_coefficients()[0]
            for T in (0.1, 1.0, 10.0)}
    assert np.abs(vals[1.0] - vals[10.0]).max() < np.abs(vals[0.1] - vals[1.0]).max()


def test_ensemble_flux_mean_is_zero():
    hc, sets = homogenize_ensemble(default_process(period=8.0), MediumParams(), 1e7, 8.0, 0.1,
                                   8, 99, keep_sets=True)
    means = []
    for cs in sets:
        fl = flux_and_commutator(cs.mesh, cs.dofs, cs.phi, cs.a_elem, hc.a_hom)
        w = cs.mesh.areas / cs.mesh.areas.sum()
        means.append(np.einsum("t,itd->id", w, fl.q))
    means = np.array(means)
    se = means.std(axis=0, ddof=1) / np.sqrt(len(means))
    assert np.all(np.abs(means.mean(axis=0)) <= 3 * se + 1e-12)
    assert np.all(np.abs(hc.a_hom[0, 1]) <= 3 * hc.standard_error[0, 1] + 1e-12)


def test_residuals_shrink_on_pixel_medium():
    pix = np.random.default_rng(0).integers(0, 2, (4, 4))
    res = []
    for step in (1 / 16, 1 / 32):
        mesh, dofs = fem.build_torus_mesh(1.0, step)
        ix = np.floor(mesh.centroids / 0.25).astype(int) % 4
        s = pix[ix[:, 0], ix[:, 1]]
        cs = compute_correctors(mesh, dofs, np.where(s, 1.0, 4.0)[:, None, None] * np.eye(2),
                                np.where(s, 1.5, 0.5), 1e7)
        res.append((beta_residual(cs), sigma_residual(cs)))
    assert res[1][0] < res[0][0] and res[1][1] < res[0][1]


def test_cache_round_trip(tmp_path, small_correctors):
    _, cs = small_correctors
    p = tmp_path / "c.whcf"
    write_cache(p, cs, 0.1)
    raw = p.read_bytes()
    assert raw[:4] == b"WHCF"
    L, T, h, seed, fields = read_cache(p)
    assert (L, T, h, seed) == (10.0, 1e7, 0.1, 3)
    assert np.array_equal(fields, np.concatenate([cs.phi, cs.beta, cs.sigma]))
    p.write_bytes(b"JUNK" + raw[4:])
    with pytest.raises(ValueError):
        read_cache(p)


def test_cache_directory_reuse(tmp_path):
    proc = default_process(seed=8, period=5.0)
    cache = CorrectorCache(tmp_path)
    _, first = realization_correctors(proc, MediumParams(), 1e7, 0.25, cache=cache)
    assert len(list(tmp_path.glob("*.whcf"))) == 1
    _, second = realization_correctors(proc, MediumParams(), 1e7, 0.25, cache=cache)
    assert np.array_equal(first.sigma, second.sigma)
    k1 = cache_key(proc, MediumParams(), 5.0, 1e7, 0.25, 8)
    assert k1 != cache_key(proc, MediumParams(), 5.0, 1e7, 0.25, 9)
    assert k1 != cache_key(proc, MediumParams(), 5.0, 1e6, 0.25, 8)


def test_ensemble_is_deterministic():
    run = lambda: homogenize_ensemble(default_process(period=5.0), MediumParams(), 1e7, 5.0,
                                      0.25, 3, 5)
    a, b = run(), run()
    assert a.a_hom.tobytes() == b.a_hom.tobytes() and a.n_hom == b.n_hom
    assert a.seeds == b.seeds and len(set(a.seeds)) == 3


def test_constant_coefficients_helper():
    hc = HomogenizedCoeffs.constant(2.0, 1.3)
    assert np.array_equal(hc.a_hom, 2.0 * np.eye(2)) and hc.n_hom == 1.3
