"""Homogenized solve, two-scale expansion, first-order correction and errors.

The scattering mesh and the corrector torus are related by ``y = x / eps``.
When the box step equals ``eps`` times the torus step and the scatterer
corners map to torus grid points, every box triangle inside D is the image
of one torus triangle; corrector nodal values and gradients then transfer
exactly and the medium inside D is read from the torus cells.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import fem
from .correctors import CorrectorSet, HomogenizedCoeffs
from .microstructure import CoefficientField, MediumParams, Microstructure
from .scattering import (PlaneWave, ScatterSolution, TruncationClosure, helmholtz_matrix,
                         solve_helmholtz)


class RegionEmpty(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScatterSetup:
    """Mesh, closure and incident wave shared by every compared solve."""

    closure: TruncationClosure
    mesh: fem.TriMesh
    dofs: fem.DofMap
    incident: PlaneWave
    center: tuple = (0.0, 0.0)

    @classmethod
    def build(cls, closure: TruncationClosure, step: float, incident: PlaneWave,
              center=(0.0, 0.0)):
        mesh, dofs = closure.build_mesh(step, center)
        return cls(closure, mesh, dofs, incident, tuple(center))

    @property
    def side(self) -> float:
        return self.closure.scatterer_side

    @property
    def in_d(self) -> np.ndarray:
        return self.mesh.tags == fem.SCATTERER_D

    def closed_d_vertices(self) -> np.ndarray:
        mask = np.zeros(self.mesh.n_vertices, dtype=bool)
        mask[self.mesh.triangles[self.in_d].ravel()] = True
        return mask


class CorrectorLookup:
    """Evaluate torus corrector data at ``x / eps``."""

    def __init__(self, cs: CorrectorSet, epsilon: float):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.cs = cs
        self.epsilon = float(epsilon)
        self._grads = None

    def _locate(self, x):
        y = np.atleast_2d(x) / self.epsilon
        return fem.locate(self.cs.mesh, y, self.cs.period)

    def nodal(self, values, x) -> np.ndarray:
        """P1 interpolation of each row of ``values`` at ``x / eps``."""
        tri, lam = self._locate(x)
        vd = self.cs.dofs.vertex_dof[self.cs.mesh.triangles[tri]]
        vals = np.atleast_2d(values)
        return np.einsum("fpk,pk->fp", vals[:, vd], lam)

    def triangles(self, x) -> np.ndarray:
        return self._locate(x)[0]

    def phi_gradients(self) -> np.ndarray:
        """Torus element gradients of phi_i in y, shape ``(2, nt_torus, 2)``."""
        if self._grads is None:
            self._grads = np.stack([fem.element_gradient(self.cs.mesh, self.cs.dofs, p)
                                    for p in self.cs.phi])
        return self._grads

    def is_aligned(self, setup: ScatterSetup) -> bool:
        """True when D-triangles are exact images of torus triangles."""
        hb, ht = setup.mesh.mesh_step, self.cs.mesh.mesh_step
        if not math.isclose(hb, self.epsilon * ht, rel_tol=1e-9):
            return False
        corner = (np.asarray(setup.center) - setup.side / 2) / self.epsilon / ht
        return bool(np.allclose(corner, np.round(corner), atol=1e-7))


def heterogeneous_coefficients(setup: ScatterSetup, params: MediumParams, epsilon: float,
                               ms: Microstructure | None = None,
                               lookup: CorrectorLookup | None = None):
    """Per-triangle ``(a_eps, n_eps)`` on the box mesh.

    Inside D the medium is read from the torus cells when the grids align,
    otherwise sampled at grid-cell centers from the microstructure.
    """
    mesh = setup.mesh
    a = np.broadcast_to(np.eye(2), (mesh.n_triangles, 2, 2)).copy()
    n = np.full(mesh.n_triangles, params.n_0)
    inside = setup.in_d
    if lookup is not None and lookup.is_aligned(setup):
        tri = lookup.triangles(mesh.centroids[inside])
        a[inside] = lookup.cs.a_elem[tri]
        n[inside] = lookup.cs.n_elem[tri]
    else:
        cen = mesh.cell_centers[inside]
        if ms is None:
            raise ValueError("need a microstructure when grids are not aligned")
        cf = CoefficientField(ms, params, epsilon, setup.center, setup.side)
        a[inside], n[inside] = cf.evaluate(cen)
    return a, n


def homogenized_coefficients(setup: ScatterSetup, hc: HomogenizedCoeffs):
    mesh = setup.mesh
    a = np.broadcast_to(np.eye(2), (mesh.n_triangles, 2, 2)).copy()
    n = np.full(mesh.n_triangles, setup.closure.n0)
    a[setup.in_d] = hc.a_hom
    n[setup.in_d] = hc.n_hom
    return a, n


def homogenized_operator(setup: ScatterSetup, hc: HomogenizedCoeffs) -> fem.Factorization:
    a, n = homogenized_coefficients(setup, hc)
    return fem.Factorization(helmholtz_matrix(setup.mesh, setup.dofs, a, n, setup.closure))


def solve_ueps(setup: ScatterSetup, a_elem, n_elem, meta=None) -> ScatterSolution:
    return solve_helmholtz(setup.closure, setup.mesh, setup.dofs, a_elem, n_elem,
                           setup.incident, meta=meta)


def solve_u0(hc: HomogenizedCoeffs, setup: ScatterSetup,
             factorization: fem.Factorization | None = None) -> ScatterSolution:
    """Total field of the homogenized transmission problem."""
    a, n = homogenized_coefficients(setup, hc)
    return solve_helmholtz(setup.closure, setup.mesh, setup.dofs, a, n, setup.incident,
                           factorization=factorization, meta={"kind": "homogenized"})


def u0_derivatives(setup: ScatterSetup, u0):
    """Recovered first and second derivatives of ``u0`` from inside D.

    Returns ``(d, dd)`` with ``d[i]`` nodal values of ``d_i u0`` and
    ``dd[i, j]`` of ``d_j d_i u0``.
    """
    mask = setup.in_d
    d = np.array(fem.project_gradient(setup.mesh, setup.dofs, u0, mask))
    dd = np.array([fem.project_gradient(setup.mesh, setup.dofs, d[i], mask) for i in range(2)])
    return d, dd


def two_scale_expand(setup: ScatterSetup, u0, lookup: CorrectorLookup, du0=None) -> np.ndarray:
    """Nodal ``w_eps = u0 + eps 1_D sum_i phi_i(x/eps) d_i u0`` on the closed D."""
    u0 = np.asarray(u0)
    if du0 is None:
        du0, _ = u0_derivatives(setup, u0)
    w = u0.astype(complex).copy()
    sel = setup.closed_d_vertices()
    phi = lookup.nodal(lookup.cs.phi, setup.mesh.vertices[sel])
    dof = setup.dofs.vertex_dof[sel]
    w[dof] += lookup.epsilon * np.sum(phi * du0[:, dof], axis=0)
    return w


def compute_Heps(setup: ScatterSetup, lookup: CorrectorLookup, hc: HomogenizedCoeffs, u0,
                 a_elem, n_elem):
    """Commutator source ``H_eps`` per triangle and the weight ``n_hom - n_eps``.

    ``H_eps = sum_i (a_hom - a_eps)(e_i + grad_y phi_i(x/eps)) d_i u0`` with the
    exact elementwise gradient of ``u0``; both vanish outside D.
    """
    mesh = setup.mesh
    inside = setup.in_d
    H = np.zeros((mesh.n_triangles, 2), dtype=complex)
    dn = np.zeros(mesh.n_triangles)
    g_u0 = fem.element_gradient(mesh, setup.dofs, u0)[inside]
    tri = lookup.triangles(mesh.centroids[inside])
    gphi = lookup.phi_gradients()[:, tri]
    da = hc.a_hom[None] - np.asarray(a_elem)[inside]
    for i in range(2):
        H[inside] += np.einsum("tde,te->td", da, gphi[i] + np.eye(2)[i]) * g_u0[:, i, None]
    dn[inside] = hc.n_hom - np.asarray(n_elem)[inside]
    return H, dn


def solve_U1(setup: ScatterSetup, hc: HomogenizedCoeffs, H, dn, u0,
             factorization: fem.Factorization | None = None) -> ScatterSolution:
    """First-order correction with homogenized coefficients and no incident field.

    Weak form: ``B_hom(U1, v) = int H . grad v - k^2 int (n_hom - n_eps) u0 v``.
    """
    if factorization is None:
        factorization = homogenized_operator(setup, hc)
    k = setup.closure.k
    rhs = fem.load_vector(setup.mesh, setup.dofs, div_source=-np.asarray(H))
    rhs = rhs - k ** 2 * (fem.mass_matrix(setup.mesh, setup.dofs, dn) @ np.asarray(u0))
    t0 = time.perf_counter()
    u1 = factorization.solve(rhs) if np.any(rhs) else np.zeros(setup.dofs.n_dofs, complex)
    a, n = homogenized_coefficients(setup, hc)
    return ScatterSolution(setup.mesh, setup.dofs, u1, np.zeros_like(u1), a, n, k,
                           setup.closure.n0,
                           {"kind": "U1", "runtime": time.perf_counter() - t0})


def diagnostics_FG(setup: ScatterSetup, lookup: CorrectorLookup, u0, a_elem, n_elem,
                   derivs=None):
    """``(||F_eps||_{L2(D)}, ||G_eps||_{L2(D)})``.

    ``F = eps sum_i (a phi_i - sigma_i) grad d_i u0 + eps k^2 beta u0`` and
    ``G = eps sum_i (n phi_i - beta_i) d_i u0``, integrated exactly as P1
    data per triangle with the triangle's constant ``a`` and ``n``.
    """
    mesh = setup.mesh
    inside = setup.in_d
    eps = lookup.epsilon
    k = setup.closure.k
    d, dd = derivs if derivs is not None else u0_derivatives(setup, u0)
    tri_v = mesh.triangles[inside]
    flat = tri_v.ravel()
    pts = mesh.vertices[flat]
    cs = lookup.cs
    phi = lookup.nodal(cs.phi, pts).reshape(2, -1, 3)
    beta = lookup.nodal(cs.beta, pts).reshape(2, -1, 3)
    sig = lookup.nodal(cs.sigma, pts).reshape(2, -1, 3)
    dof = setup.dofs.vertex_dof[tri_v]
    u = np.asarray(u0)[dof]
    du = d[:, dof]
    ddu = dd[:, :, dof]                       # (i, j, t, 3): d_j d_i u0
    a = np.asarray(a_elem)[inside]
    n = np.asarray(n_elem)[inside]
    F = np.zeros(u.shape + (2,), dtype=complex)
    G = np.zeros(u.shape, dtype=complex)
    for i in range(2):
        grad_di = np.stack([ddu[i, 0], ddu[i, 1]], axis=-1)     # (t, 3, 2)
        F += phi[i][..., None] * np.einsum("tde,tke->tkd", a, grad_di)
        # sigma_i grad = (s_i d2, -s_i d1)
        F[..., 0] -= sig[i] * grad_di[..., 1]
        F[..., 1] += sig[i] * grad_di[..., 0]
        G += (n[:, None] * phi[i] - beta[i]) * du[i]
    F += k ** 2 * np.stack([beta[0], beta[1]], axis=-1) * u[..., None]
    F *= eps
    G *= eps
    area = mesh.areas[inside]
    return (float(np.sqrt(np.sum(fem.element_l2_sq(area, F)))),
            float(np.sqrt(np.sum(fem.element_l2_sq(area, G)))))


# -- error report ----------------------------------------------------------

@dataclass
class ErrorRow:
    eps: float
    seed: int
    err_L2_box: float = math.nan
    err_H1_ext: float = math.nan
    err_H1_D_2scale: float = math.nan
    err_L2_ext_U1: float = math.nan
    err_H1_ext_U1: float = math.nan
    diag_F: float = math.nan
    diag_G: float = math.nan
    runtime_s: float = math.nan
    err_L2_ext_U0: float = math.nan
    err_H1_ext_U0: float = math.nan
    status: str = "ok"
    reason: str = ""

    CSV_COLUMNS = ("eps", "seed", "err_L2_box", "err_H1_ext", "err_H1_D_2scale",
                   "err_L2_ext_U1", "err_H1_ext_U1", "diag_F", "diag_G", "runtime_s")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def distance_to_square(points, center, side) -> np.ndarray:
    d = np.abs(np.asarray(points) - np.asarray(center)) - side / 2
    return np.linalg.norm(np.maximum(d, 0.0), axis=1)


def exterior_alpha_mask(setup: ScatterSetup, alpha: float) -> np.ndarray:
    """Box triangles whose centroid lies farther than ``alpha`` from D."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    dist = distance_to_square(setup.mesh.centroids, setup.center, setup.side)
    mask = (setup.mesh.tags == fem.EXTERIOR) & (dist > alpha)
    if not mask.any():
        raise RegionEmpty(f"no exterior triangles beyond alpha = {alpha}")
    return mask


def error_report(setup: ScatterSetup, u_eps, u0, w_eps, U1, alpha: float, eps: float,
                 seed: int, diag=(math.nan, math.nan), runtime=math.nan) -> ErrorRow:
    """All ErrorRow norms of one realization at one epsilon."""
    mesh, dofs = setup.mesh, setup.dofs
    box = (fem.EXTERIOR, fem.SCATTERER_D)
    diff = np.asarray(u_eps) - np.asarray(u0)
    far = exterior_alpha_mask(setup, alpha)
    corrected = diff - np.asarray(U1)
    return ErrorRow(
        eps=eps, seed=seed,
        err_L2_box=fem.norm_region(mesh, dofs, diff, box, "L2"),
        err_H1_ext=fem.norm_region(mesh, dofs, diff, fem.EXTERIOR, "H1"),
        err_H1_D_2scale=fem.norm_region(mesh, dofs, np.asarray(u_eps) - np.asarray(w_eps),
                                        fem.SCATTERER_D, "H1"),
        err_L2_ext_U1=fem.norm_region(mesh, dofs, corrected, far, "L2"),
        err_H1_ext_U1=fem.norm_region(mesh, dofs, corrected, far, "H1"),
        diag_F=diag[0], diag_G=diag[1], runtime_s=runtime,
        err_L2_ext_U0=fem.norm_region(mesh, dofs, diff, far, "L2"),
        err_H1_ext_U0=fem.norm_region(mesh, dofs, diff, far, "H1"),
    )


@dataclass
class RealizationResult:
    row: ErrorRow
    diff: np.ndarray = field(default=None, repr=False)


def run_realization(setup: ScatterSetup, cs: CorrectorSet, hc: HomogenizedCoeffs,
                    params: MediumParams, epsilon: float, alpha: float, u0: ScatterSolution,
                    hom_factor: fem.Factorization, ms: Microstructure | None = None,
                    seed: int = 0) -> RealizationResult:
    """u_eps, w_eps, U1 and diagnostics for one realization and one epsilon."""
    t0 = time.perf_counter()
    lookup = CorrectorLookup(cs, epsilon)
    a, n = heterogeneous_coefficients(setup, params, epsilon, ms, lookup)
    ue = solve_ueps(setup, a, n, meta={"epsilon": epsilon, "seed": seed})
    derivs = u0_derivatives(setup, u0.values)
    w = two_scale_expand(setup, u0.values, lookup, derivs[0])
    H, dn = compute_Heps(setup, lookup, hc, u0.values, a, n)
    U1 = solve_U1(setup, hc, H, dn, u0.values, hom_factor)
    diag = diagnostics_FG(setup, lookup, u0.values, a, n, derivs)
    row = error_report(setup, ue.values, u0.values, w, U1.values, alpha, epsilon, seed, diag,
                       time.perf_counter() - t0)
    return RealizationResult(row, ue.values - u0.values)
