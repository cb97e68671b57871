"""Truncated Helmholtz scattering on the box mesh.

The scattered field ``u - u_inc`` is the unknown. With ``A`` the operator of
the medium and ``A_bg`` that of the background, the discrete problem is

    A u_s = -(A - A_bg) I_h u_inc,

so only elements where the medium differs from the background drive the
solve, and the box closure is the first-order impedance condition
``d_nu u_s = i k sqrt(n0) u_s``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .special import green_2d, grad_green_2d

log = logging.getLogger(__name__)


class TooCloseToBoundary(ValueError):
    pass


@dataclass(frozen=True)
class PlaneWave:
    k: float
    direction: tuple[float, float] = (1.0, 0.0)
    amplitude: complex = 1.0

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("wavenumber must be positive")
        d = np.asarray(self.direction, dtype=float)
        nrm = np.linalg.norm(d)
        if nrm == 0:
            raise ValueError("direction must be nonzero")
        object.__setattr__(self, "direction", tuple(d / nrm))

    @classmethod
    def from_angle(cls, k, angle=0.0, amplitude=1.0):
        return cls(k, (np.cos(angle), np.sin(angle)), amplitude)

    def __call__(self, x, n0: float = 1.0):
        x = np.asarray(x, dtype=float)
        kk = self.k * np.sqrt(n0)
        return self.amplitude * np.exp(1j * kk * (x @ np.asarray(self.direction)))

    def gradient(self, x, n0: float = 1.0):
        kk = self.k * np.sqrt(n0)
        return (1j * kk * self(x, n0))[..., None] * np.asarray(self.direction)


@dataclass(frozen=True)
class TruncationClosure:
    """Truncation of the exterior problem to a square box.

    ``IMPEDANCE_BOX`` imposes ``d_nu u_s = i k sqrt(n0) u_s`` on the box
    sides (``order=2`` adds the tangential second-derivative term).
    ``PML_BOX`` surrounds the box with a complex-stretched absorbing layer of
    width ``pml_width`` (quadratic profile, integrated damping
    ``pml_strength``) closed by the first-order impedance condition.
    """

    box_side: float
    k: float
    n0: float = 1.0
    scatterer_side: float = 2.0
    kind: str = "IMPEDANCE_BOX"
    order: int = 1
    pml_width: float = 0.0
    pml_strength: float = 8.0

    def __post_init__(self):
        if self.kind not in ("IMPEDANCE_BOX", "PML_BOX"):
            raise ValueError(f"unsupported closure {self.kind!r}")
        if self.order not in (1, 2):
            raise ValueError("closure order must be 1 or 2")
        if self.kind == "PML_BOX" and self.pml_width <= 0:
            raise ValueError("PML_BOX needs a positive pml_width")
        if self.box_side <= self.scatterer_side:
            raise ValueError("box must strictly contain the scatterer")
        if self.kind == "IMPEDANCE_BOX" and self.margin < self.wavelength:
            log.warning("box margin %.3g is below one wavelength %.3g",
                        self.margin, self.wavelength)

    @property
    def wavenumber(self) -> float:
        return self.k * np.sqrt(self.n0)

    @property
    def wavelength(self) -> float:
        return 2 * np.pi / self.wavenumber

    @property
    def margin(self) -> float:
        return (self.box_side - self.scatterer_side) / 2

    @property
    def gamma(self) -> complex:
        return -1j * self.wavenumber

    @property
    def layer(self) -> float:
        return self.pml_width if self.kind == "PML_BOX" else 0.0

    def build_mesh(self, step, scatterer_center=(0.0, 0.0)):
        return fem.build_box_mesh(self.box_side, step,
                                  (scatterer_center, self.scatterer_side), self.layer)

    def stretch(self, mesh):
        """Per-triangle ``(s_x, s_y)`` of the layer; ones inside the box."""
        cen = mesh.centroids
        s = np.ones((mesh.n_triangles, 2), dtype=complex)
        if self.kind != "PML_BOX":
            return s
        depth = np.clip((np.abs(cen) - self.box_side / 2) / self.pml_width, 0.0, 1.0)
        # int_0^w sigma = pml_strength for sigma = 3 * strength / w * (d / w)^2
        sigma = 3 * self.pml_strength / self.pml_width * depth ** 2
        return 1 + 1j * sigma / self.wavenumber

    def apply(self, mesh, a_elem, n_elem):
        """Coefficients with the layer's stretched background imposed on PML triangles."""
        a = np.array(a_elem, dtype=complex)
        n = np.array(n_elem, dtype=complex)
        if self.kind == "PML_BOX":
            pml = mesh.tags == fem.PML
            s = self.stretch(mesh)[pml]
            a[pml] = 0.0
            a[pml, 0, 0] = s[:, 1] / s[:, 0]
            a[pml, 1, 1] = s[:, 0] / s[:, 1]
            n[pml] = self.n0 * s[:, 0] * s[:, 1]
        return a, n


@dataclass(eq=False)
class ScatterSolution:
    mesh: fem.TriMesh
    dofs: fem.DofMap
    values: np.ndarray
    incident_values: np.ndarray
    a_elem: np.ndarray
    n_elem: np.ndarray
    k: float
    n0: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def scattered(self) -> np.ndarray:
        return self.values - self.incident_values

    @property
    def field(self) -> fem.FieldP1:
        return fem.FieldP1(self.mesh, self.dofs, self.values)


def background_coefficients(mesh, n0=1.0):
    nt = mesh.n_triangles
    return np.broadcast_to(np.eye(2), (nt, 2, 2)).copy(), np.full(nt, float(n0))


def helmholtz_matrix(mesh, dofs, a_elem, n_elem, closure: TruncationClosure):
    a_elem, n_elem = closure.apply(mesh, a_elem, n_elem)
    A, _ = fem.assemble(mesh, dofs, a_elem, -closure.k ** 2 * n_elem,
                        boundary_gamma=closure.gamma)
    if closure.order == 2:
        # d_nu u = i k u + (i / 2k) d_tau^2 u on each straight side; corners ignored
        A = A + (0.5j / closure.wavenumber) * fem.boundary_stiffness_matrix(mesh, dofs)
    return A.tocsr()


def contrast_operator(mesh, dofs, a_elem, n_elem, k, n0=1.0):
    """``A - A_bg``: assembled only over elements that differ from the background."""
    a_elem = np.asarray(a_elem)
    da = a_elem - np.eye(2)
    dn = np.asarray(n_elem) - n0
    active = (np.any(np.abs(da) > 0, axis=(1, 2)) | (dn != 0)) & (mesh.tags != fem.PML)
    K = fem.stiffness_matrix(mesh, dofs, np.where(active[:, None, None], da, 0.0))
    M = fem.mass_matrix(mesh, dofs, np.where(active, dn, 0.0))
    return (K - k ** 2 * M).tocsr()


def solve_helmholtz(closure: TruncationClosure, mesh, dofs, a_elem, n_elem, incident: PlaneWave,
                    factorization: fem.Factorization | None = None, meta=None) -> ScatterSolution:
    """Total field for a plane wave hitting the medium ``(a_elem, n_elem)``."""
    t0 = time.perf_counter()
    if dofs.periodic:
        raise ValueError("scattering solves need a box mesh")
    u_inc = incident(mesh.vertices, closure.n0)
    C = contrast_operator(mesh, dofs, a_elem, n_elem, closure.k, closure.n0)
    if factorization is None:
        factorization = fem.Factorization(helmholtz_matrix(mesh, dofs, a_elem, n_elem, closure))
    rhs = -(C @ u_inc)
    u_s = factorization.solve(rhs) if np.any(rhs) else np.zeros_like(u_inc)
    info = dict(meta or {})
    info["runtime"] = time.perf_counter() - t0
    return ScatterSolution(mesh, dofs, u_s + u_inc, u_inc, np.asarray(a_elem),
                           np.asarray(n_elem), closure.k, closure.n0, info)


# -- boundary of D ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SquareBoundary:
    """Mesh edges of dD, grouped by side, counterclockwise."""

    sides: tuple          # four arrays of vertex indices along each side
    normals: np.ndarray   # (4, 2) outward normals

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate([np.column_stack([s[:-1], s[1:]]) for s in self.sides])

    @property
    def edge_normals(self) -> np.ndarray:
        return np.concatenate([np.repeat(nrm[None], len(s) - 1, axis=0)
                               for s, nrm in zip(self.sides, self.normals)])


def square_boundary(mesh: fem.TriMesh, center=(0.0, 0.0), side=2.0) -> SquareBoundary:
    h = mesh.mesh_step
    x0, y0 = mesh.origin
    lo = [int(round((c - side / 2 - o) / h)) for c, o in zip(center, (x0, y0))]
    m = int(round(side / h))

    def vid(i, j):
        return j * (mesh.nx + 1) + i

    i0, j0 = lo
    bottom = np.array([vid(i0 + t, j0) for t in range(m + 1)])
    right = np.array([vid(i0 + m, j0 + t) for t in range(m + 1)])
    top = np.array([vid(i0 + m - t, j0 + m) for t in range(m + 1)])
    left = np.array([vid(i0, j0 + m - t) for t in range(m + 1)])
    normals = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    return SquareBoundary((bottom, right, top, left), normals)


def recover_flux(mesh, dofs, values, a_elem, n_elem, k, boundary: SquareBoundary,
                 side: str = "interior", source_rhs=None):
    """Consistent Neumann recovery of ``a grad u . nu`` on dD.

    The residual of the discrete form restricted to the triangles on one side
    of dD is the flux functional ``int_dD p phi_j``. On each straight side the
    flux is taken P1, the side-interior residuals fix the interior nodal
    values and the two corner values are linearly extrapolated. Returns
    per-edge midpoint values in the order of ``boundary.edges``; ``nu`` always
    points out of D.
    """
    inside = mesh.tags == fem.SCATTERER_D
    mask = inside if side == "interior" else ~inside
    sign = 1.0 if side == "interior" else -1.0
    w = np.where(mask, 1.0, 0.0)
    K = fem.stiffness_matrix(mesh, dofs, np.asarray(a_elem) * w[:, None, None])
    M = fem.mass_matrix(mesh, dofs, np.asarray(n_elem) * w)
    res = K @ values - k ** 2 * (M @ values)
    if source_rhs is not None:
        res = res - source_rhs
    res = sign * res
    out = []
    for s in boundary.sides:
        pts = mesh.vertices[s]
        ell = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        n = len(s)
        A = np.zeros((n, n))
        b = np.zeros(n, dtype=complex)
        for j in range(1, n - 1):
            A[j, j - 1] = ell[j - 1] / 6
            A[j, j] = (ell[j - 1] + ell[j]) / 3
            A[j, j + 1] = ell[j] / 6
            b[j] = res[dofs.vertex_dof[s[j]]]
        A[0, :3] = [1.0, -2.0, 1.0]
        A[-1, -3:] = [1.0, -2.0, 1.0]
        p = np.linalg.solve(A, b)
        out.append(0.5 * (p[:-1] + p[1:]))
    return np.concatenate(out)


def exterior_eval(mesh, boundary: SquareBoundary, trace_values, flux, incident: PlaneWave,
                  points, n0: float = 1.0, min_distance: float | None = None):
    """Field outside D from its trace and normal flux on dD.

    ``u(y) = u_inc(y) + sum_edges |e| (dG/dnu(m_e, y) u(m_e) - p(m_e) G(m_e, y))``
    with midpoint quadrature; ``trace_values`` are nodal values over the mesh
    vertices. Works with total or scattered traces since the incident field
    contributes nothing to the boundary integral.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    e = boundary.edges
    nu = boundary.edge_normals
    a = mesh.vertices[e[:, 0]]
    b = mesh.vertices[e[:, 1]]
    mid = 0.5 * (a + b)
    ell = np.linalg.norm(b - a, axis=1)
    lo, hi = mesh.vertices[boundary.sides[0][0]], mesh.vertices[boundary.sides[2][0]]
    dist = _distance_to_box(pts, lo, hi)
    limit = 2 * mesh.mesh_step if min_distance is None else min_distance
    if np.any(dist < limit):
        raise TooCloseToBoundary(f"points closer than {limit:.3g} to dD")
    tv = np.asarray(trace_values)
    u_mid = 0.5 * (tv[e[:, 0]] + tv[e[:, 1]])
    kk = incident.k * np.sqrt(n0)
    out = np.empty(len(pts), dtype=complex)
    for start in range(0, len(pts), 256):
        y = pts[start:start + 256]
        G = green_2d(kk, mid[None, :, :], y[:, None, :])
        dG = np.sum(grad_green_2d(kk, mid[None, :, :], y[:, None, :]) * nu[None], axis=-1)
        out[start:start + 256] = (dG * u_mid - G * flux) @ ell
    return incident(pts, n0) + out


def _distance_to_box(pts, lo, hi):
    d = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
    return np.linalg.norm(d, axis=1)


def exterior_from_solution(sol: ScatterSolution, boundary: SquareBoundary, incident: PlaneWave,
                           points, min_distance=None):
    """Exterior field of a scatter solve from its scattered trace and flux."""
    us = sol.scattered
    p = recover_flux(sol.mesh, sol.dofs, us, *background_coefficients(sol.mesh, sol.n0),
                     sol.k, boundary, side="exterior")
    return exterior_eval(sol.mesh, boundary, us[sol.dofs.vertex_dof], p, incident, points,
                         sol.n0, min_distance)
