"""P1 finite elements on structured box and torus meshes.

Both mesh families are uniform grids split into two triangles per cell,
lower ``(p00, p10, p11)`` and upper ``(p00, p11, p01)``, numbered
``2 * (j * nx + i) + s``. The shared convention is what lets a box mesh be
laid over an epsilon-rescaled torus mesh element by element.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

EXTERIOR = 0
SCATTERER_D = 1
PML = 2

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


class AlignmentError(ValueError):
    """Requested geometry does not fall on mesh lines."""


class SingularMatrix(RuntimeError):
    pass


class NonConvergence(RuntimeError):
    pass


class OutOfDomain(ValueError):
    pass


def _as_count(length: float, step: float, what: str) -> int:
    ratio = length / step
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-8 * max(1.0, ratio):
        raise AlignmentError(f"{what}: {length} is not a multiple of step {step}")
    return n


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Structured triangulation of ``origin + [0, nx*step] x [0, ny*step]``."""

    vertices: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    boundary_edges: np.ndarray
    boundary_normals: np.ndarray
    mesh_step: float
    origin: tuple[float, float]
    nx: int
    ny: int
    areas: np.ndarray = field(init=False, repr=False)
    grad_basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        # gradients of the three barycentric functions, shape (nt, 3, 2)
        g = np.empty((len(self.triangles), 3, 2))
        g[:, 1, 0] = d2[:, 1] / det
        g[:, 1, 1] = -d2[:, 0] / det
        g[:, 2, 0] = -d1[:, 1] / det
        g[:, 2, 1] = d1[:, 0] / det
        g[:, 0] = -g[:, 1] - g[:, 2]
        object.__setattr__(self, "areas", 0.5 * det)
        object.__setattr__(self, "grad_basis", g)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def cell_centers(self) -> np.ndarray:
        """Center of the grid cell holding each triangle.

        Sampling piecewise-constant data here gives both triangles of a cell
        the same value, so the discrete medium has no preferred diagonal.
        """
        c = self.centroids
        mid = 0.5 * (c[0::2] + c[1::2])
        return np.repeat(mid, 2, axis=0)

    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return x0, x0 + self.nx * self.mesh_step, y0, y0 + self.ny * self.mesh_step

    def region(self, tags) -> np.ndarray:
        """Boolean triangle mask from a tag, an iterable of tags, or a mask."""
        tags = np.asarray(tags)
        if tags.dtype == bool:
            if tags.shape != (self.n_triangles,):
                raise ValueError("mask length does not match triangle count")
            return tags
        return np.isin(self.tags, np.atleast_1d(tags))


@dataclass(frozen=True, eq=False)
class DofMap:
    vertex_dof: np.ndarray
    n_dofs: int
    periodic: bool = False
    period: float | None = None

    def element_dofs(self, mesh: TriMesh) -> np.ndarray:
        return self.vertex_dof[mesh.triangles]


@dataclass(eq=False)
class FieldP1:
    """Nodal values over a DofMap; complex unless built otherwise."""

    mesh: TriMesh
    dofs: DofMap
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.dofs.n_dofs,):
            raise ValueError(
                f"field has {self.values.shape} values for {self.dofs.n_dofs} dofs")

    def at_vertices(self) -> np.ndarray:
        return self.values[self.dofs.vertex_dof]

    def element_gradient(self) -> np.ndarray:
        return element_gradient(self.mesh, self.dofs, self.values)


def _grid(origin, step, nx, ny):
    xs = origin[0] + step * np.arange(nx + 1)
    ys = origin[1] + step * np.arange(ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i = i.ravel()
    j = j.ravel()
    p00 = j * (nx + 1) + i
    p10 = p00 + 1
    p01 = p00 + nx + 1
    p11 = p01 + 1
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([p00, p10, p11])
    tris[1::2] = np.column_stack([p00, p11, p01])
    return verts, tris


def _box_boundary(nx, ny):
    """Boundary edges of the structured grid, counterclockwise, with normals."""
    def vid(i, j):
        return j * (nx + 1) + i

    edges, normals = [], []
    for i in range(nx):
        edges.append((vid(i, 0), vid(i + 1, 0)))
        normals.append((0.0, -1.0))
    for j in range(ny):
        edges.append((vid(nx, j), vid(nx, j + 1)))
        normals.append((1.0, 0.0))
    for i in range(nx, 0, -1):
        edges.append((vid(i, ny), vid(i - 1, ny)))
        normals.append((0.0, 1.0))
    for j in range(ny, 0, -1):
        edges.append((vid(0, j), vid(0, j - 1)))
        normals.append((-1.0, 0.0))
    return np.array(edges, dtype=np.int64), np.array(normals)


def build_box_mesh(side: float, step: float, scatterer_square=((0.0, 0.0), None),
                   pml_width: float = 0.0):
    """Mesh of the box ``[-side/2, side/2]^2`` with the square D tagged.

    ``scatterer_square`` is ``(center, side_D)``; ``side_D=None`` tags nothing.
    A positive ``pml_width`` surrounds the box by a layer tagged PML.
    Raises AlignmentError unless the box, the layer and dD fall on grid lines.
    """
    n_in = _as_count(side, step, "box side")
    n_pml = _as_count(pml_width, step, "pml width") if pml_width > 0 else 0
    n = n_in + 2 * n_pml
    outer = side + 2 * pml_width
    origin = (-outer / 2, -outer / 2)
    verts, tris = _grid(origin, step, n, n)
    center, side_d = scatterer_square
    tags = np.full(len(tris), EXTERIOR, dtype=np.int8)
    cen = verts[tris].mean(axis=1)
    if side_d is not None:
        for c in center:
            _as_count(c - side_d / 2 + side / 2, step, "scatterer edge")
            _as_count(c + side_d / 2 + side / 2, step, "scatterer edge")
        inside = np.all(np.abs(cen - np.asarray(center)) < side_d / 2, axis=1)
        tags[inside] = SCATTERER_D
    if n_pml:
        tags[np.any(np.abs(cen) > side / 2, axis=1)] = PML
    edges, normals = _box_boundary(n, n)
    mesh = TriMesh(verts, tris, tags, edges, normals, step, origin, n, n)
    dofs = DofMap(np.arange(len(verts)), len(verts))
    return mesh, dofs


def build_torus_mesh(period: float, step: float):
    """Mesh of ``[0, period)^2`` with opposite faces identified in the DofMap."""
    n = _as_count(period, step, "torus period")
    verts, tris = _grid((0.0, 0.0), step, n, n)
    i = np.tile(np.arange(n + 1), n + 1) % n
    j = np.repeat(np.arange(n + 1), n + 1) % n
    vdof = j * n + i
    mesh = TriMesh(verts, tris, np.full(len(tris), EXTERIOR, dtype=np.int8),
                   np.zeros((0, 2), dtype=np.int64), np.zeros((0, 2)), step,
                   (0.0, 0.0), n, n)
    return mesh, DofMap(vdof, n * n, periodic=True, period=period)


def element_gradient(mesh: TriMesh, dofs: DofMap, values) -> np.ndarray:
    """Constant gradient of a P1 field on each triangle, shape ``(nt, 2)``."""
    local = np.asarray(values)[dofs.element_dofs(mesh)]
    return np.einsum("tk,tkd->td", local, mesh.grad_basis)


def _scatter(mesh, dofs, local, n=None):
    ed = dofs.element_dofs(mesh)
    rows = np.repeat(ed, 3, axis=1).ravel()
    cols = np.tile(ed, (1, 3)).ravel()
    n = dofs.n_dofs if n is None else n
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def stiffness_matrix(mesh: TriMesh, dofs: DofMap, a_field=None) -> sp.csr_matrix:
    """``K_ij = int a grad(phi_j) . grad(phi_i)``; ``a_field`` scalar or (nt, 2, 2)."""
    g = mesh.grad_basis
    if a_field is None:
        ag = g
    else:
        a = np.asarray(a_field)
        if a.ndim <= 1:
            ag = g * np.broadcast_to(a, (mesh.n_triangles,))[:, None, None]
        else:
            ag = np.einsum("tde,tke->tkd", a, g)
    local = np.einsum("tid,tjd->tij", g, ag) * mesh.areas[:, None, None]
    return _scatter(mesh, dofs, local)


def mass_matrix(mesh: TriMesh, dofs: DofMap, weight=None) -> sp.csr_matrix:
    """Consistent P1 mass matrix with a per-triangle constant weight."""
    w = mesh.areas if weight is None else mesh.areas * np.asarray(weight)
    local = w[:, None, None] * _LOCAL_MASS[None]
    return _scatter(mesh, dofs, local)


def boundary_mass_matrix(mesh: TriMesh, dofs: DofMap) -> sp.csr_matrix:
    e = mesh.boundary_edges
    ell = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
    local = ell[:, None, None] * (np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)[None]
    d = dofs.vertex_dof[e]
    rows = np.repeat(d, 2, axis=1).ravel()
    cols = np.tile(d, (1, 2)).ravel()
    n = dofs.n_dofs
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def boundary_stiffness_matrix(mesh: TriMesh, dofs: DofMap) -> sp.csr_matrix:
    """Tangential stiffness ``int_dOmega d_tau u d_tau v`` along boundary edges."""
    e = mesh.boundary_edges
    ell = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
    local = (1.0 / ell)[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])[None]
    d = dofs.vertex_dof[e]
    rows = np.repeat(d, 2, axis=1).ravel()
    cols = np.tile(d, (1, 2)).ravel()
    n = dofs.n_dofs
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def load_vector(mesh: TriMesh, dofs: DofMap, source=None, div_source=None) -> np.ndarray:
    """Right-hand side for volume sources.

    ``source`` is a per-triangle constant f giving ``int f v``; ``div_source``
    is a per-triangle vector F standing for the source ``div F``, assembled
    as ``-int F . grad v``.
    """
    dtype = np.result_type(
        float, *(np.asarray(s).dtype for s in (source, div_source) if s is not None))
    local = np.zeros((mesh.n_triangles, 3), dtype=dtype)
    if source is not None:
        local += (np.asarray(source) * mesh.areas / 3.0)[:, None]
    if div_source is not None:
        F = np.asarray(div_source)
        local -= np.einsum("td,tkd->tk", F, mesh.grad_basis) * mesh.areas[:, None]
    rhs = np.zeros(dofs.n_dofs, dtype=dtype)
    np.add.at(rhs, dofs.element_dofs(mesh).ravel(), local.ravel())
    return rhs


def assemble(mesh: TriMesh, dofs: DofMap, a_field=None, c_field=None,
             boundary_gamma=None, source=None, div_source=None):
    """Matrix of ``int a grad u . grad v + int c u v + gamma int_dOmega u v``.

    Returns ``(A, rhs)`` with the rhs built by :func:`load_vector`.
    """
    A = stiffness_matrix(mesh, dofs, a_field).astype(complex)
    if c_field is not None:
        A = A + mass_matrix(mesh, dofs, c_field)
    if boundary_gamma is not None:
        A = A + boundary_gamma * boundary_mass_matrix(mesh, dofs)
    A = A.tocsr()
    A.eliminate_zeros()
    return A, load_vector(mesh, dofs, source, div_source)


class Factorization:
    """Sparse LU with a residual check on every solve."""

    def __init__(self, A, tol: float = 1e-8):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        if np.any(np.diff(A.tocsr().indptr) == 0) or np.any(np.diff(A.indptr) == 0):
            raise SingularMatrix("matrix has an empty row or column")
        self.A = A
        self.tol = tol
        try:
            self._lu = sla.splu(A, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularMatrix(str(exc)) from exc

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b)
        dtype = np.result_type(self.A.dtype, b.dtype)
        x = self._lu.solve(b.astype(dtype))
        bn = np.linalg.norm(b)
        if bn == 0.0:
            return x
        for _ in range(3):
            r = b - self.A @ x
            if np.linalg.norm(r) <= self.tol * bn:
                return x
            x = x + self._lu.solve(r.astype(dtype))
        if not np.all(np.isfinite(x)):
            raise SingularMatrix("factorization produced non-finite values")
        return _gmres_fallback(self.A, b, x, self.tol)


def _gmres_fallback(A, b, x0, tol):
    x, info = sla.gmres(A, b, x0=x0, rtol=tol, restart=200, maxiter=50)
    if info != 0 or np.linalg.norm(b - A @ x) > tol * np.linalg.norm(b):
        raise NonConvergence(f"residual tolerance {tol} not reached")
    return x


def solve_linear(A, b, tol: float = 1e-8) -> np.ndarray:
    """Direct solve with relative residual at most ``tol``."""
    return Factorization(A, tol).solve(b)


def apply_dirichlet(A, b, nodes, values):
    """Replace rows/columns of ``nodes`` by identity; returns new (A, b)."""
    A = sp.lil_matrix(A)
    b = np.array(b, dtype=np.result_type(A.dtype, np.asarray(values).dtype, b.dtype))
    nodes = np.asarray(nodes)
    vals = np.broadcast_to(values, nodes.shape)
    b -= A[:, nodes] @ vals
    A[:, nodes] = 0.0
    A[nodes, :] = 0.0
    A[nodes, nodes] = 1.0
    b[nodes] = vals
    A = A.tocsr()
    A.eliminate_zeros()
    return A, b


def locate(mesh: TriMesh, points, periodic_period: float | None = None):
    """Containing triangle and barycentric coordinates of each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    h = mesh.mesh_step
    rel = pts - np.asarray(mesh.origin)
    if periodic_period is not None:
        rel = np.mod(rel, periodic_period)
    s = rel / h
    tol = 1e-9
    if np.any(s < -tol) or np.any(s[:, 0] > mesh.nx + tol) or np.any(s[:, 1] > mesh.ny + tol):
        raise OutOfDomain("point outside the mesh")
    i = np.clip(np.floor(s[:, 0]).astype(np.int64), 0, mesh.nx - 1)
    j = np.clip(np.floor(s[:, 1]).astype(np.int64), 0, mesh.ny - 1)
    fx = s[:, 0] - i
    fy = s[:, 1] - j
    upper = fy > fx
    tri = 2 * (j * mesh.nx + i) + upper
    # barycentrics: lower (p00, p10, p11), upper (p00, p11, p01)
    lam = np.where(upper[:, None],
                   np.column_stack([1 - fy, fx, fy - fx]),
                   np.column_stack([1 - fx, fx - fy, fy]))
    return tri, lam


def eval_field(mesh: TriMesh, dofs: DofMap, values, points) -> np.ndarray:
    """P1 interpolation at points; torus meshes wrap points periodically."""
    tri, lam = locate(mesh, points, dofs.period if dofs.periodic else None)
    local = np.asarray(values)[dofs.vertex_dof[mesh.triangles[tri]]]
    return np.sum(local * lam, axis=1)


def eval_gradient(mesh: TriMesh, dofs: DofMap, values, points) -> np.ndarray:
    tri, _ = locate(mesh, points, dofs.period if dofs.periodic else None)
    return element_gradient(mesh, dofs, values)[tri]


def element_l2_sq(areas, local) -> np.ndarray:
    """Exact integral of |u|^2 for P1 data given per-triangle vertex values.

    ``local`` has shape (nt, 3) or (nt, 3, m) for vector data.
    """
    local = np.asarray(local)
    s = local.sum(axis=1)
    sq = np.sum(np.abs(local) ** 2, axis=1)
    if local.ndim == 3:
        s = np.abs(s) ** 2
        sq = sq.sum(axis=1)
        return areas / 12.0 * (s.sum(axis=1) + sq)
    return areas / 12.0 * (np.abs(s) ** 2 + sq)


def norm_region(mesh: TriMesh, dofs: DofMap, values, tags=None, kind: str = "L2") -> float:
    """L2, H1 or H1-seminorm over the triangles selected by ``tags``."""
    mask = np.ones(mesh.n_triangles, bool) if tags is None else mesh.region(tags)
    values = np.asarray(values)
    l2 = semi = 0.0
    if kind in ("L2", "H1"):
        local = values[dofs.element_dofs(mesh)[mask]]
        l2 = float(np.sum(element_l2_sq(mesh.areas[mask], local)))
    if kind in ("H1", "H1semi"):
        g = element_gradient(mesh, dofs, values)[mask]
        semi = float(np.sum(np.sum(np.abs(g) ** 2, axis=1) * mesh.areas[mask]))
    if kind not in ("L2", "H1", "H1semi"):
        raise ValueError(f"unknown norm kind {kind!r}")
    return float(np.sqrt(l2 + semi))


def lumped_mass(mesh: TriMesh, dofs: DofMap, mask=None) -> np.ndarray:
    w = mesh.areas if mask is None else np.where(mask, mesh.areas, 0.0)
    m = np.zeros(dofs.n_dofs)
    np.add.at(m, dofs.element_dofs(mesh).ravel(), np.repeat(w / 3.0, 3))
    return m


def integrate(mesh: TriMesh, dofs: DofMap, values, mask=None):
    """Exact integral of a P1 field (optionally over masked triangles)."""
    return np.dot(lumped_mass(mesh, dofs, mask), np.asarray(values))


def project_gradient(mesh: TriMesh, dofs: DofMap, values, mask=None):
    """Mass-lumped L2 projection of the elementwise gradient onto P1.

    With ``mask`` only the selected triangles contribute; dofs untouched by
    them get zero.
    """
    g = element_gradient(mesh, dofs, values)
    w = mesh.areas if mask is None else np.where(mask, mesh.areas, 0.0)
    ed = dofs.element_dofs(mesh).ravel()
    m = np.zeros(dofs.n_dofs)
    np.add.at(m, ed, np.repeat(w / 3.0, 3))
    out = []
    for d in range(2):
        acc = np.zeros(dofs.n_dofs, dtype=g.dtype)
        np.add.at(acc, ed, np.repeat(w * g[:, d] / 3.0, 3))
        with np.errstate(invalid="ignore", divide="ignore"):
            out.append(np.where(m > 0, acc / np.where(m > 0, m, 1.0), 0.0))
    return out[0], out[1]


def element_average(mesh: TriMesh, func, n_sub: int = 8) -> np.ndarray:
    """Average of ``func(points)`` over each triangle by uniform sub-sampling.

    Uses the centroids of the ``n_sub**2`` congruent sub-triangles of each
    element; exact for affine functions.
    """
    pts = []
    for a in range(n_sub):
        for b in range(n_sub - a):
            pts.append(((a + 1 / 3) / n_sub, (b + 1 / 3) / n_sub))
            if a + b < n_sub - 1:
                pts.append(((a + 2 / 3) / n_sub, (b + 2 / 3) / n_sub))
    ref = np.array(pts)
    p = mesh.vertices[mesh.triangles]
    phys = (p[:, None, 0] + ref[None, :, 0, None] * (p[:, None, 1] - p[:, None, 0])
            + ref[None, :, 1, None] * (p[:, None, 2] - p[:, None, 0]))
    vals = np.asarray(func(phys.reshape(-1, 2)), dtype=float).reshape(len(p), len(ref))
    return vals.mean(axis=1)
