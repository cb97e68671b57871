"""Periodized corrector problems and Monte-Carlo homogenized coefficients.

All cell problems carry the massive term ``u / T`` so that the periodic
operators are definite; every field is shifted to zero mean afterwards.
In two dimensions the skew tensor ``sigma_i`` has a single independent
entry ``s_i = sigma_{i,12}``, solving ``-lap s_i + s_i / T = d1 q_i2 - d2 q_i1``
so that ``div sigma_i = (d2 s_i, -d1 s_i) = q_i``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem
from .microstructure import (MediumParams, Microstructure, ProcessConfig, sample_matern2,
                             volume_fraction)
from .seeding import derive_seed

log = logging.getLogger(__name__)

_MAGIC = b"WHCF"
_VERSION = 1
_HEADER = "<HdddQ"
_NO_SEED = 2**64 - 1


def torus_coefficients(mesh: fem.TriMesh, ms: Microstructure, params: MediumParams):
    """Per-triangle ``(a, n)`` on the torus mesh, sampled at grid-cell centers."""
    incl = ms.inclusion_indicator(mesh.cell_centers)
    a = np.where(incl[:, None, None], params.a_S[None], params.a_M[None])
    n = np.where(incl, params.n_S, params.n_M).astype(float)
    return a, n


def _mean_free(mesh, dofs, values):
    area = mesh.areas.sum()
    return values - fem.integrate(mesh, dofs, values) / area


def _massive_factor(mesh, dofs, a_field, T):
    if T <= 0:
        raise ValueError("massive parameter T must be positive")
    A = fem.stiffness_matrix(mesh, dofs, a_field) + fem.mass_matrix(mesh, dofs) / T
    return fem.Factorization(A.tocsc())


def _check_torus(dofs):
    if not dofs.periodic:
        raise ValueError("corrector problems need a torus mesh")


def solve_phi(mesh: fem.TriMesh, dofs: fem.DofMap, a_elem, T: float, factor=None):
    """Correctors ``phi_1, phi_2`` of ``phi / T - div a (grad phi + e_i) = 0``.

    Returns an array of shape ``(2, n_dofs)``.
    """
    _check_torus(dofs)
    a_elem = np.asarray(a_elem, dtype=float)
    if a_elem.ndim == 1:
        a_elem = a_elem[:, None, None] * np.eye(2)
    lu = factor or _massive_factor(mesh, dofs, a_elem, T)
    out = np.empty((2, dofs.n_dofs))
    for i in range(2):
        rhs = fem.load_vector(mesh, dofs, div_source=a_elem[:, :, i])
        out[i] = _mean_free(mesh, dofs, np.real(lu.solve(rhs)))
    return out


def solve_beta(mesh: fem.TriMesh, dofs: fem.DofMap, n_elem, n_hom: float, T: float,
               factor=None):
    """Fields ``beta_i`` with ``div beta = n - n_hom`` weakly.

    Each component solves ``-lap beta_i + beta_i / T = -d_i (n - n_hom)``,
    whose weak right side is ``int (n - n_hom) d_i v``.
    """
    _check_torus(dofs)
    f = np.asarray(n_elem, dtype=float) - n_hom
    lu = factor or _massive_factor(mesh, dofs, None, T)
    out = np.empty((2, dofs.n_dofs))
    for i in range(2):
        F = np.zeros((mesh.n_triangles, 2))
        F[:, i] = -f
        out[i] = _mean_free(mesh, dofs, np.real(lu.solve(fem.load_vector(mesh, dofs, div_source=F))))
    return out


@dataclass(frozen=True, eq=False)
class FluxField:
    """Per-triangle fluxes ``q_i`` and commutators ``Xi_i``, shape ``(2, nt, 2)``."""

    q: np.ndarray
    xi: np.ndarray


def flux_and_commutator(mesh: fem.TriMesh, dofs: fem.DofMap, phi, a_elem, a_hom) -> FluxField:
    """``q_i = a (e_i + grad phi_i) - a_hom e_i`` and ``Xi_i = (a - a_hom)(e_i + grad phi_i)``."""
    a_elem = np.asarray(a_elem, dtype=float)
    a_hom = np.asarray(a_hom, dtype=float)
    q = np.empty((2, mesh.n_triangles, 2))
    xi = np.empty_like(q)
    for i in range(2):
        g = fem.element_gradient(mesh, dofs, phi[i]) + np.eye(2)[i]
        q[i] = np.einsum("tde,te->td", a_elem, g) - a_hom[:, i]
        xi[i] = np.einsum("tde,te->td", a_elem - a_hom, g)
    return FluxField(q, xi)


def solve_sigma(mesh: fem.TriMesh, dofs: fem.DofMap, flux: FluxField, T: float, factor=None):
    """Independent entries ``s_i = sigma_{i,12}``, shape ``(2, n_dofs)``."""
    _check_torus(dofs)
    lu = factor or _massive_factor(mesh, dofs, None, T)
    out = np.empty((2, dofs.n_dofs))
    for i in range(2):
        q = flux.q[i]
        F = np.column_stack([q[:, 1], -q[:, 0]])
        out[i] = _mean_free(mesh, dofs, np.real(lu.solve(fem.load_vector(mesh, dofs, div_source=F))))
    return out


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    """Torus correctors of one realization.

    ``sigma`` stores ``sigma_{i,12}``; the full tensor is recovered through
    :meth:`sigma_component`.
    """

    mesh: fem.TriMesh
    dofs: fem.DofMap
    phi: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    massive_T: float
    a_elem: np.ndarray
    n_elem: np.ndarray
    seed: int | None = None

    @property
    def period(self) -> float:
        return float(self.dofs.period)

    def sigma_component(self, i: int, j: int, m: int) -> np.ndarray:
        """Nodal values of ``sigma_{i,jm}`` for zero-based indices."""
        if j == m:
            return np.zeros(self.dofs.n_dofs)
        return self.sigma[i] if (j, m) == (0, 1) else -self.sigma[i]

    def sigma_matrix(self, i: int, values=None):
        """``sigma_i`` as a ``(..., 2, 2)`` array from nodal values of ``s_i``."""
        s = self.sigma[i] if values is None else np.asarray(values)
        out = np.zeros(s.shape + (2, 2), dtype=s.dtype)
        out[..., 0, 1] = s
        out[..., 1, 0] = -s
        return out

    def means(self) -> np.ndarray:
        area = self.mesh.areas.sum()
        fields = np.concatenate([self.phi, self.beta, self.sigma])
        return np.array([fem.integrate(self.mesh, self.dofs, f) / area for f in fields])

    def apparent_coefficients(self):
        """Energy-form ``a``, flux-form ``a`` and mean ``n`` of this realization."""
        area = self.mesh.areas.sum()
        w = self.mesh.areas / area
        g = np.stack([fem.element_gradient(self.mesh, self.dofs, self.phi[i]) + np.eye(2)[i]
                      for i in range(2)])
        ag = np.einsum("tde,ite->itd", self.a_elem, g)
        energy = np.einsum("t,itd,jtd->ij", w, ag, g)
        flux = np.einsum("t,itd->di", w, ag)
        return energy, flux, float(np.dot(w, self.n_elem))


def compute_correctors(mesh, dofs, a_elem, n_elem, T: float, seed=None) -> CorrectorSet:
    """phi, beta and sigma of one realization.

    ``beta`` uses the realization's own mean of ``n`` and ``q`` its own
    flux-form coefficient, so both right sides have zero torus mean.
    """
    a_elem = np.asarray(a_elem, dtype=float)
    n_elem = np.asarray(n_elem, dtype=float)
    phi = solve_phi(mesh, dofs, a_elem, T)
    lap = _massive_factor(mesh, dofs, None, T)
    w = mesh.areas / mesh.areas.sum()
    beta = solve_beta(mesh, dofs, n_elem, float(np.dot(w, n_elem)), T, factor=lap)
    partial = CorrectorSet(mesh, dofs, phi, np.zeros_like(phi), np.zeros_like(phi), T,
                           a_elem, n_elem, seed)
    _, a_flux, _ = partial.apparent_coefficients()
    flux = flux_and_commutator(mesh, dofs, phi, a_elem, a_flux)
    sigma = solve_sigma(mesh, dofs, flux, T, factor=lap)
    return CorrectorSet(mesh, dofs, phi, beta, sigma, T, a_elem, n_elem, seed)


# -- weak residuals -------------------------------------------------------

def _dual_norm(mesh, dofs, residuals):
    G = (fem.stiffness_matrix(mesh, dofs) + fem.mass_matrix(mesh, dofs)).tocsc()
    lu = fem.Factorization(G)
    total = 0.0
    for r in residuals:
        total += float(np.real(np.vdot(r, lu.solve(r))))
    return np.sqrt(max(total, 0.0))


def _p1_times_const(mesh, dofs, const):
    """``int c v`` for each P1 basis function, c constant per triangle."""
    return fem.load_vector(mesh, dofs, source=const)


def _p1_dot_grad(mesh, dofs, values, comp):
    """``int u d_comp v`` for P1 ``u`` over each basis function ``v``."""
    local = np.asarray(values)[dofs.element_dofs(mesh)]
    mean_u = local.mean(axis=1)
    F = np.zeros((mesh.n_triangles, 2), dtype=mean_u.dtype)
    F[:, comp] = -mean_u
    return fem.load_vector(mesh, dofs, div_source=F)


def beta_residual(cs: CorrectorSet, n_hom: float | None = None) -> float:
    """H^-1 size of ``div beta - (n - n_hom)``.

    Dual norm over the discrete space of ``v -> int beta . grad v + int (n - n_hom) v``.
    """
    w = cs.mesh.areas / cs.mesh.areas.sum()
    nbar = float(np.dot(w, cs.n_elem)) if n_hom is None else n_hom
    r = _p1_times_const(cs.mesh, cs.dofs, cs.n_elem - nbar)
    for i in range(2):
        r = r + _p1_dot_grad(cs.mesh, cs.dofs, cs.beta[i], i)
    return _dual_norm(cs.mesh, cs.dofs, [r])


def sigma_residual(cs: CorrectorSet, a_hom=None) -> float:
    """H^-1 size of ``div sigma_i - q_i`` summed over i.

    For vector test fields ``v``: ``int sigma_i : grad v + int q_i . v`` with
    ``sigma_i : grad v = s_i (d2 v_1 - d1 v_2)``.
    """
    energy, a_flux, _ = cs.apparent_coefficients()
    a_ref = a_flux if a_hom is None else np.asarray(a_hom)
    flux = flux_and_commutator(cs.mesh, cs.dofs, cs.phi, cs.a_elem, a_ref)
    res = []
    for i in range(2):
        s = cs.sigma[i]
        for j in range(2):
            r = _p1_times_const(cs.mesh, cs.dofs, flux.q[i][:, j])
            if j == 0:
                r = r + _p1_dot_grad(cs.mesh, cs.dofs, s, 1)
            else:
                r = r - _p1_dot_grad(cs.mesh, cs.dofs, s, 0)
            res.append(r)
    return _dual_norm(cs.mesh, cs.dofs, res)


# -- ensembles ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HomogenizedCoeffs:
    a_hom: np.ndarray
    n_hom: float
    n_realizations: int
    spread: np.ndarray
    n_spread: float = 0.0
    seeds: tuple = ()
    samples_a: np.ndarray = field(default=None, repr=False)
    samples_n: np.ndarray = field(default=None, repr=False)
    samples_vf: np.ndarray = field(default=None, repr=False)
    flux_form: np.ndarray = field(default=None, repr=False)

    @property
    def standard_error(self) -> np.ndarray:
        return self.spread / np.sqrt(self.n_realizations)

    @classmethod
    def constant(cls, a_hom, n_hom):
        a = np.asarray(a_hom, dtype=float)
        if a.ndim == 0:
            a = float(a) * np.eye(2)
        return cls(a, float(n_hom), 0, np.zeros((2, 2)))

    @classmethod
    def from_correctors(cls, sets, vfs=None):
        """Average of the per-realization energy-form coefficients."""
        energies, fluxes, ns = [], [], []
        for cs in sets:
            e, f, n = cs.apparent_coefficients()
            energies.append(e)
            fluxes.append(f)
            ns.append(n)
        A = np.array(energies)
        N = len(A)
        ddof = 1 if N > 1 else 0
        return cls(A.mean(axis=0), float(np.mean(ns)), N, A.std(axis=0, ddof=ddof),
                   float(np.std(ns, ddof=ddof)), tuple(cs.seed for cs in sets), A,
                   np.array(ns), None if vfs is None else np.asarray(vfs),
                   np.array(fluxes).mean(axis=0))


def medium_key(params: MediumParams) -> str:
    return json.dumps([list(map(float, v)) if isinstance(v, tuple) else float(v)
                       for v in params.key()])


def cache_key(process: ProcessConfig, params: MediumParams, L: float, T: float, h: float,
              seed: int) -> str:
    blob = json.dumps({
        "process": [process.proposal_intensity, process.hardcore_distance,
                    process.inclusion_radius],
        "medium": medium_key(params), "L": L, "T": T, "h": h, "seed": seed,
    }, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_cache(path, cs: CorrectorSet, h: float) -> None:
    header = _MAGIC + struct.pack(_HEADER, _VERSION, cs.period, cs.massive_T, h,
                                  _NO_SEED if cs.seed is None else cs.seed)
    n = cs.dofs.n_dofs
    body = struct.pack("<Q", n) + np.concatenate(
        [cs.phi, cs.beta, cs.sigma]).astype("<f8").tobytes()
    Path(path).write_bytes(header + body)


def read_cache(path):
    """``(L, T, h, seed, fields)`` with fields of shape ``(6, n_dofs)``."""
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError("not a corrector cache file")
    off = 4
    version, L, T, h, seed = struct.unpack_from(_HEADER, data, off)
    if version != _VERSION:
        raise ValueError(f"unsupported cache version {version}")
    off += struct.calcsize(_HEADER)
    (n,) = struct.unpack_from("<Q", data, off)
    off += 8
    fields = np.frombuffer(data, dtype="<f8", count=6 * n, offset=off).reshape(6, n)
    return L, T, h, (None if seed == _NO_SEED else seed), fields.astype(float)


class CorrectorCache:
    """Directory of WHCF files keyed by realization and discretization."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path(self, key: str) -> Path:
        return self.directory / f"{key}.whcf"

    def load(self, key, mesh, dofs, a_elem, n_elem, T, seed):
        p = self.path(key)
        if not p.exists():
            return None
        try:
            _, T_file, _, _, f = read_cache(p)
        except (ValueError, struct.error) as exc:
            log.warning("ignoring unreadable cache %s: %s", p, exc)
            return None
        if f.shape[1] != dofs.n_dofs or T_file != T:
            return None
        return CorrectorSet(mesh, dofs, f[0:2], f[2:4], f[4:6], T, a_elem, n_elem, seed)

    def store(self, key, cs, h):
        self.directory.mkdir(parents=True, exist_ok=True)
        tmp = self.path(key).with_suffix(".tmp")
        write_cache(tmp, cs, h)
        tmp.replace(self.path(key))


def realization_correctors(process: ProcessConfig, params: MediumParams, T: float, h: float,
                           mesh=None, dofs=None, cache: CorrectorCache | None = None):
    """Sample one microstructure and return ``(Microstructure, CorrectorSet)``."""
    ms = sample_matern2(process)
    if mesh is None:
        mesh, dofs = fem.build_torus_mesh(process.period, h)
    a, n = torus_coefficients(mesh, ms, params)
    key = cache_key(process, params, process.period, T, h, process.seed)
    cs = cache.load(key, mesh, dofs, a, n, T, process.seed) if cache else None
    if cs is None:
        cs = compute_correctors(mesh, dofs, a, n, T, seed=process.seed)
        if cache:
            cache.store(key, cs, h)
    return ms, cs


def homogenize_ensemble(process: ProcessConfig, params: MediumParams, T: float, L: float,
                        h: float, N: int, master_seed: int,
                        cache: CorrectorCache | None = None, keep_sets: bool = False):
    """Monte-Carlo effective coefficients over ``N`` periodized realizations.

    Realization ``m`` uses the seed ``derive_seed(master_seed, "microstructure", m)``.
    Returns the :class:`HomogenizedCoeffs`, plus the corrector sets when
    ``keep_sets`` is true.
    """
    if N < 1:
        raise ValueError("need at least one realization")
    mesh, dofs = fem.build_torus_mesh(L, h)
    sets, vfs = [], []
    for m in range(N):
        seed = derive_seed(master_seed, "microstructure", m)
        cfg = ProcessConfig(process.proposal_intensity, process.hardcore_distance,
                            process.inclusion_radius, L, seed)
        try:
            ms, cs = realization_correctors(cfg, params, T, h, mesh, dofs, cache)
        except Exception as exc:
            raise RuntimeError(f"realization {m} failed: {exc}") from exc
        vfs.append(volume_fraction(ms))
        sets.append(cs)
        log.info("homogenization realization %d/%d done", m + 1, N)
    hc = HomogenizedCoeffs.from_correctors(sets, vfs)
    return (hc, sets) if keep_sets else hc
