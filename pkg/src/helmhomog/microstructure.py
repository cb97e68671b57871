"""Periodized Matérn type-II disk microstructures and rescaled coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class UnreachableFraction(ValueError):
    """Target volume fraction at or beyond the Matérn II saturation limit."""


@dataclass(frozen=True)
class ProcessConfig:
    proposal_intensity: float
    hardcore_distance: float
    inclusion_radius: float = 0.5
    period: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.proposal_intensity < 0:
            raise ValueError("proposal_intensity must be >= 0")
        if self.inclusion_radius <= 0 or self.hardcore_distance <= 0:
            raise ValueError("radius and hardcore distance must be positive")
        if self.hardcore_distance < 2 * self.inclusion_radius:
            raise ValueError("hardcore_distance < 2 * inclusion_radius lets disks overlap")
        if self.period <= 2 * self.hardcore_distance:
            raise ValueError("period must exceed twice the hardcore distance")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class Microstructure:
    centers: np.ndarray
    inclusion_radius: float
    period: float
    seed: int | None = None

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)

    def __len__(self):
        return len(self.centers)

    def min_torus_distance(self) -> float:
        if len(self.centers) < 2:
            return math.inf
        tree = cKDTree(self.centers, boxsize=self.period)
        d, _ = tree.query(self.centers, k=2)
        return float(d[:, 1].min())

    def inclusion_indicator(self, y) -> np.ndarray:
        """True where the torus point ``y`` lies inside a disk (open disk)."""
        y = wrap(np.atleast_2d(y), self.period)
        if len(self.centers) == 0:
            return np.zeros(len(y), dtype=bool)
        tree = cKDTree(self.centers, boxsize=self.period)
        d, _ = tree.query(y, k=1)
        return d < self.inclusion_radius


def wrap(y, period: float) -> np.ndarray:
    out = np.mod(np.asarray(y, dtype=float), period)
    # np.mod may round tiny negatives up to exactly ``period``
    out[out >= period] = 0.0
    return out


def sample_matern2(config: ProcessConfig) -> Microstructure:
    """Matérn II thinning of a Poisson proposal on the torus.

    A proposed point survives iff no other proposal within the hardcore
    distance (torus metric, distance <= delta) carries a strictly smaller
    mark.
    """
    rng = np.random.Generator(np.random.PCG64(config.seed))
    L = config.period
    count = rng.poisson(config.proposal_intensity * L * L)
    pts = wrap(rng.uniform(0.0, L, size=(count, 2)), L)
    marks = rng.uniform(size=count)
    if count < 2:
        return Microstructure(pts, config.inclusion_radius, L, config.seed)
    tree = cKDTree(pts, boxsize=L)
    pairs = tree.query_pairs(config.hardcore_distance, output_type="ndarray")
    keep = np.ones(count, dtype=bool)
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        keep[np.where(marks[i] > marks[j], i, j)] = False
    return Microstructure(pts[keep], config.inclusion_radius, L, config.seed)


def saturation_fraction(radius: float, hardcore: float) -> float:
    return radius ** 2 / hardcore ** 2


def retained_intensity(proposal_intensity: float, hardcore: float) -> float:
    area = math.pi * hardcore ** 2
    return -math.expm1(-proposal_intensity * area) / area


def calibrate_intensity(target_vf: float, radius: float, hardcore: float) -> float:
    """Proposal intensity whose Matérn II retained disks cover ``target_vf``."""
    if not 0 <= target_vf < 1:
        raise ValueError("target volume fraction must lie in [0, 1)")
    limit = saturation_fraction(radius, hardcore)
    if target_vf >= limit:
        raise UnreachableFraction(
            f"volume fraction {target_vf} >= saturation limit {limit:.6g}")
    if target_vf == 0:
        return 0.0
    return -math.log1p(-target_vf / limit) / (math.pi * hardcore ** 2)


def volume_fraction(ms: Microstructure) -> float:
    return len(ms) * math.pi * ms.inclusion_radius ** 2 / ms.period ** 2


@dataclass(frozen=True)
class MediumParams:
    a_M: np.ndarray = field(default_factory=lambda: 2.0 * np.eye(2))
    a_S: np.ndarray = field(default_factory=lambda: 3.5 * np.eye(2))
    n_M: float = 1.5
    n_S: float = 0.5
    n_0: float = 1.0

    def __post_init__(self):
        for name in ("a_M", "a_S"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim == 0:
                a = float(a) * np.eye(2)
            if a.shape != (2, 2) or not np.allclose(a, a.T):
                raise ValueError(f"{name} must be a symmetric 2x2 matrix")
            if np.linalg.eigvalsh(a).min() <= 0:
                raise ValueError(f"{name} is not positive definite")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if min(self.n_M, self.n_S, self.n_0) <= 0:
            raise ValueError("n values must be positive")

    @classmethod
    def scalar(cls, a_M, a_S, n_M, n_S, n_0=1.0):
        return cls(a_M * np.eye(2), a_S * np.eye(2), n_M, n_S, n_0)

    def is_isotropic(self) -> bool:
        return all(np.allclose(a, a[0, 0] * np.eye(2)) for a in (self.a_M, self.a_S))

    def key(self) -> tuple:
        return (tuple(self.a_M.ravel()), tuple(self.a_S.ravel()), self.n_M, self.n_S, self.n_0)


@dataclass(frozen=True)
class CoefficientField:
    """``a_eps(x) = a(x/eps)`` inside the square D, identity outside."""

    microstructure: Microstructure
    params: MediumParams
    epsilon: float
    scatterer_center: tuple[float, float] = (0.0, 0.0)
    scatterer_side: float = 2.0

    def in_scatterer(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all(np.abs(x - np.asarray(self.scatterer_center)) < self.scatterer_side / 2,
                      axis=1)

    def inclusion(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = self.in_scatterer(x)
        out = np.zeros(len(x), dtype=bool)
        if inside.any():
            out[inside] = self.microstructure.inclusion_indicator(x[inside] / self.epsilon)
        return out

    def evaluate(self, x):
        """Vectorized coefficients: ``a`` of shape (m, 2, 2), ``n`` of shape (m,)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = self.in_scatterer(x)
        incl = self.inclusion(x)
        p = self.params
        a = np.broadcast_to(np.eye(2), (len(x), 2, 2)).copy()
        a[inside & ~incl] = p.a_M
        a[incl] = p.a_S
        n = np.full(len(x), p.n_0)
        n[inside & ~incl] = p.n_M
        n[incl] = p.n_S
        return a, n


def coefficient_at(cf: CoefficientField, x):
    a, n = cf.evaluate(np.asarray(x, dtype=float).reshape(1, 2))
    return a[0], float(n[0])


def write_microstructure(ms: Microstructure, path) -> None:
    lines = [f"matern2 L={ms.period!r} r={ms.inclusion_radius!r} seed={ms.seed}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in ms.centers]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def read_microstructure(path) -> Microstructure:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    head = text[0].split()
    if not head or head[0] != "matern2":
        raise ValueError("not a matern2 microstructure file")
    kv = dict(item.split("=", 1) for item in head[1:])
    seed = None if kv.get("seed", "None") == "None" else int(kv["seed"])
    centers = [tuple(map(float, ln.split())) for ln in text[1:] if ln.strip()]
    return Microstructure(np.array(centers).reshape(-1, 2), float(kv["r"]), float(kv["L"]), seed)
