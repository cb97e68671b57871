"""Mesh convergence of the truncated solver against the penetrable-cylinder series.

Prints the relative L2(box) error for h = wavelength / m and the ratio
between successive refinements, for both truncation closures.
"""

import argparse

import numpy as np

from helmhomog import fem
from helmhomog.benchmarks import cylinder_series
from helmhomog.scattering import PlaneWave, TruncationClosure, background_coefficients, solve_helmholtz


def run(kind, per_wavelength, k=5.0, radius=0.5, n_in=2.0, box_wavelengths=3.0):
    lam = 2 * np.pi / k
    h = lam / per_wavelength
    side = 2 * round(box_wavelengths * lam / 2 / h) * h
    width = round(0.5 * lam / h) * h if kind == "PML_BOX" else 0.0
    closure = TruncationClosure(side, k, scatterer_side=2 * radius, kind=kind, pml_width=width)
    mesh, dofs = fem.build_box_mesh(side, h, ((0.0, 0.0), None), closure.layer)
    a, _ = background_coefficients(mesh)
    inside = fem.element_average(mesh, lambda p: (np.hypot(p[:, 0], p[:, 1]) < radius) * 1.0, 4)
    sol = solve_helmholtz(closure, mesh, dofs, a, 1 + (n_in - 1) * inside, PlaneWave(k))
    ref = cylinder_series(mesh.vertices, k, radius, n_in)
    box = (fem.EXTERIOR, fem.SCATTERER_D)
    return (fem.norm_region(mesh, dofs, sol.values - ref, box)
            / fem.norm_region(mesh, dofs, ref, box))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--levels", type=int, nargs="+", default=[10, 20, 40, 80])
    args = parser.parse_args()
    for kind in ("IMPEDANCE_BOX", "PML_BOX"):
        prev = None
        for m in args.levels:
            err = run(kind, m)
            ratio = "" if prev is None else f"  ratio {prev / err:.2f}"
            print(f"{kind:13s} h = wavelength/{m:<3d} error {err:.4%}{ratio}")
            prev = err


if __name__ == "__main__":
    main()
