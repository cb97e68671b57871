"""Split the two-scale H1(D) error into a boundary strip and the interior.

For each scale the error u_eps - w_eps is measured on the strip of width
``c * eps`` along dD and on the rest of D. A boundary-layer-dominated error
shows the strip part decaying like eps^(1/2); an interior-dominated error
decays like eps.
"""

import argparse

import numpy as np

from helmhomog import fem
from helmhomog.correctors import HomogenizedCoeffs, realization_correctors
from helmhomog.expansion import (CorrectorLookup, ScatterSetup, heterogeneous_coefficients,
                                 homogenized_operator, solve_u0, solve_ueps, two_scale_expand)
from helmhomog.harness import SweepConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=2)
    parser.add_argument("--width", type=float, default=1.0, help="strip width in units of eps")
    args = parser.parse_args()
    cfg = SweepConfig(n_realizations=args.seeds)
    params = cfg.medium()
    torus, tdofs = fem.build_torus_mesh(cfg.torus_period, cfg.torus_step)
    sets = [realization_correctors(cfg.process(s), params, cfg.massive_T, cfg.torus_step,
                                   torus, tdofs) for s in cfg.seeds()]
    hc = HomogenizedCoeffs.from_correctors([cs for _, cs in sets])
    print("eps      total    strip    interior")
    for eps in cfg.epsilon_list:
        setup = ScatterSetup.build(cfg.closure_for(), cfg.step(eps), cfg.incident())
        u0 = solve_u0(hc, setup, homogenized_operator(setup, hc)).values
        dist = np.max(np.abs(setup.mesh.centroids - np.asarray(setup.center)), axis=1)
        strip = setup.in_d & (dist > setup.side / 2 - args.width * eps)
        parts = []
        for ms, cs in sets:
            lookup = CorrectorLookup(cs, eps)
            a, n = heterogeneous_coefficients(setup, params, eps, ms, lookup)
            e = solve_ueps(setup, a, n).values - two_scale_expand(setup, u0, lookup)
            parts.append([fem.norm_region(setup.mesh, setup.dofs, e, m, "H1")
                          for m in (setup.in_d, strip, setup.in_d & ~strip)])
        rms = np.sqrt(np.mean(np.square(parts), axis=0))
        print(f"{eps:.4f}   {rms[0]:.4f}   {rms[1]:.4f}   {rms[2]:.4f}")


if __name__ == "__main__":
    main()
