"""Closed-form reference solutions used to validate the solvers.

Deliberately built on ``scipy.special`` rather than the package's own
Bessel routines so that the comparison checks two independent paths.
"""

from __future__ import annotations

import numpy as np
from scipy import special


def cylinder_series(points, k, radius, n_in, n0=1.0, a_in=1.0, angle=0.0, n_terms=None):
    """Total field of a plane wave ``exp(i k sqrt(n0) d.x)`` hitting a disk.

    The disk ``|x| < radius`` has coefficients ``(a_in, n_in)``, the exterior
    ``(1, n0)``. Continuity of ``u`` and ``a d_r u`` at ``r = radius`` gives
    each angular mode.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.hypot(pts[:, 0], pts[:, 1])
    th = np.arctan2(pts[:, 1], pts[:, 0]) - angle
    k0 = k * np.sqrt(n0)
    k1 = k * np.sqrt(n_in / a_in)
    x0, x1 = k0 * radius, k1 * radius
    if n_terms is None:
        xm = max(x0, x1)
        n_terms = int(xm + 4 * xm ** (1 / 3) + 12)
    inside = r < radius
    out = np.zeros(len(pts), dtype=complex)
    # the incident part of the exterior series is the plane wave itself
    out[~inside] = np.exp(1j * k0 * r[~inside] * np.cos(th[~inside]))
    coef = {}
    for m in range(-n_terms, n_terms + 1):
        inc = 1j ** m
        mat = np.array([[special.hankel1(m, x0), -special.jv(m, x1)],
                        [k0 * special.h1vp(m, x0), -a_in * k1 * special.jvp(m, x1)]])
        rhs = -inc * np.array([special.jv(m, x0), k0 * special.jvp(m, x0)])
        coef[m] = np.linalg.solve(mat, rhs)
    ro, ri = r[~inside], r[inside]
    eo, ei = np.exp(1j * th[~inside]), np.exp(1j * th[inside])
    # Z_{-m} = (-1)^m Z_m for Z = J, H, so each order is evaluated once
    for m in range(n_terms + 1):
        sgn = (-1) ** m
        (bp, cp), (bm, cm) = coef[m], coef[-m]
        if m == 0:
            bm = cm = 0.0
        if abs(bp) + abs(bm) > 1e-17:
            out[~inside] += special.hankel1(m, k0 * ro) * (bp * eo ** m + sgn * bm * eo ** -m)
        if abs(cp) + abs(cm) > 1e-17:
            out[inside] += special.jv(m, k1 * ri) * (cp * ei ** m + sgn * cm * ei ** -m)
    return out
