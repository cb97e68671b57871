"""Bessel functions of integer order and the 2D Helmholtz Green function.

J_n comes from Miller's backward recurrence normalized by
``J_0 + 2 sum J_2k = 1``. Y_0 and Y_1 come from the Neumann series in the
same J_n values, and higher orders from forward recurrence, which is stable
for Y.
"""

from __future__ import annotations

import numpy as np

_EULER_GAMMA = 0.57721566490153286061
_BIG = 1e250


class DomainError(ValueError):
    pass


class SingularPoint(ValueError):
    pass


def _start_order(nmax: int, xmax: float) -> int:
    m = max(nmax, xmax)
    start = int(m + 30 + 12 * m ** (1 / 3))
    return start + (start % 2)


def bessel_jy_all(nmax: int, x, want_y: bool = True):
    """J_0..J_nmax and Y_0..Y_nmax at each x (arrays of shape (len(x), nmax+1)).

    Y is NaN where ``x <= 0``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0):
        raise DomainError("negative argument")
    nmax = int(nmax)
    keep = max(nmax, 1)
    J = np.zeros((len(x), keep + 1))
    Y = np.full((len(x), keep + 1), np.nan)
    zero = x == 0
    J[zero, 0] = 1.0
    pos = ~zero
    if pos.any():
        xp = x[pos]
        Jp, s0, s1 = _miller(keep, xp)
        J[pos] = Jp
        if want_y:
            lg = np.log(xp / 2) + _EULER_GAMMA
            y0 = (2 / np.pi) * (lg * Jp[:, 0] - 2 * s0)
            y1 = (2 / np.pi) * (lg * Jp[:, 1] - Jp[:, 0] / xp + s1)
            Yp = np.empty_like(Jp)
            Yp[:, 0] = y0
            Yp[:, 1] = y1
            for n in range(1, keep):
                Yp[:, n + 1] = (2 * n / xp) * Yp[:, n] - Yp[:, n - 1]
            Y[pos] = Yp
    return J[:, : nmax + 1], Y[:, : nmax + 1]


def _miller(nmax, x):
    """Backward recurrence; returns J (len(x), nmax+1) and the Neumann sums.

    s0 = sum_k (-1)^k J_2k / k and s1 = sum_k (-1)^k (J_2k-1 - J_2k+1) / k.
    """
    M = _start_order(nmax, float(x.max()))
    out = np.zeros((len(x), nmax + 1))
    jp1 = np.zeros_like(x)          # J_{m+1}
    jm = np.full_like(x, 1e-300)     # J_m
    norm = np.zeros_like(x)
    s0 = np.zeros_like(x)
    s1 = np.zeros_like(x)
    for m in range(M, 0, -1):
        if m <= nmax:
            out[:, m] = jm
        if m % 2 == 0:
            k = m // 2
            norm += 2 * jm
            s0 += (-1) ** k * jm / k
        else:
            # J_m with m = 2p + 1 enters s1 as J_2k-1 (k = p + 1) and J_2k+1 (k = p)
            p = (m - 1) // 2
            c = (-1) ** (p + 1) / (p + 1)
            if p >= 1:
                c -= (-1) ** p / p
            s1 += c * jm
        jnew = (2 * m / x) * jm - jp1
        jp1, jm = jm, jnew
        big = np.abs(jm) > _BIG
        if big.any():
            scale = np.where(big, 1.0 / _BIG, 1.0)
            jm *= scale
            jp1 *= scale
            norm *= scale
            s0 *= scale
            s1 *= scale
            out *= scale[:, None]
    out[:, 0] = jm
    norm += jm
    return out / norm[:, None], s0 / norm, s1 / norm


def bessel_jy(order: int, x: float):
    """``(J_order(x), Y_order(x))``; Y raises DomainError for ``x <= 0``."""
    if order < 0:
        raise ValueError("order must be non-negative")
    if x < 0:
        raise DomainError("x must be non-negative")
    J, Y = bessel_jy_all(order, [x], want_y=x > 0)
    if x == 0:
        if order == 0:
            return 1.0, -np.inf
        raise DomainError("Y is singular at x = 0")
    return float(J[0, order]), float(Y[0, order])


def hankel1_01(x):
    """H^(1)_0 and H^(1)_1 at an array of positive arguments."""
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    if np.any(flat <= 0):
        raise DomainError("Hankel function needs positive arguments")
    J, Y = bessel_jy_all(1, flat)
    h0 = (J[:, 0] + 1j * Y[:, 0]).reshape(x.shape)
    h1 = (J[:, 1] + 1j * Y[:, 1]).reshape(x.shape)
    return h0, h1


def _diff(x, y):
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.sqrt(np.sum(d * d, axis=-1))
    if np.any(r <= 1e-12):
        raise SingularPoint("Green function evaluated at coincident points")
    return d, r


def green_2d(k: float, x, y):
    """``G(x, y) = (i/4) H0(k |x - y|)`` for broadcastable point arrays."""
    _, r = _diff(x, y)
    h0, _ = hankel1_01(k * r)
    return 0.25j * h0


def grad_green_2d(k: float, x, y):
    """Gradient of ``G(x, y)`` with respect to its first argument ``x``."""
    d, r = _diff(x, y)
    _, h1 = hankel1_01(k * r)
    return (-0.25j * k * h1 / r)[..., None] * d
