"""Independent reference computations used by the tests.

Nothing here imports the library's numerical routines; each oracle is a
brute-force or high-precision restatement of the quantity under test.
"""

from __future__ import annotations

import itertools
import math

import mpmath as mp
import numpy as np


def dual_basis_mp(basis, dps: int = 40):
    """Rows b~ with <b_k, b~_j> = 2 pi delta_kj, solved in mpmath."""
    with mp.workdps(dps):
        B = mp.matrix([[mp.mpf(v) for v in row] for row in basis])
        D = 2 * mp.pi * (B**-1).T
        return np.array([[float(D[i, j]) for j in range(D.cols)] for i in range(D.rows)])


def brute_dual_coords(dual_basis, center, radius, box: int):
    """All integer coords in [-box, box]^m whose dual point is within radius of center."""
    dual_basis = np.asarray(dual_basis, dtype=float)
    m = dual_basis.shape[0]
    out = []
    for c in itertools.product(range(-box, box + 1), repeat=m):
        p = np.array(c, dtype=float) @ dual_basis
        if np.sum((p - center) ** 2) <= radius * radius * (1 + 1e-14):
            out.append(c)
    return sorted(out)


def torus_spectrum_brute(basis, count: int, box: int = 12):
    """Sorted |2 pi B^-T n|^2 over a box of integer vectors."""
    dual = 2 * np.pi * np.linalg.inv(np.asarray(basis, dtype=float)).T
    m = dual.shape[0]
    vals = []
    for c in itertools.product(range(-box, box + 1), repeat=m):
        p = np.array(c, dtype=float) @ dual
        vals.append(float(p @ p))
    return np.sort(vals)[:count]


def h_mp(n_b1, n_perp_sq, mu, tau, dps: int = 50):
    """Free eigenvalue from its closed form, evaluated in mpmath.

    n_b1 is <n + theta b1, b1>, n_perp_sq the squared transverse part of
    n + theta b1 + xi'.
    """
    with mp.workdps(dps):
        a = mp.mpf(n_b1)
        re = a * a + mp.mpf(n_perp_sq) + mp.mpf(mu) - mp.mpf(tau) ** 2
        im = 2 * mp.mpf(tau) * a
        return complex(mp.mpc(re, im))


def lemma_sum_mp(eps: float, tau: float, shift: int, dps: int = 50) -> float:
    """sum_k k^(1-2eps)/(|(k-shift)^2 - tau^2| + |tau|) in mpmath.

    Terms are added one by one up to a cut M well past the kink; beyond it,
    with m = k - shift, the summand m^(-1-2eps) (1 + shift/m)^(1-2eps) / (1 - c/m^2)
    (c = tau^2 - |tau|) is expanded in powers of 1/m and summed with Hurwitz zeta.
    """
    with mp.workdps(dps):
        e, t = mp.mpf(eps), abs(mp.mpf(tau))
        c = t * t - t
        M = max(int(10 * float(t)), 200)
        head = mp.fsum(
            mp.mpf(k) ** (1 - 2 * e) / (abs((k - shift) ** 2 - t * t) + t) for k in range(1, M + shift)
        )
        tail = mp.mpf(0)
        for i in range(0, 40 if shift else 1):
            bi = mp.binomial(1 - 2 * e, i) * mp.mpf(shift) ** i
            for r in range(40):
                tail += bi * c**r * mp.zeta(1 + 2 * e + i + 2 * r, M)
        return float(head + tail)


def interval_basis(bc: str, a: float, j: int, x):
    """Orthonormal sine/cosine eigenfunctions of -d^2/dx^2 on [0, a]."""
    x = np.asarray(x, dtype=float)
    if bc == "dirichlet":
        return math.sqrt(2 / a) * np.sin(j * np.pi * x / a)
    if j == 0:
        return np.full_like(x, 1 / math.sqrt(a))
    return math.sqrt(2 / a) * np.cos(j * np.pi * x / a)


def mathieu_entry_quadrature(bc, a, j, jp, nu_int, amplitude=1.0, nx=400, ny=256):
    """<V phi_j e_n, phi_j' e_n'> for V = 2 A cos(2 pi y) on [0, a] x [0, 1) by direct quadrature.

    nu_int = n' - n in integer dual coordinates (dual spacing 2 pi).
    """
    x, wx = np.polynomial.legendre.leggauss(nx)
    x = 0.5 * a * (x + 1)
    wx = 0.5 * a * wx
    y = np.arange(ny) / ny
    wy = 1.0 / ny
    fx = np.sum(wx * interval_basis(bc, a, j, x) * interval_basis(bc, a, jp, x))
    fy = np.sum(wy * 2 * amplitude * np.cos(2 * np.pi * y) * np.exp(-2j * np.pi * nu_int * y))
    return complex(fx * fy)


def robin_entry_direct(sig0_hat, siga_hat, a, j, jp):
    """sigma_a(n'-n) phi_j(a) phi_j'(a) - sigma_0(n'-n) phi_j(0) phi_j'(0) in the Neumann basis."""
    ph = lambda k, x: float(interval_basis("neumann", a, k, np.array([x]))[0])
    return siga_hat * ph(j, a) * ph(jp, a) - sig0_hat * ph(j, 0.0) * ph(jp, 0.0)


def smallest_sv(A) -> float:
    return float(np.linalg.svd(np.asarray(A), compute_uv=False).min())
