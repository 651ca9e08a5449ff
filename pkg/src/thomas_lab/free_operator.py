"""Spectral data of the free fiber operator H0 on M x T.

The joint eigenfunctions are |Omega|^{-1/2} phi_j(x) exp(i<n, y>) with n in
the dual lattice.  Along the complexified line (pi + i tau) b1 + xi' the
eigenvalue of mode (j, n) is

    h = |n + pi b1 + xi'|^2 + mu_j - tau^2 + 2 i tau <n + pi b1, b1>.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cross_section import CrossSectionSpec, Spectrum, spectrum_below
from .lattice import DualPoint, Lattice, dual_basis, enumerate_dual_coords

DEFAULT_MARGIN = 100.0


class NonInvertibleError(ArithmeticError):
    """The (truncated) operator is singular to working precision."""


@dataclass(frozen=True)
class QuasiMomentum:
    """Quasimomentum (theta + i tau) b1 + xi_perp.

    ``theta`` is pi on the Thomas line; other values are only used for real
    (tau = 0) band sweeps.
    """

    xi_perp: np.ndarray
    tau: float = 0.0
    theta: float = np.pi

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi_perp, dtype=float)).copy()
        xi.setflags(write=False)
        object.__setattr__(self, "xi_perp", xi)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "theta", float(self.theta))

    def check(self, lattice: Lattice) -> None:
        if self.xi_perp.shape != (lattice.dim,):
            raise ValueError(f"xi_perp must have {lattice.dim} components")
        if abs(self.xi_perp @ lattice.b1) > 1e-12:
            raise ValueError("xi_perp must be orthogonal to b1")

    def real_shift(self, lattice: Lattice) -> np.ndarray:
        """The real part theta*b1 + xi_perp."""
        return self.theta * lattice.b1 + self.xi_perp

    def with_tau(self, tau: float) -> "QuasiMomentum":
        return QuasiMomentum(self.xi_perp, tau, self.theta)


@dataclass(frozen=True)
class ModePair:
    j: int
    n: DualPoint
    mu: float


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Truncated joint basis {(j, n) : |n + theta b1 + xi'|^2 + mu_j <= lambda_max}.

    Ordered by cross-section index j, then lexicographically by the integer
    coordinates of n.  ``lattice`` may be None, meaning no longitudinal
    directions (the cross-section alone).
    """

    lattice: Lattice | None
    cross: Spectrum
    qm: QuasiMomentum
    lambda_max: float
    j: np.ndarray
    n_coords: np.ndarray
    n_cart: np.ndarray
    free_real: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.j)

    @property
    def mu(self) -> np.ndarray:
        return self.cross.mu[self.j]

    @property
    def cell_volume(self) -> float:
        return 1.0 if self.lattice is None else self.lattice.cell_volume

    def b1_pairing(self) -> np.ndarray:
        """<n + theta b1, b1> for each mode."""
        if self.lattice is None:
            return np.zeros(len(self))
        return self.n_cart @ self.lattice.b1 + self.qm.theta

    def pair(self, i: int) -> ModePair:
        coords = tuple(int(c) for c in self.n_coords[i])
        return ModePair(int(self.j[i]), DualPoint(coords, self.n_cart[i]), float(self.mu[i]))

    def index_of(self) -> dict:
        return {(int(jj), tuple(int(c) for c in nn)): i for i, (jj, nn) in enumerate(zip(self.j, self.n_coords))}


def lambda_rule(tau_max: float, margin: float = DEFAULT_MARGIN) -> float:
    """Energy cap 4 tau_max^2 + margin; omitted modes then have |h| >= cap/2."""
    return 4.0 * float(tau_max) ** 2 + float(margin)


def build_modes(
    lattice: Lattice | None,
    cross: CrossSectionSpec,
    qm: QuasiMomentum,
    lambda_max: float,
) -> ModeSet:
    lambda_max = float(lambda_max)
    sp = spectrum_below(cross, lambda_max)
    if lattice is None:
        j = np.arange(len(sp))
        return ModeSet(None, sp, qm, lambda_max, j, np.zeros((len(j), 0), np.int64),
                       np.zeros((len(j), 0)), sp.mu.copy())
    qm.check(lattice)
    dual = dual_basis(lattice)
    shift = qm.real_shift(lattice)
    if len(sp) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return ModeSet(lattice, sp, qm, lambda_max, empty, np.zeros((0, lattice.dim), np.int64),
                       np.zeros((0, lattice.dim)), np.zeros(0))
    radius = np.sqrt(max(lambda_max - sp.mu.min(), 0.0))
    coords = enumerate_dual_coords(dual, -shift, radius)
    cart = coords @ dual.basis
    kin = np.sum((cart + shift) ** 2, axis=1)
    js, ns = [], []
    for jj, mu in enumerate(sp.mu):
        sel = np.nonzero(kin + mu <= lambda_max)[0]
        if sel.size:
            js.append(np.full(sel.size, jj, dtype=np.int64))
            ns.append(sel)
    j = np.concatenate(js)
    nsel = np.concatenate(ns)
    return ModeSet(lattice, sp, qm, lambda_max, j, coords[nsel], cart[nsel], kin[nsel] + sp.mu[j])


def h_values(modes: ModeSet, tau: float | None = None) -> np.ndarray:
    """Free eigenvalues h_{j,n}(tau) over a mode set (vectorized)."""
    tau = modes.qm.tau if tau is None else float(tau)
    return modes.free_real - tau**2 + 2j * tau * modes.b1_pairing()


def h_value(mode: ModePair, qm: QuasiMomentum, lattice: Lattice) -> complex:
    """Free eigenvalue of a single mode."""
    b1 = lattice.b1
    real_n = np.asarray(mode.n.cartesian, dtype=float) + qm.theta * b1
    kin = float(np.sum((real_n + qm.xi_perp) ** 2))
    return complex(kin + mode.mu - qm.tau**2, 2.0 * qm.tau * float(real_n @ b1))


def free_resolvent_norm(h) -> float:
    """max 1/|h| over the modes; h may be a ModeSet or an array of values."""
    if isinstance(h, ModeSet):
        h = h_values(h)
    a = np.abs(np.asarray(h))
    if a.size == 0:
        return 0.0
    amin = a.min()
    if amin == 0.0:
        raise NonInvertibleError("free operator has a zero eigenvalue at this quasimomentum")
    return float(1.0 / amin)


@dataclass(frozen=True, eq=False)
class PhaseWeights:
    phase: np.ndarray
    weight: np.ndarray


def phase_and_weights(h) -> PhaseWeights:
    """Polar factors of the diagonal free operator: h/|h| and |h|^(-1/2)."""
    if isinstance(h, ModeSet):
        h = h_values(h)
    h = np.asarray(h, dtype=complex)
    a = np.abs(h)
    if np.any(a == 0):
        raise NonInvertibleError("polar decomposition needs |h| > 0 for every mode")
    return PhaseWeights(h / a, a**-0.5)
