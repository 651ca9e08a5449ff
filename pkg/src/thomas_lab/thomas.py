"""Verification pipelines along the Thomas line (pi + i tau) b1 + xi'."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .clusters import power_law_fit
from .cross_section import NEUMANN, Interval
from .free_operator import (
    DEFAULT_MARGIN,
    NonInvertibleError,
    QuasiMomentum,
    h_values,
    lambda_rule,
    phase_and_weights,
)
from .galerkin import (
    BandTable,
    Model,
    assemble_thomas,
    band_functions,
    coupling_matrix,
    resolvent_norm,
    shifted,
)
from .potential import BoundarySigma, cell_grid, split_by_level

FLAT_BAND_THRESHOLD = 1e-8


def xi_perp_samples(lattice, seed: int = 0) -> list[np.ndarray]:
    """Transverse quasimomenta to test: 0, a dual-cell edge midpoint, and a seeded random one."""
    m = lattice.dim
    out = [np.zeros(m)]
    if m == 1:
        return out
    dual = lattice.dual().basis
    b1 = lattice.b1
    mid = 0.5 * dual[1]
    out.append(mid - (mid @ b1) * b1)
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    r = rng.uniform(-0.5, 0.5, m) @ dual
    out.append(r - (r @ b1) * b1)
    return out


# ---------------------------------------------------------------------------
# resolvent decay
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DecayScan:
    model_id: str
    lam: complex
    xi_perp: np.ndarray
    taus: np.ndarray
    norms: np.ndarray
    slope: float
    residual: float
    constant: float
    tau_min: float
    lambda_max: float

    def rows(self) -> list[dict]:
        return [
            {"tau": t, "resolvent_norm": r, "norm_times_tau": r * abs(t)}
            for t, r in zip(self.taus.tolist(), self.norms.tolist())
        ]


def thomas_decay_scan(
    model: Model,
    taus,
    lam: complex = 0.0,
    xi_perp=None,
    lambda_max: float | None = None,
    margin: float = DEFAULT_MARGIN,
    tau_min: float | None = None,
    model_id: str = "",
    n_jobs: int | None = None,
) -> DecayScan:
    """Truncated ||(H(tau) - lam)^-1|| over a tau grid and its log-log slope.

    Non-invertible points are recorded as inf and excluded from the fit.
    """
    taus = np.asarray(taus, dtype=float).ravel()
    if np.any(taus == 0):
        raise ValueError("tau = 0 is not on the Thomas line")
    if np.any(np.diff(np.abs(taus)) <= 0):
        raise ValueError("tau grid must be strictly increasing in |tau|")
    xi = np.zeros(model.lattice.dim) if xi_perp is None else np.asarray(xi_perp, dtype=float)
    if lambda_max is None:
        lambda_max = lambda_rule(np.abs(taus).max(), margin)
    qm = QuasiMomentum(xi, float(taus[0]))
    base = assemble_thomas(model, qm, lambda_max, lam)
    base.blocks()

    def one(tau):
        return resolvent_norm(shifted(base, tau))

    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        norms = np.array(list(pool.map(one, taus)))
    tau_min = float(np.abs(taus).min()) if tau_min is None else float(tau_min)
    use = (np.abs(taus) >= tau_min) & np.isfinite(norms)
    if use.sum() >= 2:
        slope, _, res = power_law_fit(np.abs(taus[use]), norms[use])
    else:
        slope, res = math.nan, math.nan
    prod = norms * np.abs(taus)
    const = float(prod[use].max()) if use.any() else math.inf
    return DecayScan(model_id, complex(lam), xi, taus, norms, slope, res, const, tau_min, float(lambda_max))


# ---------------------------------------------------------------------------
# polar-decomposition probe
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeResult:
    tau: float
    delta: float
    free_term: complex  # (H0(tau) u, v)
    potential_term: complex  # (V u, v)
    boundary_term: complex  # sigma terms, 0 without Robin data
    c_delta: float | None
    margin: float

    @property
    def total(self) -> complex:
        return self.free_term + self.potential_term + self.boundary_term

    @property
    def ratio(self) -> float:
        """|(H(tau) u, v)| / |tau|."""
        return abs(self.total) / abs(self.tau)

    @property
    def free_imag_defect(self) -> float:
        return abs(self.free_term.imag) / abs(self.free_term)

    @property
    def free_bound_holds(self) -> bool:
        return self.free_term.real >= 2 * np.pi * abs(self.tau) - 1e-8

    @property
    def inequality_holds(self) -> bool | None:
        """|(H u, v)| >= (1 - margin)(H0 u, v) - c(delta), when c(delta) is known."""
        if self.c_delta is None:
            return None
        return abs(self.total) >= (1 - self.margin) * self.free_term.real - self.c_delta


class Prober:
    """Reusable probe state for one model at one tau."""

    def __init__(self, model: Model, tau: float, lambda_max: float | None = None,
                 xi_perp=None, margin: float = DEFAULT_MARGIN):
        if tau == 0:
            raise ValueError("tau must be nonzero")
        xi = np.zeros(model.lattice.dim) if xi_perp is None else np.asarray(xi_perp, dtype=float)
        lambda_max = lambda_rule(abs(tau), margin) if lambda_max is None else lambda_max
        self.model = model
        self.tau = float(tau)
        self.modes = model.modes(QuasiMomentum(xi, 0.0), lambda_max)
        self.h = h_values(self.modes, tau)
        self.polar = phase_and_weights(self.h)
        self.vmat = coupling_matrix(model, self.modes, potential=True, sigma=False)
        self.bmat = coupling_matrix(model, self.modes, potential=False, sigma=True)

    def random_unit(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.standard_normal(len(self.modes)) + 1j * rng.standard_normal(len(self.modes))
        return u / np.linalg.norm(u)

    def probe(self, u, delta: float = 0.1, c_delta: float | None = None, margin: float = 0.5) -> ProbeResult:
        u = np.asarray(u, dtype=complex)
        if not math.isclose(np.linalg.norm(u), 1.0, rel_tol=1e-10):
            raise ValueError("u must have unit norm")
        v = self.polar.phase * u
        free = complex(np.vdot(v, self.h * u))
        pot = complex(np.vdot(v, self.vmat @ u))
        bnd = complex(np.vdot(v, self.bmat @ u))
        return ProbeResult(self.tau, float(delta), free, pot, bnd, c_delta, float(margin))


def potential_c_delta(model: Model, p: float, delta: float, x_resolution: int = 64, ny: int = 64) -> float | None:
    """Minimal level c(delta) for the potential on a sample grid, if samplable."""
    V = model.potential
    if V is None or V.is_zero:
        return 0.0
    if V.amplitudes is None:
        return None
    grid = cell_grid(model.lattice, model.cross, x_resolution, ny)
    return split_by_level(V.evaluate(grid), grid.weights, p, delta).level


def lower_bound_probe(model: Model, tau: float, u, delta: float = 0.1, p: float = 2.0,
                      margin: float = 0.5, lambda_max: float | None = None) -> ProbeResult:
    """Evaluate (H(tau) u, v) with v = Phi0(tau) u term by term."""
    prober = Prober(model, tau, lambda_max)
    return prober.probe(u, delta, potential_c_delta(model, p, delta), margin)


# ---------------------------------------------------------------------------
# band non-constancy
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BandIndicator:
    table: BandTable
    variation: np.ndarray
    threshold: float

    @property
    def flat_bands(self) -> np.ndarray:
        return np.nonzero(self.variation < self.threshold)[0]

    @property
    def all_dispersive(self) -> bool:
        return self.flat_bands.size == 0


def total_variation(table: BandTable) -> np.ndarray:
    return np.abs(np.diff(table.bands, axis=0)).sum(axis=0)


def band_ac_indicator(model: Model, n_bands: int, thetas, lambda_max: float,
                      xi_perp=None, threshold: float = FLAT_BAND_THRESHOLD,
                      n_jobs: int | None = None) -> BandIndicator:
    """Total variation of each band along b1; bands below ``threshold`` are flagged flat."""
    table = band_functions(model, thetas, n_bands, lambda_max, xi_perp, n_jobs)
    return BandIndicator(table, total_variation(table), threshold)


# ---------------------------------------------------------------------------
# Robin trace decay
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TraceDecayReport:
    taus: np.ndarray
    values: np.ndarray

    def rows(self) -> list[dict]:
        return [{"tau": t, "trace_constant": c} for t, c in zip(self.taus.tolist(), self.values.tolist())]


def trace_constant(model: Model, sigma: BoundarySigma, tau: float, lambda_max: float,
                   ny: int = 256, xi_perp=None) -> float:
    """Largest singular value of u -> sqrt|sigma| * trace(|H0(tau)|^(-1/2) u) at x = 0, a."""
    if tau == 0:
        raise ValueError("tau must be nonzero")
    if not isinstance(model.cross, Interval):
        raise ValueError("trace decay is defined for layers (interval cross-section)")
    layer = model.with_bc(NEUMANN)
    xi = np.zeros(layer.lattice.dim) if xi_perp is None else np.asarray(xi_perp, dtype=float)
    modes = layer.modes(QuasiMomentum(xi, 0.0), lambda_max)
    w2 = 1.0 / np.abs(h_values(modes, tau))
    a = layer.cross.length
    ends = np.stack([modes.cross.interval_values(0.0)[0], modes.cross.interval_values(a)[0]])  # (2, J)
    phi = ends[:, modes.j]  # (2, N)

    lat = layer.lattice
    m = lat.dim
    t = np.arange(ny) / ny
    grids = np.meshgrid(*([t] * m), indexing="ij")
    y = np.stack([g.ravel() for g in grids], axis=1) @ lat.basis
    wy = lat.cell_volume / ny**m

    uniq, inv = np.unique(modes.n_coords, axis=0, return_inverse=True)
    inv = inv.ravel()
    # S[n, s, s'] = sum over modes with this n of phi_s phi_s' / |h|
    S = np.zeros((len(uniq), 2, 2))
    for s in range(2):
        for s2 in range(2):
            np.add.at(S[:, s, s2], inv, phi[s] * phi[s2] * w2)
    E = np.exp(1j * y @ (uniq @ lat.dual().basis).T) / math.sqrt(lat.cell_volume)  # (Q, Nn)
    D = np.concatenate([
        np.sqrt(np.abs(sigma.evaluate("0", y)) * wy),
        np.sqrt(np.abs(sigma.evaluate("a", y)) * wy),
    ])
    Q = len(y)
    G = np.zeros((2 * Q, 2 * Q), complex)
    for s in range(2):
        for s2 in range(2):
            G[s * Q:(s + 1) * Q, s2 * Q:(s2 + 1) * Q] = (E * S[:, s, s2]) @ E.conj().T
    G = D[:, None] * G * D[None, :]
    top = scipy.linalg.eigvalsh(G, subset_by_index=[2 * Q - 1, 2 * Q - 1])[0]
    return float(math.sqrt(max(top, 0.0)))


def robin_trace_decay(model: Model, sigma: BoundarySigma, taus, lambda_max: float | None = None,
                      margin: float = DEFAULT_MARGIN, ny: int = 256, xi_perp=None,
                      n_jobs: int | None = None) -> TraceDecayReport:
    taus = np.asarray(taus, dtype=float).ravel()
    if np.any(taus == 0):
        raise ValueError("tau = 0 is not allowed")
    if lambda_max is None:
        lambda_max = lambda_rule(np.abs(taus).max(), margin)
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        vals = list(pool.map(lambda t: trace_constant(model, sigma, t, lambda_max, ny, xi_perp), taus))
    return TraceDecayReport(taus, np.array(vals))


__all__ = [
    "BandIndicator",
    "DecayScan",
    "NonInvertibleError",
    "ProbeResult",
    "Prober",
    "TraceDecayReport",
    "band_ac_indicator",
    "lower_bound_probe",
    "robin_trace_decay",
    "thomas_decay_scan",
    "total_variation",
    "trace_constant",
    "xi_perp_samples",
]
