"""Truncated matrices of the fiber operators H(xi), H_N, H_D and H_sigma.

Matrices act on coefficient vectors in the joint basis
|Omega|^{-1/2} phi_j(x) exp(i<n, y>): entry [(j', n'), (j, n)] is the
sesquilinear form evaluated on (phi_{j,n}, phi_{j',n'}).  They are stored
sparse; every dense factorization runs on one connected block of the
coupling graph at a time, which is exact because blocks do not interact.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .cross_section import (
    DIRICHLET,
    NEUMANN,
    CrossSectionSpec,
    Interval,
    IntervalTimesTorus,
    Spectrum,
    with_bc,
)
from .free_operator import (
    ModeSet,
    NonInvertibleError,
    QuasiMomentum,
    build_modes,
    h_values,
)
from .lattice import Lattice
from .potential import BoundarySigma, PotentialSpec

SINGULAR_RTOL = 1e-14


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Model:
    """A periodic Schroedinger operator on M x R^m.

    ``cross`` carries the boundary condition.  With ``sigma`` given the
    cross-section must be an interval and the Neumann (form-domain H^1)
    basis is used.  ``direct_sum_levels`` appends decoupled constant
    eigenvalues; it exists to build flat-band counterexamples.
    """

    lattice: Lattice
    cross: CrossSectionSpec
    potential: PotentialSpec | None = None
    sigma: BoundarySigma | None = None
    direct_sum_levels: tuple = ()

    def __post_init__(self):
        if self.sigma is not None and not self.sigma.is_zero:
            if not isinstance(self.cross, Interval):
                raise AssemblyError("Robin data sigma is only supported on a layer (interval cross-section)")
            if self.cross.bc != NEUMANN:
                raise AssemblyError("Robin form h_sigma lives on H^1: use the Neumann basis")
        if self.potential is not None and self.potential.lattice.dim != self.lattice.dim:
            raise AssemblyError("potential lattice dimension does not match the model")

    @property
    def dim(self) -> int:
        """Total dimension d = dim M + m."""
        return self.cross.dim + self.lattice.dim

    @property
    def has_sigma(self) -> bool:
        return self.sigma is not None and not self.sigma.is_zero

    def with_bc(self, bc: str) -> "Model":
        return Model(self.lattice, with_bc(self.cross, bc), self.potential, self.sigma, self.direct_sum_levels)

    def with_potential(self, potential) -> "Model":
        return Model(self.lattice, self.cross, potential, self.sigma, self.direct_sum_levels)

    def modes(self, qm: QuasiMomentum, lambda_max: float) -> ModeSet:
        return build_modes(self.lattice, self.cross, qm, lambda_max)


@dataclass(frozen=True, eq=False)
class GalerkinMatrix:
    matrix: sp.csr_matrix
    modes: ModeSet
    tau: float
    lam: complex
    has_sigma: bool
    _blocks: list = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def blocks(self) -> list[np.ndarray]:
        """Index arrays of the connected components of the coupling graph."""
        if self._blocks is None:
            pattern = abs(self.matrix) + abs(self.matrix.T)
            ncomp, labels = connected_components(pattern, directed=False)
            order = np.argsort(labels, kind="stable")
            splits = np.cumsum(np.bincount(labels, minlength=ncomp))[:-1]
            object.__setattr__(self, "_blocks", np.split(order, splits))
        return self._blocks

    def hermiticity_defect(self) -> float:
        """max |A - A*| relative to the spectral norm of A."""
        diff = self.matrix - self.matrix.conj().T
        dmax = abs(diff).max() if diff.nnz else 0.0
        return float(dmax / max(spectral_norm(self), np.finfo(float).tiny))


def _encode(j: np.ndarray, coords: np.ndarray, lo: np.ndarray, span: np.ndarray) -> np.ndarray:
    key = j.astype(np.int64)
    for c in range(coords.shape[1]):
        key = key * span[c] + (coords[:, c] - lo[c])
    return key


class _ModeLookup:
    def __init__(self, modes: ModeSet, pad: int):
        coords = modes.n_coords
        m = coords.shape[1]
        if len(coords):
            self.lo = coords.min(axis=0) - pad
            self.span = coords.max(axis=0) - self.lo + 1 + pad
        else:
            self.lo = np.zeros(m, np.int64)
            self.span = np.ones(m, np.int64)
        self.keys = _encode(modes.j, coords, self.lo, self.span)
        self.order = np.argsort(self.keys)
        self.sorted = self.keys[self.order]

    def find(self, j, coords) -> np.ndarray:
        inside = np.all((coords >= self.lo) & (coords < self.lo + self.span), axis=1)
        keys = _encode(np.asarray(j), np.where(inside[:, None], coords, self.lo), self.lo, self.span)
        pos = np.clip(np.searchsorted(self.sorted, keys), 0, len(self.sorted) - 1)
        hit = inside & (self.sorted[pos] == keys) if len(self.sorted) else np.zeros(len(keys), bool)
        return np.where(hit, self.order[pos], -1)


def _offset_couplings(modes: ModeSet, lookup: _ModeLookup, blocks: dict):
    rows, cols, vals = [], [], []
    J = len(modes.cross)
    all_cols = np.arange(len(modes))
    for nu, block in blocks.items():
        target = modes.n_coords + np.asarray(nu, dtype=np.int64)
        if isinstance(block, complex):
            if block == 0:
                continue
            r = lookup.find(modes.j, target)
            ok = r >= 0
            rows.append(r[ok])
            cols.append(all_cols[ok])
            vals.append(np.full(ok.sum(), block))
            continue
        block = np.asarray(block)
        if block.shape[0] < J:
            raise AssemblyError(
                f"potential coupling caps ({block.shape[0]}) smaller than the cross-section basis ({J})"
            )
        for jp in range(J):
            weights = block[jp, modes.j]
            live = weights != 0
            if not live.any():
                continue
            r = lookup.find(np.full(live.sum(), jp), target[live])
            ok = r >= 0
            rows.append(r[ok])
            cols.append(all_cols[live][ok])
            vals.append(weights[live][ok])
    return rows, cols, vals


def _sigma_blocks(sigma: BoundarySigma, cross: Spectrum) -> dict:
    iv = cross.spec
    end0 = cross.interval_values(0.0)[0]
    enda = cross.interval_values(iv.length)[0]
    out = {}
    for nu in set(sigma.at_zero) | set(sigma.at_a):
        s0 = sigma.coefficient("0", nu)
        sa = sigma.coefficient("a", nu)
        # [j', j] entries: sigma_a(nu) phi_j'(a) phi_j(a) - sigma_0(nu) phi_j'(0) phi_j(0)
        out[nu] = sa * np.outer(enda, enda) - s0 * np.outer(end0, end0)
    return out


def coupling_matrix(
    model: Model,
    modes: ModeSet,
    potential: bool = True,
    sigma: bool = True,
) -> sp.csr_matrix:
    """The tau-independent part: potential coupling plus Robin boundary terms."""
    n = len(modes)
    couplings = {}
    if potential and model.potential is not None and not model.potential.is_zero:
        couplings.update(model.potential.coupling_blocks(modes.cross))
    if sigma and model.has_sigma:
        for nu, block in _sigma_blocks(model.sigma, modes.cross).items():
            if nu in couplings:
                base = couplings[nu]
                if isinstance(base, complex):
                    base = base * np.eye(len(modes.cross))
                couplings[nu] = base + block
            else:
                couplings[nu] = block
    rows, cols, vals = [np.zeros(0, np.int64)], [np.zeros(0, np.int64)], [np.zeros(0, complex)]
    if couplings and n:
        pad = max(int(np.abs(np.asarray(nu)).max(initial=0)) for nu in couplings)
        r, c, v = _offset_couplings(modes, _ModeLookup(modes, pad), couplings)
        rows += r
        cols += c
        vals += v
    mat = sp.coo_matrix(
        (np.concatenate(vals).astype(complex), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    mat.sum_duplicates()
    return mat


def _assemble(model: Model, modes: ModeSet, tau: float, lam: complex) -> GalerkinMatrix:
    n = len(modes)
    coupling = coupling_matrix(model, modes)
    diag = h_values(modes, tau) - lam
    extra = np.asarray(model.direct_sum_levels, dtype=complex)
    if len(extra):
        coupling = sp.block_diag([coupling, sp.csr_matrix((len(extra), len(extra)))], format="csr")
        diag = np.concatenate([diag, extra - lam])
    mat = (coupling + sp.diags(diag, format="csr")).tocsr()
    mat.sum_duplicates()
    return GalerkinMatrix(mat, modes, float(tau), complex(lam), model.has_sigma)


def shifted(mat: GalerkinMatrix, tau: float, lam: complex | None = None) -> GalerkinMatrix:
    """Same model and modes at another tau (and lam), reusing the block structure."""
    lam = mat.lam if lam is None else complex(lam)
    n = len(mat.modes)
    delta = np.zeros(mat.shape[0], complex)
    delta[:n] = h_values(mat.modes, tau) - h_values(mat.modes, mat.tau)
    delta -= lam - mat.lam
    new = (mat.matrix + sp.diags(delta, format="csr")).tocsr()
    return GalerkinMatrix(new, mat.modes, float(tau), lam, mat.has_sigma, mat._blocks)


def assemble(model: Model, qm: QuasiMomentum, lambda_max: float, modes: ModeSet | None = None) -> GalerkinMatrix:
    """Truncated H(xi) at real quasimomentum theta*b1 + xi' (qm.tau must be 0)."""
    if qm.tau != 0:
        raise AssemblyError("assemble() is for real quasimomentum; use assemble_thomas()")
    modes = model.modes(qm, lambda_max) if modes is None else modes
    return _assemble(model, modes, 0.0, 0.0)


def assemble_thomas(
    model: Model,
    qm: QuasiMomentum,
    lambda_max: float,
    lam: complex = 0.0,
    modes: ModeSet | None = None,
) -> GalerkinMatrix:
    """Truncated H((pi + i tau) b1 + xi') - lam I; non-Hermitian in general."""
    if qm.tau == 0:
        raise AssemblyError("assemble_thomas() needs tau != 0")
    modes = model.modes(qm.with_tau(0.0), lambda_max) if modes is None else modes
    return _assemble(model, modes, qm.tau, lam)


def _partition(mat):
    """(diagonal values of 1x1 blocks, list of dense multi-entry blocks)."""
    if isinstance(mat, GalerkinMatrix):
        blocks = mat.blocks()
        single = np.array([b[0] for b in blocks if len(b) == 1], dtype=np.int64)
        diag = mat.matrix.diagonal()[single] if len(single) else np.zeros(0, complex)
        csr = mat.matrix
        return diag, [csr[b][:, b].toarray() for b in blocks if len(b) > 1]
    a = np.atleast_2d(np.asarray(mat))
    return np.zeros(0, complex), [a]


def spectral_norm(mat) -> float:
    diag, dense = _partition(mat)
    best = float(np.abs(diag).max(initial=0.0))
    for block in dense:
        best = max(best, float(scipy.linalg.svdvals(block)[0]))
    return best


def smallest_singular_value(mat) -> tuple[float, float]:
    """(sigma_min, ||A||) computed block by block."""
    diag, dense = _partition(mat)
    a = np.abs(diag)
    smin = float(a.min(initial=math.inf))
    smax = float(a.max(initial=0.0))
    for block in dense:
        s = scipy.linalg.svdvals(block)
        smin = min(smin, float(s[-1]))
        smax = max(smax, float(s[0]))
    return smin, smax


def resolvent_norm(mat, strict: bool = False) -> float:
    """Operator norm of the inverse, 1/sigma_min; inf when singular to precision.

    With ``strict=True`` a singular matrix raises NonInvertibleError instead.
    """
    smin, smax = smallest_singular_value(mat)
    if not np.isfinite(smin) or smin <= SINGULAR_RTOL * smax:
        if strict:
            raise NonInvertibleError(
                f"non-invertible at this truncation (sigma_min={smin:.3e}, norm={smax:.3e})"
            )
        return math.inf
    return 1.0 / smin


def eigenvalues(mat: GalerkinMatrix, count: int | None = None) -> np.ndarray:
    """Sorted real eigenvalues of a Hermitian Galerkin matrix."""
    diag, dense = _partition(mat)
    parts = [diag.real]
    for block in dense:
        w, v = scipy.linalg.eigh(block)
        resid = np.abs(block @ v - v * w).max() if block.shape[0] else 0.0
        if resid > 1e-8 * max(1.0, np.abs(w).max()):
            raise np.linalg.LinAlgError(f"eigensolver did not converge (residual {resid:.3e})")
        parts.append(w)
    vals = np.sort(np.concatenate(parts))
    return vals if count is None else vals[:count]


@dataclass(frozen=True, eq=False)
class BandTable:
    """Lowest eigenvalues ``bands[i, b]`` at quasimomentum thetas[i]*b1 + xi'."""

    thetas: np.ndarray
    xi_perp: np.ndarray
    bands: np.ndarray

    @property
    def n_bands(self) -> int:
        return self.bands.shape[1]


def band_functions(
    model: Model,
    thetas,
    n_bands: int,
    lambda_max: float,
    xi_perp=None,
    n_jobs: int | None = None,
) -> BandTable:
    """Band functions along b1: lowest ``n_bands`` eigenvalues per grid point."""
    thetas = np.asarray(thetas, dtype=float).ravel()
    xi = np.zeros(model.lattice.dim) if xi_perp is None else np.asarray(xi_perp, dtype=float)

    def one(theta):
        mat = assemble(model, QuasiMomentum(xi, 0.0, theta), lambda_max)
        if n_bands > mat.shape[0] / 4:
            raise AssemblyError(
                f"{n_bands} bands need a matrix of size >= {4 * n_bands}; got {mat.shape[0]}"
                " (raise lambda_max)"
            )
        return eigenvalues(mat, n_bands)

    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        rows = list(pool.map(one, thetas))
    return BandTable(thetas, xi, np.vstack(rows))
