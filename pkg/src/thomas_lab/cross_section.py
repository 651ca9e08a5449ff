"""Closed-form Laplace eigendata and quadrature on supported cross-sections.

Supported cross-sections are the ones whose Dirichlet/Neumann/periodic
eigenpairs are explicit: a circle, an interval, a flat torus, and the
product of an interval with a flat torus.  Eigenfunctions are normalized in
L2 of the cross-section; degenerate eigenvalues are ordered by their integer
label (lexicographically).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .lattice import Lattice, dual_basis, enumerate_dual_coords

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
_BCS = (DIRICHLET, NEUMANN)


class CrossSectionError(ValueError):
    pass


def _check_bc(bc: str) -> str:
    bc = str(bc).lower()
    if bc not in _BCS:
        raise CrossSectionError(f"boundary condition must be one of {_BCS}, got {bc!r}")
    return bc


@dataclass(frozen=True)
class Circle:
    length: float = 2 * np.pi

    def __post_init__(self):
        if not self.length > 0:
            raise CrossSectionError("circle length must be positive")

    dim = 1
    has_boundary = False

    @property
    def volume(self) -> float:
        return float(self.length)


@dataclass(frozen=True)
class Interval:
    length: float = np.pi
    bc: str = NEUMANN

    def __post_init__(self):
        if not self.length > 0:
            raise CrossSectionError("interval length must be positive")
        object.__setattr__(self, "bc", _check_bc(self.bc))

    dim = 1
    has_boundary = True

    @property
    def volume(self) -> float:
        return float(self.length)

    def with_bc(self, bc: str) -> "Interval":
        return Interval(self.length, bc)


@dataclass(frozen=True, eq=False)
class FlatTorus:
    """R^k modulo the lattice spanned by the rows of ``basis`` (not rescaled)."""

    basis: np.ndarray

    def __post_init__(self):
        lat = Lattice(self.basis, normalize=False)
        object.__setattr__(self, "basis", lat.basis)

    has_boundary = False

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def volume(self) -> float:
        return float(abs(np.linalg.det(self.basis)))

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.basis, normalize=False)

    def __eq__(self, other):
        return isinstance(other, FlatTorus) and np.array_equal(self.basis, other.basis)

    def __hash__(self):
        return hash(self.basis.tobytes())


@dataclass(frozen=True)
class IntervalTimesTorus:
    interval: Interval
    torus: FlatTorus

    has_boundary = True

    @property
    def dim(self) -> int:
        return 1 + self.torus.dim

    @property
    def volume(self) -> float:
        return self.interval.volume * self.torus.volume

    @property
    def bc(self) -> str:
        return self.interval.bc

    def with_bc(self, bc: str) -> "IntervalTimesTorus":
        return IntervalTimesTorus(self.interval.with_bc(bc), self.torus)


CrossSectionSpec = Union[Circle, Interval, FlatTorus, IntervalTimesTorus]


def with_bc(spec: CrossSectionSpec, bc: str) -> CrossSectionSpec:
    if isinstance(spec, (Interval, IntervalTimesTorus)):
        return spec.with_bc(bc)
    return spec


def _interval_of(spec) -> Interval | None:
    if isinstance(spec, Interval):
        return spec
    if isinstance(spec, IntervalTimesTorus):
        return spec.interval
    return None


def _torus_of(spec) -> FlatTorus | None:
    if isinstance(spec, FlatTorus):
        return spec
    if isinstance(spec, IntervalTimesTorus):
        return spec.torus
    if isinstance(spec, Circle):
        return FlatTorus(np.array([[spec.length]]))
    return None


# ---------------------------------------------------------------------------
# eigen data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EigenData:
    index: int
    eigenvalue: float
    label: tuple[int, ...]
    evaluator: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        return self.evaluator(x)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Vectorized eigendata: ``mu[i]`` with integer ``labels[i]``.

    For an interval factor the first label column is the sine/cosine index
    j (starting at 1 for Dirichlet, 0 for Neumann); torus factors contribute
    the integer coordinates of the dual-lattice frequency.
    """

    spec: CrossSectionSpec
    mu: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.mu)

    @property
    def is_flat(self) -> bool:
        """True when every eigenfunction has constant modulus."""
        return _interval_of(self.spec) is None

    def _interval_factor(self, x: np.ndarray, cols=None) -> np.ndarray:
        iv = _interval_of(self.spec)
        j = self.labels[:, 0] if cols is None else self.labels[cols, 0]
        return interval_functions(iv, j, x)

    def _torus_factor(self, y: np.ndarray, cols=None) -> np.ndarray:
        tor = _torus_of(self.spec)
        lab = self.labels if cols is None else self.labels[cols]
        if _interval_of(self.spec) is not None:
            lab = lab[:, 1:]
        freqs = lab.astype(float) @ dual_basis(tor.lattice).basis
        y = np.asarray(y, dtype=float).reshape(-1, tor.dim)
        return np.exp(1j * y @ freqs.T) / np.sqrt(tor.volume)

    def evaluate(self, points, cols=None) -> np.ndarray:
        """Matrix of eigenfunction values, shape (n_points, n_functions)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.spec.dim)
        if isinstance(self.spec, Interval):
            return self._interval_factor(pts[:, 0], cols)
        if isinstance(self.spec, IntervalTimesTorus):
            return self._interval_factor(pts[:, 0], cols) * self._torus_factor(pts[:, 1:], cols)
        return self._torus_factor(pts, cols)

    def interval_values(self, x, cols=None) -> np.ndarray:
        """Interval-factor values only (for traces at x = 0 and x = a)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self._interval_factor(x, cols)

    def eigenpairs(self) -> list[EigenData]:
        out = []
        for i in range(len(self.mu)):
            out.append(
                EigenData(
                    index=i + 1,
                    eigenvalue=float(self.mu[i]),
                    label=tuple(int(v) for v in self.labels[i]),
                    evaluator=lambda x, c=i: self.evaluate(x, cols=[c])[:, 0],
                )
            )
        return out


def interval_functions(iv: Interval, j: np.ndarray, x: np.ndarray) -> np.ndarray:
    j = np.asarray(j)
    x = np.asarray(x, dtype=float)
    arg = np.pi * np.outer(x, j) / iv.length
    if iv.bc == DIRICHLET:
        return np.sqrt(2.0 / iv.length) * np.sin(arg)
    amp = np.where(j == 0, np.sqrt(1.0 / iv.length), np.sqrt(2.0 / iv.length))
    return amp * np.cos(arg)


def _interval_levels(iv: Interval, mu_max: float):
    jmax = int(np.floor(iv.length * np.sqrt(max(mu_max, 0.0)) / np.pi + 1e-12))
    j0 = 1 if iv.bc == DIRICHLET else 0
    j = np.arange(j0, jmax + 1)
    mu = (np.pi * j / iv.length) ** 2
    keep = mu <= mu_max
    return mu[keep], j[keep].reshape(-1, 1)


def _torus_levels(tor: FlatTorus, mu_max: float):
    dual = dual_basis(tor.lattice)
    coords = enumerate_dual_coords(dual, np.zeros(tor.dim), np.sqrt(max(mu_max, 0.0)))
    cart = coords @ dual.basis
    return np.sum(cart**2, axis=1), coords


def _levels_below(spec: CrossSectionSpec, mu_max: float):
    if isinstance(spec, Interval):
        return _interval_levels(spec, mu_max)
    if isinstance(spec, (Circle, FlatTorus)):
        return _torus_levels(_torus_of(spec), mu_max)
    if isinstance(spec, IntervalTimesTorus):
        mu_i, lab_i = _interval_levels(spec.interval, mu_max)
        mu_t, lab_t = _torus_levels(spec.torus, mu_max)
        mu = (mu_i[:, None] + mu_t[None, :]).ravel()
        lab = np.concatenate(
            [np.repeat(lab_i, len(mu_t), axis=0), np.tile(lab_t, (len(mu_i), 1))], axis=1
        )
        keep = mu <= mu_max
        return mu[keep], lab[keep]
    raise CrossSectionError(f"unsupported cross-section variant: {type(spec).__name__}")


def _sorted(mu, labels):
    keys = [labels[:, c] for c in range(labels.shape[1] - 1, -1, -1)] + [mu]
    order = np.lexsort(keys)
    return mu[order], labels[order]


def spectrum_below(spec: CrossSectionSpec, mu_max: float) -> Spectrum:
    """All eigenpairs with eigenvalue <= mu_max."""
    mu, lab = _levels_below(spec, mu_max)
    mu, lab = _sorted(mu, lab.astype(np.int64))
    return Spectrum(spec, mu, lab)


def spectrum(spec: CrossSectionSpec, count: int) -> Spectrum:
    """The first ``count`` eigenpairs in non-decreasing order."""
    if count < 1:
        raise CrossSectionError("count must be >= 1")
    mu_max = 1.0
    while True:
        mu, lab = _levels_below(spec, mu_max)
        if len(mu) >= count:
            break
        mu_max *= 2.0
    mu, lab = _sorted(mu, lab.astype(np.int64))
    return Spectrum(spec, mu[:count], lab[:count])


def eigenpairs(spec: CrossSectionSpec, count: int) -> list[EigenData]:
    return spectrum(spec, count).eigenpairs()


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray
    shape: tuple[int, ...]

    @property
    def volume(self) -> float:
        return float(self.weights.sum())


def gauss_legendre(a: float, b: float, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def interval_min_resolution(max_label: int) -> int:
    # empirical Gauss-Legendre threshold for 1e-12 orthonormality
    return int(np.ceil(1.8 * max_label)) + 16


def periodic_min_resolution(max_abs_coord: int) -> int:
    return 2 * int(max_abs_coord) + 1


def required_resolution(spec: CrossSectionSpec, cap: int) -> int:
    """Smallest resolution keeping the first ``cap`` eigenfunctions orthonormal."""
    sp = spectrum(spec, cap)
    need = 1
    off = 0
    if _interval_of(spec) is not None:
        need = max(need, interval_min_resolution(int(sp.labels[:, 0].max())))
        off = 1
    if sp.labels.shape[1] > off:
        need = max(need, periodic_min_resolution(int(np.abs(sp.labels[:, off:]).max())))
    return need


def _periodic_nodes(basis: np.ndarray, n: int):
    k = basis.shape[0]
    t = np.arange(n) / n
    grids = np.meshgrid(*([t] * k), indexing="ij")
    frac = np.stack([g.ravel() for g in grids], axis=1)
    vol = abs(np.linalg.det(basis))
    return frac @ basis, np.full(frac.shape[0], vol / n**k)


def quadrature_grid(spec: CrossSectionSpec, resolution: int, cap: int | None = None) -> QuadratureGrid:
    """Tensor quadrature: trapezoid on periodic factors, Gauss-Legendre on intervals.

    ``resolution`` is the number of nodes per coordinate direction.  When
    ``cap`` is given, the grid must integrate products of the first ``cap``
    eigenfunctions exactly (to 1e-12), otherwise a CrossSectionError names the
    required minimum.
    """
    resolution = int(resolution)
    if cap is not None:
        need = required_resolution(spec, cap)
        if resolution < need:
            raise CrossSectionError(
                f"resolution {resolution} too small for {cap} eigenfunctions; need >= {need}"
            )
    if resolution < 1:
        raise CrossSectionError("resolution must be positive")
    if isinstance(spec, Interval):
        x, w = gauss_legendre(0.0, spec.length, resolution)
        return QuadratureGrid(x.reshape(-1, 1), w, (resolution,))
    if isinstance(spec, (Circle, FlatTorus)):
        tor = _torus_of(spec)
        nodes, w = _periodic_nodes(tor.basis, resolution)
        return QuadratureGrid(nodes, w, (resolution,) * tor.dim)
    if isinstance(spec, IntervalTimesTorus):
        x, wx = gauss_legendre(0.0, spec.interval.length, resolution)
        y, wy = _periodic_nodes(spec.torus.basis, resolution)
        nodes = np.concatenate([np.repeat(x, len(wy))[:, None], np.tile(y, (len(x), 1))], axis=1)
        return QuadratureGrid(nodes, np.outer(wx, wy).ravel(), (resolution,) * spec.dim)
    raise CrossSectionError(f"unsupported cross-section variant: {type(spec).__name__}")


def lq_norm(values, q: float, grid=None, weights=None) -> float:
    """Quadrature L_q norm, (sum w |f|^q)^(1/q); the max of |f| for q = inf."""
    q = float(q)
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    f = np.abs(np.asarray(values)).ravel()
    if np.isinf(q):
        return float(f.max()) if f.size else 0.0
    w = grid.weights if grid is not None else np.asarray(weights, dtype=float)
    if w.shape != f.shape:
        raise ValueError(f"values ({f.shape}) and weights ({w.shape}) are not conformal")
    fmax = f.max() if f.size else 0.0
    if fmax == 0:
        return 0.0
    return float(fmax * np.sum(w * (f / fmax) ** q) ** (1.0 / q))
