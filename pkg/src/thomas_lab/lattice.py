"""Period lattices, their dual lattices, and dual-point enumeration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


class LatticeError(ValueError):
    """Raised for singular or malformed lattice bases."""


@dataclass(frozen=True)
class Lattice:
    """A Bravais lattice in R^m given by the rows of ``basis``.

    With ``normalize=True`` (the default, used for the period lattice of a
    cylinder) the whole basis is dilated so that the first vector has unit
    length; the applied factor is kept in ``dilation``.
    """

    basis: np.ndarray
    normalize: bool = True
    dilation: float = field(init=False, default=1.0)

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if b.ndim != 2 or b.shape[0] != b.shape[1] or b.shape[0] == 0:
            raise LatticeError(f"basis must be a non-empty square matrix, got shape {b.shape}")
        if not np.all(np.isfinite(b)):
            raise LatticeError("basis contains non-finite entries")
        gram_det = np.linalg.det(b @ b.T)
        scale = np.prod(np.linalg.norm(b, axis=1) ** 2)
        if not gram_det > 1e-12 * scale:
            raise LatticeError(
                f"basis vectors are linearly dependent (Gram determinant {gram_det:.3e})"
            )
        dilation = 1.0
        if self.normalize:
            dilation = 1.0 / np.linalg.norm(b[0])
            b = b * dilation
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "dilation", float(dilation))

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def b1(self) -> np.ndarray:
        return self.basis[0]

    @property
    def cell_volume(self) -> float:
        return float(abs(np.linalg.det(self.basis)))

    def cell(self) -> "Cell":
        return Cell(self, self.cell_volume)

    def dual(self) -> "DualLattice":
        return dual_basis(self)


@dataclass(frozen=True)
class DualLattice:
    """Dual lattice with rows ``basis`` paired to the parent by 2*pi*delta."""

    basis: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def gram(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def point(self, coords) -> "DualPoint":
        coords = tuple(int(c) for c in coords)
        return DualPoint(coords, np.asarray(coords, dtype=float) @ self.basis)


@dataclass(frozen=True)
class DualPoint:
    coords: tuple[int, ...]
    cartesian: np.ndarray

    def __eq__(self, other):
        return isinstance(other, DualPoint) and self.coords == other.coords

    def __hash__(self):
        return hash(self.coords)


@dataclass(frozen=True)
class Cell:
    lattice: Lattice
    volume: float


def dual_basis(lat: Lattice) -> DualLattice:
    """Return the dual basis, solving <b_k, b~_j> = 2 pi delta_kj."""
    b = lat.basis
    try:
        dual = TWO_PI * np.linalg.inv(b).T
    except np.linalg.LinAlgError as exc:
        raise LatticeError(f"cannot invert lattice basis: {exc}") from exc
    pairing = b @ dual.T
    if not np.allclose(pairing, TWO_PI * np.eye(lat.dim), rtol=0, atol=1e-12 * max(1.0, np.abs(b).max() * np.abs(dual).max())):
        raise LatticeError("dual pairing check failed; basis is numerically singular")
    dual.setflags(write=False)
    return DualLattice(dual)


def _coord_bounds(gram: np.ndarray, center_coords: np.ndarray, radius: float) -> list[range]:
    # |sum n_j b_j - c| <= r forces |n_j - c_j| <= r * sqrt((G^-1)_jj).
    ginv = np.linalg.inv(gram)
    half = radius * np.sqrt(np.clip(np.diag(ginv), 0.0, None))
    lo = np.floor(center_coords - half - 1e-9).astype(int)
    hi = np.ceil(center_coords + half + 1e-9).astype(int)
    return [range(a, b + 1) for a, b in zip(lo, hi)]


def enumerate_dual_coords(dual: DualLattice, center, radius: float) -> np.ndarray:
    """Integer coordinates of dual points within ``radius`` of ``center``.

    Rows are in lexicographic order of the coordinates.
    """
    if radius < 0:
        return np.zeros((0, dual.dim), dtype=np.int64)
    center = np.asarray(center, dtype=float).reshape(dual.dim)
    center_coords = np.linalg.solve(dual.basis.T, center)
    ranges = _coord_bounds(dual.gram, center_coords, radius)
    grids = np.meshgrid(*[np.arange(r.start, r.stop) for r in ranges], indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
    cart = coords @ dual.basis
    d2 = np.sum((cart - center) ** 2, axis=1)
    keep = d2 <= radius * radius * (1 + 1e-14) + 1e-300
    # meshgrid with ij indexing already yields lexicographic order
    return coords[keep]


def enumerate_dual_points(lat: Lattice, center, radius: float) -> list[DualPoint]:
    """Dual points n with |n - center| <= radius, lexicographic in coords."""
    dual = dual_basis(lat)
    coords = enumerate_dual_coords(dual, center, radius)
    return [DualPoint(tuple(int(c) for c in row), row.astype(float) @ dual.basis) for row in coords]

