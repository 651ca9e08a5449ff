"""Periodic potentials and Robin boundary weights as finite coefficient tensors.

A potential is stored band-limited,

    V(x, y) = sum_nu  sum_l  a[nu, l] psi_l(x) exp(i <nu, y>),

where nu runs over a finite set of dual-lattice offsets and psi_l are the
L2-normalized Neumann (or periodic) Laplace eigenfunctions of the
cross-section.  The Galerkin coupling tensor

    c_{j', j}(nu) = <V phi_{j, n}, phi_{j', n + nu}>
                 = sum_l a[nu, l] * integral psi_l phi_j conj(phi_j') dx

is derived from it for whatever cross-section basis the operator uses.  A
potential may also be given directly as a coupling tensor (file ingestion),
in which case no samples can be synthesized.
"""

from __future__ import annotations

import re
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cross_section import (
    NEUMANN,
    Interval,
    IntervalTimesTorus,
    CrossSectionSpec,
    QuadratureGrid,
    Spectrum,
    lq_norm,
    quadrature_grid,
    spectrum,
    spectrum_below,
    with_bc,
)
from .lattice import Lattice, dual_basis

ALIAS_TOLERANCE = 1e-6


class PotentialError(ValueError):
    pass


class AliasingWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# sample grids on M x Omega
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CellGrid:
    """Tensor grid: cross-section quadrature nodes times an equispaced cell grid.

    Sample arrays have shape (n_x_nodes, ny, ..., ny) with one ``ny`` axis
    per lattice direction; the cell grid points are y = t @ basis with t on
    the uniform grid of [0, 1)^m.
    """

    lattice: Lattice
    cross: CrossSectionSpec
    x: QuadratureGrid
    ny: int

    @property
    def shape(self) -> tuple[int, ...]:
        return (len(self.x.weights),) + (self.ny,) * self.lattice.dim

    @property
    def y_points(self) -> np.ndarray:
        m = self.lattice.dim
        t = np.arange(self.ny) / self.ny
        grids = np.meshgrid(*([t] * m), indexing="ij")
        frac = np.stack([g.ravel() for g in grids], axis=1)
        return frac @ self.lattice.basis

    @property
    def weights(self) -> np.ndarray:
        wy = self.lattice.cell_volume / self.ny**self.lattice.dim
        w = self.x.weights.reshape((-1,) + (1,) * self.lattice.dim) * wy
        return np.broadcast_to(w, self.shape)


def cell_grid(lattice: Lattice, cross: CrossSectionSpec, x_resolution: int, ny: int) -> CellGrid:
    return CellGrid(lattice, cross, quadrature_grid(cross, x_resolution), int(ny))


# ---------------------------------------------------------------------------
# potential
# ---------------------------------------------------------------------------


def _neighbor_table(offsets: np.ndarray) -> np.ndarray:
    """Index of -nu for every offset nu (or -1 if absent)."""
    lookup = {tuple(o): i for i, o in enumerate(offsets.tolist())}
    return np.array([lookup.get(tuple(-np.asarray(o)), -1) for o in offsets.tolist()], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    lattice: Lattice
    cross: CrossSectionSpec
    offsets: np.ndarray
    amplitudes: np.ndarray | None = None
    x_basis: Spectrum | None = None
    couplings: dict | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=np.int64).reshape(-1, self.lattice.dim)
        object.__setattr__(self, "offsets", off)
        if (self.amplitudes is None) == (self.couplings is None):
            raise PotentialError("give exactly one of amplitudes or couplings")

    # -- constructors -----------------------------------------------------

    @classmethod
    def zero(cls, lattice: Lattice, cross: CrossSectionSpec) -> "PotentialSpec":
        basis = _x_basis(cross, 1)
        return cls(lattice, cross, np.zeros((0, lattice.dim)), np.zeros((0, 1), complex), basis)

    @classmethod
    def from_fourier(cls, lattice: Lattice, cross: CrossSectionSpec, coefficients: dict) -> "PotentialSpec":
        """x-independent V(y) = sum_nu coefficients[nu] exp(i <nu, y>).

        Keys are tuples of integer dual coordinates.
        """
        basis = _x_basis(cross, 1)
        const = 1.0 / np.sqrt(basis.spec.volume)
        offsets = np.array([tuple(k) for k in coefficients], dtype=np.int64).reshape(-1, lattice.dim)
        amps = np.array([[complex(v) / const] for v in coefficients.values()], dtype=complex).reshape(-1, 1)
        spec = cls(lattice, cross, offsets, amps, basis)
        return spec._symmetrized()

    @classmethod
    def mathieu(cls, lattice: Lattice, cross: CrossSectionSpec, amplitude: float = 1.0, direction: int = 0):
        """2*amplitude*cos(<b~_dir, y>), the first dual harmonic along one axis."""
        e = [0] * lattice.dim
        e[direction] = 1
        return cls.from_fourier(lattice, cross, {tuple(e): amplitude, tuple(-v for v in e): amplitude})

    @classmethod
    def from_couplings(cls, lattice: Lattice, cross: CrossSectionSpec, entries) -> "PotentialSpec":
        """Explicit tensor from (j', j, nu, value) entries; j indices are 0-based."""
        table: dict = {}
        for jp, j, nu, val in entries:
            table.setdefault(tuple(int(v) for v in nu), {})[(int(jp), int(j))] = complex(val)
        for nu, block in table.items():
            neg = table.get(tuple(-v for v in nu), {})
            for (jp, j), val in block.items():
                other = neg.get((j, jp))
                if other is None or abs(other.conjugate() - val) > 1e-12 * max(1.0, abs(val)):
                    raise PotentialError(
                        f"coupling tensor violates reality symmetry at j'={jp}, j={j}, nu={nu}"
                    )
        offsets = np.array(sorted(table), dtype=np.int64).reshape(-1, lattice.dim)
        return cls(lattice, cross, offsets, couplings=table)

    # -- properties -------------------------------------------------------

    @property
    def is_x_independent(self) -> bool:
        if self.amplitudes is None:
            return False
        nonconst = np.abs(self.x_basis.mu) > 0
        return not np.any(np.abs(self.amplitudes[:, nonconst]) > 0)

    @property
    def is_zero(self) -> bool:
        if self.amplitudes is not None:
            return not np.any(self.amplitudes)
        return not any(abs(v) > 0 for b in self.couplings.values() for v in b.values())

    def offset_cartesian(self) -> np.ndarray:
        return self.offsets @ dual_basis(self.lattice).basis

    def _symmetrized(self) -> "PotentialSpec":
        if len(self.offsets) == 0:
            return self
        a = self.amplitudes.copy()
        neg = _neighbor_table(self.offsets)
        if np.any(neg < 0):
            # complete the support with the mirrored offsets
            missing = self.offsets[neg < 0]
            offsets = np.concatenate([self.offsets, -missing])
            a = np.concatenate([a, np.zeros((len(missing), a.shape[1]), complex)])
            neg = _neighbor_table(offsets)
        else:
            offsets = self.offsets
        conj_perm = _conj_permutation(self.x_basis)
        mirrored = np.conj(a[neg][:, conj_perm])
        a = 0.5 * (a + mirrored)
        order = np.lexsort(offsets.T[::-1])
        return PotentialSpec(self.lattice, self.cross, offsets[order], a[order], self.x_basis)

    # -- synthesis --------------------------------------------------------

    def evaluate(self, grid: CellGrid) -> np.ndarray:
        """Sample V on a CellGrid (real part; V is real by construction)."""
        if self.amplitudes is None:
            raise PotentialError("a coupling-tensor potential cannot be sampled")
        psi = self.x_basis.evaluate(grid.x.nodes)  # (P, L)
        profile = psi @ self.amplitudes.T  # (P, K)
        phases = np.exp(1j * grid.y_points @ self.offset_cartesian().T)  # (Q, K)
        vals = profile @ phases.T
        return np.real(vals).reshape(grid.shape)

    # -- coupling tensor --------------------------------------------------

    def coupling_blocks(self, cross_spectrum: Spectrum) -> dict:
        """Map offset tuple -> (J, J) matrix c[j', j] for the given basis.

        For x-independent potentials the value is a scalar multiple of the
        identity and is returned as a Python complex.
        """
        key = (id(cross_spectrum), len(cross_spectrum))
        if key in self._cache:
            return self._cache[key]
        J = len(cross_spectrum)
        out = {}
        if self.couplings is not None:
            for nu, block in self.couplings.items():
                mat = np.zeros((J, J), complex)
                for (jp, j), val in block.items():
                    if jp < J and j < J:
                        mat[jp, j] = val
                out[nu] = mat
        elif self.is_x_independent:
            const = 1.0 / np.sqrt(self.x_basis.spec.volume)
            zero_cols = np.abs(self.x_basis.mu) == 0
            for nu, amp in zip(self.offsets.tolist(), self.amplitudes):
                out[tuple(nu)] = complex(np.sum(amp[zero_cols]) * const)
        else:
            out = self._triple_products(cross_spectrum)
        self._cache[key] = out
        return out

    def _triple_products(self, sp: Spectrum) -> dict:
        res = _product_resolution(sp, self.x_basis)
        g = quadrature_grid(sp.spec, res)
        phi = sp.evaluate(g.nodes)
        psi = self.x_basis.evaluate(g.nodes)
        prof = psi @ self.amplitudes.T  # (P, K)
        out = {}
        wphi = g.weights[:, None] * phi
        for nu, col in zip(self.offsets.tolist(), prof.T):
            out[tuple(nu)] = np.conj(phi).T @ (col[:, None] * wphi)
        return out

    def coupling_element(self, cross_spectrum: Spectrum, j: int, n, jp: int, np_) -> complex:
        """<V phi_{j,n}, phi_{j',n'}> = c_{j',j}(n' - n); zero outside the support."""
        nu = tuple(int(b) - int(a) for a, b in zip(np.atleast_1d(n), np.atleast_1d(np_)))
        block = self.coupling_blocks(cross_spectrum).get(nu)
        if block is None:
            return 0j
        if isinstance(block, complex):
            return block if j == jp else 0j
        return complex(block[jp, j])


def _product_resolution(sp: Spectrum, basis: Spectrum) -> int:
    # nodes needed to integrate psi_l * phi_j * conj(phi_j') exactly
    interval = isinstance(sp.spec, (Interval, IntervalTimesTorus))
    res = 1
    if interval:
        top = 2 * int(sp.labels[:, 0].max()) + int(basis.labels[:, 0].max())
        res = int(np.ceil(0.9 * top)) + 16
    off = 1 if interval else 0
    if sp.labels.shape[1] > off:
        top = 2 * int(np.abs(sp.labels[:, off:]).max()) + int(np.abs(basis.labels[:, off:]).max())
        res = max(res, top + 1)
    return res


def _x_basis(cross: CrossSectionSpec, count: int) -> Spectrum:
    return spectrum(with_bc(cross, NEUMANN), count)


def _conj_permutation(basis: Spectrum) -> np.ndarray:
    """Index map l -> l' with conj(psi_l) = psi_l'."""
    spec = basis.spec
    labels = basis.labels.copy()
    if isinstance(spec, Interval):
        return np.arange(len(labels))
    if isinstance(spec, IntervalTimesTorus):
        labels[:, 1:] *= -1
    else:
        labels *= -1
    lookup = {tuple(r): i for i, r in enumerate(basis.labels.tolist())}
    try:
        return np.array([lookup[tuple(r)] for r in labels.tolist()])
    except KeyError as exc:
        raise PotentialError("x-basis is not closed under conjugation") from exc


def from_samples(
    samples,
    grid: CellGrid,
    nu_cap: int,
    x_cap: float,
) -> PotentialSpec:
    """Project grid samples onto psi_l(x) exp(i<nu, y>) with bounded support.

    ``nu_cap`` bounds the integer dual coordinates, ``x_cap`` the Laplace
    eigenvalue of the x-basis.  Emits an AliasingWarning when more than 1e-6
    of the L2 energy lies outside the caps.
    """
    v = np.asarray(samples, dtype=float)
    if v.shape != grid.shape:
        raise PotentialError(f"samples shape {v.shape} does not match grid {grid.shape}")
    lat, m = grid.lattice, grid.lattice.dim
    axes = tuple(range(1, m + 1))
    vhat = np.fft.fftn(v, axes=axes) / grid.ny**m  # mean over the cell
    freqs = np.fft.fftfreq(grid.ny, d=1.0 / grid.ny).astype(int)
    grids = np.meshgrid(*([freqs] * m), indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)
    flat = vhat.reshape(vhat.shape[0], -1)
    inside = np.all(np.abs(coords) <= nu_cap, axis=1)

    cross = grid.x
    basis = spectrum_below(with_bc(grid.cross, NEUMANN), x_cap)
    psi = basis.evaluate(cross.nodes)
    amps = (np.conj(psi).T @ (cross.weights[:, None] * flat[:, inside])).T  # (K, L)

    total = float(np.sum(cross.weights[:, None] * np.abs(flat) ** 2))
    kept = float(np.sum(np.abs(amps) ** 2))
    if total > 0 and (total - kept) > ALIAS_TOLERANCE * total:
        warnings.warn(
            f"potential energy outside caps: {(total - kept) / total:.3e} of total",
            AliasingWarning,
            stacklevel=2,
        )
    offsets = coords[inside]
    scale = np.abs(amps).max() if amps.size else 0.0
    live = np.abs(amps).max(axis=1) > 1e-15 * scale
    offsets, amps = offsets[live], amps[live]
    order = np.lexsort(offsets.T[::-1])
    spec = PotentialSpec(lat, grid.cross, offsets[order], amps[order], basis)
    return spec._symmetrized()


def lp_norm(V: PotentialSpec, p: float, grid: CellGrid) -> float:
    """Quadrature L_p norm of V over M x Omega (finite p only)."""
    p = float(p)
    if p < 1:
        raise PotentialError(f"p must be >= 1, got {p}")
    if np.isinf(p):
        raise PotentialError("p = inf is not supported; use max(abs(samples)) instead")
    return lq_norm(V.evaluate(grid), p, weights=grid.weights.ravel())


# ---------------------------------------------------------------------------
# level splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SplitResult:
    v1: np.ndarray
    v2: np.ndarray
    level: float
    norm_v1: float

    @property
    def c_delta(self) -> float:
        return self.level


def split_by_level(samples, weights, p: float, delta: float) -> SplitResult:
    """Split V = V1 + V2 with V1 = V 1{|V| > t}, ||V1||_p <= delta, |V2| <= t.

    Returns the smallest admissible level t.  ||V1 1{|V|>t}||_p is a
    non-increasing step function of t that jumps only at sample values, so
    the minimum is found exactly from the sorted magnitudes.
    """
    if not delta > 0:
        raise PotentialError("delta must be positive")
    p = float(p)
    if p < 1 or np.isinf(p):
        raise PotentialError("p must be finite and >= 1")
    v = np.asarray(samples, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), v.shape)
    a = np.abs(v).ravel()
    wf = w.ravel()
    order = np.argsort(a, kind="stable")
    a_sorted = a[order]
    mass = wf[order] * a_sorted**p
    # tail[i] = sum of mass over entries strictly above a_sorted[i-1]
    tail = np.concatenate([np.cumsum(mass[::-1])[::-1], [0.0]])
    levels = np.concatenate([[0.0], a_sorted])
    # entries > levels[i] are exactly the sorted positions with value > levels[i]
    first_above = np.searchsorted(a_sorted, levels, side="right")
    norms = tail[first_above] ** (1.0 / p)
    ok = np.nonzero(norms <= delta)[0]
    t = float(levels[ok[0]])
    mask = np.abs(v) > t
    v1 = np.where(mask, v, 0.0)
    v2 = np.where(mask, 0.0, v)
    norm = float(np.sum(w * np.abs(v1) ** p) ** (1.0 / p))
    return SplitResult(v1, v2, t, norm)


# ---------------------------------------------------------------------------
# Robin boundary weights (layers only)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundarySigma:
    """sigma(0, y) and sigma(a, y) as finite real Fourier series over the dual lattice."""

    lattice: Lattice
    at_zero: dict
    at_a: dict

    def __post_init__(self):
        for name in ("at_zero", "at_a"):
            series = {tuple(int(v) for v in k): complex(c) for k, c in getattr(self, name).items()}
            for k, c in series.items():
                mirror = series.get(tuple(-v for v in k), 0.0)
                if abs(complex(mirror).conjugate() - c) > 1e-12 * max(1.0, abs(c)):
                    raise PotentialError(f"{name}: sigma must be real (coefficient {k})")
            object.__setattr__(self, name, series)

    @classmethod
    def constant(cls, lattice: Lattice, value: float, value_a: float | None = None):
        zero = (0,) * lattice.dim
        return cls(lattice, {zero: value}, {zero: value if value_a is None else value_a})

    @classmethod
    def cosine(cls, lattice: Lattice, amplitude: float = 1.0, direction: int = 0):
        """amplitude*cos(<b~_dir, y>) on both boundary components."""
        e = [0] * lattice.dim
        e[direction] = 1
        series = {tuple(e): amplitude / 2, tuple(-v for v in e): amplitude / 2}
        return cls(lattice, series, dict(series))

    def scaled(self, s: float) -> "BoundarySigma":
        return BoundarySigma(
            self.lattice,
            {k: s * v for k, v in self.at_zero.items()},
            {k: s * v for k, v in self.at_a.items()},
        )

    @property
    def is_zero(self) -> bool:
        return not any(abs(v) for v in list(self.at_zero.values()) + list(self.at_a.values()))

    def coefficient(self, side: str, nu) -> complex:
        series = self.at_zero if side == "0" else self.at_a
        return complex(series.get(tuple(int(v) for v in nu), 0.0))

    def evaluate(self, side: str, y_points) -> np.ndarray:
        series = self.at_zero if side == "0" else self.at_a
        y = np.asarray(y_points, dtype=float).reshape(-1, self.lattice.dim)
        dual = dual_basis(self.lattice).basis
        out = np.zeros(len(y), complex)
        for k, c in series.items():
            out += c * np.exp(1j * y @ (np.asarray(k, dtype=float) @ dual))
        return out.real

    def check_integrability(self, d: int, q: float | None = None) -> float:
        """Bookkeeping: the exponent q with sigma in L_q (2 for d = 3, 2d - 2 for d >= 4)."""
        need = 2.0 if d == 3 else 2.0 * d - 2.0
        if d < 3:
            need = 2.0
        if q is not None and q < need:
            raise PotentialError(f"sigma must be declared in L_q with q >= {need} for d = {d}")
        return need


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

TEXT_HEADER = "# thomas-lab potential couplings v1"
BINARY_MAGIC = b"TLPOT1\x00\x00"


def write_couplings_text(path, entries, m: int) -> None:
    """Write (j', j, nu, value) tuples, one per line: j' j nu_1..nu_m re im."""
    lines = [TEXT_HEADER, f"# m = {m}"]
    for jp, j, nu, val in entries:
        val = complex(val)
        nu_s = " ".join(str(int(v)) for v in nu)
        lines.append(f"{int(jp)} {int(j)} {nu_s} {val.real!r} {val.imag!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_couplings_text(path, m: int) -> list:
    entries = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = re.split(r"[\s,]+", line)
        if len(parts) != m + 4:
            raise PotentialError(f"{path}:{lineno}: expected {m + 4} fields, got {len(parts)}")
        try:
            jp, j = int(parts[0]), int(parts[1])
            nu = tuple(int(v) for v in parts[2 : 2 + m])
            val = complex(float(parts[-2]), float(parts[-1]))
        except ValueError as exc:
            raise PotentialError(f"{path}:{lineno}: {exc}") from exc
        entries.append((jp, j, nu, val))
    return entries


def write_samples_binary(path, samples) -> None:
    """Header: magic, uint32 ndim, uint32 sizes...; then float64 LE row-major data."""
    v = np.ascontiguousarray(samples, dtype="<f8")
    header = BINARY_MAGIC + struct.pack(f"<I{v.ndim}I", v.ndim, *v.shape)
    Path(path).write_bytes(header + v.tobytes())


def read_samples_binary(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != BINARY_MAGIC:
        raise PotentialError(f"{path}: not a thomas-lab sample file")
    (ndim,) = struct.unpack_from("<I", data, 8)
    shape = struct.unpack_from(f"<{ndim}I", data, 12)
    offset = 12 + 4 * ndim
    count = int(np.prod(shape))
    if len(data) - offset != 8 * count:
        raise PotentialError(f"{path}: expected {count} doubles after header")
    return np.frombuffer(data, dtype="<f8", offset=offset).reshape(shape).copy()
