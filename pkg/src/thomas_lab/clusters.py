"""Spectral clusters E_k of H0 on [(k-1)^2, k^2) and the sums they feed.

A spectral context is a ModeSet at tau = 0; its "values" are the free
eigenvalues |n + pi b1 + xi'|^2 + mu_j (or the cross-section eigenvalues
alone when there are no longitudinal directions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.optimize
from scipy.special import zeta

from .cross_section import (
    Interval,
    IntervalTimesTorus,
    gauss_legendre,
    interval_functions,
)
from .free_operator import ModeSet

TAIL_TOLERANCE = 1e-10
REGIMES = ("no-boundary", "product-interval", "boundary-high-q", "boundary-low-q")


class ClusterError(ValueError):
    pass


# ---------------------------------------------------------------------------
# membership
# ---------------------------------------------------------------------------


def cluster_of(values) -> np.ndarray:
    """Cluster index k with value in [(k-1)^2, k^2), exact at perfect squares."""
    v = np.asarray(values, dtype=float)
    k = np.floor(np.sqrt(np.maximum(v, 0.0))).astype(np.int64) + 1
    k = np.where((k - 1) ** 2 > v, k - 1, k)
    k = np.where(v >= k.astype(float) ** 2, k + 1, k)
    return k


@dataclass(frozen=True, eq=False)
class ClusterIndex:
    k: int
    members: np.ndarray  # indices into the context ModeSet
    context: ModeSet

    @property
    def rank(self) -> int:
        return len(self.members)

    @property
    def values(self) -> np.ndarray:
        return self.context.free_real[self.members]


def _check_cover(ctx: ModeSet, k: int) -> None:
    if ctx.lambda_max < k * k:
        raise ClusterError(f"truncation lambda_max={ctx.lambda_max} does not cover cluster {k}; need >= {k * k}")


def cluster_members(ctx: ModeSet, k: int) -> ClusterIndex:
    """Modes whose free eigenvalue lies in [(k-1)^2, k^2)."""
    k = int(k)
    if k < 1:
        raise ClusterError("cluster index starts at 1")
    _check_cover(ctx, k)
    members = np.nonzero(cluster_of(ctx.free_real) == k)[0]
    return ClusterIndex(k, members, ctx)


def cluster_ranks(ctx: ModeSet, k_max: int) -> np.ndarray:
    """N_k for k = 1..k_max."""
    _check_cover(ctx, k_max)
    ks = cluster_of(ctx.free_real)
    return np.bincount(ks[ks <= k_max], minlength=k_max + 1)[1:]


# ---------------------------------------------------------------------------
# L2 -> Lq norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterReport:
    k: int
    rank: int
    q: float
    lower: float
    upper: float
    exact: bool

    def row(self) -> dict:
        return {
            "k": self.k,
            "N_k": self.rank,
            "q": self.q,
            "lower": self.lower,
            "upper": self.upper,
            "exact": int(self.exact),
        }


def _interval_spec(ctx: ModeSet):
    spec = ctx.cross.spec
    if isinstance(spec, Interval):
        return spec
    if isinstance(spec, IntervalTimesTorus):
        return spec.interval
    return None


def _flat_volume(ctx: ModeSet) -> float:
    """Volume of the factors on which eigenfunctions have constant modulus."""
    spec = ctx.cross.spec
    vol = ctx.cell_volume
    if isinstance(spec, IntervalTimesTorus):
        vol *= spec.torus.volume
    elif not isinstance(spec, Interval):
        vol *= spec.volume
    return vol


def sup_density(cl: ClusterIndex, x_nodes=None) -> float:
    """max over x of sum_alpha |phi_alpha|^2.

    With explicit ``x_nodes`` the max is taken over those nodes only.  By
    default a uniform grid is searched and its best local maxima are refined
    by bounded scalar optimization, which resolves the true supremum.
    """
    ctx = cl.context
    if cl.rank == 0:
        return 0.0
    iv = _interval_spec(ctx)
    flat = 1.0 / _flat_volume(ctx)
    if iv is None:
        return cl.rank * flat
    j = ctx.cross.labels[ctx.j[cl.members], 0]
    uniq, counts = np.unique(j, return_counts=True)

    def density(x):
        return interval_functions(iv, uniq, np.atleast_1d(np.asarray(x, dtype=float))) ** 2 @ counts

    if x_nodes is not None:
        return float(density(x_nodes).max() * flat)
    x = default_sup_nodes(iv, int(uniq.max()))
    vals = density(x)
    best = float(vals.max())
    interior = np.nonzero((vals[1:-1] >= vals[:-2]) & (vals[1:-1] >= vals[2:]))[0] + 1
    for i in interior[np.argsort(vals[interior])[::-1][:8]]:
        res = scipy.optimize.minimize_scalar(
            lambda t: -density(t)[0], bounds=(x[i - 1], x[i + 1]), method="bounded",
            options={"xatol": 1e-13},
        )
        best = max(best, -float(res.fun))
    return best * flat


def default_sup_nodes(iv: Interval, jmax: int) -> np.ndarray:
    """Uniform nodes on the closed interval, about 16 per period of the top mode."""
    return np.linspace(0.0, iv.length, 8 * jmax + 65)


def norm_2_to_inf(cl: ClusterIndex, x_nodes=None) -> float:
    return math.sqrt(sup_density(cl, x_nodes))


class _ClusterSynthesizer:
    """Evaluate cluster functions on a tensor grid and project back.

    Axis 0 is the interval coordinate (Gauss-Legendre nodes, size 1 if no
    interval); remaining axes are fractional coordinates of all periodic
    directions (cross-section torus, then cell), sampled uniformly.
    """

    def __init__(self, cl: ClusterIndex, q: float):
        ctx = cl.context
        iv = _interval_spec(ctx)
        labels = ctx.cross.labels[ctx.j[cl.members]]
        per = []
        if iv is not None:
            jlab = labels[:, 0]
            labels = labels[:, 1:]
        per.append(labels)
        per.append(ctx.n_coords[cl.members])
        self.freqs = np.concatenate(per, axis=1).astype(np.int64)
        r = self.freqs.shape[1]
        cmax = int(np.abs(self.freqs).max(initial=0))
        # |g|^(q-2) g is exact on the grid for even q; otherwise this is a sampled bound
        power = int(math.ceil(q)) if np.isfinite(q) else 4
        self.n = scipy.fft.next_fast_len(power * cmax + 1) if r else 1
        self.periodic_shape = (self.n,) * r
        self.vol = _flat_volume(ctx)
        if iv is not None:
            self.uniq, self.jpos = np.unique(jlab, return_inverse=True)
            top = int(self.uniq.max())
            nx = int(math.ceil(0.45 * (power + 1) * top)) + 24
            x, wx = gauss_legendre(0.0, iv.length, nx)
            self.x = x
            self.phix = interval_functions(iv, self.uniq, x)  # (nx, Jx)
            self.wx = wx
        else:
            self.x = None
            self.uniq = np.zeros(1, np.int64)
            self.jpos = np.zeros(len(self.freqs), np.int64)
            self.phix = np.ones((1, 1))
            self.wx = np.ones(1)
        self.idx = tuple(np.mod(self.freqs[:, c], self.n) for c in range(r))
        npts = self.n**r
        self.scale_synth = npts / math.sqrt(self.vol)  # ifftn divides by npts
        self.w_per = self.vol / npts
        self.weights = self.wx.reshape((-1,) + (1,) * r) * self.w_per

    def synth(self, c: np.ndarray) -> np.ndarray:
        r = len(self.periodic_shape)
        arr = np.zeros((len(self.uniq),) + self.periodic_shape, complex)
        np.add.at(arr, (self.jpos,) + self.idx, c)
        if r:
            arr = scipy.fft.ifftn(arr, axes=tuple(range(1, r + 1)), workers=-1) * self.scale_synth
        else:
            arr = arr / math.sqrt(self.vol)
        return np.tensordot(self.phix, arr, axes=(1, 0))

    def analyze(self, g: np.ndarray) -> np.ndarray:
        r = len(self.periodic_shape)
        arr = np.tensordot(self.phix.T, g * self.wx.reshape((-1,) + (1,) * r), axes=(1, 0))
        if r:
            arr = scipy.fft.fftn(arr, axes=tuple(range(1, r + 1)), workers=-1)
        arr = arr * (self.w_per / math.sqrt(self.vol))
        return arr[(self.jpos,) + self.idx]

    def norm(self, g: np.ndarray, q: float) -> float:
        a = np.abs(g)
        if np.isinf(q):
            return float(a.max())
        return float(np.sum(self.weights * a**q) ** (1.0 / q))


def cluster_lq_lower(cl: ClusterIndex, q: float, starts: int = 32, seed: int = 0,
                     max_iter: int = 30, tol: float = 1e-7) -> float:
    """Lower bound for ||E_k||_{2->q} by fixed-point ascent f -> E_k(|f|^(q-2) f).

    Each start is a seeded complex Gaussian coefficient vector; the stream is
    keyed by (seed, k) so results do not depend on evaluation order.
    """
    syn = _ClusterSynthesizer(cl, q)
    rng = np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), cl.k]))
    best = 0.0
    for _ in range(starts):
        c = rng.standard_normal(cl.rank) + 1j * rng.standard_normal(cl.rank)
        c /= np.linalg.norm(c)
        g = syn.synth(c)
        val = syn.norm(g, q)
        for _ in range(max_iter):
            c_new = syn.analyze(np.abs(g) ** (q - 2) * g)
            nrm = np.linalg.norm(c_new)
            if nrm == 0:
                break
            c_new /= nrm
            g_new = syn.synth(c_new)
            new_val = syn.norm(g_new, q)
            done = new_val <= val * (1 + tol)
            if new_val >= val:
                c, g, val = c_new, g_new, new_val
            if done:
                break
        best = max(best, val)
    return best


def cluster_norm(cl: ClusterIndex, q: float, starts: int = 32, seed: int = 0, x_nodes=None,
                 max_iter: int = 30) -> ClusterReport:
    """Bracket for ||E_k||_{L2 -> Lq}; exact at q = 2 and q = inf."""
    q = float(q)
    if q < 2:
        raise ClusterError("cluster norms are measured for q >= 2")
    if cl.rank == 0:
        return ClusterReport(cl.k, 0, q, 0.0, 0.0, True)
    if q == 2:
        return ClusterReport(cl.k, cl.rank, q, 1.0, 1.0, True)
    inf_norm = norm_2_to_inf(cl, x_nodes)
    if np.isinf(q):
        return ClusterReport(cl.k, cl.rank, q, inf_norm, inf_norm, True)
    lower = cluster_lq_lower(cl, q, starts=starts, seed=seed, max_iter=max_iter)
    # the interpolation bound must also dominate the sampling grid of the ascent
    syn_x = _ClusterSynthesizer(cl, q).x
    if syn_x is not None:
        inf_norm = max(inf_norm, norm_2_to_inf(cl, syn_x))
    upper = inf_norm ** (1.0 - 2.0 / q)
    return ClusterReport(cl.k, cl.rank, q, lower, upper, False)


# ---------------------------------------------------------------------------
# exponents
# ---------------------------------------------------------------------------


def _window(d: int, regime: str) -> tuple[float, float]:
    if regime in ("no-boundary", "product-interval"):
        return 2.0 * (d + 1) / (d - 1), math.inf
    if regime == "boundary-high-q":
        return (5.0 if d == 3 else 4.0), math.inf
    if regime == "boundary-low-q":
        if d < 4:
            raise ClusterError("the low-q boundary estimate needs d >= 4")
        return 2.0, 4.0
    raise ClusterError(f"unknown regime {regime!r}; choose from {REGIMES}")


def reference_exponent(d: int, q: float, regime: str) -> float:
    """Growth exponent of ||E_k||_{2->q} in k for the given geometry."""
    d, q = int(d), float(q)
    if d < 2 or (regime.startswith("boundary") and d < 3):
        raise ClusterError(f"dimension d={d} outside the supported range")
    lo, hi = _window(d, regime)
    if not lo <= q <= hi:
        raise ClusterError(f"q={q} outside the window [{lo}, {hi}] for d={d}, regime {regime}")
    inv_q = 0.0 if np.isinf(q) else 1.0 / q
    base = d * (0.5 - inv_q)
    if regime == "boundary-low-q":
        return base + 2.0 * inv_q - 1.0
    return base - 0.5


@dataclass(frozen=True)
class ExponentFit:
    q: float
    k_range: tuple[int, int]
    slope: float
    intercept: float
    residual: float
    n_clusters: int

    @property
    def epsilon(self) -> float:
        return 0.5 - self.slope

    @property
    def condition_holds(self) -> bool:
        return self.slope < 0.5


def power_law_fit(ks, values) -> tuple[float, float, float]:
    """Least squares of log(values) on log(ks): (slope, intercept, rms residual)."""
    x = np.log(np.asarray(ks, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2)))


def condition_Aq_fit(ks, norms, q: float, min_clusters: int = 10) -> ExponentFit:
    """Fit norms ~ C k^s; Condition A(q) corresponds to s = 1/2 - eps with eps > 0."""
    ks = np.asarray(ks, dtype=float)
    norms = np.asarray(norms, dtype=float)
    live = norms > 0
    ks, norms = ks[live], norms[live]
    if len(ks) < min_clusters:
        raise ClusterError(f"need >= {min_clusters} clusters with nonzero rank, got {len(ks)}")
    if np.unique(ks).size < 2:
        raise ClusterError("degenerate series: a single k value")
    slope, intercept, res = power_law_fit(ks, norms)
    return ExponentFit(float(q), (int(ks.min()), int(ks.max())), slope, intercept, res, len(ks))


# ---------------------------------------------------------------------------
# summation lemma
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailSeries:
    """Hurwitz-zeta expansion of sum_{k > K} k^(1-2eps) / (k^2 + beta k + c)."""

    value: float
    bound: float
    terms: int


def _series_tail(eps: float, beta: float, c: float, K: int, rho: float) -> TailSeries:
    theta = rho / (K + 1)
    if not theta < 0.5:
        raise ClusterError("tail start too close to the denominator roots")
    s0 = 1.0 + 2.0 * eps
    pref = (K + 1) ** (-s0) * (1.0 + (K + 1) / (2.0 * eps))
    a_prev, a_cur = 0.0, 1.0
    total = 0.0
    r = 0
    while True:
        total += a_cur * zeta(s0 + r, K + 1)
        r += 1
        remainder = pref * theta**r * ((r + 1) * (1 - theta) + theta) / (1 - theta) ** 2
        if remainder < TAIL_TOLERANCE * 1e-2 or r > 400:
            break
        a_prev, a_cur = a_cur, -beta * a_cur - c * a_prev
    return TailSeries(float(total), float(remainder), r)


@dataclass(frozen=True)
class LemmaSums:
    eps: float
    tau: float
    s1: float
    s2: float
    cutoff: int
    tail_bound: float

    @property
    def total(self) -> float:
        return self.s1 + self.s2


def _lemma_sum(eps: float, tau: float, shift: int) -> tuple[float, int, float]:
    """sum_k k^(1-2eps)/(|(k-shift)^2 - tau^2| + |tau|) for shift in {0, 1}."""
    t = abs(tau)
    disc = math.sqrt(t * t - t)
    rho = shift + disc
    K = max(64, int(math.ceil(4 * rho)) + 1)
    k = np.arange(1, K + 1, dtype=float)
    head = float(np.sum(k ** (1 - 2 * eps) / (np.abs((k - shift) ** 2 - t * t) + t)))
    tail = _series_tail(eps, -2.0 * shift, shift * shift - t * t + t, K, rho)
    return head + tail.value, K, tail.bound


def lemma_sums(eps: float, tau: float) -> LemmaSums:
    """The two sums k^(1-2eps)/(|k^2 - tau^2| + |tau|) and with (k-1)^2, to 1e-10."""
    eps, tau = float(eps), float(tau)
    if not 0 < eps < 0.5:
        raise ClusterError("eps must lie in (0, 1/2)")
    if not abs(tau) > 1:
        raise ClusterError("|tau| must exceed 1")
    s1, k1, b1 = _lemma_sum(eps, tau, 0)
    s2, k2, b2 = _lemma_sum(eps, tau, 1)
    return LemmaSums(eps, tau, s1, s2, max(k1, k2), b1 + b2)


def lemma_partial_sums(eps: float, tau: float, shift: int, count: int) -> np.ndarray:
    k = np.arange(1, count + 1, dtype=float)
    t = abs(tau)
    return np.cumsum(k ** (1 - 2 * eps) / (np.abs((k - shift) ** 2 - t * t) + t))


def lemma_tail_bound(eps: float, tau: float, shift: int, K: int) -> float:
    """Upper bound for sum_{k > K} once (K - shift)^2 >= 2 tau^2: integral of 2 x^(-1-2eps)."""
    if (K - shift) ** 2 < 2 * tau * tau or K <= 2 * shift:
        return math.inf
    # denominator >= (k - shift)^2 / 2 >= k^2 / 8 for k >= 2 shift
    factor = 2.0 if shift == 0 else 8.0
    return factor * K ** (-2 * eps) / (2 * eps)


# ---------------------------------------------------------------------------
# weighted cluster sum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedClusterSum:
    eps: float
    tau: float
    exact_part: float
    bound_part: float
    k_exact: int
    exceptional_k: int
    exceptional_term: float
    exceptional_exact: bool

    @property
    def value(self) -> float:
        """Certified upper bound of the full sum (exact clusters plus bounded rest)."""
        return self.exact_part + self.bound_part

    @property
    def exceptional_constant(self) -> float:
        """C with exceptional term = C k^(-2 eps)."""
        return self.exceptional_term * self.exceptional_k ** (2 * self.eps)


def weighted_cluster_sum(eps: float, tau: float, ctx: ModeSet, k_exact: int | None = None) -> WeightedClusterSum:
    """Sum over k of max over cluster members of k^(1-2eps)/(|v - tau^2| + |tau|).

    Clusters k <= k_exact are summed exactly over their members.  Beyond
    that, each cluster term is replaced by the value at the cluster endpoint
    nearest tau^2 (an upper bound), and the exceptional cluster containing
    tau^2 by k^(1-2eps)/|tau|; the infinite remainder uses the same tail
    series as lemma_sums.
    """
    eps, tau = float(eps), float(tau)
    if not 0 < eps < 0.5:
        raise ClusterError("eps must lie in (0, 1/2)")
    if not abs(tau) > 1:
        raise ClusterError("|tau| must exceed 1")
    t = abs(tau)
    if k_exact is None:
        k_exact = int(math.floor(math.sqrt(ctx.lambda_max)))
    _check_cover(ctx, k_exact)
    v = ctx.free_real
    ks = cluster_of(v)
    sel = ks <= k_exact
    dist = np.abs(v[sel] - t * t)
    best = np.full(k_exact + 1, np.inf)
    np.minimum.at(best, ks[sel], dist)
    kk = np.arange(k_exact + 1, dtype=float)
    live = np.isfinite(best)
    live[0] = False
    terms = np.zeros(k_exact + 1)
    terms[live] = kk[live] ** (1 - 2 * eps) / (best[live] + t)
    exact = float(terms.sum())

    k_exc = int(math.floor(t)) + 1  # (k-1) <= |tau| < k
    exc_exact = k_exc <= k_exact
    exc_term = float(terms[k_exc]) if exc_exact else k_exc ** (1 - 2 * eps) / t

    # endpoint bounds for clusters k_exact < k <= K, then the analytic tail
    disc = math.sqrt(t * t - t)
    K = max(k_exact, int(math.ceil(4 * (1 + disc))) + 1)
    k = np.arange(k_exact + 1, K + 1, dtype=float)
    below = k <= t  # k^2 <= tau^2: substitute k^2
    above = (k - 1) > t  # (k-1)^2 > tau^2: substitute (k-1)^2
    bnd = np.zeros_like(k)
    bnd[below] = k[below] ** (1 - 2 * eps) / (t * t - k[below] ** 2 + t)
    bnd[above] = k[above] ** (1 - 2 * eps) / ((k[above] - 1) ** 2 - t * t + t)
    exc = ~(below | above)
    bnd[exc] = k[exc] ** (1 - 2 * eps) / t
    tail = _series_tail(eps, -2.0, 1.0 - t * t + t, K, 1 + disc)
    bound = float(bnd.sum()) + tail.value + tail.bound
    return WeightedClusterSum(eps, tau, exact, bound, k_exact, k_exc, exc_term, exc_exact)
