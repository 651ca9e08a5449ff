"""Acceptance criteria, one test each.

Every test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line (collected and
repeated in the terminal summary by conftest.py).  Tolerances are pinned as
module constants next to the test that uses them.
"""

from __future__ import annotations

import filecmp
import math
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import lemma_sum_mp
from thomas_lab.cli import main as cli_main
from thomas_lab.clusters import (
    cluster_members,
    cluster_norm,
    condition_Aq_fit,
    lemma_sums,
    weighted_cluster_sum,
)
from thomas_lab.cross_section import DIRICHLET, NEUMANN, FlatTorus, Interval, IntervalTimesTorus
from thomas_lab.free_operator import QuasiMomentum, build_modes, h_values, lambda_rule
from thomas_lab.galerkin import Model, assemble, assemble_thomas, eigenvalues, resolvent_norm
from thomas_lab.lattice import Lattice
from thomas_lab.potential import BoundarySigma, PotentialSpec, cell_grid, split_by_level
from thomas_lab.thomas import Prober, band_ac_indicator, robin_trace_decay, thomas_decay_scan

PI = math.pi
ROOT = Path(__file__).resolve().parents[1]
LAT1 = Lattice([[1.0]])
LAT2 = Lattice(np.eye(2))
LAYER_N = Interval(PI, NEUMANN)
RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str, t0: float) -> None:
    line = f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {detail}  [{time.perf_counter() - t0:.1f}s]"
    RESULTS.append(line)
    print(line)
    assert ok, line


def mathieu(bc=NEUMANN):
    cross = Interval(PI, bc)
    return Model(LAT1, cross, PotentialSpec.mathieu(LAT1, cross))


def torus3():
    return FlatTorus(2 * PI * np.eye(3))


# 1 ---------------------------------------------------------------------------
C1_TAUS = (1, 2, 5, 10, 50, 200)
C1_REL = 1e-12


def test_criterion_01_free_resolvent_bound():
    t0 = time.perf_counter()
    model = Model(LAT2, LAYER_N)
    worst_rel, worst_prod = 0.0, 0.0
    for tau in C1_TAUS:
        mat = assemble_thomas(model, QuasiMomentum([0.0, 0.0], float(tau)), lambda_rule(tau))
        norm = resolvent_norm(mat)
        m = mat.modes
        # oracle: h from the mode coordinates directly
        a = m.n_cart + PI * LAT2.b1
        h = (a**2).sum(axis=1) + m.mu - tau**2 + 2j * tau * (a @ LAT2.b1)
        ref = 1.0 / np.abs(h).min()
        worst_rel = max(worst_rel, abs(norm - ref) / ref)
        worst_prod = max(worst_prod, norm * 2 * PI * tau)
    ok = worst_rel <= C1_REL and worst_prod <= 1.0
    report(1, ok, f"max rel dev {worst_rel:.2e} (<= {C1_REL}), max norm*2pi*tau {worst_prod:.12f} (<= 1)", t0)


# 2 ---------------------------------------------------------------------------
C2_SAMPLES = 10
C2_ABS = 1e-10


def test_criterion_02_imaginary_part_lower_bound():
    t0 = time.perf_counter()
    rng = np.random.Generator(np.random.Philox(key=2024))
    worst = math.inf
    for _ in range(C2_SAMPLES):
        tau = float(rng.uniform(0.5, 60.0)) * rng.choice([-1, 1])
        xi = np.array([0.0, rng.uniform(-PI, PI)])
        modes = build_modes(LAT2, LAYER_N, QuasiMomentum(xi, 0.0), lambda_rule(abs(tau)))
        gap = np.abs(h_values(modes, tau).imag).min() - 2 * PI * abs(tau)
        worst = min(worst, gap / (2 * PI * abs(tau)))
    ok = worst >= -C2_ABS
    report(2, ok, f"min (|Im h| - 2pi|tau|)/(2pi|tau|) = {worst:.2e} (>= -{C2_ABS})", t0)


# 3 ---------------------------------------------------------------------------
C3_SLOPE_MAX = -0.9
C3_TAUS = np.geomspace(20, 200, 12)
C3_MAX_BLOCK = 4000


@pytest.mark.slow
def test_criterion_03_thomas_decay_mathieu():
    t0 = time.perf_counter()
    parts, ok = [], True
    for bc in (NEUMANN, DIRICHLET):
        scan = thomas_decay_scan(mathieu(bc), C3_TAUS)
        mat = assemble_thomas(mathieu(bc), QuasiMomentum([0.0], 20.0), scan.lambda_max)
        block = max(len(b) for b in mat.blocks())
        prod = float(np.max(scan.norms * scan.taus))
        good = scan.slope <= C3_SLOPE_MAX and math.isfinite(prod) and block <= C3_MAX_BLOCK
        ok &= good
        parts.append(f"{bc}: slope {scan.slope:.4f} max norm*tau {prod:.4f} max block {block}")
    report(3, ok, "; ".join(parts) + f" (slope <= {C3_SLOPE_MAX})", t0)


# 4 ---------------------------------------------------------------------------
C4_K = (10, 60)
C4_TARGET, C4_TOL = 1.0, 0.2


def test_criterion_04_flat_torus_sup_exponent():
    t0 = time.perf_counter()
    ctx = build_modes(None, torus3(), QuasiMomentum(np.zeros(0)), C4_K[1] ** 2)
    ks = np.arange(C4_K[0], C4_K[1] + 1)
    reps = [cluster_norm(cluster_members(ctx, k), math.inf) for k in ks]
    vol = (2 * PI) ** 3
    exact = all(abs(r.lower - math.sqrt(r.rank / vol)) <= 1e-13 * r.lower for r in reps)
    fit = condition_Aq_fit(ks, [r.lower for r in reps], math.inf)
    ok = exact and abs(fit.slope - C4_TARGET) <= C4_TOL
    report(4, ok, f"slope {fit.slope:.4f} (target {C4_TARGET} +- {C4_TOL}), sqrt(N_k/vol) exact: {exact}", t0)


# 5 ---------------------------------------------------------------------------
C5_K = (10, 40)
C5_TARGET, C5_TOL = 1.0, 0.25


def test_criterion_05_product_interval_torus():
    t0 = time.perf_counter()
    parts, ok = [], True
    for bc in (DIRICHLET, NEUMANN):
        spec = IntervalTimesTorus(Interval(PI, bc), FlatTorus(2 * PI * np.eye(2)))
        ctx = build_modes(None, spec, QuasiMomentum(np.zeros(0)), C5_K[1] ** 2)
        ks = np.arange(C5_K[0], C5_K[1] + 1)
        norms = [cluster_norm(cluster_members(ctx, k), math.inf).lower for k in ks]
        fit = condition_Aq_fit(ks, norms, math.inf)
        ok &= abs(fit.slope - C5_TARGET) <= C5_TOL
        parts.append(f"{bc}: slope {fit.slope:.4f}")
    report(5, ok, "; ".join(parts) + f" (target {C5_TARGET} +- {C5_TOL})", t0)


# 6 ---------------------------------------------------------------------------
C6_K = (6, 20)
C6_STARTS = 32
C6_MAX_ITER = 10
C6_THRESHOLD = 0.5


@pytest.mark.slow
def test_criterion_06_condition_window():
    t0 = time.perf_counter()
    ctx = build_modes(None, torus3(), QuasiMomentum(np.zeros(0)), C6_K[1] ** 2)
    ks = np.arange(C6_K[0], C6_K[1] + 1)
    q4 = [cluster_norm(cluster_members(ctx, k), 4.0, starts=C6_STARTS, seed=0, max_iter=C6_MAX_ITER) for k in ks]
    qi = [cluster_norm(cluster_members(ctx, k), math.inf) for k in ks]
    f4 = condition_Aq_fit(ks, [r.lower for r in q4], 4.0)
    fi = condition_Aq_fit(ks, [r.lower for r in qi], math.inf)
    bracket = all(r.lower <= r.upper for r in q4)
    ok = f4.slope < C6_THRESHOLD and fi.slope > C6_THRESHOLD and bracket
    report(6, ok, f"q=4 slope {f4.slope:.4f} (< {C6_THRESHOLD}), q=inf slope {fi.slope:.4f} (> {C6_THRESHOLD})", t0)


# 7 ---------------------------------------------------------------------------
C7_EPS = 0.1
C7_TAUS = np.geomspace(2, 1e4, 50)
C7_SPLIT = 1e3
C7_SPOTS = (2.0, 37.5, 5000.0)
C7_REF_TOL = 1e-8


def test_criterion_07_lemma_sums_uniform():
    t0 = time.perf_counter()
    sums = [lemma_sums(C7_EPS, t) for t in C7_TAUS]
    s1 = np.array([s.s1 for s in sums])
    s2 = np.array([s.s2 for s in sums])
    finite = bool(np.all(np.isfinite(s1)) and np.all(np.isfinite(s2)))
    hi, lo = C7_TAUS >= C7_SPLIT, C7_TAUS < C7_SPLIT
    uniform = s1[hi].max() <= s1[lo].max() and s2[hi].max() <= s2[lo].max()
    dev = 0.0
    for t in C7_SPOTS:
        s = lemma_sums(C7_EPS, t)
        dev = max(dev, abs(s.s1 - lemma_sum_mp(C7_EPS, t, 0)), abs(s.s2 - lemma_sum_mp(C7_EPS, t, 1)))
    ok = finite and uniform and dev <= C7_REF_TOL
    report(7, ok, f"max S1 {s1.max():.6f} S2 {s2.max():.6f}, high-tau max <= low-tau max: {uniform}, "
                  f"reference deviation {dev:.1e} (<= {C7_REF_TOL})", t0)


# 8 ---------------------------------------------------------------------------
C8_EPS = 0.1
C8_K_EXACT = 40


def test_criterion_08_weighted_cluster_sum():
    t0 = time.perf_counter()
    ctx = build_modes(LAT2, LAYER_N, QuasiMomentum([0.0, 0.0]), C8_K_EXACT**2)
    vals, slack, consts = [], math.inf, []
    for t in C7_TAUS:
        w = weighted_cluster_sum(C8_EPS, t, ctx, C8_K_EXACT)
        s = lemma_sums(C8_EPS, t)
        # max over k >= 1 of k^(-2 eps) is 1
        bound = s.s1 + s.s2 + w.exceptional_constant * 1.0
        slack = min(slack, bound - w.value)
        vals.append(w.value)
        consts.append(w.exceptional_constant)
    vals = np.array(vals)
    hi, lo = C7_TAUS >= C7_SPLIT, C7_TAUS < C7_SPLIT
    uniform = bool(np.all(np.isfinite(vals)) and vals[hi].max() <= vals[lo].max())
    ok = uniform and slack >= 0
    report(8, ok, f"max value {vals.max():.6f}, high-tau max <= low-tau max: {uniform}, "
                  f"min(S1+S2+C - value) {slack:.4f}, exceptional C in [{min(consts):.4f}, {max(consts):.4f}]", t0)


# 9 ---------------------------------------------------------------------------
C9_TAU = 100.0
C9_SAMPLES = 100
C9_REAL_REL = 1e-10
C9_SLACK = 1e-6


def test_criterion_09_probe_inequality():
    t0 = time.perf_counter()
    pr = Prober(mathieu(), C9_TAU)
    rng = np.random.Generator(np.random.Philox(key=99))
    defect, low = 0.0, math.inf
    ratios = []
    for _ in range(C9_SAMPLES):
        r = pr.probe(pr.random_unit(rng))
        defect = max(defect, r.free_imag_defect)
        low = min(low, r.free_term.real)
        ratios.append(r.ratio)
    ok = defect <= C9_REAL_REL and low >= 2 * PI * C9_TAU - C9_SLACK
    report(9, ok, f"max |Im|/|.| {defect:.1e} (<= {C9_REAL_REL}), min (H0 u, v) {low:.4f} "
                  f"(>= {2 * PI * C9_TAU - C9_SLACK:.4f}), min ratio {min(ratios):.3f}", t0)


# 10 --------------------------------------------------------------------------
C10_CASES = ((1.6, 0.1), (2.0, 0.5))
C10_POINTWISE = 1e-14


def test_criterion_10_potential_splitting():
    t0 = time.perf_counter()
    grid = cell_grid(LAT1, LAYER_N, 40, 64)
    w = grid.weights
    y = grid.y_points[:, 0]
    two_level = np.broadcast_to(np.where(y < 0.5, 1.0, 10.0), grid.shape)
    cosine = PotentialSpec.mathieu(LAT1, LAYER_N).evaluate(grid)
    ok, parts = True, []
    for name, V in (("two-level", two_level), ("2cos", cosine)):
        for p, delta in C10_CASES:
            r = split_by_level(V, w, p, delta)
            direct = float(np.sum(w * np.abs(r.v1) ** p) ** (1 / p))
            pw = float(np.abs(r.v1 + r.v2 - V).max())
            good = r.norm_v1 <= delta and direct <= delta and pw <= C10_POINTWISE
            ok &= good
            parts.append(f"{name} p={p} d={delta}: t={r.level:.4g} |V1|={direct:.4g}")
    report(10, ok, "; ".join(parts), t0)


# 11 --------------------------------------------------------------------------
C11_SCALE_REL = 1e-10
C11_SCALES = (0.25, 4.0, 9.0)


def test_criterion_11_robin_trace_decay():
    t0 = time.perf_counter()
    model = Model(LAT1, LAYER_N)
    sigma = BoundarySigma.cosine(LAT1, 1.0)
    rep = robin_trace_decay(model, sigma, [20.0, 200.0])
    c20, c200 = rep.values
    lam = lambda_rule(200.0)
    scale_dev = 0.0
    for s in C11_SCALES:
        scaled = robin_trace_decay(model, sigma.scaled(s), [20.0, 200.0], lambda_max=lam)
        scale_dev = max(scale_dev, float(np.max(np.abs(scaled.values - math.sqrt(s) * rep.values) / rep.values)))
    ok = c200 < c20 / 2 and scale_dev <= C11_SCALE_REL
    report(11, ok, f"c(20) {c20:.6f} c(200) {c200:.6f} ratio {c200 / c20:.4f} (< 0.5), "
                   f"scaling dev {scale_dev:.1e} (<= {C11_SCALE_REL})", t0)


# 12 --------------------------------------------------------------------------
C12_BANDS = 8
C12_GRID = np.linspace(0.0, 2 * PI, 64)
C12_MIN_TV = 1e-6
C12_LAMBDA = 400.0


def test_criterion_12_band_indicator():
    t0 = time.perf_counter()
    ind = band_ac_indicator(mathieu(), C12_BANDS, C12_GRID, C12_LAMBDA)
    cross = LAYER_N
    flat_model = Model(LAT1, cross, PotentialSpec.mathieu(LAT1, cross), direct_sum_levels=(-3.0,))
    flat = band_ac_indicator(flat_model, C12_BANDS, C12_GRID, C12_LAMBDA)
    ok = bool(ind.variation.min() > C12_MIN_TV) and flat.flat_bands.size > 0
    report(12, ok, f"min band variation {ind.variation.min():.4f} (> {C12_MIN_TV}), "
                   f"counterexample flagged bands {flat.flat_bands.tolist()}", t0)


# 13 --------------------------------------------------------------------------
C13_HERM = 1e-10
C13_STABLE = 1e-6
C13_LAMBDA = 400.0


def test_criterion_13_hermiticity_and_convergence():
    t0 = time.perf_counter()
    herm, drift = 0.0, 0.0
    for theta in (0.0, 0.7, PI):
        qm = QuasiMomentum([0.0], 0.0, theta)
        a = assemble(mathieu(), qm, C13_LAMBDA)
        A = a.to_dense()
        herm = max(herm, float(np.abs(A - A.conj().T).max() / np.linalg.norm(A, 2)))
        lo = eigenvalues(a, 8)
        hi = eigenvalues(assemble(mathieu(), qm, 2 * C13_LAMBDA), 8)
        drift = max(drift, float(np.abs(lo - hi).max()))
    ok = herm <= C13_HERM and drift <= C13_STABLE
    report(13, ok, f"hermiticity defect {herm:.1e} (<= {C13_HERM}), eigenvalue drift {drift:.1e} (<= {C13_STABLE})", t0)


# 14 --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_14_determinism(tmp_path):
    t0 = time.perf_counter()
    configs = sorted((ROOT / "configs").glob("*.yaml"))
    same, codes = True, {}
    for cfg in configs:
        outs = []
        for run in ("a", "b"):
            out = tmp_path / cfg.stem / run
            codes[cfg.stem] = cli_main(["run", "--config", str(cfg), "--out", str(out)])
            outs.append(out)
        for csv in outs[0].glob("*.csv"):
            same &= filecmp.cmp(csv, outs[1] / csv.name, shallow=False)
    ok = same and all(c == 0 for c in codes.values())
    report(14, ok, f"{len(configs)} configs re-run, CSV bytes identical: {same}, exit codes {sorted(set(codes.values()))}", t0)
