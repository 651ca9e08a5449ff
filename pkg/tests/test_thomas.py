import math

import numpy as np
import pytest

from thomas_lab.cross_section import DIRICHLET, NEUMANN, Interval
from thomas_lab.free_operator import QuasiMomentum, h_values, lambda_rule
from thomas_lab.galerkin import Model, assemble_thomas, resolvent_norm
from thomas_lab.lattice import Lattice
from thomas_lab.potential import BoundarySigma, PotentialSpec
from thomas_lab.thomas import (
    Prober,
    band_ac_indicator,
    lower_bound_probe,
    robin_trace_decay,
    thomas_decay_scan,
    trace_constant,
    xi_perp_samples,
)

PI = math.pi
LAT1 = Lattice([[1.0]])
LAYER = Interval(PI, NEUMANN)
MATHIEU = Model(LAT1, LAYER, PotentialSpec.mathieu(LAT1, LAYER))
FREE2 = Model(Lattice(np.eye(2)), LAYER)


def test_free_scan_bound_and_slope():
    taus = np.geomspace(20, 200, 6)
    scan = thomas_decay_scan(FREE2, taus)
    assert np.all(scan.norms * 2 * PI * taus <= 1 + 1e-12)
    assert abs(scan.slope + 1) <= scan.residual + 1e-6
    assert [r["tau"] for r in scan.rows()] == taus.tolist()


def test_lambda_plumbing_on_free_model():
    taus = [3.0, 7.0]
    a = thomas_decay_scan(FREE2, taus, lam=5.0)
    for t, r in zip(taus, a.norms):
        modes = FREE2.modes(QuasiMomentum([0.0, 0.0]), lambda_rule(7.0))
        assert r == pytest.approx(1 / np.abs(h_values(modes, t) - 5.0).min(), rel=1e-14)


def test_scan_rejects_bad_grids():
    with pytest.raises(ValueError):
        thomas_decay_scan(FREE2, [0.0, 1.0])
    with pytest.raises(ValueError):
        thomas_decay_scan(FREE2, [3.0, 2.0])


def test_scan_records_non_invertible_points():
    # a direct-sum level equal to lam makes the matrix exactly singular
    model = Model(LAT1, LAYER, direct_sum_levels=(2.0,))
    scan = thomas_decay_scan(model, [5.0, 10.0, 20.0], lam=2.0)
    assert np.all(np.isinf(scan.norms))
    assert math.isnan(scan.slope)


def test_scan_uses_one_truncation_and_matches_fresh_assembly():
    scan = thomas_decay_scan(MATHIEU, [10.0, 30.0])
    fresh = assemble_thomas(MATHIEU, QuasiMomentum([0.0], 10.0), lambda_rule(30.0))
    assert scan.norms[0] == pytest.approx(resolvent_norm(fresh), rel=1e-12)


def test_probe_free_model_equals_abs_h():
    pr = Prober(FREE2, 40.0)
    rng = np.random.Generator(np.random.Philox(key=2))
    for _ in range(5):
        u = pr.random_unit(rng)
        r = pr.probe(u)
        want = float(np.sum(np.abs(pr.h) * np.abs(u) ** 2))
        assert r.free_term.real == pytest.approx(want, rel=1e-13)
        assert r.free_imag_defect <= 1e-10 and r.free_bound_holds
        assert r.potential_term == 0 and r.boundary_term == 0


def test_probe_single_mode():
    pr = Prober(MATHIEU, 25.0)
    u = np.zeros(len(pr.modes), complex)
    u[17] = 1.0
    r = pr.probe(u)
    assert r.free_term.real == pytest.approx(abs(pr.h[17]), rel=1e-14)


def test_probe_rejects_non_unit():
    pr = Prober(MATHIEU, 5.0)
    with pytest.raises(ValueError):
        pr.probe(np.ones(len(pr.modes)))


def test_lower_bound_probe_reports_c_delta():
    pr = Prober(MATHIEU, 30.0)
    u = pr.random_unit(np.random.Generator(np.random.Philox(key=4)))
    r = lower_bound_probe(MATHIEU, 30.0, u, delta=0.1, p=1.6)
    assert r.c_delta is not None and 0 < r.c_delta <= 2.0
    assert r.inequality_holds


def test_band_indicator_free_and_counterexample():
    thetas = np.linspace(0, 2 * PI, 16)
    free = band_ac_indicator(Model(LAT1, LAYER), 4, thetas, 300)
    assert free.all_dispersive
    flat = band_ac_indicator(Model(LAT1, LAYER, direct_sum_levels=(-3.0,)), 4, thetas, 300)
    assert flat.flat_bands.tolist() == [0]


def test_trace_constant_zero_sigma_and_constant_sigma_decreasing():
    zero = BoundarySigma.constant(LAT1, 0.0)
    assert trace_constant(MATHIEU, zero, 10.0, 500, ny=16) == 0.0
    one = BoundarySigma.constant(LAT1, 1.0)
    rep = robin_trace_decay(Model(LAT1, LAYER), one, [5.0, 10.0, 20.0, 40.0], ny=16)
    assert np.all(np.diff(rep.values) < 0)


def test_trace_constant_constant_sigma_closed_form():
    # sigma = 1 couples n only to itself, so the Gram matrix is block diagonal
    # in n with 2x2 blocks sum_j phi_j(s) phi_j(s') / |h|; check against that.
    lam_max, tau = 400.0, 6.0
    model = Model(LAT1, LAYER)
    modes = model.modes(QuasiMomentum([0.0]), lam_max)
    h = np.abs(h_values(modes, tau))
    ends = modes.cross.interval_values([0.0, PI])
    best = 0.0
    for n in np.unique(modes.n_coords[:, 0]):
        sel = modes.n_coords[:, 0] == n
        phi = ends[:, modes.j[sel]]
        G = (phi / h[sel]) @ phi.T
        best = max(best, np.linalg.eigvalsh(G)[-1])
    assert trace_constant(model, BoundarySigma.constant(LAT1, 1.0), tau, lam_max, ny=32) == pytest.approx(math.sqrt(best), rel=1e-10)


def test_trace_rejects_tau_zero():
    with pytest.raises(ValueError):
        trace_constant(MATHIEU, BoundarySigma.constant(LAT1, 1.0), 0.0, 100)


def test_xi_perp_samples_orthogonal():
    lat = Lattice([[1.0, 0.0], [0.4, 1.2]])
    pts = xi_perp_samples(lat, seed=3)
    assert len(pts) == 3
    for p in pts:
        assert abs(p @ lat.b1) <= 1e-12
    np.testing.assert_array_equal(xi_perp_samples(lat, 3)[2], pts[2])


@pytest.mark.parametrize("bc", [NEUMANN, DIRICHLET])
def test_scan_off_axis_xi(bc):
    lat = Lattice(np.eye(2))
    cross = Interval(PI, bc)
    model = Model(lat, cross, PotentialSpec.mathieu(lat, cross, direction=1))
    for xi in xi_perp_samples(lat, seed=1):
        scan = thomas_decay_scan(model, [20.0, 40.0, 80.0], xi_perp=xi)
        assert np.all(np.isfinite(scan.norms)) and scan.slope < -0.5
