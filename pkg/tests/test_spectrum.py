import numpy as np
import pytest

from cgaopt import field_net as fn
from cgaopt.errors import InvalidArgument
from cgaopt.mesh import build_grid, element_centers
from cgaopt.spectrum import (band_energy_ratio, bernstein_audit, dft2, field_to_lattice, network_period_spectrum,
                             parse_report, report_lines)


def lattice(nx=120, ny=60, lx=2.0, ly=1.0):
    g = build_grid(nx, ny, lx, ly)
    c = element_centers(g)
    return g, c[:, 0].reshape(ny, nx), c[:, 1].reshape(ny, nx)


def test_constant_field_all_dc():
    rep = dft2(np.full((6, 8), 0.7), 2.0, 1.0)
    e = rep.energy[0]
    assert e[0, 0] == pytest.approx(e.sum(), rel=1e-14)
    assert rep.ac_energy()[0] == pytest.approx(0.0, abs=1e-12)
    assert band_energy_ratio(rep, 0.0, 0.0) == 0.0


def test_frequency_axes_in_cycles_per_length():
    rep = dft2(np.zeros((60, 120)), 2.0, 1.0)
    assert rep.fx[1] == pytest.approx(0.5) and rep.fy[1] == pytest.approx(1.0)
    assert np.abs(rep.fx).max() == pytest.approx(30.0)


def test_pure_tone_single_symmetric_peak():
    _, X, _ = lattice()
    rep = dft2(np.sin(2 * np.pi * 3 * X), 2.0, 1.0)
    e = rep.energy[0]
    iy, ix = np.nonzero(e > 1e-9 * e.max())
    assert set(iy.tolist()) == {0}
    assert sorted(rep.fx[ix].tolist()) == pytest.approx([-3.0, 3.0])
    assert band_energy_ratio(rep, 5.0, 5.0) < 1e-3
    assert band_energy_ratio(rep, 2.0, 5.0) == pytest.approx(1.0, abs=1e-12)


def test_parseval():
    f = np.random.default_rng(0).normal(size=(30, 50, 2))
    rep = dft2(f, 2.0, 1.0)
    spatial = (f**2).sum(axis=(0, 1))
    assert np.allclose(rep.total_energy(), spatial, rtol=1e-10, atol=0)


def test_white_noise_out_of_band_matches_area_fraction():
    rng = np.random.default_rng(1)
    rep = dft2(rng.normal(size=(60, 120)), 2.0, 1.0)
    fx, fy = np.meshgrid(rep.fx, rep.fy)
    out = (np.abs(fx) > 5) | (np.abs(fy) > 5)
    expected = (out.sum()) / (out.size - 1)
    assert band_energy_ratio(rep, 5.0, 5.0) == pytest.approx(expected, rel=0.1)


def test_out_of_band_per_axis():
    _, X, Y = lattice()
    rep = dft2(np.sin(2 * np.pi * 8 * X) + np.sin(2 * np.pi * 2 * Y), 2.0, 1.0)
    oob = rep.out_of_band(5.0, 5.0)
    assert oob["x"][0] == pytest.approx(0.5, abs=1e-9)
    assert oob["y"][0] == pytest.approx(0.0, abs=1e-12)
    assert oob["joint"][0] == pytest.approx(0.5, abs=1e-9)


def test_field_to_lattice_order():
    g, X, _ = lattice(4, 3)
    arr = field_to_lattice(element_centers(g)[:, 0], g)
    assert np.array_equal(arr[:, :, 0], X)
    with pytest.raises(InvalidArgument):
        field_to_lattice(np.zeros(5), g)


def test_network_band_limit_over_period():
    cfg = fn.MfnConfig(n_layers=3, width=20, n_out=2, bandwidth=(5.0, 5.0), seed=3, period=(8.0, 4.0))
    p = fn.init_mfn(cfg)
    rng = np.random.default_rng(0)
    p = fn.trainable_load(p, rng.normal(scale=0.3, size=fn.n_trainable(cfg)))
    rep = network_period_spectrum(p, oversample=4)
    assert band_energy_ratio(rep, 5.0, 5.0) < 1e-12
    assert rep.ac_energy().min() > 0
    # a tighter band does cut energy, so the check is not vacuous
    assert band_energy_ratio(rep, 2.0, 2.0) > 1e-3
    with pytest.raises(InvalidArgument):
        network_period_spectrum(fn.init_mfn(fn.MfnConfig()))


def single_tone(B):
    cfg = fn.MfnConfig(n_layers=1, width=1, n_out=1, bandwidth=(B, 0.0))
    p = fn.init_mfn(cfg)
    p.omega[0][:] = [[2 * np.pi * B, 0.0]]
    p.phi[0][:] = 0.0
    p.W_out[:] = 0.8
    p.b_out[:] = 0.0
    return p


def test_audit_fresh_network_trivially_passes():
    g = build_grid(12, 6, 2, 1)
    a = bernstein_audit(fn.init_mfn(fn.MfnConfig(width=8)), g)
    assert np.all(a.max_grad == 0) and a.passed
    assert a.n_samples == (25, 13)


def test_audit_single_tone_attains_bound():
    g = build_grid(40, 20, 2, 1)
    a = bernstein_audit(single_tone(5.0), g)
    # samples hit x = 0 where the derivative of 0.8 sin(10 pi x) peaks
    assert a.max_grad[0, 0] == pytest.approx(2 * np.pi * 5 * 0.8, rel=1e-12)
    assert a.amplitude[0] == pytest.approx(0.8, rel=1e-3)
    assert a.passed
    x, y = a.argmax[0, 0]
    jac = fn.spatial_jacobian(single_tone(5.0), [[x, y]])
    assert abs(jac[0, 0, 0]) == a.max_grad[0, 0]


def test_audit_detects_violation():
    g = build_grid(40, 20, 2, 1)
    a = bernstein_audit(single_tone(5.0), g, bandwidth=(4.0, 4.0))
    assert not a.passed and not a.passes[0, 0] and a.passes[0, 1]


def test_audit_monotone_in_bandwidth():
    g = build_grid(40, 20, 2, 1)
    maxima = [bernstein_audit(single_tone(B), g).max_grad[0, 0] for B in (1.0, 2.0, 5.0)]
    assert maxima == sorted(maxima)


def test_report_round_trip():
    _, X, _ = lattice(24, 12)
    rep = dft2(np.cos(2 * np.pi * X), 2.0, 1.0)
    audit = bernstein_audit(single_tone(2.0), build_grid(24, 12, 2, 1))
    text = "\n".join(report_lines(rep, (5.0, 5.0), audit, extra={"mode": "neural"}))
    kv = parse_report(text)
    assert kv["mode"] == "neural"
    assert kv["audit.passed"] == "true"
    assert float(kv["spectrum.out_of_band"]) < 1e-12
    assert float(kv["audit.c0.max_grad_x"]) == pytest.approx(audit.max_grad[0, 0], rel=1e-11)
