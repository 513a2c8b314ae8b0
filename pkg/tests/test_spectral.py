import json

import numpy as np
import pytest

from wavepot.spectral import (
    PotentialField,
    QuadratureRule,
    WaveField,
    current_density,
    forward_transform,
    fourier_modes,
    gamma_norm,
    inverse_transform,
    l2_norm,
    load_field_csv,
    load_field_json,
    make_grid,
    position_density,
    save_field_csv,
    save_field_json,
)
from wavepot.tssp import gaussian_packet


def test_make_grid_basic():
    g = make_grid(-np.pi / 2, np.pi / 2, 1000)
    assert g.h == pytest.approx(np.pi / 1000, abs=1e-15)
    assert g.points[0] == pytest.approx(-np.pi / 2, abs=1e-15)
    assert g.points.size == 1000


def test_make_grid_equal_spacing():
    g = make_grid(0.0, 2 * np.pi, 4)
    assert np.allclose(g.points, [0, np.pi / 2, np.pi, 3 * np.pi / 2], atol=1e-15)
    d = np.diff(g.points)
    assert np.all(d > 0)
    assert np.allclose(d, d[0], atol=1e-15)


@pytest.mark.parametrize("a,b,M", [(0, 1, 5), (0, 1, 2), (1, 1, 8), (2, 1, 8)])
def test_make_grid_rejects(a, b, M):
    with pytest.raises(ValueError):
        make_grid(a, b, M)


def test_fourier_modes_values():
    g = make_grid(0.0, 2 * np.pi, 4)
    mu = fourier_modes(g)
    assert sorted(mu) == [-2, -1, 0, 1]
    # FFT layout: 0, 1, .., M/2-1, -M/2, .., -1
    assert np.allclose(mu, [0, 1, -2, -1])

    g8 = make_grid(-np.pi / 2, np.pi / 2, 8)
    assert fourier_modes(g8)[1] == pytest.approx(2.0)
    assert np.max(np.abs(fourier_modes(g8))) == pytest.approx(
        np.pi * 8 / (g8.b - g8.a)
    )


def test_forward_transform_constant_and_single_mode():
    g = make_grid(0.0, 2 * np.pi, 8)
    c = 1.3 - 0.4j
    coeffs = forward_transform(WaveField(g, np.full(8, c)))
    assert coeffs[0] == pytest.approx(8 * c, abs=1e-13)
    assert np.max(np.abs(coeffs[1:])) < 1e-13

    mu = fourier_modes(g)
    f = WaveField(g, np.exp(1j * mu[1] * (g.points - g.a)))
    coeffs = forward_transform(f)
    assert coeffs[1] == pytest.approx(8.0, abs=1e-12)
    assert np.max(np.abs(np.delete(coeffs, 1))) < 1e-12


def test_transform_roundtrip_random():
    g = make_grid(-1.0, 3.0, 64)
    rng = np.random.default_rng(42)
    vals = rng.normal(size=64) + 1j * rng.normal(size=64)
    f = WaveField(g, vals)
    back = inverse_transform(g, forward_transform(f))
    err = np.max(np.abs(back.values - vals))
    assert err < 1e-13 * np.max(np.abs(vals))


def test_parseval():
    g = make_grid(0.0, 1.0, 32)
    rng = np.random.default_rng(7)
    f = WaveField(g, rng.normal(size=32) + 1j * rng.normal(size=32))
    lhs = g.h * np.sum(np.abs(f.values) ** 2)
    rhs = (g.h / g.M) * np.sum(np.abs(forward_transform(f)) ** 2)
    assert rhs == pytest.approx(lhs, rel=1e-12)


def test_position_density():
    g = make_grid(0.0, 1.0, 8)
    f = WaveField(g, np.exp(1j * np.linspace(0, 2, 8)))
    assert np.allclose(position_density(f), 1.0, atol=1e-14)

    vals = np.zeros(8, dtype=complex)
    vals[3] = 3 + 4j
    assert position_density(WaveField(g, vals))[3] == pytest.approx(25.0)

    rng = np.random.default_rng(1)
    f = WaveField(g, rng.normal(size=8) + 1j * rng.normal(size=8))
    n = position_density(f)
    assert np.all(n >= 0)
    assert g.h * n.sum() == pytest.approx(l2_norm(f) ** 2, rel=1e-12)


def test_current_density_real_field_and_plane_wave():
    g = make_grid(-np.pi / 2, np.pi / 2, 64)
    f = WaveField(g, np.cos(2 * g.points) + 0j)
    assert np.max(np.abs(current_density(f, 0.5))) < 1e-12

    mu = fourier_modes(g)
    pw = WaveField(g, np.exp(1j * mu[1] * (g.points - g.a)))
    J = current_density(pw, 0.5)
    assert np.allclose(J, 0.5 * mu[1], atol=1e-10)


def test_current_density_gaussian_vs_fd_oracle():
    # J for a Gaussian with phase e^{i p0 x / eps} equals p0 * n; also check
    # the spectral derivative against a dense central-difference derivative
    eps, p0 = 0.2, 0.8
    g = make_grid(-np.pi / 2, np.pi / 2, 2048)
    f = gaussian_packet(g, delta=0.2, x0=0.0, p0=p0, eps=eps)
    J = current_density(f, eps)
    n = position_density(f)
    assert np.max(np.abs(J - p0 * n)) < 1e-10

    dpsi_fd = (np.roll(f.values, -1) - np.roll(f.values, 1)) / (2 * g.h)
    J_fd = eps * np.imag(np.conj(f.values) * dpsi_fd)
    assert np.max(np.abs(J - J_fd)) < 1e-4 * np.max(np.abs(J))


def test_l2_norm():
    g = make_grid(-np.pi / 2, np.pi / 2, 128)
    assert l2_norm(WaveField(g, np.zeros(128))) == 0.0
    ones = WaveField(g, np.ones(128, dtype=complex))
    assert l2_norm(ones) == pytest.approx(np.sqrt(np.pi), rel=1e-13)
    packet = gaussian_packet(g, delta=0.2)
    assert l2_norm(packet) == pytest.approx(1.0, abs=1e-10)


def test_gamma_norm():
    g = make_grid(-np.pi / 2, np.pi / 2, 32)
    rng = np.random.default_rng(3)
    f = WaveField(g, rng.normal(size=32) + 1j * rng.normal(size=32))

    single = QuadratureRule(np.array([0.0]), np.array([2.0]))
    assert gamma_norm([f], single) == l2_norm(f)

    rule = QuadratureRule(
        np.array([-0.5, 0.5]), np.array([1.0, 1.0])
    )
    zero = WaveField(g, np.zeros(32))
    assert gamma_norm([zero, zero], rule) == 0.0
    assert gamma_norm([f, f], rule) == pytest.approx(l2_norm(f), rel=1e-14)
    with pytest.raises(ValueError):
        gamma_norm([f], rule)


def test_quadrature_rule_validation():
    with pytest.raises(ValueError):
        QuadratureRule(np.array([-0.5, 0.5]), np.array([1.0, 0.5]))  # sum != 2
    with pytest.raises(ValueError):
        QuadratureRule(np.array([0.5, -0.5]), np.array([1.0, 1.0]))  # not increasing
    with pytest.raises(ValueError):
        QuadratureRule(np.array([-0.5, 0.4]), np.array([1.0, 1.0]))  # asymmetric


def test_field_validation():
    g = make_grid(0.0, 1.0, 8)
    with pytest.raises(ValueError):
        WaveField(g, np.zeros(7))
    with pytest.raises(ValueError):
        PotentialField(g, np.full(8, np.inf))


def test_serialization_roundtrip(tmp_path):
    g = make_grid(-np.pi / 2, np.pi / 2, 16)
    rng = np.random.default_rng(11)
    f = WaveField(g, rng.normal(size=16) + 1j * rng.normal(size=16))

    p = tmp_path / "f.json"
    save_field_json(f, p)
    back = load_field_json(p)
    assert back.grid == f.grid
    assert np.array_equal(back.values, f.values)

    c = tmp_path / "f.csv"
    save_field_csv(f, c)
    back = load_field_csv(c, grid=g)
    assert np.array_equal(back.values, f.values)
    back2 = load_field_csv(c)
    assert np.array_equal(back2.values, f.values)


def test_json_record_shape(tmp_path):
    g = make_grid(0.0, 1.0, 4)
    f = WaveField(g, np.arange(4) * (1 + 1j))
    p = tmp_path / "f.json"
    save_field_json(f, p)
    rec = json.loads(p.read_text())
    assert set(rec) == {"a", "b", "M", "values"}
    assert rec["M"] == 4
    assert rec["values"][2] == [2.0, 2.0]
