import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import fresnel

from l1imaging.errors import ConfigError, DimensionError, NearSingularError, SingularityError
from l1imaging.geometry import build_geometry
from l1imaging.sensing import paraxial_columns
from l1imaging.wavemodel import (
    ParaxialScales,
    ScattererScene,
    SourceScene,
    foldy_lax_solve,
    fresnel_integral,
    fresnel_U,
    greens,
    load_data_csv,
    load_scene,
    paraxial_gram,
    paraxial_gram_offset,
    pulse_spectrum,
    save_data_csv,
    save_scene,
    strip_factors,
    stripped_columns,
    synthesize_data,
)


def fresnel_closed_form(beta, eta):
    """Integral of exp(-i beta t - i eta t^2) over [-1/2, 1/2] via scipy's Fresnel S, C."""
    if eta == 0:
        return 1.0 + 0j if beta == 0 else 2 * math.sin(beta / 2) / beta
    if eta < 0:
        return np.conj(fresnel_closed_form(-beta, -eta))
    # complete the square: eta (t + b)^2 - eta b^2 with b = beta / (2 eta)
    b = beta / (2 * eta)
    k = math.sqrt(2 * eta / math.pi)
    S1, C1 = fresnel(k * (0.5 + b))
    S0, C0 = fresnel(k * (-0.5 + b))
    core = math.sqrt(math.pi / (2 * eta)) * ((C1 - C0) - 1j * (S1 - S0))
    return np.exp(1j * eta * b * b) * core


def fresnel_adaptive(beta, eta):
    re = quad(lambda t: math.cos(beta * t + eta * t * t), -0.5, 0.5, epsabs=1e-13, limit=400)[0]
    im = quad(lambda t: -math.sin(beta * t + eta * t * t), -0.5, 0.5, epsabs=1e-13, limit=400)[0]
    return re + 1j * im


@settings(max_examples=300, deadline=None)
@given(st.floats(-400, 400), st.floats(-400, 400))
def test_fresnel_integral_matches_oracle(beta, eta):
    got = fresnel_integral(beta, eta)
    # the closed form cancels catastrophically for tiny nonzero eta
    oracle = fresnel_closed_form(beta, eta) if eta == 0 or abs(eta) >= 0.01 else fresnel_adaptive(beta, eta)
    assert abs(got - oracle) < 1e-9


def test_fresnel_integral_special_values():
    assert fresnel_integral(0.0, 0.0) == pytest.approx(1.0)
    assert fresnel_integral(2 * math.pi, 0.0) == pytest.approx(0.0, abs=1e-14)
    b = np.linspace(-30, 30, 7)
    e = np.linspace(-5, 5, 7)
    vec = fresnel_integral(b[:, None], e[None, :])
    assert vec.shape == (7, 7)
    assert vec[3, 2] == pytest.approx(fresnel_integral(b[3], e[2]))


@given(st.floats(-200, 200), st.floats(-200, 200))
def test_fresnel_U_symmetries_and_range(beta, eta):
    u = fresnel_U(beta, eta)
    assert 0 <= u <= 1
    assert fresnel_U(-beta, eta) == pytest.approx(u, abs=1e-12)
    assert fresnel_U(beta, -eta) == pytest.approx(u, abs=1e-12)


def test_fresnel_rejects_nonfinite():
    with pytest.raises(ValueError):
        fresnel_integral(np.nan, 1.0)


def test_greens_value_and_symmetry():
    x, y = np.array([0.0, 0, 0]), np.array([3.0, 4.0, 0])
    assert greens(2.0, x, y) == pytest.approx(np.exp(10j) / (20 * math.pi))
    assert greens(2.0, x, y) == greens(2.0, y, x)
    with pytest.raises(SingularityError):
        greens(1.0, x, x)


def test_greens_solves_helmholtz_away_from_source():
    k = 2 * math.pi
    y = np.zeros(3)
    x = np.array([0.7, -0.4, 1.3])
    step = 1e-3
    lap = -6 * greens(k, x, y)
    for ax in range(3):
        e = np.zeros(3)
        e[ax] = step
        lap += greens(k, x + e, y) + greens(k, x - e, y)
    lap /= step * step
    assert abs(lap + k * k * greens(k, x, y)) < 1e-4 * k * k * abs(greens(k, x, y))


def test_paraxial_kernel_matches_dense_receiver_sum():
    # receiver sum over a dense lattice is an independent quadrature of the aperture integral
    geom = build_geometry({"aperture": 25, "range": 1000, "mesh": [10, 60], "cells": [3, 3, 3],
                           "array_spacing": 0.25})
    pts = geom.grid.points
    cols = paraxial_columns(geom, pts)
    G = cols.conj().T @ cols
    sc = ParaxialScales.from_geometry(geom)
    off = pts[None, :, :] - pts[:, None, :]
    K = paraxial_gram_offset(sc, off)
    # a lattice of n points spanning [-a/2, a/2] is a quadrature with endpoint weight error O(1/n)
    assert np.max(np.abs(G - K)) < 0.02
    assert paraxial_gram(geom, pts[0], pts[5]) == pytest.approx(K[0, 5])


def test_paraxial_offset_zero_is_one():
    sc = ParaxialScales(1.0, 1.0, 1.0, 1.0)
    assert paraxial_gram_offset(sc, [0.0, 0.0, 0.0]) == pytest.approx(1.0)


def test_strip_factors_relation(small_geom):
    pts = small_geom.grid.points[:5]
    raw = stripped_columns(small_geom, pts) * strip_factors(small_geom, pts)[None, :]
    direct = greens(small_geom.k0, small_geom.array.receiver_positions[:, None, :], pts[None, :, :])
    assert np.allclose(raw, direct)
    assert np.allclose(np.abs(strip_factors(small_geom, pts)), 1)


def test_pulse_spectrum_peak(multi_geom):
    f = pulse_spectrum(multi_geom)
    assert f.max() == pytest.approx(1.0)
    assert np.all(f > 0)


def test_foldy_lax_single_scatterer_is_incident_field():
    sc = ScattererScene([[0, 0, 100.0]], [0.5])
    u = foldy_lax_solve(sc, 2 * math.pi, [0, 0, 0])
    assert u[0] == pytest.approx(greens(2 * math.pi, [0, 0, 0], [0, 0, 100.0]))


def test_foldy_lax_self_consistency(rng):
    y = np.array([[0, 0, 100.0], [0.7, 0.1, 100.4], [-0.3, 0.5, 99.6]])
    refl = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    xe = np.array([1.0, 2.0, 0.0])
    k = 2 * math.pi
    u = foldy_lax_solve(ScattererScene(y, refl), k, xe)
    for j in range(3):
        rhs = greens(k, xe, y[j]) + sum(greens(k, y[j], y[l]) * refl[l] * u[l] for l in range(3) if l != j)
        assert u[j] == pytest.approx(rhs, rel=1e-10)


def test_foldy_lax_near_singular_raises():
    k = 2 * math.pi
    y = np.array([[0, 0, 100.0], [0.3, 0, 100.0]])
    g12 = greens(k, y[0], y[1])
    with pytest.raises(NearSingularError):
        foldy_lax_solve(ScattererScene(y, [1 / g12, 1 / g12]), k, [0, 0, 0])


def test_scatterer_scene_validation():
    with pytest.raises(ConfigError):
        ScattererScene([[0, 0, 1.0], [0, 0, 1.0]], [1, 1])
    with pytest.raises(DimensionError):
        SourceScene([[0, 0, 1.0]], [1, 2])


def test_synthesize_sources_is_linear_sum(small_geom, rng):
    pts = small_geom.grid.points[[1, 9, 20]]
    amps = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    d = synthesize_data(SourceScene(pts, amps), small_geom)
    G = greens(small_geom.k0, small_geom.array.receiver_positions[:, None, :], pts[None, :, :])
    assert np.allclose(d, G @ amps)


def test_synthesize_noise_norm_and_seed(small_geom):
    scene = SourceScene(small_geom.grid.points[[2]], [1.0])
    clean = synthesize_data(scene, small_geom)
    a = synthesize_data(scene, small_geom, noise_level=0.1, seed=5)
    b = synthesize_data(scene, small_geom, noise_level=0.1, seed=5)
    assert np.array_equal(a, b)
    assert np.linalg.norm(a - clean) == pytest.approx(0.1 * np.linalg.norm(clean))


def test_born_is_weak_scattering_limit_of_foldy_lax(small_geom):
    geom = build_geometry({"aperture": 25, "range": 1000, "mesh": [10, 60], "cells": [4, 4, 2],
                           "array_spacing": 2.5, "emitter": [0, 0, 0]})
    pts = geom.grid.points[[0, 1]]
    scene = ScattererScene(pts, [1e-3, 2e-3])
    born = synthesize_data(scene, geom, "born")
    fl = synthesize_data(scene, geom, "foldy_lax")
    assert np.linalg.norm(born - fl) < 1e-5 * np.linalg.norm(born)


def test_multi_frequency_rows_are_frequency_major(multi_geom):
    pts = multi_geom.grid.points[[0]]
    cols = stripped_columns(multi_geom, pts)
    Mr = multi_geom.n_receivers
    assert cols.shape[0] == Mr * len(multi_geom.frequencies)
    w1 = multi_geom.frequencies[1]
    f1 = pulse_spectrum(multi_geom)[1]
    expect = f1 * greens(w1, multi_geom.array.receiver_positions, pts[0], multi_geom.sound_speed_c)
    assert np.allclose(cols[Mr:2 * Mr, 0] * strip_factors(multi_geom, pts)[0], expect)


def test_data_and_scene_roundtrip(tmp_path, rng):
    d = rng.standard_normal(7) + 1j * rng.standard_normal(7)
    save_data_csv(tmp_path / "d.csv", d)
    assert np.array_equal(load_data_csv(tmp_path / "d.csv"), d)
    scene = SourceScene([[0, 0, 1.0], [1, 2, 3.0]], [1 + 2j, -0.5])
    save_scene(tmp_path / "s.json", scene)
    back = load_scene(tmp_path / "s.json")
    assert np.array_equal(back.positions, scene.positions)
    assert np.array_equal(back.amplitudes, scene.amplitudes)
