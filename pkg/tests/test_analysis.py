import math

import numpy as np
import pytest

from l1imaging.analysis import (
    GammaSweep,
    cluster_bound_check,
    cluster_cover,
    cluster_effective_source,
    decompose_support,
    effective_source,
    gamma_sweep,
    separated_bounds,
)
from l1imaging.coherence import semi_metric
from l1imaging.errors import ConfigError, CoverInfeasibleError, HypothesisError
from l1imaging.geometry import build_geometry
from l1imaging.sensing import assemble_exact, columns_at
from l1imaging.solver import SolveSettings, basis_pursuit

H_STAR = 2 / math.pi * 1000 / 25


@pytest.fixture(scope="module")
def slab():
    geom = build_geometry({"aperture": 25, "range": 1000, "mesh": [H_STAR / 4, 100],
                           "cells": [12, 12, 1], "array_spacing": 2.5})
    return geom, assemble_exact(geom)


def test_decomposition_partitions_support(slab):
    geom, A = slab
    rng = np.random.default_rng(3)
    x = rng.standard_normal(A.shape[1]) * (rng.random(A.shape[1]) < 0.2)
    centers = A.entries[:, [geom.grid.index([2, 2, 0]), geom.grid.index([9, 9, 0])]]
    dec = decompose_support(x, centers, A, 0.5, fraction=0.0)
    kept = np.flatnonzero(x)
    assert sorted(dec.inner.support.tolist() + dec.outer.support.tolist()) == kept.tolist()
    for q, b in zip(dec.inner.support, dec.ball_assignment):
        assert semi_metric(centers[:, b], A.entries[:, q]) < 0.5
    for q in dec.outer.support:
        assert all(semi_metric(centers[:, b], A.entries[:, q]) >= 0.5 for b in range(2))
    assert dec.total_l1 == pytest.approx(np.abs(x).sum())
    assert dec.outer_fraction == pytest.approx(dec.outer.l1() / dec.total_l1)
    assert sum(r["l1_mass"] for r in dec.ball_masses()) == pytest.approx(dec.inner.l1())


def test_overlapping_balls_rejected(slab):
    geom, A = slab
    centers = A.entries[:, [geom.grid.index([2, 2, 0]), geom.grid.index([3, 2, 0])]]
    with pytest.raises(HypothesisError):
        decompose_support(np.ones(A.shape[1]), centers, A, 0.9)


def test_exact_on_grid_recovery_gives_exact_effective_source(slab):
    geom, A = slab
    idx = [geom.grid.index([2, 2, 0]), geom.grid.index([9, 9, 0])]
    amps = np.array([1.0, -0.5j])
    rho = np.zeros(A.shape[1], dtype=complex)
    rho[idx] = amps
    dec = decompose_support(rho, A.entries[:, idx], A, 0.5)
    eff = effective_source(dec, A.entries[:, idx], A, amps)
    assert np.allclose(eff.values, amps)
    assert eff.relative_error == pytest.approx(0, abs=1e-12)


def test_separated_bounds_hold_for_off_grid_pair(slab):
    geom, A = slab
    pos = geom.grid.points[[geom.grid.index([2, 2, 0]), geom.grid.index([9, 9, 0])]].copy()
    pos[:, :2] += [[1.3, -0.7], [-2.0, 1.1]]
    cols, _, _ = columns_at(A, geom, pos)
    amps = np.array([1.0, 0.8 * np.exp(1j)])
    res = basis_pursuit(A, cols @ amps)
    out = separated_bounds(res, cols, A, 0.5, amps)
    assert 2 * out["interaction"] < 0.5
    assert out["outer"].applicable and out["outer"].holds
    assert out["effective"].holds
    assert out["decomposition"].outer_fraction <= out["outer"].rhs / out["decomposition"].total_l1


def test_cluster_cover_groups_close_sources(slab):
    geom, A = slab
    base = geom.grid.points[geom.grid.index([3, 3, 0])]
    far = geom.grid.points[geom.grid.index([9, 9, 0])]
    pos = np.array([base + [0.4, 0.2, 0], base + [-0.3, 0.5, 0], far + [0.2, -0.1, 0]])
    cols, _, _ = columns_at(A, geom, pos)
    cover = cluster_cover(cols, A, 0.2)
    assert cover.size == 2
    assert cover.assignment[0] == cover.assignment[1] != cover.assignment[2]
    for q, b in enumerate(cover.assignment):
        assert semi_metric(A.entries[:, cover.centers[b]], cols[:, q]) < 0.2
    rho = np.array([1.0, 1j, -1.0])
    eff = cluster_effective_source(rho, cover, cols, A)
    b0 = cover.assignment[0]
    c0 = A.entries[:, cover.centers[b0]]
    assert eff.values[b0] == pytest.approx(np.vdot(c0, cols[:, 0]) * 1 + np.vdot(c0, cols[:, 1]) * 1j)


def test_cluster_cover_infeasible_and_validation(slab):
    geom, A = slab
    pos = geom.grid.points[[0]] + [H_STAR / 8, H_STAR / 8, 0]   # midway between grid points
    cols, _, _ = columns_at(A, geom, pos)
    with pytest.raises(CoverInfeasibleError):
        cluster_cover(cols, A, 1e-4)
    with pytest.raises(ConfigError):
        cluster_cover(cols, A, 1.5)


def test_cluster_bound_not_applicable_when_radius_too_small(slab):
    geom, A = slab
    cols = A.entries[:, [geom.grid.index([3, 3, 0])]]
    cover = cluster_cover(cols, A, 0.3)
    res = basis_pursuit(A, cols[:, 0])
    chk = cluster_bound_check(res, cover, cols, np.array([1.0]), A, 0.2)
    assert not chk["check"].applicable
    ok = cluster_bound_check(res, cover, cols, np.array([1.0]), A, 0.5)
    assert ok["check"].applicable and ok["check"].holds


def test_gamma_sweep_confinement(slab):
    geom, A = slab
    idx = [geom.grid.index([2, 2, 0]), geom.grid.index([9, 9, 0])]
    pos = geom.grid.points[idx] + [[1.0, 0.6, 0], [-0.8, 1.2, 0]]
    cols, _, _ = columns_at(A, geom, pos)
    d = cols @ np.array([1.0, 1j])
    sw = gamma_sweep(A, d, cols, 0.5, SolveSettings(max_iters=20_000, tol_primal=1e-7), steps=12,
                     base_fraction=1e-3)
    assert np.all(np.diff(sw.gammas) > 0)
    assert sw.confining_from is not None and sw.nontrivial
    assert sw.confined[-1]
    assert sw.confined[sw.gammas >= sw.confining_from].all()


def test_gamma_sweep_lapse_bookkeeping():
    gammas = 2.0 ** np.arange(6)
    sw = GammaSweep(gammas, np.array([False, True, False, True, True, True]),
                    np.array([True] * 5 + [False]), 2.0, 8.0)
    assert not sw.monotone and sw.nontrivial
    d = sw.to_dict()
    assert d["first_confining"] == 2.0 and d["confining_from"] == 8.0
    only_zero = GammaSweep(gammas, np.array([False] * 5 + [True]), np.array([True] * 5 + [False]), 32.0, 32.0)
    assert only_zero.monotone and not only_zero.nontrivial
