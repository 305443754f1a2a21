import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_unit_matrix
from l1imaging.coherence import (
    ball_masks,
    ball_membership,
    cumulative_coherence,
    disjointness,
    inner,
    interaction_coefficient,
    semi_metric,
)
from l1imaging.errors import ConfigError
from l1imaging.geometry import build_geometry
from l1imaging.sensing import SensingMatrix, assemble_exact, paraxial_kernel
from l1imaging.wavemodel import fresnel_U


def brute_mu(G, s, terms):
    """max over columns j and sets of `terms` other columns of the summed moduli."""
    N = G.shape[0]
    best = 0.0
    for j in range(N):
        others = [q for q in range(N) if q != j]
        for sub in itertools.combinations(others, terms):
            best = max(best, float(sum(abs(G[j, q]) for q in sub)))
    return best


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 8), st.integers(2, 3))
def test_cumulative_coherence_matches_enumeration(seed, n, s):
    rng = np.random.default_rng(seed)
    A = random_unit_matrix(rng, 5, n)
    G = A.conj().T @ A
    for variant, terms in (("sum_s_terms", s), ("sum_s_minus_1_terms", s - 1)):
        rep = cumulative_coherence(G, s, variant)
        assert rep.mu == pytest.approx(brute_mu(G, s, min(terms, n - 1)), rel=1e-12)
        assert rep.argmax_column not in rep.argmax_set


def test_coherence_sources_agree(small_geom):
    A = assemble_exact(small_geom)
    a = cumulative_coherence(A, 3).mu
    b = cumulative_coherence(A.gram(), 3).mu
    assert a == pytest.approx(b)
    K = paraxial_kernel(small_geom)
    assert cumulative_coherence(K, 3).mu == pytest.approx(cumulative_coherence(K.matrix(), 3).mu)


def test_coherence_monotone_in_s(small_geom):
    K = paraxial_kernel(small_geom)
    vals = [cumulative_coherence(K, s).mu for s in range(2, 8)]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))


def test_coherence_rejects_bad_s(small_geom):
    with pytest.raises(ConfigError):
        cumulative_coherence(paraxial_kernel(small_geom), 1)
    with pytest.raises(ConfigError):
        cumulative_coherence(np.eye(3), 4)
    with pytest.raises(ConfigError):
        cumulative_coherence(np.eye(3), 2, "bogus")


def test_base_resolution_neighbour_values():
    # at h = h*, h3 = h3*: beta = h/H = 4, eta = h3/H3 = 16
    a, L = 25.0, 1000.0
    geom = build_geometry({"aperture": a, "range": L, "array_spacing": 2.5, "cells": [5, 5, 5],
                           "mesh": [2 / math.pi * L / a, 16 / math.pi * L * L / (a * a)]})
    G = np.abs(paraxial_kernel(geom).matrix())
    c = geom.grid.index([2, 2, 2])
    assert G[c, geom.grid.index([3, 2, 2])] == pytest.approx(math.sin(2) / 2, rel=1e-10)
    assert G[c, geom.grid.index([2, 2, 3])] == pytest.approx(fresnel_U(0, 16) ** 2, rel=1e-10)
    assert cumulative_coherence(G, 2, "sum_s_minus_1_terms").mu == pytest.approx(math.sin(2) / 2)


def test_semi_metric_and_inner(rng):
    A = random_unit_matrix(rng, 6, 3)
    assert semi_metric(A[:, 0], A[:, 0]) == pytest.approx(0, abs=1e-15)
    assert inner(A[:, 0], A[:, 1]) == pytest.approx(np.conj(inner(A[:, 1], A[:, 0])))
    assert 0 <= semi_metric(A[:, 0], A[:, 1]) <= 1


def test_ball_membership_is_strict(rng):
    A = random_unit_matrix(rng, 6, 2)
    d = semi_metric(A[:, 0], A[:, 1])
    assert not ball_membership(A[:, 0], d, A[:, 1])
    assert ball_membership(A[:, 0], min(d + 1e-9, 0.999), A[:, 1])
    with pytest.raises(ConfigError):
        ball_membership(A[:, 0], 1.0, A[:, 1])


def test_disjointness_detects_shared_point(rng):
    A = random_unit_matrix(rng, 4, 30)
    centers = A[:, :2]
    masks = ball_masks(centers, A, 0.9)
    rep = disjointness(centers, A, 0.9)
    shared = np.flatnonzero(masks.all(axis=0))
    assert rep.disjoint == (shared.size == 0)
    if not rep.disjoint:
        assert set(rep.shared_points.tolist()) == set(shared.tolist())
    tiny = disjointness(centers, A, 1e-6)
    assert tiny.disjoint


def brute_interaction(C):
    mod = np.abs(C)
    best = 0.0
    for q in range(mod.shape[1]):
        j = int(np.argmax(mod[:, q]))
        best = max(best, sum(mod[l, q] for l in range(mod.shape[0]) if l != j))
    return best


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_interaction_matches_definition(seed, s):
    rng = np.random.default_rng(seed)
    A = random_unit_matrix(rng, 5, 12)
    Y = random_unit_matrix(rng, 5, s)
    rep = interaction_coefficient(Y.conj().T @ A)
    assert rep.value == pytest.approx(brute_interaction(Y.conj().T @ A))
    if s == 1:
        assert rep.value == 0


def test_interaction_ties_reported():
    C = np.array([[0.5, 0.9], [0.5, 0.1]])
    rep = interaction_coefficient(C)
    assert rep.ties.tolist() == [0]
    assert rep.value == pytest.approx(0.5)


def test_interaction_csv(tmp_path, rng):
    A = random_unit_matrix(rng, 5, 6)
    rep = interaction_coefficient(A[:, :2].conj().T @ A)
    rep.save_csv(tmp_path / "i.csv")
    t = np.loadtxt(tmp_path / "i.csv", delimiter=",", skiprows=1)
    assert t.shape == (6, 3)
    assert t[:, 2].max() == pytest.approx(rep.value)
