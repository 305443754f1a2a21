import numpy as np
import pytest

from l1imaging import experiments
from l1imaging.errors import ConfigError

SLAB = {"aperture": 25, "range": 1000, "array_spacing": 2.5, "mesh_units": "base",
        "mesh": [0.5, 1.0], "cells": [12, 12, 1]}


def _sweep_cfg(**solver):
    cfg = {"kind": "resolve_sweep", "seed": 4, "model": "paraxial",
           "geometry": {"aperture": 25, "range": 1000, "array_spacing": 2.5, "mesh": [1, 1],
                        "cells": [6, 6, 6]},
           "sweep": {"bisection_steps": 4, "n_random_pairs": 4, "verification_rounds": 1,
                     "amplitudes": [1, -1], "cross": {"lo": 0.1, "hi": 1.0},
                     "range": {"lo": 0.3, "hi": 6.0}}}
    if solver:
        cfg["solver"] = solver
    return cfg


def test_resolve_sweep_brackets_threshold():
    rep = experiments.run_resolve_sweep(_sweep_cfg())
    for key, (lo, hi) in {"cross": (0.1, 1.0), "range": (0.3, 6.0)}.items():
        r = rep[key]
        assert lo <= r["lower"] < r["estimate"] <= hi
        assert r["nonconverged_solves"] == 0
    assert rep["all_converged"]


def test_resolve_sweep_reports_stalled_solves():
    rep = experiments.run_resolve_sweep(_sweep_cfg(max_iters=3))
    stalled = sum(rep[k]["nonconverged_solves"] for k in ("cross", "range"))
    assert stalled > 0
    assert not rep["all_converged"]


def _separated_cfg(jitter):
    return {"kind": "separated", "seed": 3, "model": "exact", "geometry": SLAB, "radius": 0.6,
            "trials": 2, "scene": {"random": {"seed": 0, "count": 2, "min_separation_cells": 6,
                                              "off_grid_jitter": jitter}}}


def test_separated_small_slab():
    rep = experiments.run_separated(_separated_cfg(0.0))
    assert len(rep["trials"]) == 2 and rep["all_on_grid"]
    for t in rep["trials"]:
        assert 2 * t["interaction"] < 0.6
        assert t["outer"]["holds"] and t["effective"]["holds"]
        assert 0.0 <= t["outer_fraction"] <= 1.0


def test_separated_flags_off_grid_scenes():
    rep = experiments.run_separated({**_separated_cfg(0.5), "trials": 1})
    assert not rep["all_on_grid"] and not rep["trials"][0]["on_grid"]


def test_on_grid_detection():
    geom = experiments.geometry_from_config(SLAB)
    p = geom.grid.points[[3, 40]]
    assert experiments.on_grid(geom, p)
    assert not experiments.on_grid(geom, p + [0.1 * geom.mesh[0], 0, 0])


def test_mesh_tradeoff_rows():
    cfg = {"kind": "separated", "seed": 1, "model": "exact", "geometry": SLAB,
           "mesh_factors": [1.0, 0.5], "tradeoff": {"window_base_units": 4.0,
                                                   "positions_base_units": [[0.3, 0.2, 0], [-1.2, 1.1, 0]]}}
    rows = experiments.mesh_tradeoff(cfg, 1)
    assert [r["mesh_factor"] for r in rows] == [1.0, 0.5]
    assert rows[0]["N"] == 16 and rows[1]["N"] == 64
    # fewer unknowns than the 121 data: off-grid data cannot be matched exactly
    assert all(r["infeasible"] for r in rows)
    cfg["solver"] = {"method": "l1_penalty", "gamma": 1e-3, "max_iters": 5000}
    rows = experiments.mesh_tradeoff(cfg, 1)
    assert not any(r["infeasible"] for r in rows)
    assert rows[1]["nearest_point_error"] < rows[0]["nearest_point_error"]


def test_random_clusters_stay_within_spread():
    geom = experiments.geometry_from_config(SLAB)
    rng = np.random.default_rng(0)
    pos, amps = experiments.random_clusters(
        geom, {"clusters": 2, "per_cluster": [1, 3], "spread": 0.2, "min_separation_cells": 5}, rng)
    assert pos.shape == (4, 3) and amps.shape == (4,)
    assert np.allclose(pos[:, 2], geom.range_L)
    lone, group = pos[0], pos[1:]
    assert np.all(np.abs(group - group.mean(axis=0))[:, :2] <= 0.4 * geom.mesh[0] + 1e-9)
    assert np.linalg.norm(lone[:2] - group[0, :2]) > 4 * geom.mesh[0]


def test_random_clusters_count_mismatch():
    geom = experiments.geometry_from_config(SLAB)
    with pytest.raises(ConfigError):
        experiments.random_clusters(geom, {"clusters": 2, "per_cluster": [1, 2, 3]}, np.random.default_rng(0))


def test_random_clusters_on_grid_neighbours():
    geom = experiments.geometry_from_config(SLAB)
    pos, _ = experiments.random_clusters(
        geom, {"clusters": 2, "per_cluster": [1, 4], "on_grid": True, "min_separation_cells": 5},
        np.random.default_rng(1))
    assert experiments.on_grid(geom, pos)
    idx = [geom.grid.nearest_index(p) for p in pos]
    assert len(set(idx)) == 5
    block = geom.grid.coords(np.array(idx[1:]))
    assert np.abs(block - block[0]).max() <= 1


def test_cluster_random_trials_small():
    fine = {**SLAB, "mesh": [0.25, 1.0]}
    cfg = {"kind": "cluster", "seed": 2, "model": "exact", "geometry": fine, "epsilon": 0.1,
           "radius": 0.5, "trials": 2,
           "scene": {"random_clusters": {"seed": 5, "clusters": 2, "per_cluster": 2, "on_grid": True,
                                         "min_separation_cells": 6}},
           "solver": {"max_iters": 400_000}}
    rep = experiments.run_cluster(cfg)
    assert len(rep["trials"]) == 2 and rep["all_on_grid"]
    assert all(t["hypotheses_met"] for t in rep["trials"])
    assert rep["all_hold"] and rep["all_converged"]


def test_validate_paraxial_small_window():
    cfg = {"kind": "validate_paraxial", "seed": 0,
           "geometry": {"aperture": 25, "range": 1000, "array_spacing": 0.5,
                        "mesh": [6.366197723675814, 10], "cells": [3, 3, 3]},
           "broadband": {"bandwidth": 0.06283185307179587, "n_frequencies": 61, "frequency_span": 4}}
    rep = experiments.run_validate_paraxial(cfg)
    assert rep["single_frequency"]["max_modulus_error"] < 0.05
    assert rep["broadband"]["max_modulus_error"] < 0.05
    assert rep["single_frequency"]["pairs"] == 27 * 27
