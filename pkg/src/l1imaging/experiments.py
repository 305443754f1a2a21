"""Config-driven experiment runners behind the command line.

Every runner takes a plain config mapping (usually loaded from JSON) and
returns a JSON-serialisable report; tables are written next to the report
when an output directory is given.  Scene amplitudes are the unknowns in
unit-column scaling, so the data are ``sum_j rho_j g(y_j)``.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import analysis, bounds, coherence
from .errors import ConfigError, HypothesisError, InfeasibleError
from .geometry import ImagingGeometry, build_geometry, check_array_sampling, check_paraxial_regime
from .sensing import (
    SensingMatrix,
    assemble_exact,
    assemble_paraxial,
    columns_at,
    paraxial_kernel,
)
from .solver import (
    BasisPursuit,
    RecoveryResult,
    SolveSettings,
    constrained_denoise,
    default_gamma,
    l1_penalty,
    recovery_error,
)
from .wavemodel import (
    ParaxialScales,
    SourceScene,
    broadband_gram_discrete,
    broadband_gram_offset,
    fresnel_U,
    synthesize_data,
)

log = logging.getLogger(__name__)

# --------------------------------------------------------------------------- config

def load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def _section(cfg: Mapping, key: str) -> dict:
    if key not in cfg:
        raise ConfigError(f"config is missing the {key!r} section")
    sec = cfg[key]
    if not isinstance(sec, Mapping):
        raise ConfigError(f"config section {key!r} must be an object")
    return dict(sec)


def _wavelength(sec: Mapping) -> float:
    """Central wavelength in the config's length unit."""
    if str(sec.get("units", "wavelength")).lower() in ("m", "meter", "meters"):
        return float(sec["wavelength"])
    return 1.0


def geometry_from_config(section: Mapping) -> ImagingGeometry:
    """Build a geometry; ``mesh_units: "base"`` gives the mesh in multiples of the base resolution."""
    sec = dict(section)
    if sec.pop("mesh_units", "length") == "base":
        lam = _wavelength(sec)
        a, L = float(sec["aperture"]), float(sec["range"])
        h_star = 2 / math.pi * lam * L / a
        if float(sec.get("bandwidth", 0.0)) > 0 and sec.get("regime", "single_freq") == "broadband":
            omega0 = float(sec.get("center_omega", 2 * math.pi))
            c = omega0 * lam / (2 * math.pi)
            h3_star = math.sqrt(2 * math.log(2)) * c / float(sec["bandwidth"])
        else:
            h3_star = 16 / math.pi * lam * L * L / (a * a)
        mesh = sec["mesh"]
        sec["mesh"] = [float(mesh[0]) * h_star, float(mesh[-1]) * h3_star]
    sec.pop("regime", None)
    return build_geometry(sec)


def matrix_for(geom: ImagingGeometry, model: str) -> SensingMatrix:
    if model == "paraxial":
        return assemble_paraxial(geom)
    if model == "exact":
        return assemble_exact(geom)
    if model == "born":
        return assemble_exact(geom, "born")
    raise ConfigError(f"unknown matrix model {model!r} (expected exact, paraxial or born)")


def settings_from_config(cfg: Mapping, seed: int) -> SolveSettings:
    sec = dict(cfg.get("solver", {}))
    allowed = set(SolveSettings.__dataclass_fields__)
    kwargs = {k: v for k, v in sec.items() if k in allowed}
    kwargs.setdefault("seed", seed)
    try:
        return SolveSettings(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad solver settings: {exc}") from None


def _amplitudes(raw, count: int) -> np.ndarray:
    vals = [complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v) for v in raw]
    if len(vals) != count:
        raise ConfigError(f"scene has {count} positions but {len(vals)} amplitudes")
    return np.array(vals, dtype=complex)


def random_on_grid(geom: ImagingGeometry, count: int, rng: np.random.Generator,
                   min_separation: float = 0.0, max_tries: int = 10_000) -> np.ndarray:
    """Distinct random grid indices whose lattice coordinates are at least ``min_separation`` cells apart."""
    grid = geom.grid
    if count > grid.size:
        raise ConfigError(f"cannot place {count} sources on {grid.size} grid points")
    for _ in range(max_tries):
        idx = rng.choice(grid.size, size=count, replace=False)
        if count < 2 or min_separation <= 0:
            return np.sort(idx)
        c = grid.coords(idx).astype(float)
        dist = np.linalg.norm(c[:, None] - c[None, :], axis=-1)
        if dist[np.triu_indices(count, 1)].min() >= min_separation:
            return np.sort(idx)
    raise ConfigError(f"could not place {count} sources {min_separation} cells apart")


def on_grid(geom: ImagingGeometry, positions, rtol: float = 1e-9) -> bool:
    """True when every position coincides with a grid point."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    near = geom.grid.points[[geom.grid.nearest_index(p) for p in pos]]
    return bool(np.all(np.abs(pos - near) <= rtol * np.asarray(geom.mesh)))


def random_in_box(geom: ImagingGeometry, count: int, box: int, rng: np.random.Generator) -> np.ndarray:
    """Distinct random grid indices packed into a randomly placed cube of ``box`` cells per side."""
    shape = np.asarray(geom.grid.shape)
    side = np.minimum(box, shape)
    if count > np.prod(side):
        raise ConfigError(f"cannot pack {count} sources into a box of {side.tolist()} cells")
    corner = rng.integers(0, shape - side + 1)
    flat = rng.choice(int(np.prod(side)), size=count, replace=False)
    coords = np.stack(np.unravel_index(flat, tuple(side)), axis=1) + corner
    return np.atleast_1d(geom.grid.index(coords))


def _random_amplitudes(kind: str, count: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "unit":
        return np.ones(count, dtype=complex)
    if kind == "random_phase":
        return np.exp(2j * np.pi * rng.random(count))
    if kind == "random":
        return rng.uniform(0.5, 1.5, count) * np.exp(2j * np.pi * rng.random(count))
    raise ConfigError(f"unknown amplitude generator {kind!r}")


def scene_from_config(section: Mapping, geom: ImagingGeometry, rng: np.random.Generator):
    """Return ``(positions, amplitudes, grid_indices or None)``."""
    if "grid_indices" in section:
        coords = np.asarray(section["grid_indices"], dtype=int).reshape(-1, 3)
        for c in coords:
            if np.any(c < 0) or np.any(c >= np.asarray(geom.grid.shape)):
                raise ConfigError(f"grid index {c.tolist()} is outside the grid {geom.grid.shape}")
        idx = geom.grid.index(coords) if len(coords) else np.empty(0, dtype=int)
        idx = np.atleast_1d(idx)
        amps = _amplitudes(section.get("amplitudes", [1.0] * len(idx)), len(idx))
        return geom.grid.points[idx], amps, idx
    if "positions" in section:
        pos = np.asarray(section["positions"], dtype=float).reshape(-1, 3)
        amps = _amplitudes(section.get("amplitudes", [1.0] * len(pos)), len(pos))
        return pos, amps, None
    if "random" in section:
        gen = dict(section["random"])
        if "seed" not in gen:
            raise ConfigError("randomized scenes need an explicit 'seed'")
        rng = np.random.default_rng(int(gen["seed"]))
        count = int(gen.get("count", 2))
        if "box_cells" in gen:
            idx = random_in_box(geom, count, int(gen["box_cells"]), rng)
        else:
            idx = random_on_grid(geom, count, rng, float(gen.get("min_separation_cells", 0)))
        amps = _random_amplitudes(gen.get("amplitudes", "random_phase"), count, rng)
        pos = geom.grid.points[idx].copy()
        jitter = float(gen.get("off_grid_jitter", 0.0))
        if jitter > 0:
            pos += rng.uniform(-jitter, jitter, pos.shape) * np.asarray(geom.mesh)
            return pos, amps, None
        return pos, amps, idx
    raise ConfigError("scene needs 'grid_indices', 'positions' or 'random'")


def scene_data(matrix: SensingMatrix, geom: ImagingGeometry, positions, amplitudes,
               noise_level: float = 0.0, seed: int = 0) -> np.ndarray:
    """Data for sources with unit-column amplitudes; exact models go through the wave model."""
    if len(amplitudes) == 0:
        return np.zeros(matrix.shape[0], dtype=complex)
    cols, alpha, strip = columns_at(matrix, geom, positions)
    if matrix.mode == "paraxial":
        d = cols @ amplitudes
        if noise_level > 0:
            rng = np.random.default_rng(seed)
            n = rng.standard_normal(d.shape) + 1j * rng.standard_normal(d.shape)
            d = d + n * (noise_level * np.linalg.norm(d) / np.linalg.norm(n))
        return d
    physical = amplitudes / (alpha * strip)
    if matrix.mode == "born":
        raise ConfigError("source scenes cannot drive a Born matrix; use a scatterer scene")
    return synthesize_data(SourceScene(positions, physical), geom, "sources", noise_level, seed)


def solve(matrix: SensingMatrix, d, cfg: Mapping, settings: SolveSettings,
          noise_level: float = 0.0) -> RecoveryResult:
    method = cfg.get("solver", {}).get("method", "basis_pursuit")
    if method == "basis_pursuit":
        return BasisPursuit(matrix, settings).solve(d)
    if method == "l1_penalty":
        gamma = cfg.get("solver", {}).get("gamma")
        if gamma is None:
            gamma = default_gamma(matrix, d, noise_level)
        return l1_penalty(matrix, d, replace(settings, gamma=float(gamma)))
    if method == "constrained":
        noise_abs = noise_level * float(np.linalg.norm(d)) / math.sqrt(1 + noise_level ** 2)
        return constrained_denoise(matrix, d, noise_abs, settings)
    raise ConfigError(f"unknown solver method {method!r}")


def _header(geom: ImagingGeometry, kind: str, seed: int) -> dict:
    regime = check_paraxial_regime(geom)
    return {"kind": kind, "seed": seed, "geometry_hash": geom.hash(),
            "geometry": geom.to_dict(), "regime": regime.to_dict(),
            "regime_warnings": regime.warnings,
            "sampling": check_array_sampling(geom).to_dict()}


def _write(out: Path | None, name: str, writer) -> None:
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        writer(out / name)


def _seed(cfg: Mapping, seed: int | None) -> int:
    return int(seed if seed is not None else cfg.get("seed", 0))


# --------------------------------------------------------------------------- runners

def run_recover(cfg: Mapping, seed: int | None = None, out: Path | None = None) -> dict:
    seed = _seed(cfg, seed)
    geom = geometry_from_config(_section(cfg, "geometry"))
    matrix = matrix_for(geom, cfg.get("model", "exact"))
    rng = np.random.default_rng(seed)
    pos, amps, idx = scene_from_config(_section(cfg, "scene"), geom, rng)
    noise = float(cfg.get("noise_level", 0.0))
    d = scene_data(matrix, geom, pos, amps, noise, seed)
    settings = settings_from_config(cfg, seed)
    t0 = time.perf_counter()
    res = solve(matrix, d, cfg, settings, noise)
    report = _header(geom, "recover", seed)
    report["solve"] = res.to_dict()
    log.info("recover: solve took %.2f s", time.perf_counter() - t0)
    report["all_converged"] = res.converged
    report["n_sources"] = int(len(amps))
    if idx is not None:
        truth = np.zeros(matrix.shape[1], dtype=complex)
        truth[idx] = amps
        err = recovery_error(res.rho_thresholded, truth)
        report["relative_error"] = err
        report["recovered"] = err < 0.01
    _write(out, "amplitudes.csv", res.save_csv)
    return report


def run_solve(cfg: Mapping, seed: int | None = None, out: Path | None = None) -> dict:
    from .wavemodel import load_data_csv

    seed = _seed(cfg, seed)
    geom = geometry_from_config(_section(cfg, "geometry"))
    matrix = matrix_for(geom, cfg.get("model", "exact"))
    if "data" not in cfg:
        raise ConfigError("solve needs a 'data' CSV path")
    d = load_data_csv(cfg["data"])
    if d.size != matrix.shape[0]:
        raise ConfigError(f"data has {d.size} entries, the matrix has {matrix.shape[0]} rows")
    settings = settings_from_config(cfg, seed)
    res = solve(matrix, d, cfg, settings, float(cfg.get("noise_level", 0.0)))
    report = _header(geom, "solve", seed)
    report["solve"] = res.to_dict()
    report["all_converged"] = res.converged
    _write(out, "amplitudes.csv", res.save_csv)
    return report


def run_coherence(cfg: Mapping, seed: int | None = None, out: Path | None = None) -> dict:
    seed = _seed(cfg, seed)
    geom = geometry_from_config(_section(cfg, "geometry"))
    source = cfg.get("source", "paraxial_kernel")
    if source == "paraxial_kernel":
        gram = paraxial_kernel(geom, "paraxial")
    elif source == "broadband_kernel":
        gram = paraxial_kernel(geom, "broadband")
    else:
        gram = matrix_for(geom, source)
    report = _header(geom, "coherence", seed)
    rows = []
    for s in cfg.get("sparsities", [2]):
        for variant in ("sum_s_terms", "sum_s_minus_1_terms"):
            rows.append(coherence.cumulative_coherence(gram, int(s), variant).to_dict())
    report["coherence"] = rows
    if "scene" in cfg and not hasattr(gram, "table"):
        pos, _, _ = scene_from_config(cfg["scene"], geom, np.random.default_rng(seed))
        cols, _, _ = columns_at(gram, geom, pos)
        inter = coherence.interaction_coefficient(cols.conj().T @ gram.entries)
        report["interaction"] = inter.to_dict()
        _write(out, "interaction.csv", inter.save_csv)
    if hasattr(gram, "table"):
        _write(out, "gram_offsets.csv", gram.to_csv)
    report["all_converged"] = True
    return report


def run_bounds(cfg: Mapping, seed: int | None = None, out: Path | None = None) -> dict:
    seed = _seed(cfg, seed)
    geom = geometry_from_config(_section(cfg, "geometry"))
    regime = cfg.get("regime", "single_freq")
    report = _header(geom, "bounds", seed)
    report["base_resolution"] = bounds.base_resolution(geom, regime).to_dict()
    report["mesh_conditions"] = [
        {"s": int(s), **bounds.sparsity_mesh_condition(geom, int(s), regime).to_dict()}
        for s in cfg.get("sparsities", [2, 4, 16, 64])
    ]
    rng = np.random.default_rng(seed)
    n = int(cfg.get("fresnel_samples", 10_000))
    report["fresnel_sweep"] = fresnel_bound_sweep(n, rng)
    samples = int(cfg.get("lemma_samples", 0))
    if samples:
        rows = lemma_domination(samples, rng)
        report["lemma_domination"] = {
            "samples": samples, "violations": int(sum(not r["dominated"] for r in rows))}
        _write(out, "lemma_sweep.csv", lambda p: _csv(p, rows))
    report["all_converged"] = True
    return report


def _csv(path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join(str(r[k]) for k in keys) + "\n")


def fresnel_bound_sweep(n: int, rng: np.random.Generator, slack: float = 1e-9) -> dict:
    """Check ``U`` against every applicable bound on ``n`` random points.

    A quarter of the points sit on ``eta = 0`` and a quarter inside the cone
    ``beta > alpha + eta`` so that every bound gets exercised.
    """
    beta = rng.uniform(-100, 100, n)
    eta = rng.uniform(-100, 100, n)
    alpha = rng.uniform(0.01, 100, n)
    eta[0::4] = 0.0
    cone = np.arange(n) % 4 == 1
    eta[cone] = rng.uniform(0.01, 100, cone.sum())
    alpha[cone] = rng.uniform(0.01, 50, cone.sum())
    beta[cone] = alpha[cone] + eta[cone] + rng.uniform(0, 50, cone.sum())
    U = fresnel_U(beta, eta)
    checked = {"sinc_bound": 0, "eta_bound": 0, "cone_bound": 0}
    violations = {k: 0 for k in checked}
    worst = {k: -np.inf for k in checked}
    for b, e, a, u in zip(beta, eta, alpha, U):
        for k, v in bounds.fresnel_bounds(b, e, a).items():
            if v is None:
                continue
            checked[k] += 1
            worst[k] = max(worst[k], u - v)
            if u > v + slack:
                violations[k] += 1
    return {"points": n, "checked": checked, "violations": violations,
            "worst_excess": {k: float(v) for k, v in worst.items()}}


def lemma_domination(samples: int, rng: np.random.Generator, cells: tuple[int, int, int] = (9, 9, 9)) -> list[dict]:
    """Compare the three-term estimate with the measured coherence on random meshes."""
    rows = []
    geom0 = build_geometry({"aperture": 25, "range": 1000, "mesh": [1, 1], "cells": list(cells)[::2],
                            "array_spacing": 2.5})
    sc = ParaxialScales.from_geometry(geom0)
    for _ in range(samples):
        x = float(rng.uniform(2, 12))
        x3 = float(rng.uniform(2, 12))
        s = int(rng.integers(2, 12))
        geom = geom0.with_mesh(x * sc.H, x3 * sc.H3, cells)
        mu = coherence.cumulative_coherence(paraxial_kernel(geom), s, "sum_s_minus_1_terms").mu
        bound = bounds.lemma2_bound(x, x3, s)
        rows.append({"s": s, "h_over_H": x, "h3_over_H3": x3, "mu": mu, "bound": bound,
                     "dominated": bool(bound >= mu)})
    return rows


def _pair_recovered(bp: BasisPursuit, matrix: SensingMatrix, j1: int, j2: int, amps) -> tuple[bool, bool]:
    """Whether the pair is recovered to 1 %, and whether the solve converged."""
    rho = np.zeros(matrix.shape[1], dtype=complex)
    rho[j1], rho[j2] = amps
    res = bp.solve(matrix.entries[:, [j1, j2]] @ np.asarray(amps, dtype=complex))
    return recovery_error(res.rho_thresholded, rho) < 0.01, res.converged


def run_resolve_sweep(cfg: Mapping, seed: int | None = None, out: Path | None = None) -> dict:
    """Bisection for the smallest cross-range and range meshes that resolve every tested pair.

    Meshes are in units of ``lambda L / a`` (cross-range) and
    ``lambda L^2 / a^2`` (range).  The bisection tests the adjacent pair at
    the window center with amplitudes ``amplitudes``; the estimate is then
    verified on ``n_random_pairs`` random pairs with random relative
    phase, and any failing pair joins the tested set for another round.
    """
    seed = _seed(cfg, seed)
    base = _section(cfg, "geometry")
    sw = dict(cfg.get("sweep", {}))
    lam = _wavelength(base)
    a, L = float(base["aperture"]), float(base["range"])
    cross_unit, range_unit = lam * L / a, lam * L * L / (a * a)
    steps = int(sw.get("bisection_steps", 7))
    n_random = int(sw.get("n_random_pairs", 100))
    pair_amps = _amplitudes(sw.get("amplitudes", [1, -1]), 2)
    settings = settings_from_config(cfg, seed)
    model = cfg.get("model", "paraxial")
    rng = np.random.default_rng(seed)
    report: dict[str, Any] = {"kind": "resolve_sweep", "seed": seed}
    t_start = time.perf_counter()

    def make(h_coef, h3_coef):
        geom = geometry_from_config({**base, "mesh": [h_coef * cross_unit, h3_coef * range_unit],
                                     "mesh_units": "length"})
        matrix = matrix_for(geom, model)
        return geom, matrix, BasisPursuit(matrix, settings)

    def search(direction: str) -> dict:
        spec = dict(sw.get(direction, {}))
        lo, hi = float(spec.get("lo", 0.1 if direction == "cross" else 0.3)), float(
            spec.get("hi", 1.0 if direction == "cross" else 6.0))
        fixed = float(sw.get("fixed_range" if direction == "cross" else "fixed_cross",
                             16 / math.pi if direction == "cross" else 2 / math.pi))
        offset = np.array([1, 0, 0] if direction == "cross" else [0, 0, 1])
        mesh = (lambda c: (c, fixed)) if direction == "cross" else (lambda c: (fixed, c))
        extra: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []  # (coords1, coords2, amps)
        solves = stalled = 0

        def passes(c: float) -> bool:
            nonlocal solves, stalled
            geom, matrix, bp = make(*mesh(c))
            center = np.asarray(geom.grid.shape) // 2
            tests = [(center, center + offset, pair_amps)] + extra
            for c1, c2, amps in tests:
                solves += 1
                ok, conv = _pair_recovered(bp, matrix, geom.grid.index(c1), geom.grid.index(c2), amps)
                stalled += not conv
                if not ok:
                    return False
            return True

        if passes(lo):
            return {"estimate": None, "inconclusive": f"already resolved at the lower end {lo}",
                    "solves": solves, "nonconverged_solves": stalled}
        if not passes(hi):
            return {"estimate": None, "inconclusive": f"not resolved at the upper end {hi}",
                    "solves": solves, "nonconverged_solves": stalled}
        top = hi
        verified = False
        for _round in range(int(sw.get("verification_rounds", 3))):
            for _ in range(steps):
                mid = 0.5 * (lo + hi)
                if passes(mid):
                    hi = mid
                else:
                    lo = mid
            geom, matrix, bp = make(*mesh(hi))
            shape = np.asarray(geom.grid.shape)
            failing = None
            for _ in range(n_random):
                j1, j2 = rng.choice(geom.grid.size, size=2, replace=False)
                amps = np.array([1.0, np.exp(2j * np.pi * rng.random())])
                solves += 1
                ok, conv = _pair_recovered(bp, matrix, int(j1), int(j2), amps)
                stalled += not conv
                if not ok:
                    failing = (geom.grid.coords(j1), geom.grid.coords(j2), amps)
                    break
            if failing is None:
                verified = True
                break
            if np.any(failing[1] >= shape) or np.any(failing[0] >= shape):
                break
            extra.append(failing)
            lo, hi = hi, top
        return {"estimate": hi, "lower": lo, "verified_random_pairs": verified,
                "random_pairs": n_random, "extra_pairs": len(extra), "solves": solves,
                "nonconverged_solves": stalled,
                "fixed_other_coefficient": fixed}

    report["cross"] = search("cross")
    report["range"] = search("range")
    report["theorem_coefficients"] = {"cross": 2 / math.pi, "range": 16 / math.pi}
    report["targets"] = {"cross": 0.46, "range": 3.0}
    log.info("resolve sweep took %.1f s", time.perf_counter() - t_start)
    report["all_converged"] = not any(report[k]["nonconverged_solves"] for k in ("cross", "range"))
    return report


def _separated_trial(geom, matrix, cfg, rng, r):
    sc = dict(cfg.get("scene", {}))
    gen = dict(sc.get("random", {}))
    count = int(gen.get("count", 2))
    sep = float(gen.get("min_separation_cells", 8))
    idx = random_on_grid(geom, count, rng, sep)
    amps = _random_amplitudes(gen.get("amplitudes", "random"), count, rng)
    pos = geom.grid.points[idx].copy()
    jitter = float(gen.get("off_grid_jitter", 0.0))
    if jitter > 0:
        pos += rng.uniform(-jitter, jitter, pos.shape) * np.asarray(geom.mesh) * (
            np.asarray(geom.grid.shape) > 1)
    cols, _, _ = columns_at(matrix, geom, pos)
    inter = coherence.interaction_coefficient(cols.conj().T @ matrix.entries).value
    disjoint = coherence.disjointness(cols, matrix.entries, r).disjoint
    return pos, amps, cols, inter, disjoint, on_grid(geom, pos)


def run_separated(cfg: Mapping, seed: int | None = None, out: Path | None = None) -> dict:
    """Well-separated scenes on a fine grid: outer mass, effective sources and the penalty sweep."""
    seed = _seed(cfg, seed)
    geom = geometry_from_config(_section(cfg, "geometry"))
    matrix = matrix_for(geom, cfg.get("model", "exact"))
    settings = settings_from_config(cfg, seed)
    r = float(cfg.get("radius", 0.5))
    noise = float(cfg.get("noise_level", 0.0))
    trials = int(cfg.get("trials", 1))
    sweep = bool(cfg.get("gamma_sweep", False))
    max_draws = int(cfg.get("max_draws", 50 * trials))
    rng = np.random.default_rng(seed)
    bp = BasisPursuit(matrix, settings) if cfg.get("solver", {}).get("method", "basis_pursuit") == "basis_pursuit" else None
    rows, skipped, converged = [], 0, True
    for _draw in range(max_draws):
        if len(rows) >= trials:
            break
        pos, amps, cols, inter, disjoint, on_grid = _separated_trial(geom, matrix, cfg, rng, r)
        if not disjoint or 2 * inter >= r:
            skipped += 1
            continue
        trial_seed = int(rng.integers(2 ** 31))
        d = scene_data(matrix, geom, pos, amps, noise, trial_seed)
        # the outer-mass theorem assumes on-grid sources and noiseless data
        row: dict[str, Any] = {"interaction": inter, "n_sources": len(amps), "on_grid": on_grid}
        if sweep:
            gs = analysis.gamma_sweep(matrix, d, cols, r, settings)
            row["gamma_sweep"] = gs.to_dict()
            converged &= all(x.converged for x in gs.results)
        else:
            res = bp.solve(d) if bp is not None else solve(matrix, d, cfg, settings, noise)
            converged &= res.converged
            chk = analysis.separated_bounds(res, cols, matrix, r, amps)
            row.update({"outer": chk["outer"].to_dict(), "effective": chk["effective"].to_dict(),
                        "outer_fraction": chk["decomposition"].outer_fraction
                        if chk["decomposition"] is not None else None})
            if chk["decomposition"] is not None:
                row["ball_masses"] = chk["decomposition"].ball_masses()
                row["effective_error"] = chk["effective_source"].relative_error
        rows.append(row)
    report = _header(geom, "separated", seed)
    report.update({"radius": r, "trials": rows, "skipped_draws": skipped,
                   "all_converged": bool(converged)})
    if len(rows) < trials:
        report["warning"] = f"only {len(rows)} of {trials} draws met 2 I < r with disjoint balls"
    report["all_on_grid"] = all(r_["on_grid"] for r_ in rows)
    if not sweep:
        report["all_outer_hold"] = all(r_["outer"]["holds"] for r_ in rows)
        report["all_effective_hold"] = all(r_["effective"]["holds"] for r_ in rows)
    else:
        report["all_confined"] = all(r_["gamma_sweep"]["nontrivial"] for r_ in rows)
    if "mesh_factors" in cfg:
        report["mesh_tradeoff"] = mesh_tradeoff(cfg, seed)
    return report


def mesh_tradeoff(cfg: Mapping, seed: int) -> list[dict]:
    """Reconstruction error for one off-grid scene as the mesh is refined over a fixed window."""
    base = _section(cfg, "geometry")
    tcfg = dict(cfg.get("tradeoff", {}))
    window = float(tcfg.get("window_base_units", 6.0))
    positions = np.asarray(tcfg.get("positions_base_units", [[0.3, 0.2, 0.0], [-1.7, 1.4, 0.0]]), dtype=float)
    amps = _amplitudes(tcfg.get("amplitudes", [1.0, 1.0]), len(positions))
    rows = []
    for factor in cfg["mesh_factors"]:
        sec = {**base, "mesh_units": "base", "mesh": [float(factor), float(base["mesh"][-1])]}
        n = max(1, int(round(window / float(factor))))
        cells = list(base["cells"])
        sec["cells"] = [n, n, cells[-1]]
        geom = geometry_from_config(sec)
        h_star = bounds.base_resolution(geom).h_star
        pos = positions * np.array([h_star, h_star, 1.0]) + np.array([0, 0, geom.range_L])
        matrix = matrix_for(geom, cfg.get("model", "exact"))
        d = scene_data(matrix, geom, pos, amps)
        row = {"mesh_factor": float(factor), "N": geom.n_grid}
        try:
            res = solve(matrix, d, cfg, settings_from_config(cfg, seed))
        except InfeasibleError:
            # coarse meshes with fewer unknowns than data cannot fit off-grid data exactly
            rows.append({**row, "infeasible": True})
            continue
        cols, _, _ = columns_at(matrix, geom, pos)
        r = float(cfg.get("radius", 0.5))
        try:
            chk = analysis.separated_bounds(res, cols, matrix, r, amps)
            eff_err = chk["effective_source"].relative_error
            outer = chk["decomposition"].outer_fraction
        except (HypothesisError, KeyError, TypeError):
            eff_err, outer = None, None
        # image-space error: nearest grid point of each source carries its amplitude
        truth = np.zeros(matrix.shape[1], dtype=complex)
        for p, a_ in zip(pos, amps):
            truth[geom.grid.nearest_index(p)] += a_
        rows.append({**row, "infeasible": False, "converged": res.converged,
                     "effective_error": eff_err, "outer_fraction": outer,
                     "nearest_point_error": recovery_error(res.rho_thresholded, truth)})
    return rows


def random_clusters(geom: ImagingGeometry, gen: Mapping, rng: np.random.Generator):
    """Clusters of sources around random, well-separated grid points.

    Each source sits within ``spread`` cells of its cluster's grid point
    (range offsets only when the grid has more than one range cell).  With
    ``on_grid`` the cluster is its center plus distinct grid neighbours at
    most ``reach_cells`` away per axis.
    """
    n_clusters = int(gen.get("clusters", 2))
    per = gen.get("per_cluster", 2)
    per = [int(per)] * n_clusters if np.isscalar(per) else [int(p) for p in per]
    if len(per) != n_clusters:
        raise ConfigError("per_cluster must be a number or one count per cluster")
    spread = float(gen.get("spread", 0.3))
    centers = random_on_grid(geom, n_clusters, rng, float(gen.get("min_separation_cells", 8)))
    active = (np.asarray(geom.grid.shape) > 1).astype(float)
    snap = bool(gen.get("on_grid", False))
    reach = int(gen.get("reach_cells", 1))
    steps = np.array([o for o in itertools.product(range(-reach, reach + 1), repeat=3)
                      if any(o) and all(a or not v for a, v in zip(active, o))])
    pos, amps = [], []
    for c, m in zip(centers, per):
        if snap:
            coords = geom.grid.coords(c)
            nbrs = coords + steps
            nbrs = nbrs[np.all((nbrs >= 0) & (nbrs < np.asarray(geom.grid.shape)), axis=1)]
            if m - 1 > len(nbrs):
                raise ConfigError(f"a cluster of {m} does not fit within {reach} cells of its center")
            pick = nbrs[rng.choice(len(nbrs), m - 1, replace=False)]
            idx = np.concatenate([[c], geom.grid.index(pick) if m > 1 else []]).astype(int)
            pos.append(geom.grid.points[idx])
        else:
            jitter = rng.uniform(-spread, spread, (m, 3)) * np.asarray(geom.mesh) * active
            pos.append(geom.grid.points[c] + jitter)
        amps.append(_random_amplitudes(gen.get("amplitudes", "random"), m, rng))
    return np.vstack(pos), np.concatenate(amps)


def _cluster_trial(geom, matrix, cfg, settings, pos, amps, eps, r, noise, seed, out=None) -> dict:
    cols, _, _ = columns_at(matrix, geom, pos)
    cover = analysis.cluster_cover(cols, matrix, eps)
    d = scene_data(matrix, geom, pos, amps, noise, seed)
    res = solve(matrix, d, cfg, settings, noise)
    chk = analysis.cluster_bound_check(res, cover, cols, amps, matrix, r)
    row = {
        "on_grid": on_grid(geom, pos),
        "cover": cover.to_dict(), "interaction_centers": chk["interaction"],
        "hypotheses_met": bool(eps < r and chk["interaction"] < r / 2),
        "effective_source": chk["effective_source"].to_dict(),
        "check": chk["check"].to_dict(), "solve": res.to_dict(), "converged": res.converged,
    }
    decomp = chk["decomposition"]
    if decomp is not None:
        row["ball_masses"] = decomp.ball_masses()
        row["outer_fraction"] = decomp.outer_fraction
        _write(out, "balls.csv", lambda p: decomp.save_csv(p, cover.centers.tolist()))
    return row


def run_cluster(cfg: Mapping, seed: int | None = None, out: Path | None = None) -> dict:
    """Clustered scenes: greedy cover, solve, and the outer-mass bound around cluster centers.

    An explicit scene gives one trial.  ``scene.random_clusters`` draws
    ``trials`` scenes; draws whose cover fails or that miss
    ``eps < r`` and ``I < r/2`` are skipped and counted.
    """
    seed = _seed(cfg, seed)
    geom = geometry_from_config(_section(cfg, "geometry"))
    matrix = matrix_for(geom, cfg.get("model", "exact"))
    settings = settings_from_config(cfg, seed)
    eps = float(cfg.get("epsilon", 0.1))
    r = float(cfg.get("radius", 0.5))
    noise = float(cfg.get("noise_level", 0.0))
    rng = np.random.default_rng(seed)
    scene = _section(cfg, "scene")
    report = _header(geom, "cluster", seed)
    report.update({"epsilon": eps, "radius": r})
    if "random_clusters" not in scene:
        pos, amps, _ = scene_from_config(scene, geom, rng)
        row = _cluster_trial(geom, matrix, cfg, settings, pos, amps, eps, r, noise, seed, out)
        report.update(row)
        report["all_converged"] = row["converged"]
        return report
    gen = dict(scene["random_clusters"])
    if "seed" not in gen:
        raise ConfigError("randomized scenes need an explicit 'seed'")
    scene_rng = np.random.default_rng(int(gen["seed"]))
    trials = int(cfg.get("trials", 1))
    rows, skipped = [], 0
    for _draw in range(int(cfg.get("max_draws", 50 * trials))):
        if len(rows) >= trials:
            break
        pos, amps = random_clusters(geom, gen, scene_rng)
        try:
            row = _cluster_trial(geom, matrix, cfg, settings, pos, amps, eps, r, noise,
                                 int(scene_rng.integers(2 ** 31)))
        except HypothesisError:
            skipped += 1
            continue
        if not row["hypotheses_met"]:
            skipped += 1
            continue
        rows.append(row)
    report.update({"trials": rows, "skipped_draws": skipped,
                   "all_converged": all(r_["converged"] for r_ in rows),
                   "all_on_grid": all(r_["on_grid"] for r_ in rows),
                   "all_hold": all(r_["check"]["holds"] for r_ in rows)})
    if len(rows) < trials:
        report["warning"] = f"only {len(rows)} of {trials} draws met the cluster hypotheses"
    return report


def run_validate_paraxial(cfg: Mapping, seed: int | None = None, out: Path | None = None) -> dict:
    """Exact discrete Gram against the analytic kernels.

    The error is the largest absolute difference of Gram moduli, i.e.
    relative to the unit diagonal.
    """
    seed = _seed(cfg, seed)
    geom = geometry_from_config(_section(cfg, "geometry"))
    report = _header(geom, "validate_paraxial", seed)
    tol = float(cfg.get("tolerance", 0.05))
    exact = np.abs(assemble_exact(geom).gram()) if len(geom.frequencies) == 1 else None
    if exact is not None:
        kern = np.abs(paraxial_kernel(geom).matrix())
        err = float(np.max(np.abs(exact - kern)))
        report["single_frequency"] = {"max_modulus_error": err, "passed": err <= tol,
                                      "pairs": int(exact.size)}
    if "broadband" in cfg:
        bsec = {**_section(cfg, "geometry"), **cfg["broadband"]}
        bgeom = geometry_from_config(bsec)
        sc = ParaxialScales.from_geometry(bgeom)
        c_over_B = bgeom.sound_speed_c / bgeom.bandwidth_B
        offsets = cfg.get("broadband_offsets") or [
            [0, 0, c_over_B], [0, 0, 2 * c_over_B], [0.5 * sc.calH, 0, 0], [sc.calH, 0, 0.5 * c_over_B],
            [2 * sc.calH, sc.calH, c_over_B], [0, 0, 0.5 * c_over_B]]
        rows = []
        z0 = np.array([0.0, 0.0, bgeom.range_L])
        for off in offsets:
            off = np.asarray(off, dtype=float)
            disc = abs(broadband_gram_discrete(bgeom, z0, z0 + off))
            ana = float(broadband_gram_offset(sc, off))
            rows.append({"offset": off.tolist(), "discrete": disc, "analytic": ana,
                         "error": abs(disc - ana)})
        worst = max(r_["error"] for r_ in rows)
        report["broadband"] = {"rows": rows, "max_modulus_error": worst, "passed": worst <= tol}
    report["all_converged"] = True
    return report


RUNNERS = {
    "recover": run_recover,
    "coherence": run_coherence,
    "solve": run_solve,
    "bounds": run_bounds,
    "resolve_sweep": run_resolve_sweep,
    "separated": run_separated,
    "cluster": run_cluster,
    "validate_paraxial": run_validate_paraxial,
}


def run(kind: str, cfg: Mapping, seed: int | None = None, out: Path | None = None) -> dict:
    if kind not in RUNNERS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    report = RUNNERS[kind](cfg, seed, out)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2, default=_json_default))
    return report


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")
