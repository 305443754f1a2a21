"""Cumulative mutual coherence, the Gram semi-metric and the interaction coefficient."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ConfigError, DimensionError
from .sensing import LatticeKernel, SensingMatrix

Variant = Literal["sum_s_terms", "sum_s_minus_1_terms"]
_ROW_BLOCK = 512


@dataclass(frozen=True)
class CoherenceReport:
    s: int
    mu: float
    argmax_column: int
    argmax_set: tuple[int, ...]
    variant: str

    def to_dict(self) -> dict:
        return {"s": self.s, "mu": self.mu, "argmax_column": self.argmax_column,
                "argmax_set": list(self.argmax_set), "variant": self.variant}


def _terms(s: int, variant: Variant) -> int:
    if variant == "sum_s_terms":
        return s
    if variant == "sum_s_minus_1_terms":
        return s - 1
    raise ConfigError(f"unknown coherence variant {variant!r}")


def _row_blocks(source):
    """Yield (row indices, |Gram rows|) blocks with the diagonal removed."""
    if isinstance(source, SensingMatrix):
        A = source.entries
        N = A.shape[1]
        for start in range(0, N, _ROW_BLOCK):
            rows = np.arange(start, min(start + _ROW_BLOCK, N))
            block = np.abs(A[:, rows].conj().T @ A)
            block[np.arange(rows.size), rows] = -np.inf
            yield rows, block
    elif isinstance(source, LatticeKernel):
        mod = np.abs(source.table)
        shape = source.grid.shape
        shift = np.asarray(shape) - 1
        coords = source.grid.coords(np.arange(source.size))
        for j, c in enumerate(coords):
            lo = shift - c
            block = mod[lo[0]:lo[0] + shape[0], lo[1]:lo[1] + shape[1], lo[2]:lo[2] + shape[2]]
            row = block.ravel().copy()
            row[j] = -np.inf
            yield np.array([j]), row[None, :]
    else:
        G = np.asarray(source)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise DimensionError("Gram source must be a square matrix")
        N = G.shape[0]
        for start in range(0, N, _ROW_BLOCK):
            rows = np.arange(start, min(start + _ROW_BLOCK, N))
            block = np.abs(G[rows]).astype(float)
            block[np.arange(rows.size), rows] = -np.inf
            yield rows, block


def _size(source) -> int:
    if isinstance(source, SensingMatrix):
        return source.shape[1]
    if isinstance(source, LatticeKernel):
        return source.size
    return np.asarray(source).shape[0]


def cumulative_coherence(source, s: int, variant: Variant = "sum_s_terms") -> CoherenceReport:
    """Largest sum of ``k`` off-diagonal Gram moduli in any row.

    ``k = s`` for ``sum_s_terms`` (the column itself is excluded from the
    set) and ``k = s - 1`` for ``sum_s_minus_1_terms``.  ``source`` is a
    :class:`SensingMatrix`, a :class:`LatticeKernel` or a dense Gram matrix.
    """
    N = _size(source)
    if s < 2:
        raise ConfigError("sparsity s must be at least 2")
    if s > N:
        raise ConfigError(f"sparsity s = {s} exceeds N = {N}")
    k = min(_terms(s, variant), N - 1)
    best, best_j, best_set = -1.0, 0, ()
    for rows, block in _row_blocks(source):
        part = np.argpartition(block, -k, axis=1)[:, -k:]
        sums = np.take_along_axis(block, part, axis=1).sum(axis=1)
        i = int(np.argmax(sums))
        if sums[i] > best:
            best, best_j = float(sums[i]), int(rows[i])
            best_set = tuple(sorted(int(q) for q in part[i]))
    return CoherenceReport(s, max(best, 0.0), best_j, best_set, variant)


def inner(ga, gb) -> complex:
    """``<g_a, g_b> = g_a^H g_b``."""
    return complex(np.vdot(np.asarray(ga), np.asarray(gb)))


def semi_metric(ga, gb) -> float:
    """``1 - |<g_a, g_b>|`` for unit vectors, clipped to ``[0, 1]``."""
    return float(np.clip(1.0 - abs(inner(ga, gb)), 0.0, 1.0))


def _check_radius(r: float) -> None:
    if not 0 < r < 1:
        raise ConfigError(f"ball radius must lie in (0, 1), got {r}")


def ball_membership(center, radius: float, query) -> bool:
    """Strict membership ``D(center, query) < radius``."""
    _check_radius(radius)
    return semi_metric(center, query) < radius


@dataclass(frozen=True)
class DisjointnessReport:
    disjoint: bool
    offending_pair: tuple[int, int] | None
    shared_points: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


def ball_masks(center_cols: np.ndarray, grid_cols: np.ndarray, radius: float) -> np.ndarray:
    """Boolean (n_centers, N) membership of grid columns in each ball."""
    _check_radius(radius)
    mod = np.abs(np.asarray(center_cols).conj().T @ np.asarray(grid_cols))
    return (1.0 - mod) < radius


def disjointness(center_cols: np.ndarray, grid_cols: np.ndarray, radius: float) -> DisjointnessReport:
    """Whether no grid point lies in two of the balls around ``center_cols``."""
    masks = ball_masks(center_cols, grid_cols, radius)
    counts = masks.sum(axis=0)
    shared = np.flatnonzero(counts > 1)
    if shared.size == 0:
        return DisjointnessReport(True, None, shared)
    owners = np.flatnonzero(masks[:, shared[0]])
    return DisjointnessReport(False, (int(owners[0]), int(owners[1])), shared)


@dataclass(frozen=True)
class InteractionReport:
    value: float
    nearest_map: np.ndarray
    per_point_sums: np.ndarray
    ties: np.ndarray

    def to_dict(self) -> dict:
        return {"value": self.value, "argmax_point": int(np.argmax(self.per_point_sums)),
                "n_ties": int(self.ties.size)}

    def save_csv(self, path) -> None:
        table = np.column_stack([np.arange(self.per_point_sums.size), self.nearest_map,
                                 self.per_point_sums])
        np.savetxt(path, table, delimiter=",", header="grid_index,nearest_source,sum",
                   comments="", fmt=["%d", "%d", "%.12g"])


def interaction_coefficient(cross_gram) -> InteractionReport:
    """Interaction coefficient from the source/grid Gram block.

    ``cross_gram[j, q] = <g_{y_j}, g_q>`` for sources ``y_j`` and grid
    points ``z_q``.  The source nearest to ``z_q`` under the semi-metric is
    the one with the largest modulus; ties go to the lowest source index,
    which cannot change the sum.
    """
    mod = np.abs(np.atleast_2d(np.asarray(cross_gram)))
    if mod.shape[0] == 0:
        raise ConfigError("interaction coefficient needs at least one source")
    nearest = np.argmax(mod, axis=0)
    top = mod[nearest, np.arange(mod.shape[1])]
    sums = mod.sum(axis=0) - top
    tie_count = (np.isclose(mod, top[None, :], rtol=0, atol=1e-12)).sum(axis=0)
    return InteractionReport(float(sums.max()), nearest, sums, np.flatnonzero(tie_count > 1))
