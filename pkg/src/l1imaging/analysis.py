"""Fine-grid post-processing: support decomposition around sources, effective
sources, cluster covers and the bound checks built on them.

Ball centers are given as unit columns (``M x K`` arrays).  For on-grid
sources these are columns of the sensing matrix; for off-grid sources use
:func:`l1imaging.sensing.columns_at`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .coherence import ball_masks, disjointness, interaction_coefficient
from .errors import ConfigError, CoverInfeasibleError, HypothesisError
from .sensing import SensingMatrix, SparseVector
from .solver import RecoveryResult, SolveSettings, l1_penalty, power_iteration, threshold


@dataclass(frozen=True)
class SupportDecomposition:
    inner: SparseVector
    outer: SparseVector
    radius: float
    ball_assignment: np.ndarray  # ball index for each entry of inner.support
    n_balls: int

    @property
    def total_l1(self) -> float:
        return self.inner.l1() + self.outer.l1()

    @property
    def outer_fraction(self) -> float:
        total = self.total_l1
        return self.outer.l1() / total if total > 0 else 0.0

    def ball_masses(self) -> list[dict]:
        rows = []
        for b in range(self.n_balls):
            sel = self.ball_assignment == b
            rows.append({"ball": b, "radius": self.radius,
                         "l1_mass": float(np.abs(self.inner.values[sel]).sum()),
                         "entries": int(sel.sum())})
        return rows

    def save_csv(self, path, centers=None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("ball,center,radius,l1_mass,entries\n")
            for row in self.ball_masses():
                c = "" if centers is None else centers[row["ball"]]
                fh.write(f"{row['ball']},{c},{row['radius']},{row['l1_mass']:.12g},{row['entries']}\n")


def _dense(result) -> np.ndarray:
    if isinstance(result, RecoveryResult):
        return result.rho_star
    if isinstance(result, SparseVector):
        return result.to_dense()
    return np.asarray(result, dtype=complex)


def decompose_support(result, center_cols: np.ndarray, matrix: SensingMatrix, r: float,
                      fraction: float = 0.01) -> SupportDecomposition:
    """Split the thresholded minimizer into entries inside and outside the balls ``D(., y_j) < r``."""
    report = disjointness(center_cols, matrix.entries, r)
    if not report.disjoint:
        i, j = report.offending_pair
        raise HypothesisError(f"balls around centers {i} and {j} overlap at radius {r}")
    kept = threshold(_dense(result), fraction)
    masks = ball_masks(center_cols, matrix.entries[:, kept.support], r)
    inside = masks.any(axis=0)
    assign = np.argmax(masks[:, inside], axis=0) if inside.any() else np.empty(0, dtype=int)
    n = kept.size
    inner = SparseVector(kept.support[inside], kept.values[inside], n)
    outer = SparseVector(kept.support[~inside], kept.values[~inside], n)
    # SparseVector sorts by index; inner.support is already sorted so assign stays aligned
    return SupportDecomposition(inner, outer, r, assign, center_cols.shape[1])


@dataclass(frozen=True)
class EffectiveSource:
    support: np.ndarray
    values: np.ndarray
    epsilon: float | None = None
    relative_error: float | None = None

    def to_dict(self) -> dict:
        return {"support": np.asarray(self.support).tolist(),
                "values": [[v.real, v.imag] for v in self.values],
                "epsilon": self.epsilon, "relative_error": self.relative_error}


def effective_source(decomp: SupportDecomposition, center_cols: np.ndarray, matrix: SensingMatrix,
                     truth=None) -> EffectiveSource:
    """Gram-weighted sum of the inner entries of each ball, projected on the ball center.

    ``truth`` holds the per-source amplitudes (in unit-column scaling);
    when given, ``||truth - effective||_1 / ||truth||_1`` is reported.
    """
    weights = center_cols.conj().T @ matrix.entries[:, decomp.inner.support]
    values = np.zeros(decomp.n_balls, dtype=complex)
    for k, (b, v) in enumerate(zip(decomp.ball_assignment, decomp.inner.values)):
        values[b] += v * weights[b, k]
    err = None
    if truth is not None:
        t = np.asarray(truth, dtype=complex)
        err = float(np.abs(t - values).sum() / np.abs(t).sum())
    return EffectiveSource(np.arange(decomp.n_balls), values, None, err)


@dataclass(frozen=True)
class BoundCheck:
    applicable: bool
    holds: bool | None
    lhs: float
    rhs: float
    note: str = ""

    def to_dict(self) -> dict:
        return {"applicable": self.applicable, "holds": self.holds, "lhs": self.lhs,
                "rhs": self.rhs, "note": self.note}


def separated_bounds(result, center_cols: np.ndarray, matrix: SensingMatrix, r: float,
                     truth, fraction: float = 0.01) -> dict:
    """Outer-mass and effective-source bounds for well-separated sources.

    Checks ``||rho_outer||_1 <= (2 I / r) ||rho||_1`` on the minimizer and
    ``||truth - effective||_1 <= (2 I / r) ||truth||_1`` where ``I`` is the
    interaction coefficient of the sources over the grid.
    """
    inter = interaction_coefficient(center_cols.conj().T @ matrix.entries)
    try:
        decomp = decompose_support(result, center_cols, matrix, r, fraction)
    except HypothesisError as exc:
        na = BoundCheck(False, None, float("nan"), float("nan"), str(exc))
        return {"interaction": inter.value, "outer": na, "effective": na, "decomposition": None}
    factor = 2 * inter.value / r
    total = decomp.total_l1
    outer = BoundCheck(True, decomp.outer.l1() <= factor * total + 1e-12 * total,
                       decomp.outer.l1(), factor * total)
    eff = effective_source(decomp, center_cols, matrix, truth)
    t_l1 = float(np.abs(np.asarray(truth)).sum())
    lhs = eff.relative_error * t_l1
    effective = BoundCheck(True, lhs <= factor * t_l1 + 1e-12 * t_l1, lhs, factor * t_l1)
    return {"interaction": inter.value, "outer": outer, "effective": effective,
            "decomposition": decomp, "effective_source": eff}


@dataclass(frozen=True)
class ClusterCover:
    centers: np.ndarray      # grid indices of the ball centers
    assignment: np.ndarray   # cluster index for each source
    epsilon: float

    @property
    def size(self) -> int:
        return len(self.centers)

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "assignment": self.assignment.tolist(),
                "epsilon": self.epsilon}


def cluster_cover(source_cols: np.ndarray, matrix: SensingMatrix, epsilon: float) -> ClusterCover:
    """Greedy cover of the sources by disjoint ``epsilon``-balls centered at grid points.

    Each candidate center is the grid point nearest (in the semi-metric)
    to an uncovered source; the candidate covering the most uncovered
    sources wins, ties going to the lowest source index.
    """
    if not 0 < epsilon < 1:
        raise ConfigError(f"epsilon must lie in (0, 1), got {epsilon}")
    G = matrix.entries
    src_grid = np.abs(source_cols.conj().T @ G)        # (s, N)
    nearest = np.argmax(src_grid, axis=1)
    s = source_cols.shape[1]
    covered = np.full(s, -1)
    centers: list[int] = []
    while (covered < 0).any():
        todo = np.flatnonzero(covered < 0)
        best, best_members = -1, None
        for j in todo:
            members = todo[(1.0 - src_grid[todo, nearest[j]]) < epsilon]
            if best_members is None or members.size > best_members.size:
                best, best_members = int(nearest[j]), members
        if best_members.size == 0:
            raise CoverInfeasibleError(
                f"source {todo[0]} is not within {epsilon} of its nearest grid point")
        covered[best_members] = len(centers)
        centers.append(best)
    centers_arr = np.array(centers, dtype=int)
    report = disjointness(G[:, centers_arr], G, epsilon)
    if not report.disjoint:
        i, j = report.offending_pair
        raise CoverInfeasibleError(f"cover balls {i} and {j} overlap at epsilon = {epsilon}")
    return ClusterCover(centers_arr, covered, epsilon)


def cluster_effective_source(rho, cover: ClusterCover, source_cols: np.ndarray,
                             matrix: SensingMatrix) -> EffectiveSource:
    """Per-cluster sums of source amplitudes projected on the cluster center column."""
    rho = np.asarray(rho, dtype=complex)
    centers = matrix.entries[:, cover.centers]
    weights = centers.conj().T @ source_cols            # (K, s)
    values = np.zeros(cover.size, dtype=complex)
    for q, b in enumerate(cover.assignment):
        values[b] += rho[q] * weights[b, q]
    return EffectiveSource(cover.centers.copy(), values, cover.epsilon)


def cluster_bound_check(result, cover: ClusterCover, source_cols: np.ndarray, rho,
                        matrix: SensingMatrix, r: float, fraction: float = 0.01) -> dict:
    """Outer-mass bound for clustered sources.

    Checks ``||rho_outer||_1 <= (2 I_eps / r) ||rho_star||_1 + (||rho||_1 - ||rho_bar||_1) / r``
    where ``I_eps`` is the interaction coefficient of the cluster centers.
    Hypotheses (``eps < r < 1``, ``I_eps < 1``, disjoint r-balls) that fail
    produce a not-applicable verdict.
    """
    centers = matrix.entries[:, cover.centers]
    inter = interaction_coefficient(centers.conj().T @ matrix.entries).value
    eff = cluster_effective_source(rho, cover, source_cols, matrix)
    out = {"interaction": inter, "effective_source": eff, "decomposition": None}
    reason = ""
    if not cover.epsilon < r < 1:
        reason = f"needs epsilon < r < 1 (epsilon={cover.epsilon}, r={r})"
    elif inter >= 1:
        reason = f"interaction coefficient {inter:.3g} is not below 1"
    if not reason:
        try:
            decomp = decompose_support(result, centers, matrix, r, fraction)
        except HypothesisError as exc:
            reason = str(exc)
    if reason:
        out["check"] = BoundCheck(False, None, float("nan"), float("nan"), reason)
        return out
    rho_l1 = float(np.abs(rho).sum())
    rhs = 2 * inter / r * decomp.total_l1 + (rho_l1 - float(np.abs(eff.values).sum())) / r
    lhs = decomp.outer.l1()
    out["decomposition"] = decomp
    out["check"] = BoundCheck(True, lhs <= rhs + 1e-12 * max(rho_l1, 1.0), lhs, rhs)
    return out


@dataclass(frozen=True)
class GammaSweep:
    gammas: np.ndarray
    confined: np.ndarray
    nonzero: np.ndarray
    first_confining: float | None
    # smallest swept weight from which every larger weight also confines
    confining_from: float | None
    results: list = field(default_factory=list, repr=False)

    @property
    def monotone(self) -> bool:
        """Confinement never lapses once reached."""
        return self.first_confining is not None and self.first_confining == self.confining_from

    @property
    def nontrivial(self) -> bool:
        """Confinement holds from a weight whose minimizer is not identically zero."""
        return self.confining_from is not None and bool(
            self.nonzero[np.argmax(self.gammas >= self.confining_from)])

    def to_dict(self) -> dict:
        return {"gammas": self.gammas.tolist(), "confined": self.confined.tolist(),
                "nonzero": self.nonzero.tolist(), "first_confining": self.first_confining,
                "confining_from": self.confining_from, "monotone": self.monotone,
                "nontrivial": self.nontrivial}


def gamma_sweep(matrix: SensingMatrix, d, center_cols: np.ndarray, r: float,
                settings: SolveSettings | None = None, steps: int = 16,
                base_fraction: float = 1e-4, fraction: float = 0.01) -> GammaSweep:
    """Solve the penalty problem on ``gamma_0 * 2^k`` and record support confinement.

    ``gamma_0 = base_fraction * ||G^H d||_inf``.  Confinement means the
    thresholded support lies in the union of the balls ``D(., y_j) < r``.
    """
    st = settings or SolveSettings()
    d = np.asarray(d, dtype=complex)
    g0 = base_fraction * float(np.max(np.abs(matrix.entries.conj().T @ d)))
    gammas = g0 * 2.0 ** np.arange(steps)
    inside = ball_masks(center_cols, matrix.entries, r).any(axis=0)
    lip = power_iteration(matrix, seed=st.seed)
    confined, nonzero, results = [], [], []
    x0 = None
    for g in gammas:
        res = l1_penalty(matrix, d, replace(st, gamma=float(g)), x0=x0, lipschitz=lip)
        x0 = res.rho_star
        sup = threshold(res.rho_star, fraction).support
        confined.append(bool(inside[sup].all()))
        nonzero.append(bool(sup.size))
        results.append(res)
    confined_arr = np.array(confined)
    idx = np.flatnonzero(confined_arr)
    first = float(gammas[idx[0]]) if idx.size else None
    lapses = np.flatnonzero(~confined_arr)
    start = lapses[-1] + 1 if lapses.size else 0
    from_ = float(gammas[start]) if start < gammas.size else None
    return GammaSweep(gammas, confined_arr, np.array(nonzero), first, from_, results)
