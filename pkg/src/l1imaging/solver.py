"""Complex l1 solvers: basis pursuit (ADMM), l1 penalty (FISTA) and the noise-ball variant."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DimensionError, InfeasibleError
from .sensing import SensingMatrix, SparseVector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveSettings:
    max_iters: int = 50_000
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    admm_rho: float = 1.0
    relaxation: float = 1.6
    fista_step: float | None = None
    gamma: float = 0.0
    threshold_fraction: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ConfigError("solver tolerances must be positive")
        if not 0 <= self.threshold_fraction < 1:
            raise ConfigError("threshold_fraction must lie in [0, 1)")
        if self.admm_rho <= 0:
            raise ConfigError("admm_rho must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be positive")


@dataclass(frozen=True)
class RecoveryResult:
    rho_star: np.ndarray
    rho_thresholded: SparseVector
    residual_l2: float
    objective: float
    iterations: int
    converged: bool
    method: str = ""
    gamma: float = 0.0

    def to_dict(self) -> dict:
        t = self.rho_thresholded
        return {
            "method": self.method, "gamma": self.gamma,
            "support": t.support.tolist(),
            "values": [[v.real, v.imag] for v in t.values],
            "residual_l2": self.residual_l2, "objective": self.objective,
            "iterations": self.iterations, "converged": self.converged,
        }

    def save_csv(self, path) -> None:
        x = self.rho_star
        table = np.column_stack([np.arange(x.size), x.real, x.imag, np.abs(x)])
        np.savetxt(path, table, delimiter=",", header="index,real,imag,modulus", comments="",
                   fmt=["%d", "%.17g", "%.17g", "%.17g"])


def _entries(matrix) -> np.ndarray:
    return matrix.entries if isinstance(matrix, SensingMatrix) else np.asarray(matrix)


def soft_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    """Complex soft threshold: shrink each modulus by ``tau``, keep the phase."""
    mag = np.abs(x)
    return x * (np.maximum(mag - tau, 0.0) / np.maximum(mag, np.finfo(float).tiny))


def power_iteration(A, iters: int = 50, tol: float = 1e-8, seed: int = 0) -> float:
    """Largest eigenvalue of ``A^H A``."""
    A = _entries(A)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1]) + 1j * rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = A.conj().T @ (A @ v)
        new = float(np.linalg.norm(w))
        if new == 0:
            return 0.0
        v = w / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return lam


def threshold(result, fraction: float = 0.01) -> SparseVector:
    """Keep nonzero entries whose modulus is at least ``fraction`` times the largest."""
    if not 0 <= fraction < 1:
        raise ConfigError("threshold fraction must lie in [0, 1)")
    x = result.rho_star if isinstance(result, RecoveryResult) else np.asarray(result, dtype=complex)
    mag = np.abs(x)
    peak = mag.max() if mag.size else 0.0
    if peak == 0:
        return SparseVector(np.empty(0, dtype=int), np.empty(0, dtype=complex), x.size)
    keep = np.flatnonzero((mag >= fraction * peak) & (mag > 0))
    return SparseVector(keep, x[keep], x.size)


def recovery_error(estimate, truth) -> float:
    """``||estimate - truth||_inf / ||truth||_inf`` (absolute error when the truth is zero)."""
    est = estimate.to_dense() if isinstance(estimate, SparseVector) else np.asarray(estimate, dtype=complex)
    tru = truth.to_dense() if isinstance(truth, SparseVector) else np.asarray(truth, dtype=complex)
    err = float(np.max(np.abs(est - tru))) if est.size else 0.0
    scale = float(np.max(np.abs(tru))) if tru.size else 0.0
    return err / scale if scale > 0 else err


def is_recovered(estimate, truth, tolerance: float = 0.01) -> bool:
    return recovery_error(estimate, truth) < tolerance


def _result(A, d, x, settings, iters, converged, method, gamma=0.0) -> RecoveryResult:
    res = float(np.linalg.norm(A @ x - d))
    l1 = float(np.abs(x).sum())
    obj = l1 if method == "basis_pursuit" else 0.5 * res * res + gamma * l1
    return RecoveryResult(x, threshold(x, settings.threshold_fraction), res, obj, iters,
                          converged, method, gamma)


class BasisPursuit:
    """ADMM for ``min ||x||_1`` subject to ``A x = d``.

    The affine projection uses a thin SVD of ``A`` computed once, so many
    right-hand sides can share the factorization.  Singular values below
    ``rcond`` times the largest are dropped; data whose relative distance
    to the retained range exceeds ``feasibility_tol`` are rejected.
    """

    def __init__(self, matrix, settings: SolveSettings | None = None, adaptive: bool = True,
                 rcond: float = 1e-7, feasibility_tol: float = 1e-6):
        self.A = _entries(matrix)
        self.settings = settings or SolveSettings()
        self.adaptive = adaptive
        self.feasibility_tol = feasibility_tol
        U, S, Vh = np.linalg.svd(self.A, full_matrices=False)
        # directions with tiny singular values are numerically unconstrained;
        # keeping them makes the projection amplify rounding error
        keep = S > S[0] * rcond if S.size else S > 0
        self._U, self._S, self._Vh = U[:, keep], S[keep], Vh[keep]
        self._VhH = np.ascontiguousarray(self._Vh.conj().T)

    def _project_data(self, d):
        """Minimum-norm solution and the part of ``d`` outside the range of ``A``."""
        coef = self._U.conj().T @ d
        return self._Vh.conj().T @ (coef / self._S), d - self._U @ coef

    def least_squares_residual(self, d) -> float:
        return float(np.linalg.norm(self._project_data(np.asarray(d, dtype=complex))[1]))

    def solve(self, d, x0=None) -> RecoveryResult:
        st = self.settings
        A = self.A
        d = np.asarray(d, dtype=complex)
        if d.shape != (A.shape[0],):
            raise DimensionError(f"data length {d.shape} does not match M = {A.shape[0]}")
        N = A.shape[1]
        scale = float(np.linalg.norm(d))
        if scale == 0:
            return _result(A, d, np.zeros(N, dtype=complex), st, 0, True, "basis_pursuit")
        b = d / scale
        x_min, outside = self._project_data(b)
        if np.linalg.norm(outside) > self.feasibility_tol:
            raise InfeasibleError(
                f"data lie outside the range of the sensing matrix (relative gap {np.linalg.norm(outside):.3g})")
        Vh, VhH = self._Vh, self._VhH

        def project(v):
            return v - VhH @ (Vh @ v) + x_min

        rho, alpha = st.admm_rho, st.relaxation
        z = x_min.copy() if x0 is None else np.asarray(x0, dtype=complex) / scale
        u = np.zeros(N, dtype=complex)  # scaled dual variable
        converged = False
        it = 0
        for it in range(1, st.max_iters + 1):
            x = project(z - u)
            x_hat = alpha * x + (1 - alpha) * z
            z_old = z
            z = soft_threshold(x_hat + u, 1.0 / rho)
            u = u + x_hat - z
            r_norm = np.linalg.norm(x - z)
            s_norm = rho * np.linalg.norm(z - z_old)
            eps_pri = st.tol_primal * max(np.linalg.norm(x), np.linalg.norm(z), 1e-30)
            eps_dual = st.tol_dual * max(rho * np.linalg.norm(u), 1e-30)
            if r_norm <= eps_pri and s_norm <= eps_dual:
                converged = True
                break
            if self.adaptive and it % 10 == 0:
                # residual balancing on relative residuals; u is rescaled with rho
                ratio = (r_norm / eps_pri) / max(s_norm / eps_dual, 1e-300)
                if ratio > 10:
                    rho *= 2
                    u /= 2
                elif ratio < 0.1:
                    rho /= 2
                    u *= 2
        if not converged:
            log.warning("basis pursuit stopped at the iteration cap (%d)", st.max_iters)
        # x satisfies the constraint exactly, z is the sparse iterate
        return _result(A, d, x * scale, st, it, converged, "basis_pursuit")


def basis_pursuit(matrix, d, settings: SolveSettings | None = None) -> RecoveryResult:
    return BasisPursuit(matrix, settings).solve(d)


def l1_penalty(matrix, d, settings: SolveSettings | None = None, x0=None,
               lipschitz: float | None = None) -> RecoveryResult:
    """FISTA with restart for ``0.5 ||A x - d||^2 + gamma ||x||_1``."""
    st = settings or SolveSettings()
    gamma = st.gamma
    if gamma < 0:
        raise ConfigError("gamma must be non-negative")
    A = _entries(matrix)
    d = np.asarray(d, dtype=complex)
    if d.shape != (A.shape[0],):
        raise DimensionError(f"data length {d.shape} does not match M = {A.shape[0]}")
    AH = A.conj().T
    if st.fista_step is not None:
        step = st.fista_step
    else:
        lip = lipschitz if lipschitz is not None else power_iteration(A, seed=st.seed)
        step = 1.0 / (lip * (1 + 1e-6)) if lip > 0 else 1.0

    def objective(x, r):
        return 0.5 * float(np.vdot(r, r).real) + gamma * float(np.abs(x).sum())

    x = np.zeros(A.shape[1], dtype=complex) if x0 is None else np.asarray(x0, dtype=complex).copy()
    r = A @ x - d
    f = objective(x, r)
    y, t = x.copy(), 1.0
    converged = False
    it = 0
    for it in range(1, st.max_iters + 1):
        ry = A @ y - d
        x_new = soft_threshold(y - step * (AH @ ry), step * gamma)
        r_new = A @ x_new - d
        f_new = objective(x_new, r_new)
        if f_new > f:
            # restart: take a plain proximal step from x and drop momentum
            x_new = soft_threshold(x - step * (AH @ r), step * gamma)
            r_new = A @ x_new - d
            f_new = objective(x_new, r_new)
            t = 1.0
            if f_new > f:
                x_new, r_new, f_new = x, r, f
        change = np.linalg.norm(x_new - x)
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        y = x_new + ((t - 1) / t_new) * (x_new - x)
        x_prev, x, r, f, t = x, x_new, r_new, f_new, t_new
        if change <= st.tol_primal * max(np.linalg.norm(x), 1e-30) and it > 1:
            converged = True
            break
        if not np.any(x) and not np.any(x_prev) and it > 1:
            converged = True
            break
    return _result(A, d, x, st, it, converged, "l1_penalty", gamma)


def default_gamma(matrix, d, noise_level: float) -> float:
    """Penalty weight ``noise_level * ||A^H d||_inf``."""
    A = _entries(matrix)
    return float(noise_level * np.max(np.abs(A.conj().T @ np.asarray(d, dtype=complex))))


def constrained_denoise(matrix, d, noise_level: float, settings: SolveSettings | None = None,
                        rtol: float = 0.02, max_bisections: int = 60) -> RecoveryResult:
    """``min ||x||_1`` subject to ``||A x - d|| <= noise_level`` by bisection on the penalty weight.

    ``noise_level`` is an absolute residual bound.
    """
    st = settings or SolveSettings()
    if noise_level < 0:
        raise ConfigError("noise_level must be non-negative")
    A = _entries(matrix)
    d = np.asarray(d, dtype=complex)
    N = A.shape[1]
    dnorm = float(np.linalg.norm(d))
    if noise_level >= dnorm:
        return _result(A, d, np.zeros(N, dtype=complex), st, 0, True, "constrained_denoise",
                       float(np.max(np.abs(A.conj().T @ d))) if dnorm else 0.0)
    bp = BasisPursuit(A, st)
    floor = bp.least_squares_residual(d)
    if noise_level == 0 or noise_level <= floor * (1 + rtol):
        if noise_level < floor * (1 - 1e-9):
            raise InfeasibleError(
                f"noise level {noise_level:.4g} is below the least-squares residual {floor:.4g}")
        return bp.solve(d) if floor <= 1e-10 * dnorm else l1_penalty(A, d, replace(st, gamma=0.0))
    lip = power_iteration(A, seed=st.seed)
    hi = float(np.max(np.abs(A.conj().T @ d)))
    lo = hi * 1e-8
    lo_log, hi_log = math.log(lo), math.log(hi)
    best = None
    x0 = None
    total_iters = 0
    for _ in range(max_bisections):
        g = math.exp(0.5 * (lo_log + hi_log))
        res = l1_penalty(A, d, replace(st, gamma=g), x0=x0, lipschitz=lip)
        total_iters += res.iterations
        x0 = res.rho_star
        if abs(res.residual_l2 - noise_level) <= rtol * noise_level:
            best = res
            break
        if res.residual_l2 > noise_level:
            hi_log = math.log(g)
        else:
            lo_log = math.log(g)
    if best is None:
        res = l1_penalty(A, d, replace(st, gamma=lo), x0=x0, lipschitz=lip)
        if res.residual_l2 > noise_level * (1 + rtol):
            raise InfeasibleError("penalty bisection could not reach the requested residual")
        best = res
    return replace(best, method="constrained_denoise", iterations=total_iters)
