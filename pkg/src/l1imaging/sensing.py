"""Column-normalized sensing matrices and the lattice Gram kernels."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .errors import ConfigError, DimensionError
from .geometry import Grid, ImagingGeometry
from .wavemodel import (
    ParaxialScales,
    broadband_gram_offset,
    paraxial_gram_offset,
    stripped_columns,
    strip_factors,
)

Mode = Literal["single_freq", "multi_freq", "born", "paraxial"]
_MAGIC = b"L1IMGMAT"


@dataclass(frozen=True)
class SparseVector:
    support: np.ndarray
    values: np.ndarray
    size: int

    def __post_init__(self):
        sup = np.asarray(self.support, dtype=int).ravel()
        vals = np.asarray(self.values, dtype=complex).ravel()
        if sup.size != vals.size:
            raise DimensionError("support and values differ in length")
        if sup.size and (sup.min() < 0 or sup.max() >= self.size):
            raise DimensionError("support index out of range")
        if np.unique(sup).size != sup.size:
            raise DimensionError("support indices must be distinct")
        order = np.argsort(sup)
        object.__setattr__(self, "support", sup[order])
        object.__setattr__(self, "values", vals[order])

    @property
    def sparsity(self) -> int:
        return int(self.support.size)

    @classmethod
    def from_dense(cls, x, atol: float = 0.0) -> "SparseVector":
        x = np.asarray(x, dtype=complex)
        sup = np.flatnonzero(np.abs(x) > atol)
        return cls(sup, x[sup], x.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.size, dtype=complex)
        out[self.support] = self.values
        return out

    def l1(self) -> float:
        return float(np.abs(self.values).sum())


@dataclass(frozen=True)
class SensingMatrix:
    """Unit-norm columns ``g_j`` with the record needed to undo the scaling.

    The stored unknowns relate to physical source amplitudes ``f_j`` by
    ``rho_j = alpha_j * phase_strip_j * f_j``.
    """

    entries: np.ndarray
    column_norms_alpha: np.ndarray
    grid: Grid
    mode: str
    phase_strip: np.ndarray
    geometry_hash: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def apply(self, rho) -> np.ndarray:
        return apply(self, rho)

    def adjoint(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=complex)
        if d.shape != (self.shape[0],):
            raise DimensionError(f"data length {d.shape} does not match M = {self.shape[0]}")
        return self.entries.conj().T @ d

    def gram(self) -> np.ndarray:
        return self.entries.conj().T @ self.entries

    def from_physical(self, amplitudes) -> np.ndarray:
        return self.column_norms_alpha * self.phase_strip * np.asarray(amplitudes, dtype=complex)

    def to_physical(self, rho) -> np.ndarray:
        return np.asarray(rho, dtype=complex) * np.conj(self.phase_strip) / self.column_norms_alpha

    def save(self, path) -> None:
        """Binary layout: magic, uint64 header length, JSON header, then
        entries (M*N complex128, row-major), alpha (N float64) and phase
        strip (N complex128), all little-endian."""
        M, N = self.shape
        header = json.dumps({
            "M": M, "N": N, "mode": self.mode, "geometry_hash": self.geometry_hash,
            "grid": {"shape": list(self.grid.shape), "mesh": list(self.grid.mesh),
                     "center": list(self.grid.center)},
            "dtype": "complex128", "order": "row-major",
        }).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(np.ascontiguousarray(self.entries, dtype="<c16").tobytes())
            fh.write(np.asarray(self.column_norms_alpha, dtype="<f8").tobytes())
            fh.write(np.asarray(self.phase_strip, dtype="<c16").tobytes())

    @classmethod
    def load(cls, path) -> "SensingMatrix":
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                raise ConfigError(f"{path} is not a sensing-matrix file")
            (n,) = struct.unpack("<Q", fh.read(8))
            head = json.loads(fh.read(n))
            M, N = head["M"], head["N"]
            entries = np.frombuffer(fh.read(16 * M * N), dtype="<c16").reshape(M, N)
            alpha = np.frombuffer(fh.read(8 * N), dtype="<f8")
            strip = np.frombuffer(fh.read(16 * N), dtype="<c16")
        g = head["grid"]
        grid = Grid(tuple(g["shape"]), tuple(g["mesh"]), tuple(g["center"]))
        return cls(entries.astype(complex), alpha.astype(float), grid, head["mode"],
                   strip.astype(complex), head["geometry_hash"])


def apply(matrix: SensingMatrix, rho) -> np.ndarray:
    M, N = matrix.shape
    if isinstance(rho, SparseVector):
        if rho.size != N:
            raise DimensionError(f"vector length {rho.size} does not match N = {N}")
        return matrix.entries[:, rho.support] @ rho.values
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (N,):
        raise DimensionError(f"vector shape {rho.shape} does not match N = {N}")
    return matrix.entries @ rho


def assemble_exact(geom: ImagingGeometry, mode: Mode | None = None) -> SensingMatrix:
    """Exact Green's-function sensing matrix with unit columns.

    ``mode`` defaults to ``single_freq`` or ``multi_freq`` depending on the
    number of frequencies in the geometry.
    """
    if mode is None:
        mode = "single_freq" if len(geom.frequencies) == 1 else "multi_freq"
    if mode == "single_freq" and len(geom.frequencies) != 1:
        raise ConfigError("single_freq mode needs exactly one frequency")
    if mode not in ("single_freq", "multi_freq", "born"):
        raise ConfigError(f"unknown assembly mode {mode!r}")
    born = mode == "born"
    pts = geom.grid.points
    cols = stripped_columns(geom, pts, born=born)
    alpha = np.linalg.norm(cols, axis=0)
    return SensingMatrix(cols / alpha, alpha, geom.grid, mode,
                         strip_factors(geom, pts, born), geom.hash())


def paraxial_columns(geom: ImagingGeometry, points) -> np.ndarray:
    """Discrete-array paraxial columns at the central wavenumber, unit norm."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x = geom.array.receiver_positions[:, :2]
    L = geom.range_L
    phase = (np.sum(x * x, axis=1)[:, None] * (pts[None, :, 2] - L) / (2 * L * L)
             + x @ pts[:, :2].T / L)
    return np.exp(-1j * geom.k0 * phase) / np.sqrt(len(x))


def assemble_paraxial(geom: ImagingGeometry) -> SensingMatrix:
    """Sensing matrix of the paraxial model sampled on the receiver lattice.

    Usable where the imaging window is too large for the exact model to
    stay paraxial; ``alpha`` is the common far-field amplitude.
    """
    pts = geom.grid.points
    Mr = geom.n_receivers
    alpha = np.full(len(pts), np.sqrt(Mr) / (4 * np.pi * geom.range_L))
    return SensingMatrix(paraxial_columns(geom, pts), alpha, geom.grid, "paraxial",
                         np.exp(1j * geom.k0 * pts[:, 2]), geom.hash())


@dataclass(frozen=True)
class LatticeKernel:
    """Translation-invariant Gram ``<g_j, g_q> = table[coords_q - coords_j]``."""

    grid: Grid
    table: np.ndarray  # shape (2*n1-1, 2*n2-1, 2*n3-1), centred on zero offset

    @classmethod
    def from_function(cls, grid: Grid, kernel: Callable[[np.ndarray], np.ndarray]) -> "LatticeKernel":
        axes = [np.arange(-(n - 1), n) * h for n, h in zip(grid.shape, grid.mesh)]
        d1, d2, d3 = np.meshgrid(*axes, indexing="ij")
        offsets = np.stack([d1, d2, d3], axis=-1)
        table = np.asarray(kernel(offsets), dtype=complex)
        return cls(grid, table)

    @property
    def size(self) -> int:
        return self.grid.size

    def offsets(self) -> np.ndarray:
        """All lattice offsets in physical units, shape (K, 3), aligned with ``table.ravel()``."""
        axes = [np.arange(-(n - 1), n) * h for n, h in zip(self.grid.shape, self.grid.mesh)]
        d = np.meshgrid(*axes, indexing="ij")
        return np.stack([a.ravel() for a in d], axis=1)

    def entries(self, j, q) -> np.ndarray:
        cj = self.grid.coords(j)
        cq = self.grid.coords(q)
        shift = np.asarray(self.grid.shape) - 1
        off = cq - cj + shift
        return self.table[off[..., 0], off[..., 1], off[..., 2]]

    def row(self, j: int) -> np.ndarray:
        return self.entries(j, np.arange(self.size))

    def matrix(self) -> np.ndarray:
        idx = np.arange(self.size)
        return self.entries(idx[:, None], idx[None, :])

    def to_csv(self, path) -> None:
        off = self.offsets()
        table = np.column_stack([off, np.abs(self.table.ravel())])
        np.savetxt(path, table, delimiter=",", header="dz1,dz2,dz3,modulus", comments="",
                   fmt="%.12g")


def paraxial_kernel(geom: ImagingGeometry, kind: Literal["paraxial", "broadband"] = "paraxial") -> LatticeKernel:
    scales = ParaxialScales.from_geometry(geom)
    if kind == "paraxial":
        return LatticeKernel.from_function(geom.grid, lambda d: paraxial_gram_offset(scales, d))
    if kind == "broadband":
        if geom.bandwidth_B <= 0:
            raise ConfigError("broadband kernel requires a positive bandwidth")
        return LatticeKernel.from_function(geom.grid, lambda d: broadband_gram_offset(scales, d))
    raise ConfigError(f"unknown kernel kind {kind!r}")


def assemble_paraxial_gram(geom: ImagingGeometry, kind: Literal["paraxial", "broadband"] = "paraxial") -> np.ndarray:
    """Dense N x N Gram of the analytic kernel, filled from the offset table."""
    return paraxial_kernel(geom, kind).matrix()


def save_gram_offsets(path, kernel: LatticeKernel) -> None:
    kernel.to_csv(path)


def columns_at(matrix: SensingMatrix, geom: ImagingGeometry, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit columns for arbitrary (off-grid) points in the model of ``matrix``.

    Returns ``(columns, alpha, phase_strip)`` so that a source of physical
    amplitude ``f`` at a point contributes ``alpha * phase_strip * f``
    times its column to the data.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if matrix.mode == "paraxial":
        cols = paraxial_columns(geom, pts)
        alpha = np.full(len(pts), np.sqrt(geom.n_receivers) / (4 * np.pi * geom.range_L))
        return cols, alpha, np.exp(1j * geom.k0 * pts[:, 2])
    born = matrix.mode == "born"
    raw = stripped_columns(geom, pts, born=born)
    alpha = np.linalg.norm(raw, axis=0)
    return raw / alpha, alpha, strip_factors(geom, pts, born)
