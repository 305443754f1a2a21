"""Green's functions, Fresnel kernels and forward scattering models.

Inner products follow the convention ``<g_j, g_q> = g_j^H g_q`` (conjugate
linear in the first slot), so a Gram "entry (j, q)" is the projection of
column ``q`` onto column ``j``.  Offsets are always ``z_q - z_j``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, DimensionError, NearSingularError, SingularityError
from .geometry import ImagingGeometry

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_CHUNK = 4096


def greens(omega, x, y, c: float = 1.0):
    """Outgoing Helmholtz Green's function ``exp(ik|x-y|) / (4 pi |x-y|)``.

    ``x`` and ``y`` broadcast against each other along leading axes; the
    last axis holds the three coordinates.  ``omega`` broadcasts against
    the resulting distance array.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(x - y, axis=-1)
    if np.any(r <= 1e-12):
        raise SingularityError("Green's function evaluated at coincident points")
    k = np.asarray(omega, dtype=float) / c
    out = np.exp(1j * k * r) / (4 * np.pi * r)
    return out[()] if out.ndim == 0 else out


def fresnel_integral(beta, eta) -> np.ndarray | complex:
    """Complex integral of ``exp(-i beta t - i eta t^2)`` over ``t in [-1/2, 1/2]``.

    Composite 16-point Gauss-Legendre with ``max(8, ceil((|beta|+|eta|)/pi))``
    panels, so each panel spans at most about one radian of phase change
    per unit of the panel count.
    """
    b, e = np.broadcast_arrays(np.asarray(beta, dtype=float), np.asarray(eta, dtype=float))
    shape = b.shape
    b, e = b.ravel(), e.ravel()
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(e))):
        raise ValueError("fresnel_integral requires finite arguments")
    out = np.empty(b.size, dtype=complex)
    panels = np.maximum(8, np.ceil((np.abs(b) + np.abs(e)) / np.pi)).astype(int)
    for p in np.unique(panels):
        idx = np.flatnonzero(panels == p)
        edges = np.linspace(-0.5, 0.5, p + 1)
        half = 0.5 * (edges[1] - edges[0])
        t = ((edges[:-1] + edges[1:]) / 2)[:, None] + half * _GL_NODES[None, :]
        t = t.ravel()
        w = np.tile(_GL_WEIGHTS * half, p)
        for start in range(0, idx.size, _CHUNK):
            sel = idx[start:start + _CHUNK]
            phase = b[sel, None] * t[None, :] + e[sel, None] * (t * t)[None, :]
            out[sel] = np.exp(-1j * phase) @ w
    out = out.reshape(shape)
    return out[()] if out.ndim == 0 else out


def fresnel_U(beta, eta):
    """Modulus of :func:`fresnel_integral`, clipped to ``[0, 1]``."""
    return np.minimum(np.abs(fresnel_integral(beta, eta)), 1.0)


@dataclass(frozen=True)
class ParaxialScales:
    H: float
    H3: float
    calH: float
    calH3: float

    @classmethod
    def from_geometry(cls, geom: ImagingGeometry) -> "ParaxialScales":
        lam, L, a = geom.wavelength_lambda0, geom.range_L, geom.aperture_a
        B = geom.bandwidth_B
        return cls(
            H=lam * L / (2 * math.pi * a),
            H3=lam * L * L / (math.pi * a * a),
            calH=2 * L / (geom.k0 * a),
            calH3=math.sqrt(2) * geom.sound_speed_c / B if B > 0 else math.inf,
        )


def _offsets(zj, zq) -> np.ndarray:
    return np.asarray(zq, dtype=float) - np.asarray(zj, dtype=float)


def paraxial_gram_offset(scales: ParaxialScales, offset) -> np.ndarray | complex:
    """Continuous-aperture Gram entry for lattice offsets ``(dz1, dz2, dz3)``.

    Separable product of two 1D Fresnel integrals sharing the range argument.
    """
    d = np.asarray(offset, dtype=float)
    eta = d[..., 2] / scales.H3
    return fresnel_integral(d[..., 0] / scales.H, eta) * fresnel_integral(d[..., 1] / scales.H, eta)


def paraxial_gram(geom: ImagingGeometry, zj, zq):
    """Normalized continuous-aperture inner product ``<g_j, g_q>``."""
    return paraxial_gram_offset(ParaxialScales.from_geometry(geom), _offsets(zj, zq))


def broadband_gram_offset(scales: ParaxialScales, offset) -> np.ndarray | float:
    d = np.asarray(offset, dtype=float)
    # np.sinc(x) = sin(pi x)/(pi x)
    out = (np.exp(-d[..., 2] ** 2 / scales.calH3 ** 2)
           * np.abs(np.sinc(d[..., 0] / (np.pi * scales.calH)))
           * np.abs(np.sinc(d[..., 1] / (np.pi * scales.calH))))
    return out[()] if np.ndim(out) == 0 else out


def broadband_scaling_ok(geom: ImagingGeometry, small: float = 0.1) -> bool:
    """Whether the bandwidth sits between the window scales and ``(L/a)^2``."""
    lam, L, a, B = geom.wavelength_lambda0, geom.range_L, geom.aperture_a, geom.bandwidth_B
    ratio = geom.center_omega0 / B
    lower = max(geom.window_D / (lam * L / a), geom.window_D3 / (lam * L * L / a ** 2))
    return lower <= small * ratio and ratio <= small * (L / a) ** 2


def broadband_gram(geom: ImagingGeometry, zq, zl):
    """Modulus of the broadband Gram entry: Gaussian in range, sinc in cross-range."""
    if geom.bandwidth_B <= 0:
        raise ConfigError("broadband_gram requires a positive bandwidth")
    if not broadband_scaling_ok(geom):
        warnings.warn("bandwidth outside the broadband scaling regime", RuntimeWarning, stacklevel=2)
    return broadband_gram_offset(ParaxialScales.from_geometry(geom), _offsets(zq, zl))


def pulse_spectrum(geom: ImagingGeometry, omegas=None) -> np.ndarray:
    """Gaussian pulse ``exp(-(w - w_o)^2 / (4 B^2))``; identically one when ``B = 0``."""
    w = np.asarray(geom.frequencies if omegas is None else omegas, dtype=float)
    if geom.bandwidth_B <= 0:
        return np.ones_like(w)
    return np.exp(-(w - geom.center_omega0) ** 2 / (4 * geom.bandwidth_B ** 2))


def stripped_columns(geom: ImagingGeometry, points, born: bool = False) -> np.ndarray:
    """Phase-stripped exact columns, unnormalized, rows ordered frequency-major (``l * Mr + r``).

    Entries are ``f(w) G(w, x_r, z)`` (times ``G(w, x_e, z)`` when ``born``),
    multiplied by the conjugate of :func:`strip_factors`.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rec = geom.array.receiver_positions
    c = geom.sound_speed_c
    if born and geom.emitter is None:
        raise ConfigError("Born mode needs an emitter position")
    blocks = []
    for omega, fl in zip(geom.frequencies, pulse_spectrum(geom)):
        g = fl * greens(omega, rec[:, None, :], pts[None, :, :], c)
        if born:
            g = g * greens(omega, np.asarray(geom.emitter)[None, :], pts, c)[None, :]
        blocks.append(g)
    return np.concatenate(blocks, axis=0) * np.conj(strip_factors(geom, pts, born))[None, :]


def strip_factors(geom: ImagingGeometry, points, born: bool = False) -> np.ndarray:
    """Unit phases ``exp(i k_o z3)`` removed from each column (plus the emitter leg for Born)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    travel = pts[:, 2].copy()
    if born:
        travel += np.linalg.norm(pts - np.asarray(geom.emitter, dtype=float), axis=1)
    return np.exp(1j * geom.k0 * travel)


def broadband_gram_discrete(geom: ImagingGeometry, zq, zl) -> complex:
    """Normalized discrete double sum over frequencies and receivers."""
    if not geom.frequencies:
        raise ConfigError("empty frequency list")
    freqs = np.asarray(geom.frequencies)
    if freqs.size > 1:
        h_omega = np.min(np.diff(np.sort(freqs)))
        if h_omega * geom.window_D3 / geom.sound_speed_c > 1.0:
            warnings.warn("frequency sampling too coarse for the range window", RuntimeWarning,
                          stacklevel=2)
    cols = stripped_columns(geom, [zq, zl])
    cols = cols / np.linalg.norm(cols, axis=0)
    return complex(np.vdot(cols[:, 0], cols[:, 1]))


@dataclass(frozen=True)
class SourceScene:
    positions: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float)).reshape(-1, 3)
        amp = np.atleast_1d(np.asarray(self.amplitudes, dtype=complex))
        if len(pos) != len(amp):
            raise DimensionError("positions and amplitudes differ in length")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "amplitudes", amp)

    def __len__(self) -> int:
        return len(self.amplitudes)


@dataclass(frozen=True)
class ScattererScene:
    positions: np.ndarray
    reflectivities: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float)).reshape(-1, 3)
        refl = np.atleast_1d(np.asarray(self.reflectivities, dtype=complex))
        if len(pos) == 0:
            raise ConfigError("scatterer scene must contain at least one scatterer")
        if len(pos) != len(refl):
            raise DimensionError("positions and reflectivities differ in length")
        diff = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
        if np.any(diff[np.triu_indices(len(pos), 1)] <= 1e-12):
            raise ConfigError("scatterer positions must be pairwise distinct")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "reflectivities", refl)

    def __len__(self) -> int:
        return len(self.reflectivities)


def foldy_lax_solve(scene: ScattererScene, omega: float, x_e, c: float = 1.0,
                    max_condition: float = 1e8) -> np.ndarray:
    """Self-consistent illumination of every scatterer by an emitter at ``x_e``."""
    y = scene.positions
    s = len(y)
    rhs = greens(omega, np.asarray(x_e, dtype=float)[None, :], y, c)
    if s == 1:
        return np.atleast_1d(rhs)
    dist_ok = ~np.eye(s, dtype=bool)
    G = np.zeros((s, s), dtype=complex)
    # G[j, l] = G(y_l, y_j)
    r = np.linalg.norm(y[:, None, :] - y[None, :, :], axis=-1)
    G[dist_ok] = np.exp(1j * omega / c * r[dist_ok]) / (4 * np.pi * r[dist_ok])
    Q = np.eye(s) - G * scene.reflectivities[None, :]
    cond = np.linalg.cond(Q)
    if not np.isfinite(cond) or cond > max_condition:
        raise NearSingularError(f"Foldy-Lax matrix condition number {cond:.3g} exceeds {max_condition:g}")
    return np.linalg.solve(Q, rhs)


Model = Literal["sources", "born", "foldy_lax"]


def _noise(d: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    n = rng.standard_normal(d.shape) + 1j * rng.standard_normal(d.shape)
    norm = np.linalg.norm(n)
    return n * (level * np.linalg.norm(d) / norm) if norm > 0 else n


def synthesize_data(scene: SourceScene | ScattererScene, geom: ImagingGeometry,
                    model: Model = "sources", noise_level: float = 0.0,
                    seed: int | None = 0, max_condition: float = 1e8) -> np.ndarray:
    """Exact (non-paraxial) array data, ordered frequency-major.

    Noise is circular complex Gaussian rescaled so that
    ``||noise|| = noise_level * ||d||`` exactly.
    """
    if noise_level < 0:
        raise ConfigError("noise_level must be non-negative")
    if len(scene) == 0:
        raise ConfigError("scene is empty")
    rec = geom.array.receiver_positions
    f = pulse_spectrum(geom)
    c = geom.sound_speed_c
    blocks = []
    for omega, fl in zip(geom.frequencies, f):
        G = greens(omega, rec[:, None, :], scene.positions[None, :, :], c)
        if model == "sources":
            if not isinstance(scene, SourceScene):
                raise ConfigError("model 'sources' needs a SourceScene")
            weights = scene.amplitudes
        else:
            if not isinstance(scene, ScattererScene):
                raise ConfigError(f"model {model!r} needs a ScattererScene")
            if geom.emitter is None:
                raise ConfigError("scattering models need an emitter position")
            if model == "born":
                u = greens(omega, np.asarray(geom.emitter)[None, :], scene.positions, c)
            elif model == "foldy_lax":
                u = foldy_lax_solve(scene, omega, geom.emitter, c, max_condition)
            else:
                raise ConfigError(f"unknown data model {model!r}")
            weights = scene.reflectivities * u
        blocks.append(fl * (G @ weights))
    d = np.concatenate(blocks)
    if noise_level > 0:
        d = d + _noise(d, noise_level, np.random.default_rng(seed))
    return d


def save_data_csv(path, d) -> None:
    d = np.asarray(d, dtype=complex)
    table = np.column_stack([np.arange(d.size), d.real, d.imag])
    np.savetxt(path, table, delimiter=",", header="index,real,imag", comments="",
               fmt=["%d", "%.17g", "%.17g"])


def load_data_csv(path) -> np.ndarray:
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(table[:, 0])
    return table[order, 1] + 1j * table[order, 2]


def scene_to_dict(scene: SourceScene | ScattererScene) -> dict:
    if isinstance(scene, SourceScene):
        kind, vals = "sources", scene.amplitudes
    else:
        kind, vals = "scatterers", scene.reflectivities
    return {"kind": kind, "positions": scene.positions.tolist(),
            "amplitudes": [[v.real, v.imag] for v in vals]}


def scene_from_dict(data: dict) -> SourceScene | ScattererScene:
    kind = data.get("kind", "sources")
    pos = np.asarray(data.get("positions", []), dtype=float).reshape(-1, 3)
    raw = data.get("amplitudes", data.get("reflectivities", []))
    vals = np.array([complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v) for v in raw],
                    dtype=complex)
    if kind == "sources":
        return SourceScene(pos, vals)
    if kind == "scatterers":
        return ScattererScene(pos, vals)
    raise ConfigError(f"unknown scene kind {kind!r}")


def save_scene(path, scene) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)


def load_scene(path):
    with open(path, encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh))
