"""Array/imaging-window geometry and paraxial regime checks.

All lengths are stored in units of the central wavelength, so ``k_o = 2*pi``
and the sound speed equals ``omega_o / (2*pi)``.  Conversion from meters
happens only in :func:`build_geometry`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from functools import cached_property
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ConfigError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Grid:
    """Regular lattice of cell centers covering the imaging window.

    Points are ordered with the range index varying fastest, i.e. the
    linear index of lattice coordinates ``(i1, i2, i3)`` is
    ``(i1 * n2 + i2) * n3 + i3``.
    """

    shape: tuple[int, int, int]
    mesh: tuple[float, float, float]
    center: tuple[float, float, float]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def points(self) -> np.ndarray:
        axes = [
            (np.arange(n) - (n - 1) / 2.0) * h + c
            for n, h, c in zip(self.shape, self.mesh, self.center)
        ]
        z1, z2, z3 = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([z1.ravel(), z2.ravel(), z3.ravel()], axis=1)
        pts.setflags(write=False)
        return pts

    def index(self, coords) -> np.ndarray | int:
        """Linear index of lattice coordinates (array of shape (..., 3) or a triple)."""
        c = np.asarray(coords, dtype=int)
        idx = np.ravel_multi_index(tuple(np.moveaxis(c, -1, 0)), self.shape)
        return int(idx) if np.ndim(idx) == 0 else idx

    def coords(self, index) -> np.ndarray:
        """Lattice coordinates of linear indices; inverse of :meth:`index`."""
        return np.stack(np.unravel_index(np.asarray(index), self.shape), axis=-1)

    def nearest_index(self, position) -> int:
        """Index of the grid point closest (Euclidean) to ``position``, clipped to the window."""
        p = np.asarray(position, dtype=float)
        lattice = [
            int(np.clip(np.rint((p[a] - self.center[a]) / self.mesh[a] + (self.shape[a] - 1) / 2.0),
                        0, self.shape[a] - 1))
            for a in range(3)
        ]
        return self.index(lattice)


@dataclass(frozen=True)
class ArrayLayout:
    receiver_positions: np.ndarray
    emitter_position: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.receiver_positions)


def receiver_lattice(aperture: float, spacing: float) -> np.ndarray:
    """Square receiver lattice centered at the origin, endpoints included.

    ``floor(a/h_A) + 1`` receivers per axis; the third coordinate is zero.
    """
    n = int(math.floor(aperture / spacing + 1e-9)) + 1
    x = (np.arange(n) - (n - 1) / 2.0) * spacing
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    pos = np.stack([x1.ravel(), x2.ravel(), np.zeros(n * n)], axis=1)
    pos.setflags(write=False)
    return pos


@dataclass(frozen=True)
class ImagingGeometry:
    """Physical setup in units of the central wavelength.

    ``frequencies`` are angular frequencies in the same unit as
    ``center_omega0``; with the default ``center_omega0 = 2*pi`` the
    sound speed is 1 and frequencies double as wavenumbers.
    """

    aperture_a: float
    range_L: float
    window_D: float
    window_D3: float
    mesh: tuple[float, float, float]
    array_spacing_hA: float
    wavelength_lambda0: float = 1.0
    center_omega0: float = TWO_PI
    bandwidth_B: float = 0.0
    frequencies: tuple[float, ...] = ()
    emitter: tuple[float, float, float] | None = None
    lambda0_meters: float | None = None
    window_D2: float | None = None
    cells: tuple[int, int, int] = field(default=(0, 0, 0))

    def __post_init__(self):
        for name in ("aperture_a", "range_L", "window_D", "window_D3",
                     "array_spacing_hA", "wavelength_lambda0", "center_omega0"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if len(self.mesh) != 3 or min(self.mesh) <= 0:
            raise ConfigError(f"mesh components must be positive, got {self.mesh}")
        if self.bandwidth_B < 0:
            raise ConfigError("bandwidth_B must be non-negative")
        if self.window_D2 is None:
            object.__setattr__(self, "window_D2", self.window_D)
        elif not self.window_D2 > 0:
            raise ConfigError(f"window_D2 must be positive, got {self.window_D2}")
        if not self.frequencies:
            object.__setattr__(self, "frequencies", (self.center_omega0,))
        if min(self.frequencies) <= 0:
            raise ConfigError("all frequencies must be positive")
        counts = []
        for extent, h, label in ((self.window_D, self.mesh[0], "window_D"),
                                 (self.window_D2, self.mesh[1], "window_D2"),
                                 (self.window_D3, self.mesh[2], "window_D3")):
            ratio = extent / h
            if ratio < 1 - 1e-9:
                raise ConfigError(f"mesh {h} is larger than {label} = {extent}")
            n = int(round(ratio))
            if abs(ratio - n) > 1e-6 * max(1.0, ratio):
                raise ConfigError(f"mesh {h} does not divide {label} = {extent}")
            counts.append(n)
        object.__setattr__(self, "cells", tuple(counts))

    @property
    def sound_speed_c(self) -> float:
        return self.center_omega0 * self.wavelength_lambda0 / TWO_PI

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.asarray(self.frequencies, dtype=float) / self.sound_speed_c

    @property
    def k0(self) -> float:
        return self.center_omega0 / self.sound_speed_c

    @property
    def h(self) -> float:
        return self.mesh[0]

    @property
    def h3(self) -> float:
        return self.mesh[2]

    @property
    def n_grid(self) -> int:
        return int(np.prod(self.cells))

    @property
    def n_receivers(self) -> int:
        n = int(math.floor(self.aperture_a / self.array_spacing_hA + 1e-9)) + 1
        return n * n

    @property
    def n_measurements(self) -> int:
        return self.n_receivers * len(self.frequencies)

    @cached_property
    def grid(self) -> Grid:
        return Grid(self.cells, tuple(self.mesh), (0.0, 0.0, self.range_L))

    @cached_property
    def array(self) -> ArrayLayout:
        emitter = None if self.emitter is None else np.asarray(self.emitter, dtype=float)
        return ArrayLayout(receiver_lattice(self.aperture_a, self.array_spacing_hA), emitter)

    def with_mesh(self, h: float, h3: float, cells: Sequence[int] | None = None) -> "ImagingGeometry":
        """Copy with a new mesh; the cell counts are kept unless ``cells`` is given."""
        n1, n2, n3 = self.cells if cells is None else cells
        return ImagingGeometry(**{
            **self._fields(),
            "mesh": (h, h, h3),
            "window_D": n1 * h,
            "window_D2": n2 * h,
            "window_D3": n3 * h3,
        })

    def _fields(self) -> dict[str, Any]:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "cells"}
        return d

    def to_dict(self) -> dict[str, Any]:
        d = self._fields()
        d["mesh"] = list(d["mesh"])
        d["frequencies"] = list(d["frequencies"])
        d["emitter"] = None if d["emitter"] is None else list(d["emitter"])
        d["units"] = "wavelength"
        return d

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _length(value, scale: float, name: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not v > 0:
        raise ConfigError(f"{name} must be positive, got {v}")
    return v * scale


def sample_frequencies(center: float, bandwidth: float, count: int, span: float = 4.0) -> tuple[float, ...]:
    """Uniform frequency samples on ``center +/- span*bandwidth``."""
    if bandwidth == 0 or count <= 1:
        return (center,)
    return tuple(center + np.linspace(-span, span, count) * bandwidth)


def build_geometry(config: Mapping[str, Any]) -> ImagingGeometry:
    """Build and validate an :class:`ImagingGeometry` from a plain mapping.

    Recognised keys (lengths in wavelengths unless ``units == "meters"``,
    in which case ``wavelength`` gives the central wavelength in meters)::

        aperture, range, mesh: [h, h3], array_spacing,
        window: [D, D3] or [D1, D2, D3],  or  cells: [n, n3] or [n1, n2, n3],
        center_omega, bandwidth, n_frequencies, frequency_span,
        frequencies, emitter: [x1, x2, x3]
    """
    units = str(config.get("units", "wavelength")).lower()
    if units in ("wavelength", "wavelengths", "lambda"):
        scale, lam_m = 1.0, config.get("wavelength")
    elif units in ("m", "meter", "meters"):
        if "wavelength" not in config:
            raise ConfigError("units='meters' requires the central 'wavelength' in meters")
        lam_m = _length(config["wavelength"], 1.0, "wavelength")
        scale = 1.0 / lam_m
    else:
        raise ConfigError(f"unknown length unit {units!r}")

    for key in ("aperture", "range", "mesh", "array_spacing"):
        if key not in config:
            raise ConfigError(f"geometry is missing required key {key!r}")
    a = _length(config["aperture"], scale, "aperture")
    L = _length(config["range"], scale, "range")
    mesh = config["mesh"]
    if not isinstance(mesh, Sequence) or len(mesh) not in (2, 3):
        raise ConfigError("mesh must be [h, h3] or [h, h, h3]")
    h = _length(mesh[0], scale, "mesh h")
    h3 = _length(mesh[-1], scale, "mesh h3")
    hA = _length(config["array_spacing"], scale, "array_spacing")

    if "cells" in config:
        cells = [int(c) for c in config["cells"]]
        if len(cells) not in (2, 3) or min(cells) < 1:
            raise ConfigError("cells must be [n, n3] or [n1, n2, n3] positive integers")
        D, D2, D3 = cells[0] * h, cells[-2] * h, cells[-1] * h3
    elif "window" in config:
        win = config["window"]
        D = _length(win[0], scale, "window D")
        D2 = _length(win[-2], scale, "window D2") if len(win) == 3 else D
        D3 = _length(win[-1], scale, "window D3")
    else:
        raise ConfigError("geometry needs either 'window' or 'cells'")

    omega0 = float(config.get("center_omega", TWO_PI))
    B = float(config.get("bandwidth", 0.0))
    if "frequencies" in config:
        freqs = tuple(float(w) for w in config["frequencies"])
    else:
        freqs = sample_frequencies(omega0, B, int(config.get("n_frequencies", 1)),
                                   float(config.get("frequency_span", 4.0)))
    emitter = config.get("emitter")
    if emitter is not None:
        emitter = tuple(float(v) * scale for v in emitter)
    return ImagingGeometry(
        aperture_a=a, range_L=L, window_D=D, window_D2=D2, window_D3=D3, mesh=(h, h, h3),
        array_spacing_hA=hA, center_omega0=omega0, bandwidth_B=B,
        frequencies=freqs, emitter=emitter,
        lambda0_meters=None if lam_m is None else float(lam_m),
    )


def load_geometry(path) -> ImagingGeometry:
    with open(path, encoding="utf-8") as fh:
        return build_geometry(json.load(fh))


@dataclass(frozen=True)
class RegimeRatio:
    name: str
    value: float
    kind: str  # "small" (must be << 1) or "large" (must be >~ 1)
    threshold: float
    passed: bool


@dataclass(frozen=True)
class RegimeReport:
    ratios: tuple[RegimeRatio, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.ratios)

    @property
    def warnings(self) -> list[str]:
        return [
            f"{r.name} = {r.value:.4g} {'<' if r.kind == 'large' else '>'} {r.threshold}"
            for r in self.ratios if not r.passed
        ]

    def __getitem__(self, name: str) -> RegimeRatio:
        for r in self.ratios:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "ratios": [asdict(r) for r in self.ratios]}


def _ratio(name, value, kind, small, large):
    thr = small if kind == "small" else large
    ok = value <= thr if kind == "small" else value >= thr
    return RegimeRatio(name, float(value), kind, thr, bool(ok))


def check_paraxial_regime(geom: ImagingGeometry, small: float = 0.1, large: float = 1.0) -> RegimeReport:
    """Evaluate the dimensionless ratios that define the paraxial regime.

    ``small`` operationalises "much less than one" and ``large``
    operationalises "at least of order one".
    """
    lam, a, L = geom.wavelength_lambda0, geom.aperture_a, geom.range_L
    D, D3 = max(geom.window_D, geom.window_D2), geom.window_D3
    fres = a * a / (lam * L)
    return RegimeReport((
        _ratio("fresnel_number", fres, "large", small, large),
        _ratio("fresnel_range", fres * D3 / L, "large", small, large),
        _ratio("window_fresnel", D * D / (lam * L), "small", small, large),
        _ratio("cross_range_linearization", fres * a * D / L**2, "small", small, large),
        _ratio("range_quadratic", fres * (D3 / L) ** 2, "small", small, large),
        _ratio("aperture_range", fres * (a / L) ** 2 * D3 / L, "small", small, large),
    ))


@dataclass(frozen=True)
class SamplingReport:
    cross_range_margin: float   # (lambda L / D) / h_A
    range_margin: float         # (lambda L^2 / (a D3)) / h_A
    continuous_aperture_ok: bool
    underdetermined_margin: float  # h_A / (a h/D sqrt(h3/D3))
    underdetermined: bool
    n_measurements: int
    n_unknowns: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def check_array_sampling(geom: ImagingGeometry, small: float = 0.1) -> SamplingReport:
    """Check receiver spacing against the continuous-aperture and underdetermined conditions.

    A margin ``m`` means the spacing is ``m`` times smaller (continuous
    aperture) or larger (underdetermined) than the critical value; the
    continuous-aperture checks require ``m >= 1/small``.
    """
    lam, a, L = geom.wavelength_lambda0, geom.aperture_a, geom.range_L
    D, D3, hA = max(geom.window_D, geom.window_D2), geom.window_D3, geom.array_spacing_hA
    m1 = lam * L / D / hA
    m2 = lam * L * L / (a * D3) / hA
    need = (1.0 / small) * (1 - 1e-12)
    m3 = hA / (a * geom.h / D * math.sqrt(geom.h3 / D3))
    return SamplingReport(
        cross_range_margin=m1,
        range_margin=m2,
        continuous_aperture_ok=bool(m1 >= need and m2 >= need),
        underdetermined_margin=m3,
        underdetermined=bool(m3 > 1.0),
        n_measurements=geom.n_measurements,
        n_unknowns=geom.n_grid,
    )
