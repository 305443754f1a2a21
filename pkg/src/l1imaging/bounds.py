"""Closed-form resolution thresholds and the analytic bounds used to prove them."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Literal

from .errors import ConfigError, HypothesisError
from .geometry import ImagingGeometry

Regime = Literal["single_freq", "broadband"]

SINGLE_FREQ_C = (1.5) ** (2 / 3) * (math.pi + 1)
# Calibrated on the broadband kernel over s in {4, 16, 64}: with both mesh
# ratios above C ln s, mu(G, s) < 1/2 held everywhere sampled for C = 3,
# while C = 2.5 has a violating mesh (see tests/test_bounds.py).
BROADBAND_C = 3.0


@dataclass(frozen=True)
class BoundConstants:
    C: float = SINGLE_FREQ_C
    C1: float = 2.0
    C2: float = 16.0
    C_broadband: float = BROADBAND_C


@dataclass(frozen=True)
class ResolutionBounds:
    h_star: float
    h3_star: float
    regime: str
    s: int = 2
    mesh_condition_met: bool = False
    constants: BoundConstants = field(default_factory=BoundConstants)

    def to_dict(self) -> dict:
        return asdict(self)


def base_resolution(geom: ImagingGeometry, regime: Regime = "single_freq") -> ResolutionBounds:
    """Coarsest mesh at which any two grid points are resolved."""
    lam, L, a = geom.wavelength_lambda0, geom.range_L, geom.aperture_a
    h_star = 2 / math.pi * lam * L / a
    if regime == "single_freq":
        h3_star = 16 / math.pi * lam * L * L / (a * a)
    elif regime == "broadband":
        if geom.bandwidth_B <= 0:
            raise ConfigError("broadband base resolution needs a positive bandwidth")
        h3_star = math.sqrt(2 * math.log(2)) * geom.sound_speed_c / geom.bandwidth_B
    else:
        raise ConfigError(f"unknown regime {regime!r}")
    met = geom.h > h_star and geom.h3 > h3_star
    return ResolutionBounds(h_star, h3_star, regime, 2, met)


@dataclass(frozen=True)
class MeshVerdict:
    met: bool
    lhs: float
    rhs: float
    margin: float
    aspect: float  # (h/h*) / (h3/h3*)

    def to_dict(self) -> dict:
        return asdict(self)


def sparsity_mesh_condition(geom: ImagingGeometry, s: int, regime: Regime = "single_freq",
                            constants: BoundConstants | None = None) -> MeshVerdict:
    """Mesh condition that guarantees recovery of any ``s`` sources.

    Single frequency: ``[(h/h*)^2 (h3/h3*)]^(1/3) > C s^(2/3)``.
    Broadband: both ``h/h*`` and ``h3/h3*`` exceed ``C ln s``.
    """
    if s < 2:
        raise ConfigError("sparsity s must be at least 2")
    k = constants or BoundConstants()
    base = base_resolution(geom, regime)
    x, x3 = geom.h / base.h_star, geom.h3 / base.h3_star
    if regime == "single_freq":
        lhs = (x * x * x3) ** (1 / 3)
        rhs = k.C * s ** (2 / 3)
    else:
        lhs = min(x, x3)
        rhs = k.C_broadband * math.log(s)
    return MeshVerdict(lhs > rhs, lhs, rhs, lhs - rhs, x / x3)


def anisotropic_regime(h_over_H: float, h3_over_H3: float, s: int) -> dict:
    """Report on the strongly anisotropic mesh regime ``h3/H3 > (h/H)^4 s^2 / ln^6 s``."""
    threshold = h_over_H ** 4 * s * s / math.log(s) ** 6
    return {"h3_over_H3": h3_over_H3, "threshold": threshold, "in_regime": h3_over_H3 > threshold}


def lemma2_bound(h_over_H: float, h3_over_H3: float, s: int,
                 constants: BoundConstants | None = None) -> float:
    """Three-term upper estimate of ``mu(G, s)`` on the paraxial kernel."""
    if h_over_H <= 0 or h3_over_H3 <= 0:
        raise ConfigError("mesh ratios must be positive")
    if s < 2:
        raise ConfigError("sparsity s must be at least 2")
    k = constants or BoundConstants()
    ln_s = math.log(s)
    return (2 ** (5 / 3) * k.C * (s * s / (h_over_H ** 2 * h3_over_H3)) ** (1 / 3)
            + k.C1 * ln_s / h3_over_H3
            + k.C2 * ln_s ** 2 / h_over_H ** 2)


def sinc_bound(beta: float) -> float:
    """Bound on ``U(beta, 0) = |sinc(beta/2)|``: ``min(1, 2/|beta|)``."""
    return 1.0 if beta == 0 else min(1.0, 2.0 / abs(beta))


def eta_bound(eta: float) -> float:
    if eta == 0:
        raise HypothesisError("the eta bound needs eta != 0")
    return 2 * math.sqrt(2) / math.sqrt(abs(eta))


def cone_bound(beta: float, eta: float, alpha: float) -> float:
    """``(pi + 1)/alpha``, valid when ``alpha, eta > 0`` and ``beta > alpha + eta``."""
    if not (alpha > 0 and eta > 0 and beta > alpha + eta):
        raise HypothesisError(
            f"cone bound needs alpha, eta > 0 and beta > alpha + eta (got {beta}, {eta}, {alpha})")
    return (math.pi + 1) / alpha


def fresnel_bounds(beta: float, eta: float, alpha: float | None = None) -> dict[str, float | None]:
    """All applicable analytic bounds on ``U(beta, eta)``; inapplicable ones are ``None``."""
    out: dict[str, float | None] = {
        "sinc_bound": sinc_bound(beta) if eta == 0 else None,
        "eta_bound": eta_bound(eta) if eta != 0 else None,
        "cone_bound": None,
    }
    if alpha is not None and alpha > 0 and eta > 0 and beta > alpha + eta:
        out["cone_bound"] = cone_bound(beta, eta, alpha)
    return out
