"""Sparse array imaging with l1 optimization and its resolution theory.

Submodules are imported lazily so that ``--threads`` on the command line
can configure BLAS before numpy loads.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("errors", "geometry", "wavemodel", "sensing", "coherence", "solver", "bounds",
               "analysis", "experiments", "cli")

_EXPORTS = {
    "ImagingGeometry": "geometry",
    "build_geometry": "geometry",
    "load_geometry": "geometry",
    "check_paraxial_regime": "geometry",
    "greens": "wavemodel",
    "fresnel_U": "wavemodel",
    "synthesize_data": "wavemodel",
    "SensingMatrix": "sensing",
    "assemble_exact": "sensing",
    "assemble_paraxial": "sensing",
    "paraxial_kernel": "sensing",
    "cumulative_coherence": "coherence",
    "interaction_coefficient": "coherence",
    "BasisPursuit": "solver",
    "SolveSettings": "solver",
    "basis_pursuit": "solver",
    "l1_penalty": "solver",
    "constrained_denoise": "solver",
    "base_resolution": "bounds",
    "sparsity_mesh_condition": "bounds",
    "separated_bounds": "analysis",
    "cluster_cover": "analysis",
    "gamma_sweep": "analysis",
}

__all__ = sorted(_EXPORTS) + list(_SUBMODULES)


def __getattr__(name: str):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    if name in _EXPORTS:
        return getattr(importlib.import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
