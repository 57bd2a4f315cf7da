"""Programmable spatially-varying spectral filter array: simulation and recovery.

Subpackage map:

- ``data_model``       containers and bit-exact file IO
- ``lc_optics``        LC-cell transmittance physics, retardance fits, gamma design
- ``patterns``         SLM pattern families, the 92-pattern set, greedy selection
- ``forward_sim``      noisy measurement synthesis from ground-truth cubes
- ``reconstruct``      least-squares / TV / rank-1 guided solvers
- ``analysis``         PSNR, SAM, benchmark sweeps, spectral-resolution probe
- ``material_id``      discriminative filter tiling and single-shot classification
- ``geom_calibration`` polynomial + RANSAC + homography calibration math
- ``cli``              batch command-line front end

Heavy submodules are loaded lazily so that importing :mod:`slmspec` stays cheap
and the CLI can pin threading environment variables before numpy is pulled in.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "data_model",
    "lc_optics",
    "patterns",
    "forward_sim",
    "reconstruct",
    "analysis",
    "material_id",
    "geom_calibration",
    "synthetic",
    "errors",
    "cli",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
