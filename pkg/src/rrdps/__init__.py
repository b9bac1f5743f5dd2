"""Passive round-robin differential-phase-shift QKD, end to end.

A photon-level Monte Carlo of the interference measurement (kernel),
the classical sifting pipeline (sift), the finite-key security bound
(security), exact small-instance verifiers of the announcement
statistics (oracle) and block-size scans (scan), with a deterministic
command-line surface (cli, ``rrdps`` entry point).

Event-processing hot loops run on a compiled backend when the extension
built; a pure-Python twin with bit-identical outputs is the fallback.
``rrdps._kernels.BACKEND`` names the active one.
"""

__version__ = "0.1.0"

from . import kernel, oracle, scan, security, sift
from ._kernels import BACKEND

__all__ = [
    "__version__",
    "BACKEND",
    "kernel",
    "oracle",
    "scan",
    "security",
    "sift",
]
