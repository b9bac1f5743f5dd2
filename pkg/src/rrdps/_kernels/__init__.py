"""Event-processing kernels with a compiled fast path.

Two interchangeable backends implement the hot loops (dead-time
filtering, per-block pair sifting): a Cython extension built at install
time and a pure-Python reference. Selection happens once at import:

- ``RRDPS_KERNEL=auto`` (default): compiled if available, else reference.
- ``RRDPS_KERNEL=cython``: require the extension, fail loudly if absent.
- ``RRDPS_KERNEL=reference``: force the pure-Python implementation.

Both backends are bit-for-bit interchangeable; the choice only affects
speed. ``BACKEND`` names the active one.
"""

from __future__ import annotations

import os

from . import reference

try:
    from . import _fast
except ImportError:
    _fast = None

_choice = os.environ.get("RRDPS_KERNEL", "auto").lower()
if _choice == "reference":
    _impl = reference
elif _choice == "cython":
    if _fast is None:
        raise RuntimeError(
            "RRDPS_KERNEL=cython but the compiled extension is not installed"
        )
    _impl = _fast
elif _choice == "auto":
    _impl = _fast if _fast is not None else reference
else:
    raise RuntimeError(f"RRDPS_KERNEL must be auto, cython or reference, got {_choice!r}")

BACKEND: str = "cython" if _impl is _fast and _fast is not None else "reference"

splitmix64 = _impl.splitmix64
stream_draw = _impl.stream_draw
deadtime_mask = _impl.deadtime_mask
sift_events = _impl.sift_events

__all__ = [
    "BACKEND",
    "reference",
    "splitmix64",
    "stream_draw",
    "deadtime_mask",
    "sift_events",
]
