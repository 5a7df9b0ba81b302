"""Kernel backend selection.

The hot inner loops (pixel-point indexing, greedy suppression sampling,
ray casting, neighbor queries, dense 3D convolution) exist twice: a numba
``@njit`` build and a pure-numpy fallback. The ``OW3D_BACKEND`` environment
variable picks one at import time:

    OW3D_BACKEND=numba   force numba (raises if numba is not importable)
    OW3D_BACKEND=numpy   force the numpy fallback
    OW3D_BACKEND=auto    numba when importable, numpy otherwise (default)

Selection kernels (indexing, sampling, ray casting, neighbors) evaluate
bit-identical float64 expressions in both builds, so they return identical
results. Convolution reductions may differ between builds in the last ulp
(summation order); nothing downstream compares those bitwise.
"""

import os

_VALID = ("auto", "numba", "numpy")
_resolved: str | None = None


def requested_backend() -> str:
    """Raw OW3D_BACKEND value, defaulting to "auto"."""
    value = os.environ.get("OW3D_BACKEND", "auto").strip().lower()
    if value not in _VALID:
        raise ValueError(
            f"OW3D_BACKEND must be one of {_VALID}, got {value!r}"
        )
    return value


def resolve_backend() -> str:
    """Backend actually in use: "numba" or "numpy". Resolved once."""
    global _resolved
    if _resolved is None:
        req = requested_backend()
        if req == "numpy":
            _resolved = "numpy"
        elif req == "numba":
            import numba  # noqa: F401  (fail loudly if forced but absent)

            _resolved = "numba"
        else:
            try:
                import numba  # noqa: F401

                _resolved = "numba"
            except ImportError:
                _resolved = "numpy"
    return _resolved
