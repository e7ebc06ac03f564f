"""Kernel backend selection.

All hot inner loops exist twice: numba @njit kernels (kernels_numba) and
vectorized pure-numpy equivalents (kernels_numpy). The active backend is
chosen once at import time from the SLIO_BACKEND environment variable:

    SLIO_BACKEND=auto    use numba when importable (default)
    SLIO_BACKEND=numba   require numba, fail if missing
    SLIO_BACKEND=numpy   force the pure-numpy path

Both backends are importable side by side regardless of this setting; the
`slio kernels` benchmark relies on that to time them against each other.
"""
import os

_choice = os.environ.get("SLIO_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"SLIO_BACKEND={_choice!r} not understood (expected auto, numba or numpy)"
    )

HAVE_NUMBA = False
if _choice != "numpy":
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:
        if _choice == "numba":
            raise ImportError("SLIO_BACKEND=numba but numba is not importable")

USE_NUMBA = HAVE_NUMBA and _choice != "numpy"
BACKEND = "numba" if USE_NUMBA else "numpy"
