"""Backend selection for the recurrence kernels.

The compiled extension is preferred. Setting the environment variable
``SSMMEM_PURE_PYTHON=1`` before import forces the pure-Python kernels, which
are also used automatically when the extension was not built.
"""
import os

if os.environ.get("SSMMEM_PURE_PYTHON", "") not in ("", "0"):
    from ._kernels_py import dense_recurrence, diag_recurrence, diag_recurrence_batch

    BACKEND = "python"
else:
    try:
        from ._kernels import dense_recurrence, diag_recurrence, diag_recurrence_batch

        BACKEND = "cython"
    except ImportError:  # extension not compiled
        from ._kernels_py import dense_recurrence, diag_recurrence, diag_recurrence_batch

        BACKEND = "python"

__all__ = ["BACKEND", "dense_recurrence", "diag_recurrence", "diag_recurrence_batch"]
