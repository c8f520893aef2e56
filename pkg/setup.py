"""Build script for the compiled recurrence kernels.

The extension is optional: when Cython is unavailable the package falls back
to the pure-Python kernels in ``ssmmem._kernels_py`` at import time.
"""
import numpy as np
from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build without the compiled core
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "ssmmem._kernels",
                ["src/ssmmem/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
