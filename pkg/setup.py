"""Build the optional Cython kernel; the package falls back to numpy without it."""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("PURC_NO_EXTENSION"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "purc._linkeval",
                    ["src/purc/_linkeval.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
