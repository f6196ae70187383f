"""Build script for the optional compiled kernels.

The Cython extension is optional: if Cython or a C compiler is missing the
package installs without it and ``mprim.kernels`` falls back to the pure
Python implementations.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("MPRIM_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "mprim._kernels",
                    ["src/mprim/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
