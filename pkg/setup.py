"""Build script for the optional compiled forward-backward kernels.

The package works without the extension (a NumPy fallback is selected at
import time), so a missing compiler or Cython only costs speed.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("CONTEXTHMM_SKIP_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "contexthmm._fbcore",
                    ["src/contexthmm/_fbcore.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
