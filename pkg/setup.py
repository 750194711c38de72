"""Build script for the optional compiled convolution kernels.

The package works without the extension (a pure-numpy backend is selected at
import time), so a failed native build must not abort installation.
"""

import os
import sys

from setuptools import setup

EXT_SOURCE = os.path.join("src", "cineavd", "nn", "_convkernels.pyx")


def _extensions():
    if os.environ.get("CINEAVD_SKIP_EXT") == "1":
        return []
    try:
        from Cython.Build import cythonize
        from setuptools import Extension
        import numpy as np
    except ImportError:
        sys.stderr.write("cineavd: Cython/numpy unavailable, building without compiled kernels\n")
        return []

    ext = Extension(
        "cineavd.nn._convkernels",
        [EXT_SOURCE],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-march=native", "-funroll-loops", "-fopenmp"],
        extra_link_args=["-fopenmp"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )


setup(ext_modules=_extensions())
