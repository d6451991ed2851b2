"""Build script for the optional compiled kernels.

The Cython extension is optional: when it cannot be built the package
installs anyway and ``diffem.ndcore.kernels`` falls back to numpy.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("DIFFEM_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:  # pragma: no cover
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "diffem.ndcore._kernels",
                    ["src/diffem/ndcore/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no -ffast-math: results must be reproducible bit for bit
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
