"""Build the optional compiled kernels.

The package works without them: ``fracflow._backend`` falls back to the
numpy implementation when ``fracflow._ckernels`` cannot be imported.
Set ``FRACFLOW_NO_EXT=1`` to skip the extension entirely, and
``FRACFLOW_PORTABLE=1`` to build without ``-march=native`` (and without the
vector math library ``libmvec``).
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FRACFLOW_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        portable = bool(os.environ.get("FRACFLOW_PORTABLE"))
        native_args = [] if portable else ["-ffast-math", "-march=native"]
        native_link = [] if portable else ["-lmvec"]
        extensions = [
            Extension(
                "fracflow._ckernels",
                ["src/fracflow/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fopenmp"] + native_args,
                extra_link_args=["-fopenmp"] + native_link,
            )
        ]
        ext_modules = cythonize(
            extensions,
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
