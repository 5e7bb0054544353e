"""Build script for the optional compiled spatial kernels.

The package is fully functional without the extension (a pure-torch
implementation of every operator is selected at import time when the
compiled module is absent), so the build is best-effort: if Cython or a
C compiler is unavailable the extension is simply skipped.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "ctx2im.spatial._kernels",
                ["src/ctx2im/spatial/_kernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
