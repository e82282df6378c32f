"""Build script for the optional compiled kernel extension.

The extension is marked optional: if Cython or a C compiler is missing the
install still succeeds and the package falls back to the numpy kernels at
import time.
"""

from setuptools import Extension, setup


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    # no -ffast-math: the masking semantics rely on IEEE -inf and exact zeros
    ext = Extension(
        "asaprune._kernels._core",
        ["src/asaprune/_kernels/_core.pyx"],
        extra_compile_args=["-O3"],
        optional=True,
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
