"""Build script: compiles the hot PatchMatch kernels to a C extension.

The kernel module is written in Cython "pure python" mode, so the same
source file also runs uncompiled (slow) if the extension cannot be built.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # allow sdist-less installs to fall back to pure python
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "edgemvs._native.kernels",
        ["src/edgemvs/_native/kernels.py"],
        extra_compile_args=["-O3", "-march=native", "-ffp-contract=off"],
    )
    ext_modules = cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "nonecheck": False,
        },
    )

setup(ext_modules=ext_modules)
