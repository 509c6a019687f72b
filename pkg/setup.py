"""Build script for the optional compiled kernels.

The package works without the extension; ``mcens._kernels`` falls back to
the pure-Python implementations when ``mcens._core`` cannot be imported.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("MCENS_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext = Extension(
            name="mcens._core",
            sources=["src/mcens/_core.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            # keep float results identical to the pure-Python path
            extra_compile_args=["-O2", "-ffp-contract=off"],
        )
        ext_modules = cythonize(
            [ext],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
