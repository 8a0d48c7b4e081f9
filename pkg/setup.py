"""Build hook for the optional compiled jet-product kernel.

The package is fully functional without the extension; jet multiplication
falls back to a vectorized numpy implementation selected at import time.
"""
import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "psiwork._jetmul",
                ["src/psiwork/_jetmul.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # noqa: BLE001 - build must degrade gracefully
    print(f"psiwork: building without compiled kernel ({exc})", file=sys.stderr)
    ext_modules = []

setup(ext_modules=ext_modules)
