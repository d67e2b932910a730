"""Build script: compiles the hot-loop extension when Cython is available.

The package works without the extension (a numpy fallback is selected at
import); the extension only makes the sequential kernels fast.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "ctrldiffuse._fastloops",
                ["src/ctrldiffuse/_fastloops.pyx"],
                # no -ffast-math: the fallback and the extension must agree
                # bit for bit on IEEE double arithmetic.
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
