"""Build script: compiles the Cython integrator kernel when possible.

If the extension cannot be built (no compiler, no Cython), the package
installs anyway and falls back to the pure-Python integrator at import
time. Run ``python benchmarks/bench_backends.py`` to compare the two.
"""

import numpy
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
                "evidest._ode._rk45_cy",
                sources=["src/evidest/_ode/_rk45_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
