"""Build script for the optional compiled stepping kernel.

The package works without the extension (a numpy/scipy fallback is selected
at import time); the Cython module only accelerates the semi-implicit
time-stepping loop.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "kslab._stepper",
                ["src/kslab/_stepper.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
