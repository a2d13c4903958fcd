"""Build the optional Cython kernel extension.

The package works without it: ``mtdnn._kernels`` falls back to the numpy
implementation when the compiled module cannot be imported.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("MTDNN_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        extensions = [
            Extension(
                "mtdnn._kernels._fast",
                ["src/mtdnn/_kernels/_fast.pyx"],
                include_dirs=[np.get_include()],
                # no -ffast-math: results must stay IEEE-reproducible
                extra_compile_args=["-O3"],
            )
        ]
        ext_modules = cythonize(
            extensions,
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
