import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
# no FMA contraction: results must match the numpy fallback bit for bit
_CFLAGS = ["-O3", "-ffp-contract=off"]
if not os.environ.get("FGSF_PORTABLE"):
    _CFLAGS.append("-march=native")
if not os.environ.get("FGSF_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "fgsf._kernels",
                    ["src/fgsf/_kernels.pyx"],
                    depends=["src/fgsf/_gemm.h"],
                    include_dirs=[np.get_include(), "src/fgsf"],
                    extra_compile_args=_CFLAGS,
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
