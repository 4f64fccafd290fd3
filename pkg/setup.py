import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("RNNMIMIC_NO_EXT") != "1":
    from Cython.Build import cythonize

    ext = Extension(
        "rnnmimic._kernels",
        ["src/rnnmimic/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
