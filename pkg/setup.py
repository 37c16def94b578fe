import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("BDFDYN_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "bdfdyn._exchange_c",
                    ["src/bdfdyn/_exchange_c.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-march=native"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
