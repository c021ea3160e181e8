import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DLFKIT_NO_EXT") != "1":
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "dlfkit._kernels",
                ["src/dlfkit/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
