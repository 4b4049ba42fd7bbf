import os

from setuptools import setup

ext_modules = []
if not os.environ.get("HBFL_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "hbfl._kernels",
                    ["src/hbfl/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # pure-Python fallback in hbfl._kernels_py is used
        ext_modules = []

setup(ext_modules=ext_modules)
