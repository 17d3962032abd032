import os

from setuptools import setup

# The compiled kernel is an optional accelerator: if Cython (or a C
# compiler) is unavailable the package installs without it and the
# numpy implementation is selected at import time.
ext_modules = []
if not os.environ.get("BNDL_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "bndl._ckern",
                    ["src/bndl/_ckern.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
