import os

from setuptools import setup

ext_modules = []
if not os.environ.get("CAPSNAV_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "capsnav._speedups",
                    ["src/capsnav/_speedups.pyx"],
                    extra_compile_args=["-O3"],
                    include_dirs=[numpy.get_include()],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # Cython not available: pure-python kernels are used at runtime.
        ext_modules = []

setup(ext_modules=ext_modules)
