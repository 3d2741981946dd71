import os

from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to numpy when
# Cython is missing, the build fails, or MAPDENOISE_NO_EXT is set.
ext_modules = []
if not os.environ.get("MAPDENOISE_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "mapdenoise._core._ckernels",
                    ["src/mapdenoise/_core/_ckernels.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
