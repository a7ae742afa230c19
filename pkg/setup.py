import os

from setuptools import Extension, setup

ext_modules = []
compile_args = ["-O3", "-ffp-contract=off"]
if not os.environ.get("DEEPSPLIT_PORTABLE"):
    compile_args.append("-march=native")

if not os.environ.get("DEEPSPLIT_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "deepsplit._core",
                    ["src/deepsplit/_core.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: the fixed-order affine kernel must
                    # round exactly like the numpy fallback
                    extra_compile_args=compile_args,
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
