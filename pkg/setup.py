# Builds the compiled patch-gather/scatter kernels. If Cython or a C compiler
# is unavailable the install still succeeds; the package falls back to the
# numpy kernels at import time.

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "ringae._kernels._cyconv",
                ["src/ringae/_kernels/_cyconv.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
