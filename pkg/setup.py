import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "res2lab._ckernels",
                ["src/res2lab/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                # no FMA contraction: keeps the direct loop bit-identical to numpy
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
