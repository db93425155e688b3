import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off keeps the C kernel bit-identical to the NumPy fallback:
# fused multiply-adds would round gain computations differently.
ext = Extension(
    "dmlkit._ctree",
    ["src/dmlkit/_ctree.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O2", "-ffp-contract=off"],
)

setup(ext_modules=cythonize(ext, language_level=3))
