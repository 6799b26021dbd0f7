import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# The event engine is compiled for speed.  No -ffast-math here: the pure
# Python fallback must reproduce the compiled results bit for bit, so the
# extension has to keep strict IEEE arithmetic.
ext = Extension(
    "epigrid.sim._engine",
    ["src/epigrid/sim/_engine.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    extra_compile_args=["-O3"],
    optional=True,
)

setup(
    ext_modules=cythonize([ext], compiler_directives={"language_level": "3"}),
)
