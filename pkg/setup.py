import numpy
from setuptools import Extension, setup

# The compiled kernel is optional: when Cython (or a C compiler) is not
# available the package falls back to the numpy implementation at import.
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "m2bm.kernels._fcpkern",
                ["src/m2bm/kernels/_fcpkern.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
