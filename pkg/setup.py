from setuptools import Extension, setup

# The compiled kernels are optional: if Cython or a C compiler is missing the
# build proceeds and kdar.kernels falls back to the numpy implementations.
try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "kdar.kernels._speedups",
                ["src/kdar/kernels/_speedups.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
