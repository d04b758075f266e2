from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "luna_nlm._kernels._mlp",
                ["src/luna_nlm/_kernels/_mlp.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level="3",
    )
except ImportError:
    # No Cython/NumPy at build time: install pure-Python; the package
    # falls back to the NumPy kernels at import.
    ext_modules = []

setup(ext_modules=ext_modules)
