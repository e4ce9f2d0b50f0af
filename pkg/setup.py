from setuptools import Extension, setup

# The compiled kernels are an optional fast path; the package falls back to
# the numpy implementations in boxl1._kernels_py when the extension is absent.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("boxl1._kernels", ["src/boxl1/_kernels.pyx"])],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
