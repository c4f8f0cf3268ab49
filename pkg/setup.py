"""Build script for the optional Cython kernel extension.

The package works without the extension (a vectorized numpy fallback is
selected at import time), so a failed extension build must not break the
install.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible; warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"WARNING: Cython kernel build failed ({exc}); "
                  "falling back to the numpy backend.")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"WARNING: building {ext.name} failed ({exc}); "
                  "falling back to the numpy backend.")


def make_extensions():
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:  # pragma: no cover - build env without Cython
        return []
    compile_args = ["-O3"]
    link_args = []
    # OpenMP is opt-in: on small core counts the spinning worker pool fights
    # OpenBLAS (used by the numpy code paths) and loses more than it gains.
    if os.environ.get("DERMO_OPENMP") == "1":
        compile_args.append("-fopenmp")
        link_args.append("-fopenmp")
    ext = Extension(
        "dermoscan.kernels._cy_kernels",
        sources=["src/dermoscan/kernels/_cy_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=compile_args,
        extra_link_args=link_args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
