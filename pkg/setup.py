"""Build script: compiles the optional kernel extension.

The package works without the extension (a numpy fallback with identical
arithmetic is selected at import time), so any failure to compile is
downgraded to a warning instead of aborting the install.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext
from setuptools.extension import Extension

HERE = os.path.abspath(os.path.dirname(__file__))
KERNEL_DIR = os.path.join("src", "ensyth", "_kernels")


class OptionalBuildExt(build_ext):
    """Skip the compiled kernels when no working C toolchain is available."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # toolchain missing entirely
            self._skip(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # compile/link failure
            self._skip(exc)

    @staticmethod
    def _skip(exc):
        print(f"warning: skipping compiled kernels ({exc}); "
              f"the pure-Python fallback will be used")


def _extensions():
    if os.environ.get("ENSYTH_NO_EXT"):
        return []
    c_source = os.path.join(KERNEL_DIR, "_ckernels.c")
    pyx_source = os.path.join(KERNEL_DIR, "_ckernels.pyx")
    if not os.path.exists(os.path.join(HERE, c_source)):
        try:
            from Cython.Build import cythonize
        except ImportError:
            return []
        cythonize([os.path.join(HERE, pyx_source)], language_level=3)
    # -ffp-contract=off keeps mul/add rounding separate so the compiled
    # kernels are bit-identical to the numpy fallback.
    return [
        Extension(
            "ensyth._kernels._ckernels",
            sources=[c_source],
            extra_compile_args=["-O3", "-ffp-contract=off"],
        )
    ]


setup(ext_modules=_extensions(), cmdclass={"build_ext": OptionalBuildExt})
