"""Build the optional Cython kernel extension.

If the compiler or Cython is missing the package still installs, and
``advscene.kernels`` falls back to the numpy implementation at import.
"""
import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Skip the extension instead of failing when it cannot be compiled."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - build environment dependent
            print(f"advscene: compiled kernels unavailable ({exc})", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - build environment dependent
            print(f"advscene: skipping {ext.name} ({exc})", file=sys.stderr)

ext_modules = []
if os.environ.get("ADVSCENE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "advscene._ckernels",
                    ["src/advscene/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    # keep float results identical to the numpy fallback
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except Exception as exc:  # pragma: no cover - build environment dependent
        print(f"advscene: building without compiled kernels ({exc})", file=sys.stderr)
        ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
