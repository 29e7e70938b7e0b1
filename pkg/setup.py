"""Build script: compiles the optional fast LSTM kernel.

The compiled extension is a pure accelerator. If the toolchain is missing
or the build fails, installation proceeds and skycast falls back to the
numpy kernels at import time.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build extensions, but never fail the install over them."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: fast kernel build skipped ({exc})", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(
                f"warning: building {ext.name} failed ({exc}); "
                "skycast will use the pure numpy kernels",
                file=sys.stderr,
            )


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools.extension import Extension
    except ImportError as exc:
        print(f"warning: fast kernel not built ({exc})", file=sys.stderr)
        return []
    ext = Extension(
        "skycast.kernels._fast",
        sources=["src/skycast/kernels/_fast.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
