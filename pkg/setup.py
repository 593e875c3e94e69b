"""Build the optional Cython kernels.

The extension is optional: when it cannot be compiled the package falls back
to the numpy implementations in ``amortshap._pykernels``.
"""

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover
            print(f"warning: skipping compiled kernels ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            print(f"warning: failed to build {ext.name} ({exc})")


ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "amortshap._ckernels",
                ["src/amortshap/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                # no -ffast-math: both backends must agree bit-for-bit
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
