"""Build the optional Cython kernel core.

If Cython or a C compiler is unavailable the package still installs and
``fkspde.kernels`` falls back to the numpy implementation. The inner loops
are built with vector math (glibc libmvec) when the toolchain supports it,
otherwise with plain -O3.
"""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext

VECTOR_MATH = {"extra_compile_args": ["-O3", "-ffast-math"], "extra_link_args": ["-lmvec", "-lm"]}
PLAIN = {"extra_compile_args": ["-O3"], "extra_link_args": []}


class OptionalVectorBuild(build_ext):
    """Try the vector-math flags first and rebuild plain if compile or link fails."""

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"fkspde: vector math build failed ({exc}); retrying with plain flags")
            ext.extra_compile_args = list(PLAIN["extra_compile_args"])
            ext.extra_link_args = list(PLAIN["extra_link_args"])
            super().build_extension(ext)


ext_modules = []
if os.environ.get("FKSPDE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        flags = PLAIN if os.environ.get("FKSPDE_PLAIN_BUILD") == "1" else VECTOR_MATH
        ext_modules = cythonize(
            [
                Extension(
                    "fkspde._kernels_c",
                    ["src/fkspde/_kernels_c.pyx"],
                    depends=["src/fkspde/_energy_row.h"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    **{k: list(v) for k, v in flags.items()},
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except Exception as exc:  # pragma: no cover - build-environment dependent
        print(f"fkspde: building without compiled kernels ({exc})")
        ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalVectorBuild})
