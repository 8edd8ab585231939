"""Build the optional compiled forecast kernel.

If Cython or a C compiler is unavailable the package installs without it and
falls back to the numpy implementation at import time.
"""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            print(f"warning: compiled kernel not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


def extensions():
    if os.environ.get("FRCNET_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    # keep IEEE results: no FMA contraction, no fast-math. -fno-trapping-math only
    # drops FP-exception ordering so the branch-free loops vectorise.
    args = ["-O3", "-ffp-contract=off", "-fno-trapping-math"]
    if not os.environ.get("FRCNET_PORTABLE_BUILD"):
        args.append("-march=native")
    ext = Extension(
        "frcnet._kernels",
        ["src/frcnet/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
