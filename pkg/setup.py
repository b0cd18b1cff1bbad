import os
import platform

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the kernels if possible; the numpy fallback covers failures."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    args = ["-O3", "-ffp-contract=off"]
    link = []
    if platform.machine() in ("x86_64", "AMD64") and not os.environ.get("HISTAT_NO_AVX"):
        args.append("-mavx")
    if not os.environ.get("HISTAT_NO_OPENMP"):
        args.append("-fopenmp")
        link.append("-fopenmp")
    ext = Extension(
        "histat._ckernels",
        ["src/histat/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=args,
        extra_link_args=link,
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
