import os

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # numpy fallback kernels are used instead
    cythonize = None

_FLAGS = ["-O3"]
if not os.environ.get("PROMPTLOC_PORTABLE"):
    _FLAGS += ["-ffast-math", "-march=native"]
# vectorized exp from glibc's libmvec
_LINK = ["-lmvec", "-lm"] if "-ffast-math" in _FLAGS else []

ext_modules = []
if cythonize is not None and not os.environ.get("PROMPTLOC_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "promptloc._kernels",
                ["src/promptloc/_kernels.pyx"],
                include_dirs=["src/promptloc"],
                depends=["src/promptloc/_scan_step.h"],
                extra_compile_args=_FLAGS,
                extra_link_args=_LINK,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
