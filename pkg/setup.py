"""Build script: compiles the optional Volterra convolution extension.

The package is fully functional without the extension (a NumPy fallback is
selected at import time), so a failed compilation only costs speed.
"""

import sys

from setuptools import setup

ext_modules = []
cmdclass = {}
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension
    from setuptools.command.build_ext import build_ext

    class build_ext_retry(build_ext):
        """Retry without -march=native for toolchains that reject it."""

        def build_extension(self, ext):
            try:
                super().build_extension(ext)
            except Exception:
                ext.extra_compile_args = [
                    a for a in ext.extra_compile_args if not a.startswith("-march")
                ]
                super().build_extension(ext)

    ext_modules = cythonize(
        [
            Extension(
                "fsde._volterra_cy",
                ["src/fsde/_volterra_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-funroll-loops", "-march=native"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
    cmdclass["build_ext"] = build_ext_retry
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(
        "fsde: Cython extension unavailable (%s); installing with the pure "
        "NumPy kernel backend only.\n" % exc
    )

setup(ext_modules=ext_modules, cmdclass=cmdclass)
