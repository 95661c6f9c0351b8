import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("PFORGE_PURE") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("pforge._kernel", ["src/pforge/_kernel.pyx"])],
            language_level=3,
        )
    except Exception:
        # No Cython / no compiler: the package falls back to the pure
        # Python kernel selected at import time.
        ext_modules = []

setup(ext_modules=ext_modules)
