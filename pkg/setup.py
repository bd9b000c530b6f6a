"""Builds the optional compiled transport kernel; the package works without it."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("MSPMDP_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext = Extension("mspmdp._transport_ext", ["src/mspmdp/_transport_ext.pyx"],
                        include_dirs=[np.get_include()],
                        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                        extra_compile_args=["-O3"])
        ext_modules = cythonize([ext], language_level=3, quiet=True)
    except Exception as exc:  # no Cython or compiler: pure-Python fallback only
        print(f"skipping compiled kernel: {exc}")

setup(ext_modules=ext_modules)
