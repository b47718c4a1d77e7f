import os

from setuptools import setup

ext_modules = []
if os.environ.get("TPGAN_PURE_PYTHON", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("tpgan.kernels._knn_cy", ["src/tpgan/kernels/_knn_cy.pyx"],
                       include_dirs=[np.get_include()], extra_compile_args=["-O3", "-ffp-contract=off"])],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # no Cython/numpy at build time: the NumPy fallback is used
        ext_modules = []

setup(ext_modules=ext_modules)
