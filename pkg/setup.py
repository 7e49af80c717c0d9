"""Build script for the optional compiled projected-gradient kernel.

The package is pure Python plus one small Cython extension
(``inputdp._pgd``).  If Cython is unavailable the extension is simply
skipped and the numpy fallback kernel is used at runtime.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build-time only
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("inputdp._pgd", ["src/inputdp/_pgd.pyx"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
