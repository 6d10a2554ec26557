import sys

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        "src/impatientq/_kernels.pyx",
        compiler_directives={"language_level": 3},
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
        ext.optional = True
        if sys.platform != "win32":
            # the double-double kernel relies on unfused, unreordered arithmetic
            ext.extra_compile_args += ["-ffp-contract=off", "-fno-fast-math"]

setup(ext_modules=ext_modules)
