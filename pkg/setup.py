import os

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:  # fall back to the numpy kernel
    EXT_MODULES = []
else:
    EXT_MODULES = cythonize(
        [
            Extension(
                "stbell._kernel",
                [os.path.join("src", "stbell", "_kernel.pyx")],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fcx-limited-range"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=EXT_MODULES)
