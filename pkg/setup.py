"""Build script: compiles the optional Cython stepping kernel.

The package works without the extension (a pure-numpy fallback is selected
at import time), so a failed compile is downgraded to a warning.
"""

import warnings

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "popmix._step_kernel",
                ["src/popmix/_step_kernel.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    warnings.warn(f"Cython kernel not built ({exc}); pure-python backend will be used")
    ext_modules = []

setup(ext_modules=ext_modules)
