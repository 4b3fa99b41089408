"""Select the compiled kernels when available, else the numpy fallback.

``UVFORGE_BACKEND=python`` forces the fallback.
"""
import os

from uvforge import _pykernels

python_kernels = _pykernels

try:
    from uvforge import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if compiled_kernels is not None and os.environ.get("UVFORGE_BACKEND", "").lower() != "python":
    kernels = compiled_kernels
    BACKEND = "cython"
else:
    kernels = python_kernels
    BACKEND = "python"
