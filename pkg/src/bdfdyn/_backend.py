"""Select the exchange kernel implementation at import time.

The compiled extension is used when it was built; setting
``BDFDYN_BACKEND=python`` forces the numpy fallback.
"""
import os

from . import _exchange_py

python_kernels = _exchange_py

if os.environ.get("BDFDYN_BACKEND", "").lower() == "python":
    compiled_kernels = None
else:
    try:
        from . import _exchange_c as compiled_kernels
    except ImportError:
        compiled_kernels = None

kernels = compiled_kernels if compiled_kernels is not None else python_kernels
NAME = "cython" if compiled_kernels is not None else "python"
