"""Hot-kernel backend selection.

Each kernel defaults to its measured-fastest correct implementation: the
branchy histogram scan comes from the compiled extension when it imported
cleanly, while attention stays on numpy, whose BLAS matmul and vectorized
exp beat a scalar C loop at the sizes this pipeline uses (see
benchmarks/bench_kernels.py).  The two otsu_split implementations agree
bit-for-bit, so the default mix produces byte-identical results with or
without the extension installed.

ROLLVID_KERNELS=py forces the numpy fallback for everything;
ROLLVID_KERNELS=c forces the extension for everything (ImportError if it
is missing).  The choice is fixed at import, so one process serves
bit-stable kernels throughout its lifetime.
"""

import os

from . import _numpy_impl

_choice = os.environ.get("ROLLVID_KERNELS", "").lower()

if _choice == "py":
    _ext = None
    BACKEND = "numpy"
elif _choice == "c":
    from . import _speedups as _ext

    BACKEND = "compiled"
else:
    try:
        from . import _speedups as _ext

        BACKEND = "mixed"
    except ImportError:
        _ext = None
        BACKEND = "numpy"

if BACKEND == "compiled":
    attention = _ext.attention
    attention_weights = _ext.attention_weights
    otsu_split = _ext.otsu_split
else:
    attention = _numpy_impl.attention
    attention_weights = _numpy_impl.attention_weights
    otsu_split = _ext.otsu_split if BACKEND == "mixed" else _numpy_impl.otsu_split
