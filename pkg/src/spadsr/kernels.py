"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. Set ``SPADSR_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _pykernels

python_backend = _pykernels
compiled_backend = None

if os.environ.get("SPADSR_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        _impl = _pykernels
    else:
        _impl = compiled_backend

BACKEND = _impl.BACKEND

poisson_sample = _impl.poisson_sample
uniform_stream = _impl.uniform_stream
argmax_peaks = _impl.argmax_peaks
matched_filter_peaks = _impl.matched_filter_peaks
center_of_mass = _impl.center_of_mass
second_peaks = _impl.second_peaks
box_sum = _impl.box_sum
