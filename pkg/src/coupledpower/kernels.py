"""Backend selection for the hot kernels.

The compiled extension is used when importable; set ``COUPLEDPOWER_PURE=1``
to force the numpy implementation.
"""

import os

from . import _pykernels

BACKEND = "python"
genz_sums = _pykernels.genz_sums
batch_spot = _pykernels.batch_spot

if os.environ.get("COUPLEDPOWER_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        BACKEND = "compiled"
        genz_sums = _kernels.genz_sums
        batch_spot = _kernels.batch_spot


def backends():
    """Available kernel implementations keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _kernels
    except ImportError:
        return out
    out["compiled"] = _kernels
    return out
