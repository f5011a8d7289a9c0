"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

The Cython extension ``apthunt.kernels._core`` is used when it was built;
otherwise the numpy implementation in ``apthunt.kernels.pure`` is selected.
Set ``APTHUNT_PURE=1`` to force the fallback (useful for benchmarking and
for verifying backend parity).
"""

import os

from . import pure

BACKEND = "pure"
_impl = pure

if os.environ.get("APTHUNT_PURE", "") in ("", "0"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        pass

gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward
crf_forward = _impl.crf_forward
crf_viterbi = _impl.crf_viterbi
crf_marginals = _impl.crf_marginals

__all__ = [
    "BACKEND",
    "gru_forward",
    "gru_backward",
    "crf_forward",
    "crf_viterbi",
    "crf_marginals",
    "pure",
]
