"""Kernel selection.

The compiled extension is used when it imports; ``DOCREFINE_PURE_PYTHON=1``
forces the pure-Python fallback. Both take the same arguments; callers pass
``array('q')`` / ``array('d')`` buffers so either backend accepts them.
"""

import os
from array import array

if os.environ.get("DOCREFINE_PURE_PYTHON") == "1":
    from docrefine import _pykernels as _impl
else:
    try:
        from docrefine import _ckernels as _impl
    except ImportError:  # extension not built
        from docrefine import _pykernels as _impl

BACKEND = _impl.BACKEND
clipped_matches = _impl.clipped_matches
dot_norms = _impl.dot_norms
cosine = _impl.cosine
bm25_scores = _impl.bm25_scores


def int_buffer(values):
    return array("q", values)


def float_buffer(values):
    return array("d", values)
