"""Kernel backend dispatch.

The compiled Cython extension is preferred when importable; otherwise the
numpy implementation in ``_kernels_py`` is used. Set ``EVSEG_PURE_PYTHON=1``
to force the fallback (useful for benchmarking and debugging). The two
backends implement identical math; ``tests/test_kernels.py`` pins their
agreement.
"""

import os

import numpy as np

if os.environ.get("EVSEG_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def enn_forward(feats, protos, u, alpha, gamma):
    return _impl.enn_forward(_c64(feats), _c64(protos), _c64(u), _c64(alpha), _c64(gamma))


def enn_backward(feats, protos, u, alpha, gamma, upstream):
    return _impl.enn_backward(
        _c64(feats), _c64(protos), _c64(u), _c64(alpha), _c64(gamma), _c64(upstream)
    )


def fuse_forward(p, m):
    return _impl.fuse_forward(_c64(p), _c64(m))


def fuse_backward(p, m, upstream):
    return _impl.fuse_backward(_c64(p), _c64(m), _c64(upstream))
