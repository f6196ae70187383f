"""Kernel dispatch: compiled Cython core when available, pure Python otherwise.

Set ``MPRIM_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("MPRIM_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def arc_length_pieces(coeffs, piece, a, b, tol):
    """Arc length of polynomial pieces over local intervals ``[a[i], b[i]]``.

    ``coeffs`` has shape ``(4, n_pieces, dim)`` in descending power order.
    """
    return _impl.arc_length_pieces(
        np.ascontiguousarray(coeffs, dtype=float),
        np.ascontiguousarray(piece, dtype=np.int64),
        np.ascontiguousarray(a, dtype=float),
        np.ascontiguousarray(b, dtype=float),
        float(tol),
    )


def nearest(pts, ref):
    """Distance from each row of ``pts`` to its nearest row of ``ref``, and that row's index."""
    return _impl.nearest(np.ascontiguousarray(pts, dtype=float), np.ascontiguousarray(ref, dtype=float))


def smo_solve(K, y, C, eps, max_iter):
    return _impl.smo_solve(np.ascontiguousarray(K, dtype=float), np.ascontiguousarray(y, dtype=float),
                           float(C), float(eps), int(max_iter))


def dpm_refresh(slots, counts, sums, outer, psi0, kappa0, nu0, mun, chol, cst, dfp):
    """Refresh the Student-t predictive cache of cluster ``slots`` in place."""
    _impl.dpm_refresh(np.ascontiguousarray(slots, dtype=np.int64), counts, sums, outer, psi0,
                      float(kappa0), float(nu0), mun, chol, cst, dfp)


def dpm_pass(X, z, order, uniforms, counts, sums, outer, psi0, kappa0, nu0, mun, chol, cst, dfp,
             alpha, ka=-1, kb=-1, forced=None):
    """One collapsed Gibbs pass; state arrays are updated in place.

    State arrays must already be C-contiguous ``float64`` / ``int64``.
    """
    forced = np.zeros(0, dtype=np.int64) if forced is None else np.ascontiguousarray(forced, dtype=np.int64)
    return _impl.dpm_pass(X, z, np.ascontiguousarray(order, dtype=np.int64),
                          np.ascontiguousarray(uniforms, dtype=float), counts, sums, outer, psi0,
                          float(kappa0), float(nu0), mun, chol, cst, dfp, float(alpha), int(ka), int(kb),
                          forced)


def use_backend(name: str) -> None:
    """Switch backend at runtime ("cython" or "python"); used by the benchmark."""
    global _impl, BACKEND
    if name == "python":
        _impl, BACKEND = _kernels_py, "python"
    elif name == "cython":
        from . import _kernels
        _impl, BACKEND = _kernels, "cython"
    else:
        raise ValueError(name)
