"""Kernel dispatch between the numba and numpy backends.

The backend is fixed at import time from ``FRACDIL_DISABLE_NUMBA`` and can be
switched afterwards with :func:`set_backend` (used by the benchmarks).
"""
from . import _accel, kernels_numpy

_BACKENDS = {"numpy": kernels_numpy}
if _accel.HAVE_NUMBA:
    from . import kernels_numba

    _BACKENDS["numba"] = kernels_numba

_active = _BACKENDS["numba" if _accel.USE_NUMBA else "numpy"]


def backend_name():
    return "numba" if _active is _BACKENDS.get("numba") else "numpy"


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}")
    prev = backend_name()
    _active = _BACKENDS[name]
    return prev


def bilinear_columns(x, offs_h, offs_w, stride, out_hw):
    return _active.bilinear_columns(x, offs_h, offs_w, stride, out_hw)


def bilinear_columns_adjoint(x, gcols, offs_h, offs_w, stride):
    return _active.bilinear_columns_adjoint(x, gcols, offs_h, offs_w, stride)


def dilated_columns(x, taps_h, taps_w, stride, out_hw):
    return _active.dilated_columns(x, taps_h, taps_w, stride, out_hw)


def dilated_columns_adjoint(gcols, taps_h, taps_w, stride, in_hw):
    return _active.dilated_columns_adjoint(gcols, taps_h, taps_w, stride, in_hw)
