"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementations in ``_pykernels`` are used. ``RDSNET_KERNELS=python``
forces the fallback even when the extension is built.
"""
import os

from rdsnet import _pykernels

HAS_CKERNELS = False
try:
    from rdsnet import _ckernels
    HAS_CKERNELS = True
except ImportError:  # extension not built
    _ckernels = None

if HAS_CKERNELS and os.environ.get("RDSNET_KERNELS", "").lower() != "python":
    impl = _ckernels
    BACKEND = "cython"
else:
    impl = _pykernels
    BACKEND = "python"


def available_backends():
    """Map backend name to kernel module for every importable backend."""
    backends = {"python": _pykernels}
    if HAS_CKERNELS:
        backends["cython"] = _ckernels
    return backends


def use_backend(name):
    """Route all kernel calls to backend ``name``; returns the previous backend name."""
    global impl, BACKEND, conv2d_forward, conv2d_grad_input, conv2d_grad_weight, crf_pairwise
    backends = available_backends()
    if name not in backends:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(backends)}")
    previous = BACKEND
    impl, BACKEND = backends[name], name
    conv2d_forward = impl.conv2d_forward
    conv2d_grad_input = impl.conv2d_grad_input
    conv2d_grad_weight = impl.conv2d_grad_weight
    crf_pairwise = impl.crf_pairwise
    return previous


conv2d_forward = impl.conv2d_forward
conv2d_grad_input = impl.conv2d_grad_input
conv2d_grad_weight = impl.conv2d_grad_weight
crf_pairwise = impl.crf_pairwise
