"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise (or when
``TREERECON_BACKEND=python``) the numpy fallback is used. ``BACKEND``
names the active one.
"""
import os

from . import _fallback

if os.environ.get("TREERECON_BACKEND", "").lower() == "python":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

sample_magnetizations = _impl.sample_magnetizations
enumerate_configs = _impl.enumerate_configs
uniforms = _impl.uniforms

__all__ = ["BACKEND", "sample_magnetizations", "enumerate_configs", "uniforms"]
