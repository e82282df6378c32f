"""Kernel backend selection.

Two interchangeable backends implement the dense hot-path kernels:

* ``_core`` -- Cython extension, built at install time when a C compiler is
  available (loop-fused, no temporaries).
* ``_python`` -- numpy implementation, always available.

The compiled backend is preferred at import time; set ``ASAPRUNE_BACKEND``
to ``python`` or ``compiled`` to force one. ``override()`` swaps the active
backend temporarily (used by the benchmark CLI to compare the two; not
intended for concurrent use).
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from asaprune.errors import ConfigError, ShapeError

from . import _python

try:
    from . import _core
except ImportError:
    _core = None

HAVE_COMPILED = _core is not None


def available_backends() -> tuple[str, ...]:
    return ("python", "compiled") if HAVE_COMPILED else ("python",)


def _module_for(name: str):
    if name == "python":
        return _python
    if name == "compiled":
        if _core is None:
            raise ConfigError("compiled backend requested but the extension is not built")
        return _core
    raise ConfigError(f"unknown kernel backend {name!r} (choose python or compiled)")


_env = os.environ.get("ASAPRUNE_BACKEND", "auto")
if _env == "auto":
    _active = _core if HAVE_COMPILED else _python
else:
    _active = _module_for(_env)


def active_backend() -> str:
    return "compiled" if _active is _core else "python"


@contextmanager
def override(name: str):
    """Temporarily route the default dispatch to the named backend."""
    global _active
    previous = _active
    _active = _module_for(name)
    try:
        yield
    finally:
        _active = previous


def _resolve(backend: str | None):
    if backend is None or backend == "auto":
        return _active
    return _module_for(backend)


def _carray(x, ndim: int) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-d array, got {arr.ndim}-d")
    return arr


def softmax_rows(scores, backend: str | None = None) -> np.ndarray:
    return _resolve(backend).softmax_rows(_carray(scores, 2))


def add_softmax_rows(scores, mask, backend: str | None = None) -> np.ndarray:
    return _resolve(backend).add_softmax_rows(_carray(scores, 2), _carray(mask, 2))


def cosine_similarity(h, backend: str | None = None) -> np.ndarray:
    return _resolve(backend).cosine_similarity(_carray(h, 2))


def rope_rotate(x, positions, inv_freq, backend: str | None = None) -> np.ndarray:
    return _resolve(backend).rope_rotate(
        _carray(x, 2), _carray(positions, 1), _carray(inv_freq, 1)
    )
