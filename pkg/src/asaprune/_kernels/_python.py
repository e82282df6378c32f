"""Numpy kernels: the fallback backend used when the compiled core is absent.

Every function here has a loop-fused twin in ``_core.pyx`` with identical
semantics; parity is enforced by the test suite.
"""

from __future__ import annotations

import numpy as np


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    return _stable_softmax(scores)


def add_softmax_rows(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return _stable_softmax(scores + mask)


def _stable_softmax(scores: np.ndarray) -> np.ndarray:
    n, m = scores.shape
    if n == 0:
        return scores.copy()
    if m == 0:
        raise ValueError("softmax over zero columns has no valid distribution")
    hi = scores.max(axis=1, keepdims=True)
    dead = np.isneginf(hi)
    if dead.any():
        row = int(np.flatnonzero(dead.ravel())[0])
        raise ValueError(f"softmax row {row} is fully masked; no valid distribution")
    out = np.exp(scores - hi)
    out /= out.sum(axis=1, keepdims=True)
    return out


def cosine_similarity(h: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(h, axis=1)
    nonzero = norms > 0.0
    unit = np.zeros_like(h)
    unit[nonzero] = h[nonzero] / norms[nonzero, None]
    sim = unit @ unit.T
    # (a+b)/2 forces exact symmetry regardless of the matmul's reduction order
    sim = (sim + sim.T) * 0.5
    np.clip(sim, -1.0, 1.0, out=sim)
    sim[~nonzero, :] = 0.0
    sim[:, ~nonzero] = 0.0
    diag = np.where(nonzero, 1.0, 0.0)
    np.fill_diagonal(sim, diag)
    return sim


def rope_rotate(x: np.ndarray, positions: np.ndarray, inv_freq: np.ndarray) -> np.ndarray:
    angles = positions[:, None] * inv_freq[None, :]
    cos = np.cos(angles)
    sin = np.sin(angles)
    even = x[:, 0::2]
    odd = x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out
