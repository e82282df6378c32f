"""Causal and salience-guided bidirectional attention masks.

A sequence is partitioned into three contiguous segments: system prompt,
visual patch tokens, and text query. The bidirectional mask relaxes strict
causality only inside the visual block: an earlier visual token may attend
to a later one with an additive log-penalty ``ln(max(lambda_max * s_hat_j,
epsilon))`` that scales with the target's normalized salience. System and
text positions keep the standard autoregressive constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from asaprune import numerics
from asaprune.errors import ConfigError, ShapeError
from asaprune.numerics import NEG_INF


@dataclass(frozen=True)
class SequenceLayout:
    """Partition of [0, total_len) into system, visual, and text spans.

    Spans are half-open (start, stop) index pairs; they must be contiguous
    and ordered system < visual < text. System and text may be empty.
    """

    total_len: int
    system_span: tuple[int, int]
    visual_span: tuple[int, int]
    text_span: tuple[int, int]

    def __post_init__(self):
        spans = (self.system_span, self.visual_span, self.text_span)
        for start, stop in spans:
            if not (0 <= start <= stop <= self.total_len):
                raise ConfigError(f"span ({start}, {stop}) out of range for {self.total_len}")
        if self.system_span[0] != 0:
            raise ConfigError("system span must start at position 0")
        if self.system_span[1] != self.visual_span[0] or self.visual_span[1] != self.text_span[0]:
            raise ConfigError("spans must be contiguous: system, then visual, then text")
        if self.text_span[1] != self.total_len:
            raise ConfigError("text span must end at total_len")

    @classmethod
    def from_lengths(cls, system_len: int, visual_len: int, text_len: int) -> "SequenceLayout":
        if min(system_len, visual_len, text_len) < 0:
            raise ConfigError("segment lengths must be non-negative")
        a = system_len
        b = a + visual_len
        c = b + text_len
        return cls(total_len=c, system_span=(0, a), visual_span=(a, b), text_span=(b, c))

    @property
    def system_len(self) -> int:
        return self.system_span[1] - self.system_span[0]

    @property
    def visual_len(self) -> int:
        return self.visual_span[1] - self.visual_span[0]

    @property
    def text_len(self) -> int:
        return self.text_span[1] - self.text_span[0]

    def require_visual(self) -> None:
        if self.visual_len == 0:
            raise ConfigError("operation requires a nonempty visual span")


@dataclass(frozen=True)
class SalienceProfile:
    """Per-visual-token attention mass: raw column sums and their min-max
    normalization into [0, 1)."""

    raw_mass: np.ndarray
    normalized: np.ndarray

    def __post_init__(self):
        raw = numerics.as_vector(self.raw_mass)
        norm = numerics.as_vector(self.normalized)
        if raw.shape != norm.shape:
            raise ShapeError("raw_mass and normalized must have the same length")
        if norm.size and (norm.min() < 0.0 or norm.max() > 1.0):
            raise ConfigError("normalized salience must lie in [0, 1]")
        object.__setattr__(self, "raw_mass", raw)
        object.__setattr__(self, "normalized", norm)

    def __len__(self) -> int:
        return self.raw_mass.shape[0]


@dataclass(frozen=True)
class MaskConfig:
    """lambda_max caps forward visibility inside the visual block; epsilon
    floors the penalty argument and stabilizes the normalization."""

    lambda_max: float = 0.5
    epsilon: float = 1e-6

    def __post_init__(self):
        if not (0.0 < self.lambda_max <= 1.0):
            raise ConfigError(f"lambda_max must be in (0, 1], got {self.lambda_max}")
        if self.epsilon <= 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


def build_causal_mask(n: int) -> np.ndarray:
    """Additive causal mask: 0 on and below the diagonal, -inf above."""
    if n < 1:
        raise ShapeError(f"mask size must be >= 1, got {n}")
    mask = np.zeros((n, n))
    mask[np.triu_indices(n, k=1)] = NEG_INF
    return mask


def _check_square(w: np.ndarray, layout: SequenceLayout) -> np.ndarray:
    wm = numerics.as_matrix(w)
    if wm.shape[0] != wm.shape[1]:
        raise ShapeError(f"alignment matrix must be square, got {wm.shape}")
    if wm.shape[0] != layout.total_len:
        raise ShapeError(f"matrix size {wm.shape[0]} does not match layout {layout.total_len}")
    return wm


def attention_mass(w, layout: SequenceLayout) -> np.ndarray:
    """Raw mass of each visual key: its alignment summed over all visual
    query rows, taken from the unmasked matrix (entries above the diagonal
    included, since forward context is the point)."""
    wm = _check_square(w, layout)
    layout.require_visual()
    lo, hi = layout.visual_span
    return wm[lo:hi, lo:hi].sum(axis=0)


def compute_salience(w, layout: SequenceLayout, epsilon: float = 1e-6) -> SalienceProfile:
    raw = attention_mass(w, layout)
    return SalienceProfile(raw_mass=raw, normalized=numerics.min_max_normalize(raw, epsilon))


def build_bidirectional_mask(
    salience: SalienceProfile, layout: SequenceLayout, cfg: MaskConfig
) -> np.ndarray:
    """Causal mask with the visual block's upper triangle opened up.

    For visual i < j the -inf entry is replaced by
    ``ln(max(lambda_max * s_hat_j, epsilon))``, a per-target discount in
    log-space. Upper-triangle entries touching system or text positions stay
    -inf, preserving autoregressive decoding for everything that follows.
    """
    layout.require_visual()
    v = layout.visual_len
    if len(salience) != v:
        raise ShapeError(f"salience has {len(salience)} entries for a visual span of {v}")
    mask = build_causal_mask(layout.total_len)
    penalties = np.log(np.maximum(cfg.lambda_max * salience.normalized, cfg.epsilon))
    rows, cols = np.triu_indices(v, k=1)
    lo = layout.visual_span[0]
    mask[lo + rows, lo + cols] = penalties[cols]
    return mask


def masked_attention(w, mask) -> np.ndarray:
    """Softmax over the alignment plus an additive mask.

    The additive log-penalty acts multiplicatively on the unnormalized
    weight: exp(w + ln(lam)) = lam * exp(w).
    """
    return numerics.masked_softmax_rows(w, mask)


def aggregate_heads(per_head_w, mode: str = "mean", head: int = 0) -> np.ndarray:
    """Collapse a stack of per-head alignment matrices (H, N, N) into one."""
    stack = np.ascontiguousarray(per_head_w, dtype=np.float64)
    if stack.ndim != 3:
        raise ShapeError(f"expected a (heads, n, n) stack, got {stack.ndim}-d")
    if mode == "mean":
        return stack.mean(axis=0)
    if mode == "sum":
        return stack.sum(axis=0)
    if mode == "single":
        if not (0 <= head < stack.shape[0]):
            raise ConfigError(f"head index {head} out of range for {stack.shape[0]} heads")
        return stack[head].copy()
    raise ConfigError(f"unknown head aggregation {mode!r} (mean, sum, or single)")


def render_pgm(cells, maxval: int = 255) -> str:
    """Render an integer grid as plain-text portable graymap (P2), one grid
    row per line."""
    grid = np.asarray(cells)
    if grid.ndim != 2:
        raise ShapeError(f"graymap grid must be 2-d, got {grid.ndim}-d")
    if grid.size and (grid.min() < 0 or grid.max() > maxval):
        raise ValueError(f"graymap values must lie in [0, {maxval}]")
    rows, cols = grid.shape
    lines = ["P2", f"{cols} {rows}", f"{maxval}"]
    for r in range(rows):
        lines.append(" ".join(str(int(v)) for v in grid[r]))
    return "\n".join(lines) + "\n"


def penalty_graymap(
    salience: SalienceProfile, cfg: MaskConfig, grid_rows: int, grid_cols: int
) -> str:
    """Visualize per-token forward-visibility penalties on the patch grid.

    255 means no penalty (fully visible), 0 means floored at epsilon (fully
    masked); grays scale linearly with penalty magnitude.
    """
    v = len(salience)
    if grid_rows * grid_cols != v:
        raise ShapeError(f"grid {grid_rows}x{grid_cols} does not cover {v} visual tokens")
    penalties = np.log(np.maximum(cfg.lambda_max * salience.normalized, cfg.epsilon))
    floor = np.log(cfg.epsilon)
    gray = np.rint(255.0 * (1.0 - penalties / floor)).astype(int)
    gray = np.clip(gray, 0, 255)
    return render_pgm(gray.reshape(grid_rows, grid_cols))
