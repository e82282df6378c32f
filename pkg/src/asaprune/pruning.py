"""Visual-token pruning: selection under the bidirectional attention,
salience-weighted consolidation of redundant tokens, and budget salvage.

The full pass keeps a fixed budget of visual tokens. Selection ranks tokens
under the salience-guided bidirectional attention; consolidation merges
near-duplicate kept tokens into their most salient representative, which
vacates budget slots; salvage refills those slots with the highest-mass
tokens from the pruned pool. System and text tokens pass through untouched
and every surviving token keeps its original sequence position.

Everything here is a pure function of its inputs; independent sequences can
be pruned in parallel without coordination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from asaprune import numerics
from asaprune.errors import ConfigError, ShapeError
from asaprune.masking import (
    MaskConfig,
    SalienceProfile,
    SequenceLayout,
    build_bidirectional_mask,
    compute_salience,
    masked_attention,
)

SELECTION_MODES = ("text_attention", "salience")


@dataclass(frozen=True)
class PruneConfig:
    budget_k: int
    similarity_threshold: float = 0.8
    selection_mode: str = "text_attention"
    mask_cfg: MaskConfig = field(default_factory=MaskConfig)

    def __post_init__(self):
        if self.budget_k < 1:
            raise ConfigError(
                f"budget_k must be between 1 and the visual span size, got {self.budget_k}"
            )
        # 1.0 is a legal sentinel: similarities are clipped to <= 1, so
        # t = 1.0 makes merging unreachable.
        if not (-1.0 < self.similarity_threshold <= 1.0):
            raise ConfigError(
                f"similarity threshold must be in (-1, 1], got {self.similarity_threshold}"
            )
        if self.selection_mode not in SELECTION_MODES:
            raise ConfigError(
                f"selection_mode must be one of {SELECTION_MODES}, got {self.selection_mode!r}"
            )


@dataclass
class PruneResult:
    """Outcome of one pruning pass, in original sequence positions.

    kept_indices is the final visual token set (selection minus absorbed
    sources, plus salvaged), strictly ascending. merged_hidden holds one row
    per kept index, with merge destinations replaced by their weighted
    combination. shortfall counts budget slots that could not be refilled
    because the pruned pool ran out.
    """

    kept_indices: list[int]
    merge_map: dict[int, list[int]]
    salvaged_indices: list[int]
    merged_hidden: np.ndarray
    shortfall: int = 0

    def to_payload(self) -> dict:
        return {
            "kept": list(self.kept_indices),
            "merges": {dst: list(srcs) for dst, srcs in sorted(self.merge_map.items())},
            "salvaged": list(self.salvaged_indices),
            "shortfall": self.shortfall,
        }


def _stable_top(scores: np.ndarray, k: int) -> np.ndarray:
    # Stable sort on negated scores: ties go to the lower index.
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def select_topk(
    a, salience: SalienceProfile, layout: SequenceLayout, cfg: PruneConfig
) -> tuple[list[int], list[int]]:
    """Pick the budget_k visual tokens with the highest selection score.

    text_attention mode scores a visual token by the mean attention it
    receives from text-query rows; salience mode ranks by normalized mass.
    Returns (selected, pruned_pool), both ascending original indices.
    """
    am = numerics.as_matrix(a)
    layout.require_visual()
    v = layout.visual_len
    if am.shape[0] != am.shape[1] or am.shape[0] != layout.total_len:
        raise ShapeError(f"attention matrix {am.shape} does not match layout {layout.total_len}")
    if cfg.budget_k > v:
        raise ConfigError(f"budget_k must be between 1 and {v}, got {cfg.budget_k}")
    lo, hi = layout.visual_span
    if cfg.selection_mode == "text_attention":
        t0, t1 = layout.text_span
        if t1 == t0:
            raise ConfigError("text_attention selection requires a nonempty text span")
        scores = am[t0:t1, lo:hi].mean(axis=0)
    else:
        if len(salience) != v:
            raise ShapeError(f"salience has {len(salience)} entries for a visual span of {v}")
        scores = salience.normalized
    chosen = _stable_top(scores, cfg.budget_k)
    mask = np.zeros(v, dtype=bool)
    mask[chosen] = True
    selected = [int(lo + off) for off in np.flatnonzero(mask)]
    pool = [int(lo + off) for off in np.flatnonzero(~mask)]
    return selected, pool


def consolidate(
    h,
    selected: Sequence[int],
    salience: SalienceProfile,
    layout: SequenceLayout,
    threshold: float,
) -> tuple[dict[int, list[int]], np.ndarray]:
    """Merge semantically redundant kept tokens into salient anchors.

    A source j is absorbed by a destination i when their cosine similarity
    exceeds the threshold and s_hat_i >= s_hat_j (ties: the lower sequence
    index is the destination). Candidate pairs are processed in descending
    similarity, ties by (destination, source) index; a token is absorbed at
    most once and never both absorbs and is absorbed. Each destination's new
    hidden state is the salience-weighted convex combination of itself and
    its sources; a group whose saliences are all zero falls back to the
    plain mean.

    Returns (merge_map, merged_hidden) where merged_hidden has one row per
    surviving selected token, ascending.
    """
    hm = numerics.as_matrix(h)
    sel = [int(i) for i in selected]
    if hm.shape[0] != len(sel):
        raise ShapeError(f"{hm.shape[0]} hidden rows for {len(sel)} selected tokens")
    if not (-1.0 < threshold <= 1.0):
        raise ConfigError(f"similarity threshold must be in (-1, 1], got {threshold}")
    if sorted(sel) != sel or len(set(sel)) != len(sel):
        raise ConfigError("selected indices must be strictly ascending")
    lo, hi = layout.visual_span
    for idx in sel:
        if not (lo <= idx < hi):
            raise ConfigError(f"selected index {idx} outside visual span ({lo}, {hi})")
    if len(salience) != layout.visual_len:
        raise ShapeError("salience profile does not cover the visual span")

    sal = {idx: float(salience.normalized[idx - lo]) for idx in sel}
    sims = numerics.cosine_similarity(hm)

    candidates = []
    for p in range(len(sel)):
        for q in range(p + 1, len(sel)):
            s = sims[p, q]
            if s <= threshold:
                continue
            a, b = sel[p], sel[q]
            # higher salience anchors; equal salience anchors at the lower index
            dst, src = (a, b) if sal[a] >= sal[b] else (b, a)
            candidates.append((s, dst, src))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

    merge_map: dict[int, list[int]] = {}
    absorbed: set[int] = set()
    anchors: set[int] = set()
    for _, dst, src in candidates:
        if src in absorbed or src in anchors or dst in absorbed:
            continue
        merge_map.setdefault(dst, []).append(src)
        absorbed.add(src)
        anchors.add(dst)
    for srcs in merge_map.values():
        srcs.sort()

    row_of = {idx: r for r, idx in enumerate(sel)}
    survivors = [idx for idx in sel if idx not in absorbed]
    merged = np.empty((len(survivors), hm.shape[1]))
    for r, idx in enumerate(survivors):
        if idx in merge_map:
            group = [idx] + merge_map[idx]
            rows = hm[[row_of[g] for g in group]]
            weights = np.array([sal[g] for g in group])
            merged[r] = _weighted_combination(rows, weights)
        else:
            merged[r] = hm[row_of[idx]]
    return merge_map, merged


def _weighted_combination(rows: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # Identical participants must come back bit-exact, so short-circuit
    # before any arithmetic reorders the value.
    if (rows == rows[0]).all():
        return rows[0].copy()
    total = weights.sum()
    if total == 0.0:
        return rows.mean(axis=0)
    return (weights[:, None] * rows).sum(axis=0) / total


def salvage(pruned_pool: Sequence[int], raw_mass: Sequence[float], slots: int) -> list[int]:
    """Refill vacated budget slots with the highest-mass pruned tokens.

    Ranks by raw attention mass, ties to the lower index; returns ascending.
    When the pool is smaller than the slot count the whole pool is returned
    and the caller records the shortfall.
    """
    pool = [int(i) for i in pruned_pool]
    masses = np.asarray(raw_mass, dtype=np.float64)
    if masses.ndim != 1 or masses.shape[0] != len(pool):
        raise ShapeError(f"{masses.shape} masses for {len(pool)} pooled tokens")
    if slots < 0:
        raise ConfigError(f"slot count must be non-negative, got {slots}")
    if slots >= len(pool):
        return sorted(pool)
    order = sorted(range(len(pool)), key=lambda r: (-masses[r], pool[r]))
    return sorted(pool[r] for r in order[:slots])


def asap_pass(h, q, k, layout: SequenceLayout, cfg: PruneConfig) -> tuple[PruneResult, SequenceLayout]:
    """Run the full pipeline from raw projections.

    Computes the scaled alignment of q and k, then salience, bidirectional
    attention, selection, consolidation, and salvage. See
    asap_pass_from_alignment for the composition. q and k must share the
    sequence length of h; their feature width sets the alignment scale.
    """
    hm = numerics.as_matrix(h)
    w = numerics.scaled_alignment(q, k)
    if w.shape[0] != w.shape[1]:
        raise ShapeError("q and k must have the same number of rows")
    if hm.shape[0] != w.shape[0]:
        raise ShapeError(f"hidden rows {hm.shape[0]} do not match sequence length {w.shape[0]}")
    return asap_pass_from_alignment(hm, w, layout, cfg)


def asap_pass_from_alignment(
    h, w, layout: SequenceLayout, cfg: PruneConfig
) -> tuple[PruneResult, SequenceLayout]:
    """Full pipeline from a precomputed (possibly head-aggregated) alignment."""
    hm = numerics.as_matrix(h)
    salience = compute_salience(w, layout, cfg.mask_cfg.epsilon)
    mask = build_bidirectional_mask(salience, layout, cfg.mask_cfg)
    attn = masked_attention(w, mask)
    selected, pool = select_topk(attn, salience, layout, cfg)
    merge_map, merged = consolidate(
        hm[selected], selected, salience, layout, cfg.similarity_threshold
    )
    vacated = sum(len(srcs) for srcs in merge_map.values())
    lo = layout.visual_span[0]
    pool_mass = [float(salience.raw_mass[i - lo]) for i in pool]
    salvaged = salvage(pool, pool_mass, vacated)
    shortfall = vacated - len(salvaged)

    absorbed = {s for srcs in merge_map.values() for s in srcs}
    survivors = [i for i in selected if i not in absorbed]
    kept = sorted(survivors + salvaged)
    merged_rows = dict(zip(survivors, merged))
    final = np.empty((len(kept), hm.shape[1]))
    for r, idx in enumerate(kept):
        final[r] = merged_rows[idx] if idx in merged_rows else hm[idx]

    result = PruneResult(
        kept_indices=kept,
        merge_map=merge_map,
        salvaged_indices=salvaged,
        merged_hidden=final,
        shortfall=shortfall,
    )
    new_layout = SequenceLayout.from_lengths(layout.system_len, len(kept), layout.text_len)
    return result, new_layout


def surviving_positions(result: PruneResult, layout: SequenceLayout) -> list[int]:
    """Original positions of every token in the compressed sequence, in order."""
    system = list(range(*layout.system_span))
    text = list(range(*layout.text_span))
    return system + list(result.kept_indices) + text


def compress_hidden(h, result: PruneResult, layout: SequenceLayout) -> np.ndarray:
    """Assemble the compressed hidden sequence: system rows, merged visual
    rows, text rows."""
    hm = numerics.as_matrix(h)
    if hm.shape[0] != layout.total_len:
        raise ShapeError(f"hidden rows {hm.shape[0]} do not match layout {layout.total_len}")
    return np.vstack(
        [
            hm[: layout.system_span[1]],
            result.merged_hidden,
            hm[layout.text_span[0] :],
        ]
    )


def fastv_pass(a_causal, layout: SequenceLayout, k: int) -> list[int]:
    """Causal top-k ablation reference: rank visual tokens by mean attention
    received from text rows under the standard causal mask."""
    am = numerics.as_matrix(a_causal)
    layout.require_visual()
    v = layout.visual_len
    if am.shape[0] != am.shape[1] or am.shape[0] != layout.total_len:
        raise ShapeError(f"attention matrix {am.shape} does not match layout {layout.total_len}")
    if not (1 <= k <= v):
        raise ConfigError(f"budget_k must be between 1 and {v}, got {k}")
    t0, t1 = layout.text_span
    if t1 == t0:
        raise ConfigError("causal top-k selection requires a nonempty text span")
    lo, hi = layout.visual_span
    scores = am[t0:t1, lo:hi].mean(axis=0)
    chosen = _stable_top(scores, k)
    return sorted(int(lo + off) for off in chosen)
