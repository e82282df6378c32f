"""Desk-scale multi-head causal decoder that runs the pruning pass between
layers, with a position-indexed KV cache for incremental decoding.

The decoder is deliberately tiny and training-free: per-layer weights are
seeded scaled-Gaussian projections, attention is standard multi-head causal
attention with rotary embeddings, and the FFN is a gated two-projection
block of width ffn_m (gate, up, down), so its operation count matches the
3*v*d*m term of the cost model. There is no tokenizer and no sampling; text
"generation" is hidden-state propagation only.

Pruning happens once, on the input to layer ``prune_layer``: that layer's
rotated query/key projections provide the alignment for the pass, the
sequence is compressed, and the layer itself plus everything after it runs
on the compressed sequence. Surviving tokens keep their original position
indices for rotary embedding and caching, which is what keeps the cache
valid across turns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from asaprune import numerics
from asaprune.errors import ConfigError, ShapeError
from asaprune.masking import SequenceLayout, aggregate_heads
from asaprune.numerics import NEG_INF, RopeParams
from asaprune.pruning import (
    PruneConfig,
    PruneResult,
    asap_pass_from_alignment,
    compress_hidden,
    surviving_positions,
)


@dataclass(frozen=True)
class SequenceSpec:
    """Synthetic sequence description for generate_sequence."""

    system_len: int = 4
    visual_len: int = 64
    text_len: int = 8
    hidden_dim: int = 64


@dataclass(frozen=True)
class ToyDecoderConfig:
    layers: int = 4
    heads: int = 4
    head_dim: int = 16
    ffn_m: int = 128
    prune_layer: int = 2
    seed: int = 0
    rope_base: float = 10000.0
    max_positions: int = 4096
    head_aggregation: str = "mean"

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1 or self.ffn_m < 1:
            raise ConfigError("layers, heads, and ffn_m must all be >= 1")
        if self.head_dim < 2 or self.head_dim % 2 != 0:
            raise ConfigError(f"head_dim must be even and >= 2, got {self.head_dim}")
        if not (0 <= self.prune_layer < self.layers):
            raise ConfigError(
                f"prune_layer must be in [0, {self.layers}), got {self.prune_layer}"
            )
        if self.max_positions < 1:
            raise ConfigError("max_positions must be >= 1")

    @property
    def model_dim(self) -> int:
        return self.heads * self.head_dim


@dataclass
class LayerKv:
    keys: np.ndarray
    values: np.ndarray
    positions: np.ndarray

    @classmethod
    def empty(cls, model_dim: int) -> "LayerKv":
        return cls(
            keys=np.empty((0, model_dim)),
            values=np.empty((0, model_dim)),
            positions=np.empty(0, dtype=np.int64),
        )


@dataclass
class KvCache:
    """Per-layer cached key/value rows plus each row's original position."""

    layers: list[LayerKv]

    @property
    def last_position(self) -> int:
        positions = self.layers[0].positions
        return int(positions[-1]) if positions.size else -1

    def row_counts(self) -> list[int]:
        return [layer.positions.shape[0] for layer in self.layers]


def generate_sequence(spec: SequenceSpec, seed: int) -> tuple[np.ndarray, SequenceLayout]:
    """Deterministic pseudo-random hidden states for the given layout."""
    layout = SequenceLayout.from_lengths(spec.system_len, spec.visual_len, spec.text_len)
    rng = np.random.default_rng(seed)
    hidden = rng.standard_normal((layout.total_len, spec.hidden_dim))
    return hidden, layout


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class ToyDecoder:
    """Weights and forward logic for one decoder configuration.

    All state is derived from the config seed, so two instances with the
    same config are interchangeable (multi-turn steps rebuild the decoder
    from the config alone).
    """

    def __init__(self, cfg: ToyDecoderConfig):
        self.cfg = cfg
        self.rope = RopeParams(cfg.head_dim, cfg.rope_base)
        d = cfg.model_dim
        m = cfg.ffn_m
        rng = np.random.default_rng(cfg.seed)
        attn_scale = d**-0.5
        self.weights = []
        for _ in range(cfg.layers):
            self.weights.append(
                {
                    "wq": rng.standard_normal((d, d)) * attn_scale,
                    "wk": rng.standard_normal((d, d)) * attn_scale,
                    "wv": rng.standard_normal((d, d)) * attn_scale,
                    "wo": rng.standard_normal((d, d)) * attn_scale,
                    "wg": rng.standard_normal((d, m)) * attn_scale,
                    "wu": rng.standard_normal((d, m)) * attn_scale,
                    "wd": rng.standard_normal((m, d)) * m**-0.5,
                }
            )

    def empty_cache(self) -> KvCache:
        return KvCache(layers=[LayerKv.empty(self.cfg.model_dim) for _ in range(self.cfg.layers)])

    def _head_slices(self):
        hd = self.cfg.head_dim
        return [slice(h * hd, (h + 1) * hd) for h in range(self.cfg.heads)]

    def _roped_qk(self, li: int, x: np.ndarray, positions: np.ndarray):
        w = self.weights[li]
        q = x @ w["wq"]
        k = x @ w["wk"]
        pos = positions.astype(np.float64)
        q_r = np.empty_like(q)
        k_r = np.empty_like(k)
        for sl in self._head_slices():
            q_r[:, sl] = numerics.rope_apply_at(q[:, sl], self.rope, pos)
            k_r[:, sl] = numerics.rope_apply_at(k[:, sl], self.rope, pos)
        return q_r, k_r

    def _attend(self, li: int, x: np.ndarray, positions: np.ndarray, kv: LayerKv) -> np.ndarray:
        w = self.weights[li]
        q_r, k_r = self._roped_qk(li, x, positions)
        v = x @ w["wv"]
        k_all = np.vstack([kv.keys, k_r])
        v_all = np.vstack([kv.values, v])
        pos_all = np.concatenate([kv.positions, positions])
        # a row at position p sees every cached or in-block position <= p
        mask = np.where(pos_all[None, :] <= positions[:, None], 0.0, NEG_INF)
        out = np.empty_like(x)
        for sl in self._head_slices():
            logits = numerics.scaled_alignment(q_r[:, sl], k_all[:, sl])
            attn = numerics.masked_softmax_rows(logits, mask)
            out[:, sl] = attn @ v_all[:, sl]
        kv.keys = k_all
        kv.values = v_all
        kv.positions = pos_all
        return out @ w["wo"]

    def _ffn(self, li: int, x: np.ndarray) -> np.ndarray:
        w = self.weights[li]
        gate = x @ w["wg"]
        up = x @ w["wu"]
        return (gate * _stable_sigmoid(gate) * up) @ w["wd"]

    def _run(
        self,
        x: np.ndarray,
        positions: np.ndarray,
        cache: KvCache,
        prune: PruneConfig | None,
        layout: SequenceLayout | None,
    ):
        result = None
        for li in range(self.cfg.layers):
            if prune is not None and li == self.cfg.prune_layer:
                result, positions, x = self._prune_block(li, x, positions, prune, layout)
            x = x + self._attend(li, x, positions, cache.layers[li])
            x = x + self._ffn(li, x)
        return x, result

    def _prune_block(self, li, x, positions, prune, layout):
        q_r, k_r = self._roped_qk(li, x, positions)
        stack = np.stack(
            [numerics.scaled_alignment(q_r[:, sl], k_r[:, sl]) for sl in self._head_slices()]
        )
        alignment = aggregate_heads(stack, self.cfg.head_aggregation)
        result, _ = asap_pass_from_alignment(x, alignment, layout, prune)
        compressed = compress_hidden(x, result, layout)
        kept_positions = np.asarray(surviving_positions(result, layout), dtype=np.int64)
        return result, kept_positions, compressed

    def forward(
        self, hidden, layout: SequenceLayout, prune: PruneConfig | None = None
    ) -> tuple[np.ndarray, KvCache, PruneResult | None]:
        x = numerics.as_matrix(hidden)
        if x.shape != (layout.total_len, self.cfg.model_dim):
            raise ShapeError(
                f"hidden states {x.shape} do not match "
                f"(total_len={layout.total_len}, model_dim={self.cfg.model_dim})"
            )
        if layout.total_len > self.cfg.max_positions:
            raise ConfigError(
                f"sequence of {layout.total_len} exceeds max_positions {self.cfg.max_positions}"
            )
        cache = self.empty_cache()
        positions = np.arange(layout.total_len, dtype=np.int64)
        out, result = self._run(x, positions, cache, prune, layout)
        return out, cache, result

    def step(self, cache: KvCache, new_text) -> tuple[np.ndarray, KvCache]:
        x = numerics.as_matrix(new_text)
        if x.shape[1] != self.cfg.model_dim:
            raise ShapeError(f"new rows have width {x.shape[1]}, expected {self.cfg.model_dim}")
        if len(cache.layers) != self.cfg.layers:
            raise ShapeError(
                f"cache has {len(cache.layers)} layers, decoder has {self.cfg.layers}"
            )
        if x.shape[0] == 0:
            return x.copy(), cache
        start = cache.last_position + 1
        if start + x.shape[0] > self.cfg.max_positions:
            raise ConfigError(
                f"appending {x.shape[0]} rows at position {start} exceeds "
                f"max_positions {self.cfg.max_positions}"
            )
        positions = np.arange(start, start + x.shape[0], dtype=np.int64)
        out, _ = self._run(x, positions, cache, None, None)
        return out, cache


def decoder_forward(
    hidden,
    layout: SequenceLayout,
    cfg: ToyDecoderConfig,
    prune: PruneConfig | None = None,
) -> tuple[np.ndarray, KvCache, PruneResult | None]:
    """Full forward pass; with a prune config, the pass compresses the visual
    span at cfg.prune_layer and continues on the shorter sequence."""
    return ToyDecoder(cfg).forward(hidden, layout, prune)


def multiturn_step(cache: KvCache, new_text, cfg: ToyDecoderConfig) -> tuple[np.ndarray, KvCache]:
    """Append text rows after the last cached position and decode them against
    the (possibly compressed) cache. Mutates and returns the cache."""
    return ToyDecoder(cfg).step(cache, new_text)


def rope_decay_demo(
    seed: int,
    distances: Sequence[int],
    head_dim: int = 64,
    base: float = 10000.0,
    draws: int = 1,
) -> list[tuple[int, float]]:
    """Measure how rotary embedding damps alignment with relative distance.

    Draws random unit vectors, pairs each with itself (query at position 0,
    key at the probed distance), and reports the mean absolute rotated dot
    product per distance. The distance-0 entry is the raw dot product,
    untouched. The decay is a statistical trend over draws, not a per-pair
    monotonic guarantee.
    """
    if not distances:
        raise ConfigError("distances must be nonempty")
    if draws < 1:
        raise ConfigError("draws must be >= 1")
    params = RopeParams(head_dim, base)
    rng = np.random.default_rng(seed)
    qs = rng.standard_normal((draws, head_dim))
    norms = np.linalg.norm(qs, axis=1, keepdims=True)
    qs = qs / np.where(norms == 0.0, 1.0, norms)
    table = []
    for dist in distances:
        rotated = numerics.rope_apply_at(qs, params, np.full(draws, float(dist)))
        scores = (qs * rotated).sum(axis=1)
        table.append((int(dist), float(np.abs(scores).mean())))
    return table
