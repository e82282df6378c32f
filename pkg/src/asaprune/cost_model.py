"""Analytic per-layer FLOPs, multi-stage schedule totals, FLOPs ratio, and
KV-cache storage for decoder backbones processing visual tokens.

Per layer with v visual tokens, hidden size d, and FFN intermediate size m,
the counted cost is ``4*v*d^2 + 2*v^2*d + 3*v*d*m`` (attention projections,
attention scores, gated FFN; image tokens only). All totals are exact
integers; display rounding to 3-decimal TFLOPs happens only at the edges.

Some widely circulated efficiency figures for these model configurations
are not exactly derivable from this formula (for example a 21.801% ratio at
the 128-token budget where the formula gives 21.83%, 0.836/0.797 TFLOPs
rows at that budget, a 13B vanilla total printed as the 7B value, and a
321.39 MB KV figure for 576 tokens versus the ~302.0 MB pure visual-token
product). The calculator always reports formula-true values and leaves the
reconciliation to the caller.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable

from asaprune.errors import ConfigError, ScheduleError


@dataclass(frozen=True)
class ModelConfig:
    hidden_d: int
    ffn_m: int
    layers_L: int
    visual_tokens_v: int
    kv_bytes_per_elem: int = 2

    def __post_init__(self):
        for name in ("hidden_d", "ffn_m", "layers_L", "visual_tokens_v", "kv_bytes_per_elem"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


PRESETS: dict[str, ModelConfig] = {
    "llava-1.5-7b": ModelConfig(hidden_d=4096, ffn_m=11008, layers_L=32, visual_tokens_v=576),
    "llava-1.5-13b": ModelConfig(hidden_d=5120, ffn_m=13824, layers_L=40, visual_tokens_v=576),
    "llava-next-7b": ModelConfig(hidden_d=4096, ffn_m=11008, layers_L=32, visual_tokens_v=2880),
}


@dataclass(frozen=True)
class Stage:
    layers: int
    tokens: int

    def __post_init__(self):
        if self.layers < 1:
            raise ScheduleError(f"stage layer count must be >= 1, got {self.layers}")
        if self.tokens < 0:
            raise ScheduleError(f"stage token count must be >= 0, got {self.tokens}")


@dataclass(frozen=True)
class PruneSchedule:
    """Ordered stages (layer count, token count) covering every layer."""

    stages: tuple[Stage, ...]

    def __init__(self, stages: Iterable):
        normalized = tuple(s if isinstance(s, Stage) else Stage(*s) for s in stages)
        if not normalized:
            raise ScheduleError("schedule needs at least one stage")
        object.__setattr__(self, "stages", normalized)

    @classmethod
    def identity(cls, cfg: ModelConfig) -> "PruneSchedule":
        return cls([Stage(cfg.layers_L, cfg.visual_tokens_v)])

    @classmethod
    def from_ratios(cls, cfg: ModelConfig, stages: Iterable[tuple[int, float]]) -> "PruneSchedule":
        """Build stages from retention ratios: tokens = ceil(ratio * v)."""
        built = []
        for layers, ratio in stages:
            built.append(Stage(layers, ratio_tokens(ratio, cfg)))
        return cls(built)

    def check(self, cfg: ModelConfig) -> None:
        total = sum(s.layers for s in self.stages)
        if total != cfg.layers_L:
            raise ScheduleError(
                f"schedule covers {total} layers but the model has {cfg.layers_L}"
            )


def ratio_tokens(ratio: float, cfg: ModelConfig) -> int:
    if not (0.0 < ratio <= 1.0):
        raise ScheduleError(f"retention ratio must be in (0, 1], got {ratio}")
    return math.ceil(ratio * cfg.visual_tokens_v)


def layer_flops(v: int, cfg: ModelConfig) -> int:
    """Exact FLOPs of one layer on v visual tokens: 4vd^2 + 2v^2d + 3vdm."""
    if v < 0:
        raise ConfigError(f"token count must be >= 0, got {v}")
    d = cfg.hidden_d
    return 4 * v * d * d + 2 * v * v * d + 3 * v * d * cfg.ffn_m


def schedule_flops(schedule: PruneSchedule, cfg: ModelConfig) -> int:
    """Total FLOPs of a staged schedule: sum of layers * layer cost per stage."""
    schedule.check(cfg)
    return sum(s.layers * layer_flops(s.tokens, cfg) for s in schedule.stages)


def flops_ratio(schedule: PruneSchedule, cfg: ModelConfig) -> float:
    """Schedule FLOPs over the unpruned total; 1.0 for the identity schedule."""
    baseline = cfg.layers_L * layer_flops(cfg.visual_tokens_v, cfg)
    return schedule_flops(schedule, cfg) / baseline


def kv_cache_bytes(tokens: int, cfg: ModelConfig) -> int:
    """KV-cache storage for the given token count across all layers:
    tokens * layers * 2 (key and value) * hidden_d * bytes per element."""
    if tokens < 0:
        raise ConfigError(f"token count must be >= 0, got {tokens}")
    return tokens * cfg.layers_L * 2 * cfg.hidden_d * cfg.kv_bytes_per_elem


def schedule_kv_bytes(schedule: PruneSchedule, cfg: ModelConfig) -> int:
    """KV-cache storage under a staged schedule: each stage's layers cache
    that stage's token count."""
    schedule.check(cfg)
    per_layer = 2 * cfg.hidden_d * cfg.kv_bytes_per_elem
    return sum(s.layers * s.tokens * per_layer for s in schedule.stages)


def tflops_display(flops: int) -> str:
    """Render an exact FLOP count as TFLOPs with 3 decimals (table style)."""
    return f"{flops / 1e12:.3f}"


def ratio_percent_display(ratio: float) -> str:
    return f"{ratio * 100:.2f}"


def schedule_from_json(spec, cfg: ModelConfig) -> PruneSchedule:
    """Parse a schedule from a JSON list of stage objects.

    Each stage is ``{"layers": int, "tokens": int}`` or
    ``{"layers": int, "ratio": float}``; ratio stages retain
    ``ceil(ratio * v)`` tokens.
    """
    if isinstance(spec, str):
        try:
            spec = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise ScheduleError(f"schedule is not valid JSON: {exc}") from None
    if not isinstance(spec, list) or not spec:
        raise ScheduleError("schedule JSON must be a non-empty list of stage objects")
    stages = []
    for n, entry in enumerate(spec):
        if not isinstance(entry, dict) or "layers" not in entry:
            raise ScheduleError(f"stage {n} must be an object with a 'layers' field")
        layers = entry["layers"]
        if not isinstance(layers, int):
            raise ScheduleError(f"stage {n}: 'layers' must be an integer")
        has_tokens = "tokens" in entry
        has_ratio = "ratio" in entry
        if has_tokens == has_ratio:
            raise ScheduleError(f"stage {n} needs exactly one of 'tokens' or 'ratio'")
        if has_tokens:
            tokens = entry["tokens"]
            if not isinstance(tokens, int):
                raise ScheduleError(f"stage {n}: 'tokens' must be an integer")
        else:
            tokens = ratio_tokens(float(entry["ratio"]), cfg)
        stages.append(Stage(layers, tokens))
    return PruneSchedule(stages)
