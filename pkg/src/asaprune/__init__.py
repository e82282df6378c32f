"""Training-free visual-token pruning for decoder-style vision-language
stacks: salience-guided bidirectional masking, weighted token consolidation,
budget salvage, an analytic FLOPs/KV-cache cost model, and a desk-scale
decoder harness.

Hot kernels run on a compiled extension when built, with a numpy fallback
selected at import; see ``asaprune.numerics.backend_name()``.
"""

from asaprune.cost_model import (
    PRESETS,
    ModelConfig,
    PruneSchedule,
    Stage,
    flops_ratio,
    kv_cache_bytes,
    layer_flops,
    schedule_flops,
    schedule_from_json,
    schedule_kv_bytes,
    tflops_display,
)
from asaprune.errors import (
    AsapruneError,
    ConfigError,
    MatrixFormatError,
    ScheduleError,
    ShapeError,
)
from asaprune.harness import (
    KvCache,
    SequenceSpec,
    ToyDecoderConfig,
    decoder_forward,
    generate_sequence,
    multiturn_step,
    rope_decay_demo,
)
from asaprune.masking import (
    MaskConfig,
    SalienceProfile,
    SequenceLayout,
    aggregate_heads,
    attention_mass,
    build_bidirectional_mask,
    build_causal_mask,
    compute_salience,
    masked_attention,
    penalty_graymap,
    render_pgm,
)
from asaprune.numerics import (
    NEG_INF,
    RopeParams,
    backend_name,
    cosine_similarity,
    load_matrix,
    min_max_normalize,
    rope_apply,
    rope_apply_at,
    save_matrix,
    scaled_alignment,
    softmax_rows,
)
from asaprune.pruning import (
    PruneConfig,
    PruneResult,
    asap_pass,
    asap_pass_from_alignment,
    compress_hidden,
    consolidate,
    fastv_pass,
    salvage,
    select_topk,
    surviving_positions,
)

__version__ = "0.1.0"

__all__ = [
    "AsapruneError",
    "ConfigError",
    "KvCache",
    "MaskConfig",
    "MatrixFormatError",
    "ModelConfig",
    "NEG_INF",
    "PRESETS",
    "PruneConfig",
    "PruneResult",
    "PruneSchedule",
    "RopeParams",
    "SalienceProfile",
    "ScheduleError",
    "SequenceLayout",
    "SequenceSpec",
    "ShapeError",
    "Stage",
    "ToyDecoderConfig",
    "aggregate_heads",
    "asap_pass",
    "asap_pass_from_alignment",
    "attention_mass",
    "backend_name",
    "build_bidirectional_mask",
    "build_causal_mask",
    "compress_hidden",
    "compute_salience",
    "consolidate",
    "cosine_similarity",
    "decoder_forward",
    "fastv_pass",
    "flops_ratio",
    "generate_sequence",
    "kv_cache_bytes",
    "layer_flops",
    "load_matrix",
    "masked_attention",
    "min_max_normalize",
    "multiturn_step",
    "penalty_graymap",
    "render_pgm",
    "rope_apply",
    "rope_apply_at",
    "rope_decay_demo",
    "salvage",
    "save_matrix",
    "scaled_alignment",
    "schedule_flops",
    "schedule_from_json",
    "schedule_kv_bytes",
    "select_topk",
    "softmax_rows",
    "surviving_positions",
    "tflops_display",
    "__version__",
]
