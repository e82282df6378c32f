"""Command-line front end.

Subcommands:

* ``prune``  -- run the pruning pass on matrix files or a synthetic instance,
  emit the result as JSON.
* ``flops``  -- analytic FLOPs / ratio / KV-storage report as CSV.
* ``trace``  -- render the pruning outcome as a portable graymap (P2).
* ``demo``   -- run the toy decoder end to end, emit a JSON run report.
* ``bench``  -- per-stage wall-clock timings, optionally comparing the
  compiled and python kernel backends.

stdout carries only the machine-readable payload; diagnostics go to stderr.
Exit codes: 0 success, 2 usage or input validation, 1 internal error. The
``ASAP_SEED`` environment variable overrides ``--seed`` when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from asaprune import _kernels, cost_model, masking, numerics, pruning
from asaprune.errors import AsapruneError, ConfigError, MatrixFormatError, ShapeError
from asaprune.harness import (
    SequenceSpec,
    ToyDecoderConfig,
    decoder_forward,
    generate_sequence,
    rope_decay_demo,
)
from asaprune.masking import MaskConfig, SequenceLayout, render_pgm
from asaprune.pruning import PruneConfig, asap_pass, consolidate, select_topk

VALIDATION_ERRORS = (ConfigError, ShapeError, MatrixFormatError)


def _resolve_seed(args) -> int:
    env = os.environ.get("ASAP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"ASAP_SEED must be an integer, got {env!r}") from None
    return args.seed


def _load(path: str) -> np.ndarray:
    try:
        return numerics.load_matrix(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def _add_layout_flags(p: argparse.ArgumentParser, visual_default: int = 64) -> None:
    p.add_argument("--system-tokens", type=int, default=4, help="system prompt length")
    p.add_argument("--visual-tokens", type=int, default=visual_default, help="visual span length")
    p.add_argument("--text-tokens", type=int, default=8, help="text query length")


def _add_prune_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--budget", type=int, required=True, help="visual tokens to retain")
    p.add_argument("--threshold", type=float, default=0.8, help="merge similarity threshold")
    p.add_argument("--lambda-max", type=float, default=0.5, help="max forward visibility")
    p.add_argument("--epsilon", type=float, default=1e-6, help="normalization/penalty floor")
    p.add_argument(
        "--selection",
        choices=pruning.SELECTION_MODES,
        default="text_attention",
        help="selection scoring rule",
    )


def _add_input_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--synthetic", action="store_true", help="generate a seeded random instance")
    p.add_argument("--seed", type=int, default=0, help="seed for --synthetic")
    p.add_argument("--hidden", help="hidden-state matrix file")
    p.add_argument("--queries", help="query matrix file")
    p.add_argument("--keys", help="key matrix file")
    p.add_argument("--hidden-dim", type=int, default=64, help="synthetic hidden width")
    p.add_argument("--qk-dim", type=int, default=16, help="synthetic query/key width")
    _add_layout_flags(p)


def _prune_config(args) -> PruneConfig:
    return PruneConfig(
        budget_k=args.budget,
        similarity_threshold=args.threshold,
        selection_mode=args.selection,
        mask_cfg=MaskConfig(lambda_max=args.lambda_max, epsilon=args.epsilon),
    )


def _gather_inputs(args) -> tuple[np.ndarray, np.ndarray, np.ndarray, SequenceLayout]:
    layout = SequenceLayout.from_lengths(args.system_tokens, args.visual_tokens, args.text_tokens)
    if args.synthetic:
        rng = np.random.default_rng(_resolve_seed(args))
        hidden = rng.standard_normal((layout.total_len, args.hidden_dim))
        # visual rows cluster around a few prototypes so the consolidation
        # and salvage paths actually fire on synthetic runs
        lo, _ = layout.visual_span
        prototypes = rng.standard_normal((max(2, layout.visual_len // 8), args.hidden_dim))
        for off in range(layout.visual_len):
            hidden[lo + off] = (
                prototypes[off % len(prototypes)]
                + rng.standard_normal(args.hidden_dim) * 0.15
            )
        queries = rng.standard_normal((layout.total_len, args.qk_dim))
        keys = rng.standard_normal((layout.total_len, args.qk_dim))
        return hidden, queries, keys, layout
    if not (args.hidden and args.queries and args.keys):
        raise ConfigError("provide --synthetic or all of --hidden, --queries, --keys")
    hidden = _load(args.hidden)
    queries = _load(args.queries)
    keys = _load(args.keys)
    if hidden.shape[0] != layout.total_len:
        raise ShapeError(
            f"hidden file has {hidden.shape[0]} rows, layout expects {layout.total_len}"
        )
    return hidden, queries, keys, layout


def _emit_json(payload) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def cmd_prune(args) -> int:
    hidden, queries, keys, layout = _gather_inputs(args)
    cfg = _prune_config(args)
    result, _ = asap_pass(hidden, queries, keys, layout, cfg)
    if args.out_hidden:
        numerics.save_matrix(args.out_hidden, result.merged_hidden)
    _emit_json(result.to_payload())
    return 0


def cmd_flops(args) -> int:
    if args.preset:
        cfg = cost_model.PRESETS[args.preset]
        if args.kv_bytes_per_elem != cfg.kv_bytes_per_elem:
            cfg = cost_model.ModelConfig(
                cfg.hidden_d, cfg.ffn_m, cfg.layers_L, cfg.visual_tokens_v, args.kv_bytes_per_elem
            )
    else:
        missing = [
            flag
            for flag, value in (
                ("--hidden-d", args.hidden_d),
                ("--ffn-m", args.ffn_m),
                ("--layers", args.layers),
                ("--visual-tokens", args.visual_tokens),
            )
            if value is None
        ]
        if missing:
            raise ConfigError(f"without --preset, provide {', '.join(missing)}")
        cfg = cost_model.ModelConfig(
            args.hidden_d, args.ffn_m, args.layers, args.visual_tokens, args.kv_bytes_per_elem
        )

    schedules: list[tuple[str, cost_model.PruneSchedule]] = []
    if args.schedule:
        for n, spec in enumerate(args.schedule):
            if spec.startswith("@"):
                try:
                    with open(spec[1:], "r", encoding="utf-8") as fp:
                        spec = fp.read()
                except OSError as exc:
                    raise ConfigError(f"cannot read schedule file: {exc}") from None
            schedules.append((f"s{n}", cost_model.schedule_from_json(spec, cfg)))
    else:
        schedules.append(("identity", cost_model.PruneSchedule.identity(cfg)))

    lines = ["schedule_id,total_flops,tflops_display,ratio_percent,kv_bytes"]
    for schedule_id, schedule in schedules:
        total = cost_model.schedule_flops(schedule, cfg)
        ratio = cost_model.flops_ratio(schedule, cfg)
        kv = cost_model.schedule_kv_bytes(schedule, cfg)
        lines.append(
            f"{schedule_id},{total},{cost_model.tflops_display(total)},"
            f"{cost_model.ratio_percent_display(ratio)},{kv}"
        )
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def _trace_grid(args, visual_len: int) -> tuple[int, int]:
    if args.grid_rows is not None or args.grid_cols is not None:
        if args.grid_rows is None or args.grid_cols is None:
            raise ConfigError("provide both --grid-rows and --grid-cols or neither")
        if args.grid_rows * args.grid_cols != visual_len:
            raise ConfigError(
                f"grid {args.grid_rows}x{args.grid_cols} does not cover {visual_len} visual tokens"
            )
        return args.grid_rows, args.grid_cols
    side = int(round(visual_len**0.5))
    if side * side != visual_len:
        raise ConfigError(
            f"{visual_len} visual tokens is not a square grid; pass --grid-rows/--grid-cols"
        )
    return side, side


def cmd_trace(args) -> int:
    hidden, queries, keys, layout = _gather_inputs(args)
    rows, cols = _trace_grid(args, layout.visual_len)
    cfg = _prune_config(args)
    result, _ = asap_pass(hidden, queries, keys, layout, cfg)
    lo = layout.visual_span[0]
    cells = np.zeros(layout.visual_len, dtype=int)
    for idx in result.kept_indices:
        cells[idx - lo] = 255
    for idx in result.salvaged_indices:
        cells[idx - lo] = 192
    for sources in result.merge_map.values():
        for idx in sources:
            cells[idx - lo] = 64
    text = render_pgm(cells.reshape(rows, cols))
    with open(args.out, "w", encoding="utf-8") as fp:
        fp.write(text)
    return 0


def cmd_demo(args) -> int:
    seed = _resolve_seed(args)
    cfg = ToyDecoderConfig(
        layers=args.layers,
        heads=args.heads,
        head_dim=args.head_dim,
        ffn_m=args.ffn_m,
        prune_layer=args.prune_layer,
        seed=seed,
    )
    spec = SequenceSpec(
        system_len=args.system_tokens,
        visual_len=args.visual_tokens,
        text_len=args.text_tokens,
        hidden_dim=cfg.model_dim,
    )
    hidden, layout = generate_sequence(spec, seed)
    prune = None if args.no_prune else _prune_config(args)
    out, cache, result = decoder_forward(hidden, layout, cfg, prune)
    decay = rope_decay_demo(seed, [0, 16, 128, 512], head_dim=cfg.head_dim, draws=256)
    report = {
        "backend": numerics.backend_name(),
        "config": {
            "layers": cfg.layers,
            "heads": cfg.heads,
            "head_dim": cfg.head_dim,
            "ffn_m": cfg.ffn_m,
            "prune_layer": cfg.prune_layer,
            "seed": seed,
        },
        "sequence": {
            "system": layout.system_len,
            "visual": layout.visual_len,
            "text": layout.text_len,
        },
        "prune": result.to_payload() if result is not None else None,
        "final_rows": int(out.shape[0]),
        "cache_rows": cache.row_counts(),
        "output_mean": float(out.mean()),
        "output_std": float(out.std()),
        "rope_decay": [[d, score] for d, score in decay],
    }
    _emit_json(report)
    return 0


def _time_stage(fn, repetitions: int) -> dict:
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    arr = np.asarray(samples)
    return {"mean_s": float(arr.mean()), "std_s": float(arr.std()), "samples": len(samples)}


def _bench_one_backend(hidden, queries, keys, layout, cfg, repetitions) -> tuple[dict, dict]:
    w = numerics.scaled_alignment(queries, keys)
    salience = masking.compute_salience(w, layout, cfg.mask_cfg.epsilon)
    mask = masking.build_bidirectional_mask(salience, layout, cfg.mask_cfg)
    attn = masking.masked_attention(w, mask)
    selected, pool = select_topk(attn, salience, layout, cfg)
    h_sel = hidden[selected]
    merge_map, _ = consolidate(h_sel, selected, salience, layout, cfg.similarity_threshold)

    stages = {
        "mask_build": _time_stage(
            lambda: masking.build_bidirectional_mask(salience, layout, cfg.mask_cfg), repetitions
        ),
        "attention": _time_stage(lambda: masking.masked_attention(w, mask), repetitions),
        "selection": _time_stage(lambda: select_topk(attn, salience, layout, cfg), repetitions),
        "consolidation": _time_stage(
            lambda: consolidate(h_sel, selected, salience, layout, cfg.similarity_threshold),
            repetitions,
        ),
    }
    sims = numerics.cosine_similarity(h_sel)
    iu = np.triu_indices(len(selected), k=1)
    vacated = sum(len(s) for s in merge_map.values())
    counts = {
        "sequence_len": layout.total_len,
        "visual_tokens": layout.visual_len,
        "selected": len(selected),
        "pool": len(pool),
        "candidate_pairs": int((sims[iu] > cfg.similarity_threshold).sum()),
        "merged": vacated,
    }
    return stages, counts


def cmd_bench(args) -> int:
    hidden, queries, keys, layout = _gather_inputs(args)
    cfg = _prune_config(args)
    if args.repetitions < 1:
        raise ConfigError("--repetitions must be >= 1")
    if args.backend == "both":
        names = list(_kernels.available_backends())
        if "compiled" not in names:
            raise ConfigError("compiled backend is not built; cannot compare both")
    elif args.backend == "auto":
        names = [_kernels.active_backend()]
    else:
        names = [args.backend]

    backends = {}
    counts = None
    for name in names:
        with _kernels.override(name):
            stages, counts = _bench_one_backend(
                hidden, queries, keys, layout, cfg, args.repetitions
            )
        backends[name] = {"stages": stages}
    report = {
        "repetitions": args.repetitions,
        "seed": _resolve_seed(args),
        "backends": backends,
        "counts": counts,
    }
    _emit_json(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asaprune",
        description="Salience-guided visual-token pruning, FLOPs reporting, and a toy decoder.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", help="run the pruning pass, print the result as JSON")
    _add_input_flags(p)
    _add_prune_flags(p)
    p.add_argument("--out-hidden", help="write merged hidden states to this matrix file")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("flops", help="analytic FLOPs/KV report as CSV")
    p.add_argument("--preset", choices=sorted(cost_model.PRESETS))
    p.add_argument("--hidden-d", type=int)
    p.add_argument("--ffn-m", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--visual-tokens", type=int)
    p.add_argument("--kv-bytes-per-elem", type=int, default=2)
    p.add_argument(
        "--schedule",
        action="append",
        help="schedule as JSON list of {layers, tokens} or {layers, ratio}; @file to load",
    )
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("trace", help="render the pruning outcome as a P2 graymap")
    _add_input_flags(p)
    _add_prune_flags(p)
    p.add_argument("--out", required=True, help="output .pgm path")
    p.add_argument("--grid-rows", type=int)
    p.add_argument("--grid-cols", type=int)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("demo", help="run the toy decoder end to end, print a JSON report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--head-dim", type=int, default=16)
    p.add_argument("--ffn-m", type=int, default=128)
    p.add_argument("--prune-layer", type=int, default=2)
    _add_layout_flags(p)
    p.add_argument("--budget", type=int, default=16)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--lambda-max", type=float, default=0.5)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--selection", choices=pruning.SELECTION_MODES, default="text_attention")
    p.add_argument("--no-prune", action="store_true", help="plain forward pass")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("bench", help="per-stage timings, optionally comparing kernel backends")
    _add_input_flags(p)
    _add_prune_flags(p)
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument(
        "--backend",
        choices=("auto", "python", "compiled", "both"),
        default="auto",
        help="kernel backend to time",
    )
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AsapruneError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
