#!/usr/bin/env python3
"""Sweep the kernel backends across sequence sizes and print a comparison.

Times the four pipeline stages (mask build, attention, selection,
consolidation) plus the raw kernels under both the compiled extension and
the numpy fallback. Usage:

    python benchmarks/compare_backends.py [--sizes 64,128,256,512] [--repetitions 7]
"""

import argparse
import time

import numpy as np

from asaprune import _kernels, numerics
from asaprune.masking import MaskConfig, SequenceLayout, build_bidirectional_mask, compute_salience, masked_attention
from asaprune.pruning import PruneConfig, consolidate, select_topk


def best_of(fn, repetitions):
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return min(samples)


def stage_times(visual, repetitions, seed=0):
    rng = np.random.default_rng(seed)
    layout = SequenceLayout.from_lengths(4, visual, 8)
    n = layout.total_len
    hidden = rng.standard_normal((n, 64))
    prototypes = rng.standard_normal((max(2, visual // 8), 64))
    for off in range(visual):
        hidden[4 + off] = prototypes[off % len(prototypes)] + rng.standard_normal(64) * 0.15
    q = rng.standard_normal((n, 16))
    k = rng.standard_normal((n, 16))
    cfg = PruneConfig(budget_k=max(1, visual // 4))

    w = numerics.scaled_alignment(q, k)
    salience = compute_salience(w, layout)
    mask = build_bidirectional_mask(salience, layout, cfg.mask_cfg)
    attn = masked_attention(w, mask)
    selected, _ = select_topk(attn, salience, layout, cfg)
    h_sel = hidden[selected]

    stages = {
        "mask_build": best_of(
            lambda: build_bidirectional_mask(salience, layout, cfg.mask_cfg), repetitions
        ),
        "attention": best_of(lambda: masked_attention(w, mask), repetitions),
        "selection": best_of(lambda: select_topk(attn, salience, layout, cfg), repetitions),
        "consolidation": best_of(
            lambda: consolidate(h_sel, selected, salience, layout, cfg.similarity_threshold),
            repetitions,
        ),
    }
    alignment = best_of(lambda: numerics.scaled_alignment(q, k), repetitions)
    return stages, alignment


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="64,128,256,512")
    parser.add_argument("--repetitions", type=int, default=7)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    backends = _kernels.available_backends()
    if "compiled" not in backends:
        print("note: compiled extension not built; timing the numpy backend only")

    header = f"{'visual':>7} {'stage':<14}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for visual in sizes:
        per_backend = {}
        alignment = None
        for name in backends:
            with _kernels.override(name):
                per_backend[name], alignment = stage_times(visual, args.repetitions)
        for stage in per_backend[backends[0]]:
            row = f"{visual:>7} {stage:<14}"
            for name in backends:
                row += f"{per_backend[name][stage] * 1e6:>10.1f}us"
            if len(backends) == 2:
                ratio = per_backend["python"][stage] / per_backend["compiled"][stage]
                row += f"{ratio:>9.2f}x"
            print(row)
        print(f"{visual:>7} {'(alignment)':<14}{alignment * 1e6:>10.1f}us   (BLAS, backend-independent)")


if __name__ == "__main__":
    main()
