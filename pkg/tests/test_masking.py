import math

import numpy as np
import pytest

from asaprune import masking
from asaprune.errors import ConfigError, ShapeError
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
)
import oracles


def layout_6() -> SequenceLayout:
    return SequenceLayout.from_lengths(1, 3, 2)  # visual span [1, 4)


# --- SequenceLayout -----------------------------------------------------


def test_layout_from_lengths():
    lay = SequenceLayout.from_lengths(2, 5, 3)
    assert lay.total_len == 10
    assert lay.system_span == (0, 2)
    assert lay.visual_span == (2, 7)
    assert lay.text_span == (7, 10)
    assert lay.visual_len == 5


def test_layout_rejects_gaps_and_disorder():
    with pytest.raises(ConfigError):
        SequenceLayout(total_len=6, system_span=(0, 2), visual_span=(3, 4), text_span=(4, 6))
    with pytest.raises(ConfigError):
        SequenceLayout(total_len=6, system_span=(1, 2), visual_span=(2, 4), text_span=(4, 6))
    with pytest.raises(ConfigError):
        SequenceLayout.from_lengths(-1, 3, 2)


# --- build_causal_mask --------------------------------------------------


def test_causal_mask_small():
    assert np.array_equal(build_causal_mask(1), [[0.0]])
    m2 = build_causal_mask(2)
    assert m2[0, 0] == 0.0 and m2[1, 0] == 0.0 and m2[1, 1] == 0.0
    assert np.isneginf(m2[0, 1])


def test_causal_mask_sentinel_count():
    m = build_causal_mask(5)
    assert int(np.isneginf(m).sum()) == 5 * 4 // 2


def test_causal_mask_rejects_zero():
    with pytest.raises(ShapeError):
        build_causal_mask(0)


# --- attention_mass / compute_salience ----------------------------------


def test_mass_zero_matrix():
    assert np.array_equal(attention_mass(np.zeros((6, 6)), layout_6()), np.zeros(3))


def test_mass_single_visual_token():
    lay = SequenceLayout.from_lengths(2, 1, 1)
    w = np.arange(16.0).reshape(4, 4)
    assert np.array_equal(attention_mass(w, lay), [w[2, 2]])


def test_mass_matches_double_loop_oracle():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((6, 6))
    lay = SequenceLayout.from_lengths(1, 3, 2)
    expected = oracles.visual_mass(w.tolist(), 1, 4)
    assert np.allclose(attention_mass(w, lay), expected, atol=1e-12)


def test_mass_requires_visual_span():
    with pytest.raises(ConfigError):
        attention_mass(np.zeros((3, 3)), SequenceLayout.from_lengths(1, 0, 2))


def test_salience_constant_masses_normalize_to_zero():
    w = np.ones((6, 6))
    prof = compute_salience(w, layout_6())
    assert np.array_equal(prof.normalized, np.zeros(3))


def test_salience_epsilon_formula():
    lay = SequenceLayout.from_lengths(0, 2, 1)
    w = np.zeros((3, 3))
    w[0, 1] = 10.0  # column mass 0 for token 0, 10 for token 1
    prof = compute_salience(w, lay, epsilon=1e-6)
    assert np.allclose(prof.raw_mass, [0.0, 10.0], atol=1e-12)
    assert np.isclose(prof.normalized[1], 10.0 / (10.0 + 1e-6), atol=1e-12)


def test_salience_is_rank_preserving():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((9, 9)) * 4
    lay = SequenceLayout.from_lengths(2, 5, 2)
    prof = compute_salience(w, lay)
    assert np.array_equal(np.argsort(prof.raw_mass), np.argsort(prof.normalized))


def test_salience_invariant_to_constant_shift_of_visual_rows():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((8, 8))
    lay = SequenceLayout.from_lengths(1, 5, 2)
    shifted = w.copy()
    shifted[1:6, :] += 3.7
    a = compute_salience(w, lay)
    b = compute_salience(shifted, lay)
    # every raw mass shifts by |visual| * c, so the normalization cancels it
    assert np.allclose(b.raw_mass - a.raw_mass, 5 * 3.7, atol=1e-10)
    assert np.allclose(a.normalized, b.normalized, atol=1e-10)


def test_salience_profile_validation():
    with pytest.raises(ConfigError):
        SalienceProfile(raw_mass=np.array([1.0]), normalized=np.array([2.0]))
    with pytest.raises(ShapeError):
        SalienceProfile(raw_mass=np.array([1.0, 2.0]), normalized=np.array([0.5]))


# --- build_bidirectional_mask -------------------------------------------


def _profile(values):
    return SalienceProfile(raw_mass=np.asarray(values, float), normalized=np.asarray(values, float))


def test_bidir_zero_salience_floors_at_epsilon():
    lay = layout_6()
    mask = build_bidirectional_mask(_profile([0.0, 0.0, 0.0]), lay, MaskConfig(0.5, 1e-6))
    visual = mask[1:4, 1:4]
    upper = visual[np.triu_indices(3, k=1)]
    assert np.allclose(upper, math.log(1e-6), atol=1e-12)
    assert abs(upper[0] - (-13.8155)) < 1e-4


def test_bidir_full_salience_opens_span():
    lay = layout_6()
    mask = build_bidirectional_mask(_profile([1.0, 1.0, 1.0]), lay, MaskConfig(1.0, 1e-6))
    visual = mask[1:4, 1:4]
    assert np.all(visual[np.triu_indices(3, k=1)] == 0.0)


def test_bidir_penalty_formula():
    lay = layout_6()
    mask = build_bidirectional_mask(_profile([0.5, 0.5, 0.5]), lay, MaskConfig(0.5, 1e-6))
    assert np.isclose(mask[1, 2], math.log(0.25), atol=1e-12)
    assert abs(mask[1, 2] - (-1.3863)) < 1e-4


def test_bidir_outside_visual_span_stays_causal():
    lay = SequenceLayout.from_lengths(2, 3, 2)
    mask = build_bidirectional_mask(_profile([0.9, 0.9, 0.9]), lay, MaskConfig(1.0))
    n = lay.total_len
    for i in range(n):
        for j in range(i + 1, n):
            both_visual = 2 <= i < 5 and 2 <= j < 5
            if both_visual:
                assert np.isfinite(mask[i, j])
            else:
                assert np.isneginf(mask[i, j])
    # lower triangle including the diagonal is 0 everywhere
    assert np.all(mask[np.tril_indices(n)] == 0.0)


def test_mask_config_validation():
    with pytest.raises(ConfigError):
        MaskConfig(lambda_max=0.0)
    with pytest.raises(ConfigError):
        MaskConfig(lambda_max=1.5)
    with pytest.raises(ConfigError):
        MaskConfig(epsilon=-1.0)


# --- masked_attention ---------------------------------------------------


def test_causal_attention_uniform_rows():
    n = 4
    a = masked_attention(np.zeros((n, n)), build_causal_mask(n))
    for i in range(n):
        assert np.allclose(a[i, : i + 1], 1.0 / (i + 1), atol=1e-12)
        assert np.all(a[i, i + 1 :] == 0.0)


def test_fully_open_span_uniform_over_visual():
    lay = SequenceLayout.from_lengths(0, 4, 1)
    mask = build_bidirectional_mask(_profile([1.0] * 4), lay, MaskConfig(1.0))
    a = masked_attention(np.zeros((5, 5)), mask)
    for i in range(4):
        assert np.allclose(a[i, :4], 0.25, atol=1e-12)
        assert a[i, 4] == 0.0


def test_exponent_rule_on_unnormalized_weights():
    rng = np.random.default_rng(3)
    lay = SequenceLayout.from_lengths(1, 5, 2)
    w = rng.standard_normal((8, 8))
    sal = _profile(rng.uniform(0.2, 1.0, size=5))
    cfg = MaskConfig(0.7, 1e-6)
    mask = build_bidirectional_mask(sal, lay, cfg)
    lam = 0.7 * sal.normalized
    for i in range(1, 6):
        for j in range(i + 1, 6):
            unnormalized = math.exp(w[i, j] + mask[i, j])
            expected = lam[j - 1] * math.exp(w[i, j])
            assert abs(unnormalized - expected) <= 1e-6 * abs(expected)


def test_masked_attention_shape_mismatch():
    with pytest.raises(ShapeError):
        masked_attention(np.zeros((2, 2)), np.zeros((3, 3)))


def test_bidir_attention_rows_sum_to_one():
    rng = np.random.default_rng(4)
    lay = SequenceLayout.from_lengths(2, 6, 3)
    w = rng.standard_normal((11, 11))
    prof = compute_salience(w, lay)
    a = masked_attention(w, build_bidirectional_mask(prof, lay, MaskConfig()))
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-6)


def test_raising_salience_never_reduces_forward_attention():
    rng = np.random.default_rng(5)
    lay = SequenceLayout.from_lengths(1, 4, 2)
    w = rng.standard_normal((7, 7))
    low = _profile([0.3, 0.3, 0.2, 0.3])
    high = _profile([0.3, 0.3, 0.9, 0.3])
    cfg = MaskConfig(0.8)
    a_low = masked_attention(w, build_bidirectional_mask(low, lay, cfg))
    a_high = masked_attention(w, build_bidirectional_mask(high, lay, cfg))
    j = 3  # global index of the boosted token
    for i in range(1, j):
        assert a_high[i, j] >= a_low[i, j] - 1e-12


def test_text_rows_keep_strict_causality():
    rng = np.random.default_rng(6)
    lay = SequenceLayout.from_lengths(1, 4, 3)
    w = rng.standard_normal((8, 8))
    prof = compute_salience(w, lay)
    a = masked_attention(w, build_bidirectional_mask(prof, lay, MaskConfig(1.0)))
    for i in range(5, 8):
        assert np.all(a[i, i + 1 :] == 0.0)


def test_epsilon_limit_recovers_causal_attention():
    rng = np.random.default_rng(7)
    lay = SequenceLayout.from_lengths(2, 20, 10)
    w = rng.standard_normal((32, 32))
    zero = _profile(np.zeros(20))
    bidir = masked_attention(w, build_bidirectional_mask(zero, lay, MaskConfig(0.5, 1e-12)))
    causal = masked_attention(w, build_causal_mask(32))
    assert np.abs(bidir - causal).max() < 1e-4


# --- head aggregation ---------------------------------------------------


def test_aggregate_heads_modes():
    stack = np.stack([np.full((2, 2), 1.0), np.full((2, 2), 3.0)])
    assert np.array_equal(aggregate_heads(stack, "mean"), np.full((2, 2), 2.0))
    assert np.array_equal(aggregate_heads(stack, "sum"), np.full((2, 2), 4.0))
    assert np.array_equal(aggregate_heads(stack, "single", head=1), np.full((2, 2), 3.0))
    with pytest.raises(ConfigError):
        aggregate_heads(stack, "median")
    with pytest.raises(ConfigError):
        aggregate_heads(stack, "single", head=2)


# --- graymap export -----------------------------------------------------


def test_render_pgm_layout():
    text = masking.render_pgm(np.array([[0, 128], [255, 64]]))
    assert text == "P2\n2 2\n255\n0 128\n255 64\n"


def test_render_pgm_rejects_out_of_range():
    with pytest.raises(ValueError):
        masking.render_pgm(np.array([[256]]))


def test_penalty_graymap_extremes_and_midpoint():
    prof = _profile([1.0, 0.0, 1.0, 0.0])
    text = masking.penalty_graymap(prof, MaskConfig(1.0, 1e-6), 2, 2)
    lines = text.strip().split("\n")
    assert lines[0] == "P2"
    assert lines[1] == "2 2"
    pixels = [int(v) for line in lines[3:] for v in line.split()]
    assert pixels[0] == 255 and pixels[2] == 255  # no penalty
    assert pixels[1] == 0 and pixels[3] == 0  # floored at epsilon

    # gray scales linearly with penalty magnitude: ln(0.25) against floor ln(1e-6)
    mid = masking.penalty_graymap(_profile([0.5]), MaskConfig(0.5, 1e-6), 1, 1)
    expected = round(255 * (1 - math.log(0.25) / math.log(1e-6)))
    assert int(mid.strip().split("\n")[3]) == expected


def test_penalty_graymap_grid_mismatch():
    with pytest.raises(ShapeError):
        masking.penalty_graymap(_profile([1.0]), MaskConfig(), 2, 2)
