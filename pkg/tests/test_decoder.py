import numpy as np
import pytest

from polarflip.channel import ChannelConfig, frame_rng, transmit
from polarflip.decoder import (
    first_divergence,
    llr_combine_f,
    llr_combine_g,
    pm_increment,
    sc_decode,
    scl_decode,
    scl_decode_batch,
    validate_flips,
)
from polarflip.polar import construct_code, encode_message, expand_payload

from . import oracles

CODE16 = construct_code(16, 4, 4, crc_poly=0x3)
CODE64 = construct_code(64, 24, 8, crc_poly=0x07)


def noisy_batch(code, count, snr_db, seed):
    rng = np.random.default_rng(seed)
    msgs = rng.integers(0, 2, size=(count, code.k_info), dtype=np.int8)
    symbols = 1.0 - 2.0 * encode_message(code, msgs).astype(float)
    sigma_sq = ChannelConfig(snr_db).noise_variance(code.rate)
    noise = rng.normal(0.0, np.sqrt(sigma_sq), size=symbols.shape)
    return msgs, 2.0 * (symbols + noise) / sigma_sq


# --------------------------------------------------------------------------- kernels


def test_f_kernel_trivials():
    assert llr_combine_f(3.7, 0.0) == 0.0
    assert llr_combine_f(0.0, -2.0) == 0.0
    assert llr_combine_f(2.0, -3.0, min_sum=True) == -2.0


def test_f_kernel_frozen_value():
    # high-precision evaluation of 2*atanh(tanh(1)*tanh(1.5))
    assert llr_combine_f(2.0, 3.0) == pytest.approx(1.6934536609708952, rel=1e-14)


def test_f_kernel_against_high_precision_oracle():
    rng = np.random.default_rng(2)
    for _ in range(300):
        a, b = rng.uniform(-30, 30, size=2)
        expect = float(oracles.boxplus_hp(a, b))
        assert llr_combine_f(a, b) == pytest.approx(expect, rel=1e-12, abs=1e-300)


def test_g_kernel_trivials():
    assert llr_combine_g(2.0, 3.0, 0) == 5.0
    assert llr_combine_g(2.0, 3.0, 1) == 1.0
    assert llr_combine_g(0.0, -4.0, 1) == -4.0


def test_pm_increment_values():
    assert pm_increment(30.0, 0) <= 1e-13
    assert pm_increment(2.0, 1) == pytest.approx(2.1269280110429727, rel=1e-14)
    assert pm_increment(0.0, 0) == pytest.approx(np.log(2.0), rel=1e-14)
    assert pm_increment(0.0, 1) == pytest.approx(np.log(2.0), rel=1e-14)


def test_pm_increment_positive_and_matches_oracle():
    rng = np.random.default_rng(3)
    llrs = rng.uniform(-35, 35, size=500)
    decisions = rng.integers(0, 2, size=500)
    got = pm_increment(llrs, decisions)
    assert (got > 0).all()
    for llr, dec, value in zip(llrs[:200], decisions[:200], got[:200]):
        assert value == pytest.approx(float(oracles.pm_increment_hp(llr, dec)), rel=1e-12)


# --------------------------------------------------------------------------- SC against the recursive reference


@pytest.mark.parametrize("seed", range(6))
def test_sc_matches_recursive_reference(seed):
    _, llrs = noisy_batch(CODE16, 1, 1.0, 100 + seed)
    state = sc_decode(CODE16, llrs[0])
    ref_bits, ref_grads, ref_traces = oracles.ref_sc(CODE16, llrs[0])
    path = state.chosen
    assert np.array_equal(path.hard_decisions, ref_bits)
    np.testing.assert_allclose(path.gradient_trace, ref_grads, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(path.bit_llr_trace, ref_traces, rtol=1e-10, atol=1e-12)
    assert path.path_metric == pytest.approx(ref_grads.sum(), rel=1e-10)


def test_sc_with_flips_matches_reference():
    _, llrs = noisy_batch(CODE16, 1, 1.0, 42)
    flips = [int(CODE16.free_positions[1]), int(CODE16.free_positions[3])]
    state = sc_decode(CODE16, llrs[0], flips=flips)
    ref_bits, ref_grads, _ = oracles.ref_sc(CODE16, llrs[0], flips=flips)
    assert np.array_equal(state.chosen.hard_decisions, ref_bits)
    np.testing.assert_allclose(state.chosen.gradient_trace, ref_grads, rtol=1e-10, atol=1e-12)


# --------------------------------------------------------------------------- SCL against the enumeration reference


@pytest.mark.parametrize("list_size", [2, 4])
@pytest.mark.parametrize("seed", range(4))
def test_scl_matches_enumeration_reference(list_size, seed):
    code = construct_code(8, 3, 0, design_snr_db=1.0)
    rng = np.random.default_rng(500 + seed)
    llrs = rng.normal(0.0, 2.0, size=8)
    state = scl_decode(code, llrs, list_size)
    ref_paths = oracles.ref_scl(code, llrs, list_size)
    assert len(state.paths) == len(ref_paths)
    for path, (ref_bits, ref_pm, ref_incs, _) in zip(state.paths, ref_paths):
        assert np.array_equal(path.hard_decisions, ref_bits)
        assert path.path_metric == pytest.approx(ref_pm, rel=1e-9)
        np.testing.assert_allclose(path.gradient_trace, ref_incs, rtol=1e-9, atol=1e-12)


def test_scl_per_bit_selection_keeps_smallest():
    # Production survivor PMs per bit must equal the reference's: the L
    # smallest of the 2L candidates under the stable tie rule.
    code = construct_code(16, 6, 0, design_snr_db=1.0)
    rng = np.random.default_rng(77)
    llrs = rng.normal(0.0, 2.0, size=(1, 16))
    result = scl_decode_batch(code, llrs, 4, collect_pm_history=True)
    ref_paths = oracles.ref_scl(code, llrs[0], 4)
    ref_final = sorted(p[1] for p in ref_paths)
    got_final = sorted(result.path_metrics[0])
    np.testing.assert_allclose(got_final, ref_final, rtol=1e-9)
    # history: PMs nondecreasing per path lineage and sorted sets per bit
    for pms in result.pm_history:
        assert pms.shape[0] == 1


def test_scl_l1_equals_sc_on_noisy_frames():
    _, llrs = noisy_batch(CODE64, 64, 2.0, 9)
    r_sc = scl_decode_batch(CODE64, llrs, 1)
    for b in range(llrs.shape[0]):
        single = sc_decode(CODE64, llrs[b])
        assert np.array_equal(single.chosen.hard_decisions, r_sc.decisions[b, 0])
        assert single.chosen.path_metric == r_sc.path_metrics[b, 0]


def test_batch_equals_single_frame_scl():
    _, llrs = noisy_batch(CODE64, 24, 2.0, 19)
    batched = scl_decode_batch(CODE64, llrs, 4)
    for b in range(24):
        single = scl_decode(CODE64, llrs[b], 4)
        assert np.array_equal(
            np.stack([p.hard_decisions for p in single.paths]), batched.decisions[b]
        )
        np.testing.assert_array_equal(
            np.array([p.path_metric for p in single.paths]), batched.path_metrics[b]
        )
        assert single.chosen_path == batched.chosen[b]


# --------------------------------------------------------------------------- properties


def test_pm_nonnegative_monotone_and_sums():
    _, llrs = noisy_batch(CODE64, 50, 1.0, 23)
    result = scl_decode_batch(CODE64, llrs, 4)
    assert (result.gradients > 0).all()
    np.testing.assert_allclose(
        result.gradients.sum(axis=2), result.path_metrics, rtol=1e-9
    )
    assert (np.diff(result.path_metrics, axis=1) >= 0).all()


def test_noiseless_decode_zero_pm():
    code = CODE64
    rng = np.random.default_rng(4)
    msg = rng.integers(0, 2, size=code.k_info, dtype=np.int8)
    llrs = (1.0 - 2.0 * encode_message(code, msg)) * 200.0
    state = scl_decode(code, llrs, 4)
    assert state.crc_passed
    assert np.array_equal(state.message(), msg)
    assert state.chosen.path_metric < 1e-10


def test_noiseless_flip_costs_exactly_its_increment():
    code = CODE64
    msg = np.zeros(code.k_info, dtype=np.int8)
    llrs = (1.0 - 2.0 * encode_message(code, msg)) * 50.0
    base = sc_decode(code, llrs)
    flip_at = int(code.free_positions[0])
    flipped = sc_decode(code, llrs, flips=[flip_at])
    assert flipped.chosen.hard_decisions[flip_at] == 1 - base.chosen.hard_decisions[flip_at]
    # the first free bit's flip changes later trellis LLRs, but its own
    # increment must equal pm_increment at the inverted decision
    assert flipped.chosen.gradient_trace[flip_at] == pytest.approx(
        float(pm_increment(base.chosen.bit_llr_trace[flip_at], 1)), rel=1e-12
    )


def test_flip_involution_where_nothing_propagates():
    # A flip at the final free position cannot disturb any later decision,
    # so un-flipping it (dropping it from the set) restores the original
    # trajectory exactly.
    code = CODE64
    rng = np.random.default_rng(8)
    msg = rng.integers(0, 2, size=code.k_info, dtype=np.int8)
    llrs = (1.0 - 2.0 * encode_message(code, msg)) * 80.0
    base = sc_decode(code, llrs)
    flip_at = int(code.free_positions[-1])
    once = sc_decode(code, llrs, flips=[flip_at])
    diff = np.flatnonzero(once.chosen.hard_decisions != base.chosen.hard_decisions)
    assert np.array_equal(diff, [flip_at])
    again = sc_decode(code, llrs, flips=[])
    assert np.array_equal(again.chosen.hard_decisions, base.chosen.hard_decisions)


def test_growth_phase_flip_inverts_each_path():
    # Flip at the very first free bit while the list is still filling.
    code = CODE16
    rng = np.random.default_rng(31)
    llrs = rng.normal(0, 2, size=16)
    first_free = int(code.free_positions[0])
    plain = scl_decode(code, llrs, 4)
    flipped = scl_decode(code, llrs, 4, flips=[first_free])
    assert set(p.hard_decisions[first_free] for p in flipped.paths) == {
        1 - plain.paths[0].hard_decisions[first_free]
    }


def test_ml_agreement_small():
    code = CODE16
    codebook = oracles.ml_codebook(code)
    rng = np.random.default_rng(12)
    mismatches = 0
    for trial in range(200):
        msg = rng.integers(0, 2, size=code.k_info, dtype=np.int8)
        symbols = 1.0 - 2.0 * encode_message(code, msg).astype(float)
        sigma_sq = ChannelConfig(0.0).noise_variance(code.rate)
        llrs = 2.0 * (symbols + rng.normal(0, np.sqrt(sigma_sq), 16)) / sigma_sq
        state = scl_decode(code, llrs, 2**code.k_free)
        ml_msg = oracles.ml_decode(code, llrs, codebook)
        mismatches += not np.array_equal(state.message(), ml_msg)
    assert mismatches == 0


# --------------------------------------------------------------------------- flips & divergence


def test_validate_flips_rejects_bad_positions():
    with pytest.raises(ValueError):
        validate_flips(CODE16, [int(np.flatnonzero(CODE16.frozen_mask)[0])])
    with pytest.raises(ValueError):
        validate_flips(CODE16, [99])
    assert validate_flips(CODE16, None).size == 0


def test_batch_flip_restriction():
    llrs = np.zeros((2, 16))
    mask = np.zeros((2, 16), dtype=bool)
    mask[0, int(CODE16.free_positions[0])] = True
    with pytest.raises(ValueError):
        scl_decode_batch(CODE16, llrs, 4, flips=mask)
    # fine at L=1 and for single-frame batches
    scl_decode_batch(CODE16, llrs, 1, flips=mask)
    scl_decode_batch(CODE16, llrs[:1], 4, flips=mask[:1])


def test_first_divergence():
    code = CODE64
    rng = np.random.default_rng(21)
    msg = rng.integers(0, 2, size=code.k_info, dtype=np.int8)
    true_u = expand_payload(code, code.crc.attach(msg))
    llrs = (1.0 - 2.0 * encode_message(code, msg)) * 60.0
    clean = sc_decode(code, llrs)
    assert first_divergence(clean, true_u) is None
    b1, b2 = int(code.free_positions[2]), int(code.free_positions[7])
    assert first_divergence(sc_decode(code, llrs, flips=[b1]), true_u) == b1
    assert first_divergence(sc_decode(code, llrs, flips=[b2, b1]), true_u) == b1


def test_min_sum_mode_runs_and_differs():
    _, llrs = noisy_batch(CODE64, 4, 2.0, 3)
    exact = scl_decode(CODE64, llrs[0], 2)
    approx = scl_decode(CODE64, llrs[0], 2, min_sum=True)
    assert exact.chosen.path_metric != approx.chosen.path_metric


def test_llr_length_mismatch():
    with pytest.raises(ValueError):
        sc_decode(CODE16, np.zeros(8))
    with pytest.raises(ValueError):
        scl_decode_batch(CODE16, np.zeros((2, 8)), 1)


def test_per_bit_survivor_pms_match_reference():
    # the retained candidates after every bit are exactly the reference's:
    # the L smallest of the 2L extensions under the stable tie rule
    code = construct_code(16, 6, 0, design_snr_db=1.0)
    for seed in (101, 202):
        rng = np.random.default_rng(seed)
        llrs = rng.normal(0.0, 2.0, size=(1, 16))
        result = scl_decode_batch(code, llrs, 4, collect_pm_history=True)
        _, ref_history = oracles.ref_scl(code, llrs[0], 4, with_history=True)
        assert len(result.pm_history) == 16
        for got, expect in zip(result.pm_history, ref_history):
            np.testing.assert_allclose(got[0], expect, rtol=1e-9)


def test_scl_recovers_where_sc_fails_and_matches_ml():
    # crafted noisy frame: SC fails CRC, SCL(L=2) passes and returns the
    # maximum-likelihood codeword (seed found by deterministic scan)
    code = construct_code(8, 2, 2, crc_poly=0x3)
    codebook = oracles.ml_codebook(code)
    found = None
    for seed in range(500):
        rng = np.random.default_rng(seed)
        msg = rng.integers(0, 2, size=code.k_info, dtype=np.int8)
        symbols = 1.0 - 2.0 * encode_message(code, msg).astype(float)
        sigma_sq = ChannelConfig(1.0).noise_variance(code.rate)
        llrs = 2.0 * (symbols + rng.normal(0, np.sqrt(sigma_sq), 8)) / sigma_sq
        sc = sc_decode(code, llrs)
        scl2 = scl_decode(code, llrs, 2)
        if not sc.crc_passed and scl2.crc_passed:
            found = (llrs, scl2)
            break
    assert found is not None
    llrs, scl2 = found
    ml_msg = oracles.ml_decode(code, llrs, codebook)
    assert np.array_equal(scl2.message(), ml_msg)
