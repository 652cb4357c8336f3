import itertools

import numpy as np
import pytest

from polarflip.decoder import DecodePath, DecoderState, scl_decode
from polarflip.flip import (
    ACTION_CONTINUE,
    ACTION_RESELECT,
    AttemptLog,
    FlipPlan,
    FvDecision,
    ScorerError,
    apply_alpha_threshold,
    decode_two_phase,
    empty_plan,
    encode_state,
    lsd_flip_vector,
    split_state_encoding,
)
from polarflip.polar import construct_code

CODE16 = construct_code(16, 4, 4, crc_poly=0x3)


class StubFlipScorer:
    def __init__(self, plan):
        self.plan = plan
        self.calls = 0

    def score_flips(self, encoding):
        self.calls += 1
        return self.plan


class ScriptedValidator:
    """Plays back a fixed continue/re-select string."""

    def __init__(self, actions):
        self.actions = list(actions)
        self.calls = 0

    def validate_flip(self, encoding):
        action = self.actions[self.calls]
        self.calls += 1
        return FvDecision(ACTION_CONTINUE if action == "c" else ACTION_RESELECT)


class ExplodingScorer:
    def score_flips(self, encoding):
        raise ScorerError("should never be consulted")

    def validate_flip(self, encoding):
        raise ScorerError("should never be consulted")


def expected_queues(flip_set, decisions):
    """Independent reference for the Phase-II queue tree: continue appends
    the next ranked position, re-select replaces the queue's tail."""
    queues = []
    queue = [flip_set[0]]
    for i in range(len(flip_set)):
        queues.append(tuple(queue))
        if i == len(flip_set) - 1:
            break
        if decisions[i] == "c":
            queue = queue + [flip_set[i + 1]]
        else:
            queue = queue[:-1] + [flip_set[i + 1]]
    return queues


def hopeless_llrs(code, seed=1234):
    """LLRs whose decode fails CRC at every attempt (checked, frozen seed)."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0, size=code.n_bits)


# --------------------------------------------------------------------------- state encoding


def test_encode_state_is_plain_concatenation():
    code4 = construct_code(4, 2, 0)
    grads = np.array([0.0, 0.1, 0.0, 0.7])
    llrs = np.array([2.0, -1.0, 3.0, 0.5])
    path = DecodePath(0, np.zeros(4, dtype=np.int8), 0.8, grads, llrs)
    state = DecoderState(code4, (path,), llrs, np.array([False]), 0)
    np.testing.assert_array_equal(encode_state(state), np.concatenate([grads, llrs]))


def test_encode_state_shape_and_path_order():
    rng = np.random.default_rng(6)
    llrs = rng.normal(0, 2, 16)
    state = scl_decode(CODE16, llrs, 4)
    enc = encode_state(state)
    assert enc.shape == (5 * 16,)
    grads, received = split_state_encoding(enc, 16)
    np.testing.assert_array_equal(received, llrs)
    pm_from_grads = grads.sum(axis=1)
    assert (np.diff(pm_from_grads) >= -1e-12).all()


def test_encode_state_noiseless_gradients_vanish():
    llrs = np.full(16, 60.0)  # all-zero codeword, huge confidence
    state = scl_decode(CODE16, llrs, 2)
    grads, _ = split_state_encoding(encode_state(state), 16)
    assert grads[0].max() < 1e-12


def test_split_rejects_bad_lengths():
    with pytest.raises(ValueError):
        split_state_encoding(np.zeros(17), 16)
    with pytest.raises(ValueError):
        split_state_encoding(np.zeros(16), 16)


# --------------------------------------------------------------------------- LSD action encoding


def test_lsd_reference_values():
    plan = lsd_flip_vector([7, 9, 2], 0.8, 16)
    np.testing.assert_allclose(
        plan.likelihoods[[7, 9, 2]],
        [0.6198347107438016, 0.24793388429752067, 0.13223140495867772],
        atol=1e-12,
    )
    assert plan.omega == 3


def test_lsd_single_position_gets_all_mass():
    plan = lsd_flip_vector([5], 0.3, 16)
    assert plan.likelihoods[5] == 1.0


def test_lsd_small_p_concentrates_on_first():
    plan = lsd_flip_vector([3, 8], 1e-6, 16)
    assert plan.likelihoods[3] > 1.0 - 1e-5
    assert plan.likelihoods[8] < 1e-5


@pytest.mark.parametrize("p", [0.2, 0.8])
@pytest.mark.parametrize("omega", range(1, 17))
def test_lsd_normalization_and_strict_descent(omega, p):
    positions = np.arange(omega) * 2 + 1
    plan = lsd_flip_vector(positions, p, 40)
    values = plan.likelihoods[plan.positions]
    assert abs(values.sum() - 1.0) <= 1e-12
    if omega > 1:
        assert (np.diff(values) < 0).all()


def test_lsd_input_validation():
    with pytest.raises(ValueError):
        lsd_flip_vector([1, 1], 0.5, 8)
    with pytest.raises(ValueError):
        lsd_flip_vector([1, 2], 1.0, 8)
    with pytest.raises(ValueError):
        lsd_flip_vector([], 0.5, 8)


def test_flip_plan_validation():
    vec = np.zeros(8)
    vec[[2, 5]] = [0.7, 0.3]
    FlipPlan(positions=[2, 5], likelihoods=vec)
    with pytest.raises(ValueError):  # ascending along ranking
        FlipPlan(positions=[5, 2], likelihoods=vec)
    bad = vec.copy()
    bad[7] = 1e-3  # mass off the ranked set
    with pytest.raises(ValueError):
        FlipPlan(positions=[2, 5], likelihoods=bad)


# --------------------------------------------------------------------------- alpha thresholding


def test_alpha_threshold_keeps_figure_values():
    # descending likelihoods {0.4, 0.3, 0.1} at positions (7, 9, 2): an
    # alpha between 0.1 and 0.3 keeps exactly {7, 9}
    vec = np.zeros(16)
    vec[[7, 9, 2]] = [0.4, 0.3, 0.1]
    vec /= vec.sum()  # (0.5, 0.375, 0.125) after normalization
    plan = FlipPlan(positions=[7, 9, 2], likelihoods=vec)
    np.testing.assert_array_equal(apply_alpha_threshold(plan, 0.2), [7, 9])


def test_alpha_threshold_is_strict_and_order_preserving():
    plan = lsd_flip_vector([11, 3, 6], 0.8, 16)
    np.testing.assert_array_equal(apply_alpha_threshold(plan, 0.0), [11, 3, 6])
    top = plan.likelihoods[11]
    assert apply_alpha_threshold(plan, top).size == 0  # strict comparison
    np.testing.assert_array_equal(apply_alpha_threshold(plan, top - 1e-12), [11])


def test_scaling_invariance_of_rank_order():
    plan = lsd_flip_vector([4, 8, 12], 0.8, 16)
    ranks = apply_alpha_threshold(plan, 0.0)
    rescaled = lsd_flip_vector([4, 8, 12], 0.8, 16)  # normalization built in
    np.testing.assert_array_equal(ranks, apply_alpha_threshold(rescaled, 0.0))


# --------------------------------------------------------------------------- two-phase orchestration


def test_initial_pass_short_circuits():
    llrs = np.full(16, 50.0)
    scorer = ExplodingScorer()
    bits, log = decode_two_phase(CODE16, llrs, 1, scorer, scorer)
    assert log.outcome == "pass"
    assert log.attempt_count == 1
    assert not bits.any()


@pytest.mark.parametrize("omega", [2, 3, 4])
def test_phase2_queue_tree_conformance(omega):
    # Every FV decision string must reproduce the reference queue tree.
    code = CODE16
    llrs = hopeless_llrs(code)
    free = [int(v) for v in code.free_positions]
    flip_set = [free[3], free[5], free[1], free[6]][:omega]
    plan = lsd_flip_vector(flip_set, 0.8, code.n_bits)
    for decisions in itertools.product("cr", repeat=omega - 1):
        scorer = StubFlipScorer(plan)
        validator = ScriptedValidator(decisions)
        # alpha=1 suppresses Phase-I so the trace is pure Phase-II
        bits, log = decode_two_phase(code, llrs, 1, scorer, validator, alpha=1.0)
        assert log.flip_queues() == expected_queues(flip_set, decisions)
        assert validator.calls == omega - 1
        assert log.attempt_count <= 2 + omega


def test_paper_omega3_continue_continue():
    code = CODE16
    free = [int(v) for v in code.free_positions]
    flip_set = [free[3], free[5], free[1]]
    plan = lsd_flip_vector(flip_set, 0.8, code.n_bits)
    _, log = decode_two_phase(
        code, hopeless_llrs(code), 1, StubFlipScorer(plan), ScriptedValidator("cc"), alpha=1.0
    )
    f = flip_set
    assert log.flip_queues() == [(f[0],), (f[0], f[1]), (f[0], f[1], f[2])]
    _, log = decode_two_phase(
        code, hopeless_llrs(code), 1, StubFlipScorer(plan), ScriptedValidator("rc"), alpha=1.0
    )
    assert log.flip_queues() == [(f[0],), (f[1],), (f[1], f[2])]


def test_queue_size_tracks_continue_count():
    code = CODE16
    free = [int(v) for v in code.free_positions]
    plan = lsd_flip_vector([free[0], free[2], free[4], free[6]], 0.8, code.n_bits)
    for decisions in itertools.product("cr", repeat=3):
        _, log = decode_two_phase(
            code, hopeless_llrs(code), 1, StubFlipScorer(plan), ScriptedValidator(decisions), alpha=1.0
        )
        queues = log.flip_queues()
        for i, queue in enumerate(queues):
            continues = decisions[: i].count("c") if i else 0
            assert len(queue) == 1 + continues


def test_phase1_runs_before_phase2():
    code = CODE16
    free = [int(v) for v in code.free_positions]
    plan = lsd_flip_vector([free[3], free[5]], 0.8, code.n_bits)
    _, log = decode_two_phase(
        code, hopeless_llrs(code), 1, StubFlipScorer(plan), ScriptedValidator("c"), alpha=0.03
    )
    phases = [r.phase for r in log.records]
    assert phases[0] == "initial"
    assert phases[1] == "phase1"
    assert set(log.records[1].flips) == {free[3], free[5]}


def test_empty_threshold_skips_phase1():
    code = CODE16
    free = [int(v) for v in code.free_positions]
    plan = lsd_flip_vector([free[3], free[5]], 0.8, code.n_bits)
    _, log = decode_two_phase(
        code, hopeless_llrs(code), 1, StubFlipScorer(plan), ScriptedValidator("c"), alpha=1.0
    )
    assert [r.phase for r in log.records] == ["initial", "phase2", "phase2"]


def test_empty_plan_returns_initial_result():
    code = CODE16
    scorer = StubFlipScorer(empty_plan(code.n_bits))
    bits, log = decode_two_phase(code, hopeless_llrs(code), 1, scorer, ScriptedValidator(""))
    assert log.attempt_count == 1
    assert log.outcome == "fail"


def test_non_free_positions_dropped_with_warning(caplog):
    code = CODE16
    frozen_pos = int(np.flatnonzero(code.frozen_mask)[-1])
    free = [int(v) for v in code.free_positions]
    vec = np.zeros(code.n_bits)
    vec[[free[0], frozen_pos]] = [0.6, 0.4]
    plan = FlipPlan(positions=[free[0], frozen_pos], likelihoods=vec)
    with caplog.at_level("WARNING"):
        _, log = decode_two_phase(
            code, hopeless_llrs(code), 1, StubFlipScorer(plan), ScriptedValidator(""), alpha=1.0
        )
    assert "non-free" in caplog.text
    assert log.omega == 1
    assert log.flip_queues() == [(free[0],)]


def test_scorer_error_carries_partial_log():
    code = CODE16

    class Expl:
        def score_flips(self, encoding):
            raise ScorerError("model exploded")

    with pytest.raises(ScorerError) as info:
        decode_two_phase(code, hopeless_llrs(code), 1, Expl(), ScriptedValidator(""))
    assert info.value.attempt_log is not None
    assert info.value.attempt_log.attempt_count == 1


def test_attempt_log_jsonl_roundtrip():
    code = CODE16
    free = [int(v) for v in code.free_positions]
    plan = lsd_flip_vector([free[0], free[1], free[2]], 0.8, code.n_bits)
    _, log = decode_two_phase(
        code, hopeless_llrs(code), 1, StubFlipScorer(plan), ScriptedValidator("cr"), alpha=1.0
    )
    parsed = AttemptLog.parse_jsonl(log.to_jsonl())
    assert parsed.records == log.records
    assert parsed.outcome == log.outcome
    assert parsed.omega == log.omega


def test_fv_decision_validation():
    with pytest.raises(ValueError):
        FvDecision("maybe")
