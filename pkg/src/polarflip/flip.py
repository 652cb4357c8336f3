"""Two-phase flip decoding and its state/action encodings.

The scorer state is the concatenation of the survivor-path gradient traces
(ascending final PM) with the received LLRs, a vector of length (L+1)*N.
Actions are soft multi-hot flip vectors whose nonzeros follow a scaled
logarithmic series distribution over the ranked flip positions.

Flow on CRC failure: one multi-bit flip attempt over the alpha-thresholded
plan, then successive single-position trials driven by a flip-validate
scorer that either extends the flip queue (continue) or swaps its last
entry (re-select).  Attempts are bounded by 2 + omega.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .decoder import DecoderState, scl_decode, validate_flips
from .polar import PolarCode

logger = logging.getLogger(__name__)

PHASE_INITIAL = "initial"
PHASE_MULTIBIT = "phase1"
PHASE_TRIAL = "phase2"

ACTION_CONTINUE = "continue"
ACTION_RESELECT = "re-select"


class ScorerError(RuntimeError):
    """A scorer failed (bad model output, dead subprocess, timeout, ...)."""

    def __init__(self, message: str, attempt_log: "AttemptLog | None" = None):
        super().__init__(message)
        self.attempt_log = attempt_log


def encode_state(state: DecoderState) -> np.ndarray:
    """Concatenate survivor gradient traces (ascending PM) with received LLRs.

    Length is (L+1)*N; everything is read off the completed decode, nothing
    is recomputed.
    """
    parts = [path.gradient_trace for path in state.paths]
    for p, part in enumerate(parts):
        if part is None or part.shape != (state.code.n_bits,):
            raise ValueError(f"path {p} is missing its gradient trace")
    return np.concatenate(parts + [state.received])


def split_state_encoding(encoding: np.ndarray, n_bits: int) -> tuple[np.ndarray, np.ndarray]:
    """Undo `encode_state`: returns ((L, N) gradients, (N,) received LLRs)."""
    encoding = np.asarray(encoding, dtype=float)
    if encoding.ndim != 1 or encoding.size % n_bits or encoding.size < 2 * n_bits:
        raise ValueError(f"state encoding length {encoding.size} is not a multiple >= 2 of N={n_bits}")
    folded = encoding.reshape(-1, n_bits)
    return folded[:-1], folded[-1]


@dataclass(frozen=True)
class FlipPlan:
    """Ranked flip positions with their soft likelihoods.

    `likelihoods` is a length-N vector with exactly `omega` nonzeros, which
    sum to one and are nonincreasing along `positions`.  An empty plan
    (omega == 0) is the scorer's way of saying "nothing to flip".
    """

    positions: np.ndarray
    likelihoods: np.ndarray
    shape_p: float | None = None

    def __post_init__(self) -> None:
        positions = np.atleast_1d(np.asarray(self.positions, dtype=np.int64))
        likelihoods = np.asarray(self.likelihoods, dtype=float)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "likelihoods", likelihoods)
        if len(np.unique(positions)) != positions.size:
            raise ValueError("flip positions must be distinct")
        if positions.size:
            if positions.min() < 0 or positions.max() >= likelihoods.size:
                raise ValueError("flip position outside the likelihood vector")
            values = likelihoods[positions]
            if np.any(values <= 0):
                raise ValueError("ranked positions must carry positive likelihood")
            if np.any(np.diff(values) > 1e-12):
                raise ValueError("likelihoods must be nonincreasing along the ranking")
            if abs(values.sum() - 1.0) > 1e-9:
                raise ValueError(f"likelihoods sum to {values.sum()}, expected 1")
        if np.count_nonzero(likelihoods) != positions.size:
            raise ValueError("likelihood vector must be zero off the ranked positions")

    @property
    def omega(self) -> int:
        return int(self.positions.size)


def lsd_flip_vector(flip_set, shape_p: float, n_bits: int) -> FlipPlan:
    """Assign scaled logarithmic-series likelihoods p^k/k to ranked positions.

    The rank index k is 1-based along `flip_set`; the normalization makes
    the nonzeros sum to one, cancelling the series' -1/ln(1-p) prefactor.
    """
    positions = np.atleast_1d(np.asarray(flip_set, dtype=np.int64))
    if positions.size == 0:
        raise ValueError("flip set must be nonempty")
    if not 0.0 < shape_p < 1.0:
        raise ValueError(f"shape parameter must lie in (0,1), got {shape_p}")
    if len(np.unique(positions)) != positions.size:
        raise ValueError("flip set indices must be distinct")
    ranks = np.arange(1, positions.size + 1, dtype=float)
    weights = shape_p**ranks / ranks
    weights /= weights.sum()
    vec = np.zeros(n_bits)
    vec[positions] = weights
    return FlipPlan(positions=positions, likelihoods=vec, shape_p=shape_p)


def empty_plan(n_bits: int) -> FlipPlan:
    return FlipPlan(positions=np.zeros(0, dtype=np.int64), likelihoods=np.zeros(n_bits))


def apply_alpha_threshold(plan: FlipPlan, alpha: float) -> np.ndarray:
    """Positions whose likelihood strictly exceeds alpha, in rank order."""
    values = plan.likelihoods[plan.positions]
    return plan.positions[values > alpha]


@dataclass(frozen=True)
class FvDecision:
    """Flip-validate verdict: keep extending the queue, or swap its tail."""

    action: str
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if self.action not in (ACTION_CONTINUE, ACTION_RESELECT):
            raise ValueError(f"unknown flip-validate action {self.action!r}")


class FlipScorer(Protocol):
    def score_flips(self, encoding: np.ndarray) -> FlipPlan: ...


class FlipValidator(Protocol):
    def validate_flip(self, encoding: np.ndarray) -> FvDecision: ...


@dataclass(frozen=True)
class AttemptRecord:
    index: int
    phase: str
    flips: tuple[int, ...]
    crc_pass: bool

    def to_json(self) -> str:
        return json.dumps(
            {"attempt": self.index, "phase": self.phase, "flips": list(self.flips), "crc": self.crc_pass}
        )


@dataclass
class AttemptLog:
    """Per-frame trace of decoding attempts, flip queues and CRC outcomes."""

    records: list[AttemptRecord] = field(default_factory=list)
    outcome: str = "fail"
    omega: int = 0
    final_state: DecoderState | None = field(default=None, repr=False)

    def record(self, phase: str, flips, crc_pass: bool) -> None:
        self.records.append(
            AttemptRecord(len(self.records) + 1, phase, tuple(int(f) for f in flips), bool(crc_pass))
        )

    @property
    def attempt_count(self) -> int:
        return len(self.records)

    @property
    def phase1_success(self) -> bool:
        return any(r.phase == PHASE_MULTIBIT and r.crc_pass for r in self.records)

    @property
    def phase2_attempts(self) -> int:
        return sum(r.phase == PHASE_TRIAL for r in self.records)

    def flip_queues(self, phase: str = PHASE_TRIAL) -> list[tuple[int, ...]]:
        return [r.flips for r in self.records if r.phase == phase]

    def finish(self, state: DecoderState) -> "AttemptLog":
        self.outcome = "pass" if state.crc_passed else "fail"
        self.final_state = state
        if self.attempt_count > 2 + self.omega:
            raise AssertionError(
                f"attempt bound violated: {self.attempt_count} > 2 + omega={self.omega}"
            )
        return self

    def to_jsonl(self) -> str:
        lines = [r.to_json() for r in self.records]
        lines.append(json.dumps({"outcome": self.outcome, "attempts": self.attempt_count, "omega": self.omega}))
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_jsonl(text: str) -> "AttemptLog":
        log = AttemptLog()
        for line in text.splitlines():
            obj = json.loads(line)
            if "attempt" in obj:
                log.records.append(
                    AttemptRecord(obj["attempt"], obj["phase"], tuple(obj["flips"]), obj["crc"])
                )
            else:
                log.outcome = obj["outcome"]
                log.omega = obj.get("omega", 0)
        return log


def _free_only(code: PolarCode, positions: np.ndarray) -> np.ndarray:
    keep = ~code.frozen_mask[positions]
    if not keep.all():
        logger.warning("dropping non-free flip positions %s", positions[~keep].tolist())
    return positions[keep]


def decode_two_phase(
    code: PolarCode,
    llrs: np.ndarray,
    list_size: int,
    f_scorer: FlipScorer,
    fv_scorer: FlipValidator,
    alpha: float = 0.03,
    min_sum: bool = False,
    initial_state: DecoderState | None = None,
) -> tuple[np.ndarray, AttemptLog]:
    """Decode with multi-bit flipping, then successive flip trials.

    Returns the message-bit estimate and the attempt log.  `initial_state`
    lets callers reuse an already-computed standard decode (e.g. from a
    batched run).  Scorer exceptions propagate as `ScorerError` with the
    partial log attached.
    """
    log = AttemptLog()
    state = initial_state if initial_state is not None else scl_decode(
        code, llrs, list_size, min_sum=min_sum
    )
    log.record(PHASE_INITIAL, (), state.crc_passed)
    if state.crc_passed:
        return state.message(), log.finish(state)

    try:
        plan = f_scorer.score_flips(encode_state(state))
    except ScorerError as exc:
        exc.attempt_log = log.finish(state)
        raise
    flip_set = _free_only(code, plan.positions)
    log.omega = int(flip_set.size)
    if flip_set.size == 0:
        return state.message(), log.finish(state)

    kept = apply_alpha_threshold(plan, alpha)
    kept = kept[~code.frozen_mask[kept]]
    if kept.size:
        state = scl_decode(code, llrs, list_size, flips=kept, min_sum=min_sum)
        log.record(PHASE_MULTIBIT, kept, state.crc_passed)
        if state.crc_passed:
            return state.message(), log.finish(state)

    queue: list[int] = [int(flip_set[0])]
    omega = flip_set.size
    for i in range(omega):
        state = scl_decode(code, llrs, list_size, flips=queue, min_sum=min_sum)
        log.record(PHASE_TRIAL, queue, state.crc_passed)
        if state.crc_passed or i == omega - 1:
            break
        try:
            decision = fv_scorer.validate_flip(encode_state(state))
        except ScorerError as exc:
            exc.attempt_log = log.finish(state)
            raise
        if decision.action == ACTION_CONTINUE:
            queue.append(int(flip_set[i + 1]))
        else:
            queue[-1] = int(flip_set[i + 1])
    return state.message(), log.finish(state)
