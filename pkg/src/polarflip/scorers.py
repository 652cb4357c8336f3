"""Flip-position and flip-validate scorers.

Four interchangeable families sit behind the same two-method contract:
a genie oracle (simulation only), a smallest-|decision-LLR| heuristic,
native recurrent inference from a serialized weight bundle, and an
adapter that proxies both calls to a child process over line-delimited
JSON.  All of them consume the state encoding produced by
`flip.encode_state` and emit `FlipPlan` / `FvDecision`.
"""

from __future__ import annotations

import json
import logging
import os
import select
import subprocess
import time
from dataclasses import dataclass

import numpy as np

from .decoder import first_divergence, scl_decode
from .flip import (
    ACTION_CONTINUE,
    ACTION_RESELECT,
    FlipPlan,
    FvDecision,
    ScorerError,
    empty_plan,
    lsd_flip_vector,
    split_state_encoding,
)
from .polar import PolarCode

logger = logging.getLogger(__name__)

BUNDLE_MAGIC = b"NFSW1"
BUNDLE_VERSION = 1
ARCH_LSTM_V1 = "lstm_v1"
HEAD_FLIP = "flip"
HEAD_VALIDATE = "validate"
INPUT_LAYOUT = "per_bit:path_gradients+received_llr"
SOFTMAX_FLOOR = 1e-12


@dataclass(frozen=True)
class GenieContext:
    """Transmitted-sequence oracle; only ever available in simulation."""

    true_u: np.ndarray
    max_labels: int = 5


class GenieScorer:
    """Labels true error positions by iterative flip-and-re-decode.

    Each round decodes with the labels found so far, compares the chosen
    trajectory against the transmitted sequence, and flips the earliest
    divergence.  `direct=True` switches to single-pass trajectory
    comparison (labels every divergent bit of the first decode), kept for
    ablation; the iterative mode avoids mislabeling propagation artifacts.
    The validate side always continues: the labels are already correct by
    construction, so progressive flipping is the right trial order.
    """

    def __init__(
        self,
        code: PolarCode,
        llrs: np.ndarray,
        ctx: GenieContext,
        list_size: int = 1,
        shape_p: float = 0.8,
        min_sum: bool = False,
        direct: bool = False,
    ):
        self.code = code
        self.llrs = np.asarray(llrs, dtype=float)
        self.ctx = ctx
        self.list_size = list_size
        self.shape_p = shape_p
        self.min_sum = min_sum
        self.direct = direct
        self._labels: list[int] | None = None

    def labels(self) -> list[int]:
        if self._labels is not None:
            return self._labels
        if self.direct:
            state = scl_decode(self.code, self.llrs, self.list_size, min_sum=self.min_sum)
            free = self.code.free_positions
            true_bits = np.asarray(self.ctx.true_u, dtype=np.int8)[free]
            diff = free[state.chosen.hard_decisions[free] != true_bits]
            self._labels = [int(i) for i in diff[: self.ctx.max_labels]]
            return self._labels
        found: list[int] = []
        while len(found) < self.ctx.max_labels:
            state = scl_decode(self.code, self.llrs, self.list_size, flips=found, min_sum=self.min_sum)
            div = first_divergence(state, self.ctx.true_u)
            if div is None or div in found:
                # done, or (list > 1 only) the complementary selection left
                # the chosen path diverging at an already-flipped position
                break
            found.append(div)
        self._labels = found
        return found

    def score_flips(self, encoding: np.ndarray) -> FlipPlan:
        labels = self.labels()
        if not labels:
            return empty_plan(self.code.n_bits)
        return lsd_flip_vector(labels, self.shape_p, self.code.n_bits)

    def validate_flip(self, encoding: np.ndarray) -> FvDecision:
        return FvDecision(ACTION_CONTINUE)


class HeuristicScorer:
    """Least-confident-bit baseline.

    Free positions are ranked by descending chosen-path penalty, which is
    the same order as ascending |decision LLR| wherever the decision
    follows its own sign rule (always, at list size 1).  Ties resolve to
    the lower index.
    """

    def __init__(self, code: PolarCode, omega: int, shape_p: float = 0.8):
        if omega < 1:
            raise ValueError("omega must be positive")
        self.code = code
        self.omega = omega
        self.shape_p = shape_p

    def score_flips(self, encoding: np.ndarray) -> FlipPlan:
        grads, _ = split_state_encoding(encoding, self.code.n_bits)
        free = self.code.free_positions
        order = free[np.argsort(-grads[0][free], kind="stable")]
        chosen = order[: self.omega]
        return lsd_flip_vector(chosen, self.shape_p, self.code.n_bits)

    def validate_flip(self, encoding: np.ndarray) -> FvDecision:
        return FvDecision(ACTION_CONTINUE)


class ConstantValidator:
    """Fixed flip-validate answer; `continue` turns Phase-II into
    progressive multi-bit flipping."""

    def __init__(self, action: str = ACTION_CONTINUE):
        self._decision = FvDecision(action)

    def validate_flip(self, encoding: np.ndarray) -> FvDecision:
        return self._decision


# --------------------------------------------------------------------------- weight bundles


@dataclass(frozen=True)
class ModelBundle:
    """Deserialized recurrent scorer: metadata plus named float32 tensors."""

    architecture: str
    head: str
    input_size: int
    hidden_size: int
    output_size: int
    block_len: int
    list_size: int
    omega: int
    shape_p: float | None
    code_digest: str
    input_layout: str
    tensors: dict[str, np.ndarray]

    REQUIRED_TENSORS = ("lstm.w_ih", "lstm.w_hh", "lstm.bias", "head.weight", "head.bias")

    def validate(self) -> None:
        if self.architecture != ARCH_LSTM_V1:
            raise ValueError(f"unsupported architecture {self.architecture!r}")
        if self.head not in (HEAD_FLIP, HEAD_VALIDATE):
            raise ValueError(f"unknown head {self.head!r}")
        if self.input_layout != INPUT_LAYOUT:
            raise ValueError(f"unknown input layout {self.input_layout!r}")
        if self.input_size != self.list_size + 1:
            raise ValueError("input size must be list_size + 1")
        expected_out = 1 if self.head == HEAD_FLIP else 2
        if self.output_size != expected_out:
            raise ValueError(f"{self.head} head must have output size {expected_out}")
        h, i = self.hidden_size, self.input_size
        shapes = {
            "lstm.w_ih": (4 * h, i),
            "lstm.w_hh": (4 * h, h),
            "lstm.bias": (4 * h,),
            "head.weight": (self.output_size, h),
            "head.bias": (self.output_size,),
        }
        for name, shape in shapes.items():
            t = self.tensors.get(name)
            if t is None:
                raise ValueError(f"missing tensor {name}")
            if t.shape != shape:
                raise ValueError(f"tensor {name} has shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"tensor {name} contains non-finite values")


def save_model_bundle(path: str, bundle: ModelBundle) -> None:
    """Serialize: magic, version byte, JSON metadata, raw LE float32 payloads."""
    meta = {
        "architecture": bundle.architecture,
        "head": bundle.head,
        "input_size": bundle.input_size,
        "hidden_size": bundle.hidden_size,
        "output_size": bundle.output_size,
        "block_len": bundle.block_len,
        "list_size": bundle.list_size,
        "omega": bundle.omega,
        "shape_p": bundle.shape_p,
        "code_digest": bundle.code_digest,
        "input_layout": bundle.input_layout,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in bundle.tensors.items()],
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(bytes([BUNDLE_VERSION]))
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        for _, tensor in bundle.tensors.items():
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_model_bundle(path: str) -> ModelBundle:
    """Parse and validate an `NFSW1` weight bundle."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:5] != BUNDLE_MAGIC:
        raise ValueError(f"{path}: not a weight bundle (bad magic)")
    if raw[5] != BUNDLE_VERSION:
        raise ValueError(f"{path}: unsupported bundle version {raw[5]}")
    meta_len = int.from_bytes(raw[6:10], "little")
    if len(raw) < 10 + meta_len:
        raise ValueError(f"{path}: truncated metadata block")
    try:
        meta = json.loads(raw[10 : 10 + meta_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: malformed metadata: {exc}") from exc
    offset = 10 + meta_len
    tensors: dict[str, np.ndarray] = {}
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise ValueError(f"{path}: truncated payload for tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes after declared tensors")
    bundle = ModelBundle(
        architecture=meta["architecture"],
        head=meta["head"],
        input_size=meta["input_size"],
        hidden_size=meta["hidden_size"],
        output_size=meta["output_size"],
        block_len=meta["block_len"],
        list_size=meta["list_size"],
        omega=meta["omega"],
        shape_p=meta.get("shape_p"),
        code_digest=meta["code_digest"],
        input_layout=meta["input_layout"],
        tensors=tensors,
    )
    bundle.validate()
    return bundle


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(bundle: ModelBundle, steps: np.ndarray) -> np.ndarray:
    """Run the single-layer LSTM over (T, input_size) steps; returns (T, H).

    Gate order is input, forget, cell, output; all math in float32 so the
    trainer-side export parity bound is meaningful.
    """
    w_ih = bundle.tensors["lstm.w_ih"]
    w_hh = bundle.tensors["lstm.w_hh"]
    bias = bundle.tensors["lstm.bias"]
    hdim = bundle.hidden_size
    steps = np.ascontiguousarray(steps, dtype=np.float32)
    h = np.zeros(hdim, dtype=np.float32)
    c = np.zeros(hdim, dtype=np.float32)
    outputs = np.empty((steps.shape[0], hdim), dtype=np.float32)
    pre_in = steps @ w_ih.T + bias
    for t in range(steps.shape[0]):
        gates = pre_in[t] + w_hh @ h
        i = _sigmoid(gates[:hdim])
        f = _sigmoid(gates[hdim : 2 * hdim])
        g = np.tanh(gates[2 * hdim : 3 * hdim])
        o = _sigmoid(gates[3 * hdim :])
        c = f * c + i * g
        h = o * np.tanh(c)
        outputs[t] = h
    return outputs


def _state_to_steps(bundle: ModelBundle, encoding: np.ndarray) -> np.ndarray:
    grads, llr = split_state_encoding(encoding, bundle.block_len)
    if grads.shape[0] != bundle.list_size:
        raise ValueError(
            f"state encodes {grads.shape[0]} paths but the model expects {bundle.list_size}"
        )
    return np.concatenate([grads, llr[None, :]], axis=0).T


def flip_logits(bundle: ModelBundle, encoding: np.ndarray) -> np.ndarray:
    """Per-position scores from a flip-head bundle (length N)."""
    hs = lstm_forward(bundle, _state_to_steps(bundle, encoding))
    w, b = bundle.tensors["head.weight"], bundle.tensors["head.bias"]
    return (hs @ w.T + b)[:, 0]


def validate_logits(bundle: ModelBundle, encoding: np.ndarray) -> np.ndarray:
    """(continue, re-select) logits from a validate-head bundle."""
    hs = lstm_forward(bundle, _state_to_steps(bundle, encoding))
    w, b = bundle.tensors["head.weight"], bundle.tensors["head.bias"]
    return w @ hs[-1] + b


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=float)
    z = np.exp(z - z.max())
    return z / z.sum()


class NeuralFlipScorer:
    """Flip scorer backed by a serialized recurrent model.

    Scores every position, softmax-normalizes, keeps the top-omega free
    positions above a numerical floor, and renormalizes their masses into
    the plan.  Non-free or floored positions are dropped with a warning.
    """

    def __init__(self, code: PolarCode, bundle: ModelBundle, check_digest: bool = True):
        bundle.validate()
        if bundle.head != HEAD_FLIP:
            raise ValueError("bundle does not carry a flip head")
        if bundle.block_len != code.n_bits:
            raise ValueError(f"bundle is for N={bundle.block_len}, code has N={code.n_bits}")
        if check_digest and bundle.code_digest != code.digest():
            raise ValueError(
                f"bundle was exported for code {bundle.code_digest}, this code is {code.digest()}"
            )
        self.code = code
        self.bundle = bundle

    def score_flips(self, encoding: np.ndarray) -> FlipPlan:
        probs = softmax(flip_logits(self.bundle, encoding))
        allowed = probs.copy()
        frozen_mass = allowed[self.code.frozen_mask]
        if np.any(frozen_mass > SOFTMAX_FLOOR):
            logger.warning("model placed %.3g probability on frozen positions", float(frozen_mass.sum()))
        allowed[self.code.frozen_mask] = 0.0
        allowed[allowed < SOFTMAX_FLOOR] = 0.0
        order = np.argsort(-allowed, kind="stable")[: self.bundle.omega]
        order = order[allowed[order] > 0.0]
        if order.size == 0:
            return empty_plan(self.code.n_bits)
        vec = np.zeros(self.code.n_bits)
        vec[order] = allowed[order] / allowed[order].sum()
        return FlipPlan(positions=order, likelihoods=vec, shape_p=self.bundle.shape_p)


class NeuralFlipValidator:
    """Two-way classifier head over the final recurrent state; logit order
    is (continue, re-select) and ties resolve to continue."""

    def __init__(self, code: PolarCode, bundle: ModelBundle, check_digest: bool = True):
        bundle.validate()
        if bundle.head != HEAD_VALIDATE:
            raise ValueError("bundle does not carry a validate head")
        if bundle.block_len != code.n_bits:
            raise ValueError(f"bundle is for N={bundle.block_len}, code has N={code.n_bits}")
        if check_digest and bundle.code_digest != code.digest():
            raise ValueError(
                f"bundle was exported for code {bundle.code_digest}, this code is {code.digest()}"
            )
        self.code = code
        self.bundle = bundle

    def validate_flip(self, encoding: np.ndarray) -> FvDecision:
        logits = validate_logits(self.bundle, encoding)
        probs = softmax(logits)
        if logits[1] > logits[0]:
            return FvDecision(ACTION_RESELECT, confidence=float(probs[1]))
        return FvDecision(ACTION_CONTINUE, confidence=float(probs[0]))


# --------------------------------------------------------------------------- external adapter


def wire_floats(values: np.ndarray) -> list[float]:
    """Round floats to 9 significant digits for the adapter wire format."""
    return [float(f"{v:.9g}") for v in np.asarray(values, dtype=float)]


class ExternalScorer:
    """Scorer pair proxied to a child process over stdin/stdout.

    One JSON record per line in each direction; requests carry the state
    encoding as decimal floats with 9 significant digits.  Timeouts,
    malformed responses and a dead child all surface as `ScorerError`.
    """

    def __init__(self, code: PolarCode, command: list[str] | str, timeout: float = 5.0):
        self.code = code
        self.timeout = timeout
        self._buf = b""
        self.proc = subprocess.Popen(
            command,
            shell=isinstance(command, str),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()

    def __enter__(self) -> "ExternalScorer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _roundtrip(self, request: dict) -> dict:
        if self.proc.poll() is not None:
            raise ScorerError(f"scorer process exited with status {self.proc.returncode}")
        line = (json.dumps(request) + "\n").encode()
        try:
            self.proc.stdin.write(line)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ScorerError(f"scorer process pipe broken: {exc}") from exc
        deadline = time.monotonic() + self.timeout
        fd = self.proc.stdout.fileno()
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ScorerError(f"scorer response timed out after {self.timeout}s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise ScorerError(f"scorer response timed out after {self.timeout}s")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise ScorerError("scorer process closed its output stream")
            self._buf += chunk
        raw, _, self._buf = self._buf.partition(b"\n")
        try:
            response = json.loads(raw.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ScorerError(f"malformed scorer response: {exc}") from exc
        if "error" in response:
            raise ScorerError(f"scorer reported error: {response['error']}")
        return response

    def score_flips(self, encoding: np.ndarray) -> FlipPlan:
        response = self._roundtrip({"kind": "score_flips", "state": wire_floats(encoding)})
        try:
            positions = np.asarray(response["positions"], dtype=np.int64)
            likelihoods = np.asarray(response["likelihoods"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ScorerError(f"malformed flip response: {exc}") from exc
        if positions.size == 0:
            return empty_plan(self.code.n_bits)
        if positions.shape != likelihoods.shape:
            raise ScorerError("positions/likelihoods length mismatch in flip response")
        keep = ~self.code.frozen_mask[positions] if positions.size else np.zeros(0, bool)
        if not keep.all():
            logger.warning("dropping non-free flip positions %s", positions[~keep].tolist())
            positions, likelihoods = positions[keep], likelihoods[keep]
        if positions.size == 0:
            return empty_plan(self.code.n_bits)
        vec = np.zeros(self.code.n_bits)
        vec[positions] = likelihoods / likelihoods.sum()
        try:
            return FlipPlan(positions=positions, likelihoods=vec)
        except ValueError as exc:
            raise ScorerError(f"invalid flip plan from scorer: {exc}") from exc

    def validate_flip(self, encoding: np.ndarray) -> FvDecision:
        response = self._roundtrip({"kind": "validate_flip", "state": wire_floats(encoding)})
        try:
            action = response["action"]
            confidence = float(response.get("confidence", 1.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise ScorerError(f"malformed validate response: {exc}") from exc
        if action not in (ACTION_CONTINUE, ACTION_RESELECT):
            raise ScorerError(f"unknown action {action!r} from scorer")
        return FvDecision(action, confidence=confidence)
