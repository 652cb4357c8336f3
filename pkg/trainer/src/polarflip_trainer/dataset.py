"""Reader for `NFDS1` training databases.

Independent of the decoder package on purpose: the file format is the
contract.  Layout: magic `NFDS1`, version byte, u32 header length, JSON
header, then fixed-width records of a u64 frame id, the float32 state
encoding, and either a float32 flip vector (kind `f_dnc`) or one action
byte (kind `fv_dnc`, 0 = continue, 1 = re-select).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MAGIC = b"NFDS1"
VERSION = 1
KIND_FDNC = "f_dnc"
KIND_FVDNC = "fv_dnc"


@dataclass(frozen=True)
class TrainingSet:
    """Bulk-loaded dataset: states plus targets, ready for tensor wrapping."""

    kind: str
    code_digest: str
    n_bits: int
    list_size: int
    omega: int
    shape_p: float
    snr_db: float
    seed: int
    state_len: int
    frame_ids: np.ndarray
    states: np.ndarray
    flip_targets: np.ndarray | None = None
    actions: np.ndarray | None = None

    def __len__(self) -> int:
        return self.states.shape[0]

    def split(self, validation: int) -> tuple["TrainingSet", "TrainingSet"]:
        """Deterministic tail split: the last `validation` records are held out."""
        if not 0 < validation < len(self):
            raise ValueError(f"validation size {validation} out of range for {len(self)} records")
        cut = len(self) - validation
        return self._slice(slice(0, cut)), self._slice(slice(cut, None))

    def _slice(self, sl: slice) -> "TrainingSet":
        return TrainingSet(
            kind=self.kind,
            code_digest=self.code_digest,
            n_bits=self.n_bits,
            list_size=self.list_size,
            omega=self.omega,
            shape_p=self.shape_p,
            snr_db=self.snr_db,
            seed=self.seed,
            state_len=self.state_len,
            frame_ids=self.frame_ids[sl],
            states=self.states[sl],
            flip_targets=None if self.flip_targets is None else self.flip_targets[sl],
            actions=None if self.actions is None else self.actions[sl],
        )


def load_dataset(path: str) -> TrainingSet:
    with open(path, "rb") as fh:
        if fh.read(5) != MAGIC:
            raise ValueError(f"{path}: not an NFDS1 dataset")
        version = fh.read(1)
        if not version or version[0] != VERSION:
            raise ValueError(f"{path}: unsupported dataset version")
        hlen = int.from_bytes(fh.read(4), "little")
        header = json.loads(fh.read(hlen).decode())
        payload = np.fromfile(fh, dtype=np.uint8)

    kind = header["kind"]
    state_len = header["state_len"]
    n_bits = header["n_bits"]
    count = header["record_count"]
    width = 8 + 4 * state_len + (4 * n_bits if kind == KIND_FDNC else 1)
    if payload.size != count * width:
        raise ValueError(
            f"{path}: payload holds {payload.size} bytes, expected {count} x {width}"
        )
    rows = payload.reshape(count, width)
    frame_ids = rows[:, :8].copy().view("<u8")[:, 0]
    states = rows[:, 8 : 8 + 4 * state_len].copy().view("<f4").reshape(count, state_len)
    flip_targets = None
    actions = None
    if kind == KIND_FDNC:
        flip_targets = rows[:, 8 + 4 * state_len :].copy().view("<f4").reshape(count, n_bits)
    elif kind == KIND_FVDNC:
        actions = rows[:, 8 + 4 * state_len].copy()
        if actions.size and actions.max() > 1:
            raise ValueError(f"{path}: action byte outside {{0,1}}")
    else:
        raise ValueError(f"{path}: unknown dataset kind {kind!r}")
    return TrainingSet(
        kind=kind,
        code_digest=header["code_digest"],
        n_bits=n_bits,
        list_size=header["list_size"],
        omega=header["omega"],
        shape_p=header["shape_p"],
        snr_db=header["snr_db"],
        seed=header["seed"],
        state_len=state_len,
        frame_ids=frame_ids,
        states=states,
        flip_targets=flip_targets,
        actions=actions,
    )


def verify_action_ratio(data: TrainingSet) -> float:
    """Re-select fraction; full frames carry five re-selects per continue."""
    if data.actions is None:
        raise ValueError("not a flip-validate dataset")
    return float(data.actions.mean())
