"""`NFSW1` weight-bundle export for LSTM models.

The decoder's native inference defines the layout: magic, version byte,
u32 metadata length, JSON metadata, then raw little-endian float32
tensors in declared order.  Gate order is input/forget/cell/output and
the two LSTM bias vectors are folded into one.  DNC models have no
native-export path; serve them over the adapter protocol instead.
"""

from __future__ import annotations

import json

import numpy as np
import torch

from .models import HEAD_FLIP, LstmScorer

MAGIC = b"NFSW1"
VERSION = 1
INPUT_LAYOUT = "per_bit:path_gradients+received_llr"


def export_bundle(
    path: str,
    model: LstmScorer,
    block_len: int,
    list_size: int,
    omega: int,
    shape_p: float | None,
    code_digest: str,
) -> None:
    if not isinstance(model, LstmScorer):
        raise ValueError("only LSTM models export to the native bundle format; serve DNC models instead")
    sd = {k: v.detach().cpu().numpy().astype("<f4") for k, v in model.state_dict().items()}
    tensors = {
        "lstm.w_ih": sd["lstm.weight_ih_l0"],
        "lstm.w_hh": sd["lstm.weight_hh_l0"],
        "lstm.bias": sd["lstm.bias_ih_l0"] + sd["lstm.bias_hh_l0"],
        "head.weight": sd["head.weight"],
        "head.bias": sd["head.bias"],
    }
    hidden = model.lstm.hidden_size
    meta = {
        "architecture": "lstm_v1",
        "head": model.head_kind,
        "input_size": model.lstm.input_size,
        "hidden_size": hidden,
        "output_size": 1 if model.head_kind == HEAD_FLIP else 2,
        "block_len": block_len,
        "list_size": list_size,
        "omega": omega,
        "shape_p": shape_p,
        "code_digest": code_digest,
        "input_layout": INPUT_LAYOUT,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        for tensor in tensors.values():
            fh.write(np.ascontiguousarray(tensor).tobytes())


def load_bundle_into_model(path: str) -> tuple[LstmScorer, dict]:
    """Rebuild an `LstmScorer` from a bundle (for serving or fine-tuning)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] != MAGIC or raw[5] != VERSION:
        raise ValueError(f"{path}: not a supported weight bundle")
    meta_len = int.from_bytes(raw[6:10], "little")
    meta = json.loads(raw[10 : 10 + meta_len].decode())
    offset = 10 + meta_len
    tensors = {}
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        tensors[entry["name"]] = (
            np.frombuffer(raw[offset : offset + 4 * count], dtype="<f4").reshape(shape).copy()
        )
        offset += 4 * count
    model = LstmScorer(meta["input_size"], meta["hidden_size"], meta["head"])
    state = {
        "lstm.weight_ih_l0": torch.from_numpy(tensors["lstm.w_ih"]),
        "lstm.weight_hh_l0": torch.from_numpy(tensors["lstm.w_hh"]),
        "lstm.bias_ih_l0": torch.from_numpy(tensors["lstm.bias"]),
        "lstm.bias_hh_l0": torch.zeros(tensors["lstm.bias"].shape[0]),
        "head.weight": torch.from_numpy(tensors["head.weight"]),
        "head.bias": torch.from_numpy(tensors["head.bias"]),
    }
    model.load_state_dict(state)
    model.eval()
    return model, meta
