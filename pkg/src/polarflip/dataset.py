"""Training-database serialization (`NFDS1`).

Layout: magic, version byte, u32 header length, JSON header, then
fixed-width records.  Every record is a u64 frame id followed by the
float32 state encoding; flip-scorer records append the float32 reference
flip vector, validate records a single action byte (0 continue,
1 re-select).  Fixed width keeps the files streamable and memory-mappable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

DATASET_MAGIC = b"NFDS1"
DATASET_VERSION = 1
KIND_FDNC = "f_dnc"
KIND_FVDNC = "fv_dnc"
ACTION_BYTE = {"continue": 0, "re-select": 1}
ACTION_NAME = {v: k for k, v in ACTION_BYTE.items()}


@dataclass(frozen=True)
class TrainingRecord:
    """One supervised sample: state encoding plus its reference output."""

    kind: str
    frame_id: int
    state: np.ndarray
    target_vf: np.ndarray | None = None
    action: str | None = None

    def __post_init__(self) -> None:
        if self.kind == KIND_FDNC and self.target_vf is None:
            raise ValueError("f_dnc records need a reference flip vector")
        if self.kind == KIND_FVDNC and self.action not in ACTION_BYTE:
            raise ValueError("fv_dnc records need a continue/re-select action")


@dataclass(frozen=True)
class DatasetHeader:
    kind: str
    code_digest: str
    n_bits: int
    k_info: int
    crc_len: int
    list_size: int
    omega: int
    shape_p: float
    snr_db: float
    seed: int
    record_count: int
    state_len: int

    def record_width(self) -> int:
        width = 8 + 4 * self.state_len
        if self.kind == KIND_FDNC:
            width += 4 * self.n_bits
        else:
            width += 1
        return width

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


class DatasetWriter:
    """Streaming record writer; the record count is patched in on close."""

    def __init__(self, path: str, header: DatasetHeader):
        self.header = header
        self._count = 0
        self._fh = open(path, "wb")
        self._fh.write(DATASET_MAGIC)
        self._fh.write(bytes([DATASET_VERSION]))
        self._write_header(header)

    def _write_header(self, header: DatasetHeader) -> None:
        # Reserve digits for the close-time count patch (counts < 10^15).
        sentinel = DatasetHeader(**{**header.__dict__, "record_count": 10**14})
        payload = sentinel.to_json().encode()
        self._fh.write(len(payload).to_bytes(4, "little"))
        self._header_pos = self._fh.tell()
        self._header_len = len(payload)
        self._fh.write(payload)

    def append(self, record: TrainingRecord) -> None:
        if record.kind != self.header.kind:
            raise ValueError(f"record kind {record.kind} does not match dataset {self.header.kind}")
        state = np.ascontiguousarray(record.state, dtype="<f4")
        if state.size != self.header.state_len:
            raise ValueError(f"state length {state.size}, header says {self.header.state_len}")
        self._fh.write(int(record.frame_id).to_bytes(8, "little"))
        self._fh.write(state.tobytes())
        if self.header.kind == KIND_FDNC:
            vf = np.ascontiguousarray(record.target_vf, dtype="<f4")
            if vf.size != self.header.n_bits:
                raise ValueError("flip vector length does not match code length")
            self._fh.write(vf.tobytes())
        else:
            self._fh.write(bytes([ACTION_BYTE[record.action]]))
        self._count += 1

    def close(self) -> None:
        if self._fh.closed:
            return
        if self._count >= 10**14:
            raise AssertionError("record count exceeds the header preallocation")
        header = DatasetHeader(**{**self.header.__dict__, "record_count": self._count})
        payload = header.to_json().encode()
        payload += b" " * (self._header_len - len(payload))
        self._fh.seek(self._header_pos)
        self._fh.write(payload)
        self._fh.close()

    def __enter__(self) -> "DatasetWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class DatasetReader:
    """Sequential/bulk reader for `NFDS1` files."""

    def __init__(self, path: str):
        self.path = path
        with open(path, "rb") as fh:
            magic = fh.read(5)
            if magic != DATASET_MAGIC:
                raise ValueError(f"{path}: not a training dataset (bad magic)")
            version = fh.read(1)
            if not version or version[0] != DATASET_VERSION:
                raise ValueError(f"{path}: unsupported dataset version")
            hlen = int.from_bytes(fh.read(4), "little")
            raw = fh.read(hlen)
            if len(raw) != hlen:
                raise ValueError(f"{path}: truncated header")
            self.header = DatasetHeader(**json.loads(raw.decode()))
            self._data_offset = fh.tell()
            fh.seek(0, 2)
            payload = fh.tell() - self._data_offset
        width = self.header.record_width()
        if payload % width:
            raise ValueError(f"{path}: payload is not a whole number of records")
        if payload // width != self.header.record_count:
            raise ValueError(
                f"{path}: header claims {self.header.record_count} records, file has {payload // width}"
            )

    def __len__(self) -> int:
        return self.header.record_count

    def __iter__(self) -> Iterator[TrainingRecord]:
        width = self.header.record_width()
        with open(self.path, "rb") as fh:
            fh.seek(self._data_offset)
            for _ in range(self.header.record_count):
                yield self._parse(fh.read(width))

    def _parse(self, raw: bytes) -> TrainingRecord:
        h = self.header
        frame_id = int.from_bytes(raw[:8], "little")
        off = 8 + 4 * h.state_len
        state = np.frombuffer(raw[8:off], dtype="<f4").copy()
        if h.kind == KIND_FDNC:
            vf = np.frombuffer(raw[off : off + 4 * h.n_bits], dtype="<f4").copy()
            return TrainingRecord(h.kind, frame_id, state, target_vf=vf)
        return TrainingRecord(h.kind, frame_id, state, action=ACTION_NAME[raw[off]])

    def read_arrays(self) -> dict[str, np.ndarray]:
        """Bulk load: states (R, state_len) plus targets, as float32."""
        h = self.header
        width = self.header.record_width()
        raw = np.fromfile(self.path, dtype=np.uint8, offset=self._data_offset)
        raw = raw.reshape(self.header.record_count, width)
        frame_ids = raw[:, :8].copy().view("<u8")[:, 0]
        off = 8 + 4 * h.state_len
        states = raw[:, 8:off].copy().view("<f4").reshape(-1, h.state_len)
        out = {"frame_ids": frame_ids, "states": states}
        if h.kind == KIND_FDNC:
            out["targets"] = raw[:, off:].copy().view("<f4").reshape(-1, h.n_bits)
        else:
            out["actions"] = raw[:, off].copy()
        return out


def export_dataset(records: Iterable[TrainingRecord], path: str, header: DatasetHeader) -> int:
    """Stream records into a dataset file; returns the record count."""
    with DatasetWriter(path, header) as writer:
        for record in records:
            writer.append(record)
        return writer._count
