"""CRC attachment and checking over bit vectors.

The default generator is the 16-bit CCITT polynomial 0x1021 with zero
initial register and no bit reflection.  The polynomial, width and init
value travel with every serialized artifact (code digests, dataset and
weight-bundle headers) so encoder, decoder and trainer always agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_CRC_POLY = 0x1021
DEFAULT_CRC_INIT = 0x0000


def crc_remainder(bits: np.ndarray, poly: int, width: int, init: int = 0) -> np.ndarray:
    """Bit-serial CRC register over `bits` (MSB-first, non-reflected).

    Reference implementation; `CrcCoder` provides the vectorized path.
    Returns the `width` remainder bits, most significant first.
    """
    if width == 0:
        return np.zeros(0, dtype=np.int8)
    mask = (1 << width) - 1
    top = 1 << (width - 1)
    reg = init & mask
    for b in np.asarray(bits, dtype=np.int8):
        feedback = ((reg & top) != 0) ^ (b & 1)
        reg = (reg << 1) & mask
        if feedback:
            reg ^= poly
    out = [(reg >> (width - 1 - i)) & 1 for i in range(width)]
    return np.array(out, dtype=np.int8)


@dataclass(frozen=True)
class CrcCoder:
    """CRC generator/checker for a fixed message length.

    The register recursion is affine over GF(2) in the message bits, so the
    remainder is `bits @ M ^ c`.  `M` and `c` are precomputed from the
    bit-serial reference, which keeps the fast path and the reference
    mechanically tied together.
    """

    msg_len: int
    width: int = 16
    poly: int = DEFAULT_CRC_POLY
    init: int = DEFAULT_CRC_INIT
    _matrix: np.ndarray = field(init=False, repr=False, compare=False)
    _offset: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.width < 0:
            raise ValueError("CRC width must be nonnegative")
        if self.width and not (0 < self.poly < (1 << self.width)):
            raise ValueError(f"polynomial 0x{self.poly:x} does not fit width {self.width}")
        zero = crc_remainder(np.zeros(self.msg_len, dtype=np.int8), self.poly, self.width, self.init)
        rows = np.zeros((self.msg_len, self.width), dtype=np.int8)
        for i in range(self.msg_len):
            impulse = np.zeros(self.msg_len, dtype=np.int8)
            impulse[i] = 1
            rows[i] = crc_remainder(impulse, self.poly, self.width, self.init) ^ zero
        object.__setattr__(self, "_matrix", rows)
        object.__setattr__(self, "_offset", zero)

    def remainder(self, msg_bits: np.ndarray) -> np.ndarray:
        """Remainder bits for message(s) of shape (..., msg_len)."""
        msg_bits = np.asarray(msg_bits, dtype=np.int8)
        if msg_bits.shape[-1] != self.msg_len:
            raise ValueError(f"expected {self.msg_len} message bits, got {msg_bits.shape[-1]}")
        if self.width == 0:
            return np.zeros(msg_bits.shape[:-1] + (0,), dtype=np.int8)
        rem = (msg_bits @ self._matrix) & 1
        return (rem ^ self._offset).astype(np.int8)

    def attach(self, msg_bits: np.ndarray) -> np.ndarray:
        """Append remainder bits: (..., msg_len) -> (..., msg_len + width)."""
        msg_bits = np.asarray(msg_bits, dtype=np.int8)
        return np.concatenate([msg_bits, self.remainder(msg_bits)], axis=-1)

    def check(self, payload_bits: np.ndarray) -> np.ndarray:
        """True where the trailing `width` bits match the recomputed remainder.

        Accepts (..., msg_len + width); returns a boolean array of shape (...).
        """
        payload_bits = np.asarray(payload_bits, dtype=np.int8)
        if payload_bits.shape[-1] != self.msg_len + self.width:
            raise ValueError(
                f"expected {self.msg_len + self.width} payload bits, got {payload_bits.shape[-1]}"
            )
        if self.width == 0:
            return np.ones(payload_bits.shape[:-1], dtype=bool)
        rem = self.remainder(payload_bits[..., : self.msg_len])
        return np.logical_not(np.any(rem != payload_bits[..., self.msg_len :], axis=-1))


def crc_attach(msg_bits: np.ndarray, poly: int = DEFAULT_CRC_POLY, width: int = 16,
               init: int = DEFAULT_CRC_INIT) -> np.ndarray:
    """One-shot attach for callers without a cached `CrcCoder`."""
    coder = CrcCoder(msg_len=len(msg_bits), width=width, poly=poly, init=init)
    return coder.attach(msg_bits)


def crc_check(payload_bits: np.ndarray, poly: int = DEFAULT_CRC_POLY, width: int = 16,
              init: int = DEFAULT_CRC_INIT) -> bool:
    """One-shot check of message-plus-remainder bits."""
    coder = CrcCoder(msg_len=len(payload_bits) - width, width=width, poly=poly, init=init)
    return bool(coder.check(payload_bits))
