"""Polar code construction and encoding.

Codes are built in natural bit order (no bit-reversal permutation); the
generator is the n-fold Kronecker power of [[1,0],[1,1]], which is its own
inverse over GF(2).  Frozen sets come from a Gaussian-approximation
density evolution at a configurable design SNR, or from an external
frozen-set file for cross-tool comparisons.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .crc import DEFAULT_CRC_INIT, DEFAULT_CRC_POLY, CrcCoder

CONSTRUCTION_GA = "gaussian_approximation"
CONSTRUCTION_FILE = "external_file"


@dataclass(frozen=True)
class PolarCode:
    """Code parameters: length, payload size, CRC and frozen set.

    `k_info` counts payload bits excluding the CRC; the free (non-frozen)
    positions number `k_info + crc_len`.  Instances are immutable and safe
    to share across worker processes.
    """

    n_bits: int
    k_info: int
    crc_len: int
    frozen_mask: np.ndarray
    design_snr_db: float = 2.0
    crc_poly: int = DEFAULT_CRC_POLY
    crc_init: int = DEFAULT_CRC_INIT
    _crc: CrcCoder = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        mask = np.asarray(self.frozen_mask, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "frozen_mask", mask)
        if self.n_bits < 1 or self.n_bits & (self.n_bits - 1):
            raise ValueError(f"code length {self.n_bits} is not a power of two")
        if mask.shape != (self.n_bits,):
            raise ValueError("frozen mask length does not match code length")
        if int(np.count_nonzero(~mask)) != self.k_free:
            raise ValueError(
                f"frozen mask has {int(np.count_nonzero(~mask))} free positions, "
                f"expected {self.k_free}"
            )
        object.__setattr__(
            self, "_crc", CrcCoder(self.k_info, self.crc_len, self.crc_poly, self.crc_init)
        )

    @property
    def k_free(self) -> int:
        return self.k_info + self.crc_len

    @property
    def n_stages(self) -> int:
        return self.n_bits.bit_length() - 1

    @property
    def rate(self) -> float:
        return self.k_info / self.n_bits

    @property
    def free_positions(self) -> np.ndarray:
        return np.flatnonzero(~self.frozen_mask)

    @property
    def crc(self) -> CrcCoder:
        return self._crc

    def digest(self) -> str:
        """Stable fingerprint of everything a decoder/trainer must agree on."""
        h = hashlib.sha256()
        h.update(
            f"N={self.n_bits} K={self.k_info} crc={self.crc_len} "
            f"poly={self.crc_poly:#x} init={self.crc_init:#x} frozen=".encode()
        )
        h.update(np.packbits(self.frozen_mask).tobytes())
        return h.hexdigest()[:16]


def _ln_phi(x: np.ndarray) -> np.ndarray:
    """log of the GA mean-to-erasure transfer function, piecewise."""
    x = np.asarray(x, dtype=float)
    small = -0.4527 * np.power(x, 0.859) + 0.0218
    with np.errstate(divide="ignore"):
        large = 0.5 * np.log(np.pi / np.maximum(x, 1e-300)) + np.log1p(-10.0 / (7.0 * np.maximum(x, 11.0))) - x / 4.0
    return np.where(x <= 10.0, small, large)


def _ln_phi_inverse(target: float) -> float:
    """Invert `_ln_phi` by geometric bisection; the function is decreasing."""
    lo, hi = 1e-12, 1e12
    for _ in range(120):
        mid = np.sqrt(lo * hi)
        if _ln_phi(mid) > target:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))


def ga_mean_llrs(n_bits: int, design_snr_db: float, rate: float) -> np.ndarray:
    """Per-channel mean LLRs from Gaussian-approximation density evolution.

    The channel prior is the BPSK/AWGN mean LLR 2/sigma^2 at the design
    Eb/N0; the f-branch is evaluated in the log domain so long codes do not
    underflow.
    """
    if n_bits & (n_bits - 1) or n_bits < 1:
        raise ValueError("n_bits must be a power of two")
    sigma_sq = 1.0 / (2.0 * rate * 10.0 ** (design_snr_db / 10.0))
    means = np.array([2.0 / sigma_sq])
    while len(means) < n_bits:
        upper = np.empty_like(means)
        for j, m in enumerate(means):
            lp = float(_ln_phi(np.array(m)))
            # ln(1 - (1 - phi)^2) = ln(phi) + ln(2 - phi)
            target = lp + np.log(2.0) + np.log1p(-0.5 * np.exp(lp))
            upper[j] = _ln_phi_inverse(target)
        lower = 2.0 * means
        means = np.stack([upper, lower], axis=1).reshape(-1)
    return means


def construct_code(
    n_bits: int,
    k_info: int,
    crc_len: int = 16,
    method: str = CONSTRUCTION_GA,
    design_snr_db: float = 2.0,
    crc_poly: int = DEFAULT_CRC_POLY,
    crc_init: int = DEFAULT_CRC_INIT,
    frozen_file: str | None = None,
) -> PolarCode:
    """Build a `PolarCode`, freezing the least reliable synthetic channels.

    `method` is `gaussian_approximation` (default) or `external_file`, in
    which case `frozen_file` must point at a frozen-set file written by
    `save_frozen_file` (or any tool honoring that format).
    """
    if n_bits < 1 or n_bits & (n_bits - 1):
        raise ValueError(f"code length {n_bits} is not a power of two")
    if k_info < 0 or crc_len < 0 or k_info + crc_len > n_bits:
        raise ValueError(f"k_info={k_info} + crc_len={crc_len} exceeds n_bits={n_bits}")
    if method == CONSTRUCTION_GA:
        rate = k_info / n_bits if k_info else (k_info + crc_len) / n_bits
        reliab = ga_mean_llrs(n_bits, design_snr_db, max(rate, 1.0 / n_bits))
        # Stable argsort: ties freeze the lower index first.
        order = np.argsort(reliab, kind="stable")
        mask = np.zeros(n_bits, dtype=bool)
        mask[order[: n_bits - k_info - crc_len]] = True
    elif method == CONSTRUCTION_FILE:
        if frozen_file is None:
            raise ValueError("external_file construction requires frozen_file")
        file_n, file_k, file_crc, mask = load_frozen_file(frozen_file)
        if (file_n, file_k, file_crc) != (n_bits, k_info, crc_len):
            raise ValueError(
                f"frozen-set file is for ({file_n},{file_k},crc{file_crc}), "
                f"requested ({n_bits},{k_info},crc{crc_len})"
            )
    else:
        raise ValueError(f"unknown construction method {method!r}")
    return PolarCode(n_bits, k_info, crc_len, mask, design_snr_db, crc_poly, crc_init)


def polar_transform(u: np.ndarray) -> np.ndarray:
    """Multiply (..., N) bit vectors by the Kronecker-power generator."""
    u = np.asarray(u)
    x = (u & 1).astype(np.int8)
    n = x.shape[-1]
    if n & (n - 1):
        raise ValueError("vector length must be a power of two")
    lead = x.shape[:-1]
    h = 1
    while h < n:
        view = x.reshape(lead + (n // (2 * h), 2, h))
        view[..., 0, :] ^= view[..., 1, :]
        h *= 2
    return x


def polar_encode(code: PolarCode, u_vector: np.ndarray) -> np.ndarray:
    """Encode a full input vector; frozen positions must carry zeros."""
    u = np.asarray(u_vector, dtype=np.int8)
    if u.shape[-1] != code.n_bits:
        raise ValueError(f"expected {code.n_bits} bits, got {u.shape[-1]}")
    if np.any(u[..., code.frozen_mask] != 0):
        raise ValueError("frozen positions must be zero")
    return polar_transform(u)


def expand_payload(code: PolarCode, payload_bits: np.ndarray) -> np.ndarray:
    """Scatter (..., k_free) payload bits into a full (..., N) input vector."""
    payload_bits = np.asarray(payload_bits, dtype=np.int8)
    if payload_bits.shape[-1] != code.k_free:
        raise ValueError(f"expected {code.k_free} payload bits, got {payload_bits.shape[-1]}")
    u = np.zeros(payload_bits.shape[:-1] + (code.n_bits,), dtype=np.int8)
    u[..., ~code.frozen_mask] = payload_bits
    return u


def encode_message(code: PolarCode, message_bits: np.ndarray) -> np.ndarray:
    """CRC-attach and polar-encode (..., k_info) message bits."""
    payload = code.crc.attach(message_bits)
    return polar_transform(expand_payload(code, payload))


def save_frozen_file(path: str, code: PolarCode) -> None:
    """Write the frozen-set file: `N K crc_len` then N 0/1 flags (1=frozen)."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{code.n_bits} {code.k_info} {code.crc_len}\n")
        fh.write(" ".join("1" if f else "0" for f in code.frozen_mask) + "\n")


def load_frozen_file(path: str) -> tuple[int, int, int, np.ndarray]:
    """Read a frozen-set file; returns (N, K, crc_len, frozen_mask)."""
    try:
        with open(path, encoding="ascii") as fh:
            header = fh.readline().split()
            flags = fh.read().split()
    except OSError as exc:
        raise ValueError(f"cannot read frozen-set file {path}: {exc}") from exc
    if len(header) != 3:
        raise ValueError(f"malformed frozen-set header in {path}")
    n_bits, k_info, crc_len = (int(v) for v in header)
    if len(flags) != n_bits or any(f not in ("0", "1") for f in flags):
        raise ValueError(f"expected {n_bits} 0/1 flags in {path}")
    mask = np.array([f == "1" for f in flags], dtype=bool)
    return n_bits, k_info, crc_len, mask
