"""BPSK transmission over AWGN with Eb/N0 SNR accounting.

Noise variance follows sigma^2 = 1 / (2 * R * 10^(SNR/10)) with R the
payload rate k_info/N; received LLRs are 2y/sigma^2.  Every frame draws
from an RNG seeded by (seed, frame_id) so runs are bit-reproducible for
any worker partitioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polar import PolarCode, encode_message


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float
    seed: int = 0
    modulation: str = "bpsk"

    def __post_init__(self) -> None:
        if self.modulation != "bpsk":
            raise ValueError(f"unsupported modulation {self.modulation!r}")

    def noise_variance(self, rate: float) -> float:
        return 1.0 / (2.0 * rate * 10.0 ** (self.snr_db / 10.0))


def frame_rng(seed: int, frame_id: int) -> np.random.Generator:
    """Independent, order-insensitive per-frame random stream."""
    return np.random.default_rng(np.random.SeedSequence((seed, frame_id)))


def transmit(
    code: PolarCode,
    message_bits: np.ndarray,
    channel: ChannelConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Encode, BPSK-map (0 -> +1, 1 -> -1), add noise, return LLRs."""
    codeword = encode_message(code, message_bits)
    symbols = 1.0 - 2.0 * codeword.astype(float)
    sigma_sq = channel.noise_variance(code.rate)
    received = symbols + rng.normal(0.0, np.sqrt(sigma_sq), size=symbols.shape)
    return 2.0 * received / sigma_sq


def random_message(code: PolarCode, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=code.k_info, dtype=np.int8)
