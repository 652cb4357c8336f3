"""Shared fixtures: small real datasets generated through the decoder
package (the producer of the on-disk format the trainer consumes)."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from polarflip.channel import ChannelConfig
from polarflip.dataset import KIND_FDNC, KIND_FVDNC, export_dataset
from polarflip.harness import (
    dataset_header,
    generate_f_dnc_dataset,
    generate_fv_dnc_dataset,
)
from polarflip.polar import construct_code

CODE = construct_code(64, 24, 8, crc_poly=0x07)
CHANNEL = ChannelConfig(snr_db=2.0, seed=23)


@pytest.fixture(scope="session")
def code():
    return CODE


@pytest.fixture(scope="session")
def fdnc_path(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("data") / "fdnc.nfds")
    records = generate_f_dnc_dataset(
        CODE, CHANNEL, count=2500, omega=5, shape_p=0.8, max_frames=16384,
        block_frames=1024, threads=2,
    )
    export_dataset(records, path, dataset_header(CODE, KIND_FDNC, CHANNEL, 1, 5, 0.8))
    return path


@pytest.fixture(scope="session")
def fvdnc_path(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("data") / "fvdnc.nfds")
    records = generate_fv_dnc_dataset(
        CODE, CHANNEL, count=6000, max_frames=16384, block_frames=1024, threads=2
    )
    export_dataset(records, path, dataset_header(CODE, KIND_FVDNC, CHANNEL, 1, 5, 0.8))
    return path


@pytest.fixture(scope="session")
def recorded_states(code):
    """One hundred real state encodings from decoder runs at 2 dB."""
    from polarflip.decoder import scl_decode_batch
    from polarflip.flip import encode_state
    from polarflip.polar import encode_message

    rng = np.random.default_rng(99)
    msgs = rng.integers(0, 2, size=(100, code.k_info), dtype=np.int8)
    symbols = 1.0 - 2.0 * encode_message(code, msgs).astype(float)
    sigma_sq = ChannelConfig(2.0).noise_variance(code.rate)
    llrs = 2.0 * (symbols + rng.normal(0, np.sqrt(sigma_sq), symbols.shape)) / sigma_sq
    result = scl_decode_batch(code, llrs, 1)
    return np.stack([encode_state(result.frame_state(b)) for b in range(100)]).astype(np.float32)
