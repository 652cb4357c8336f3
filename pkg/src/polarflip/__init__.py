"""CRC-aided polar coding with two-phase flip decoding.

Construction and encoding live in `polar`, the SC/SCL trellis in
`decoder`, flip orchestration in `flip`, scorer implementations in
`scorers`, and the Monte-Carlo drivers in `harness`.
"""

from .channel import ChannelConfig, frame_rng, transmit
from .crc import CrcCoder, crc_attach, crc_check
from .decoder import (
    DecodePath,
    DecoderState,
    first_divergence,
    llr_combine_f,
    llr_combine_g,
    pm_increment,
    sc_decode,
    scl_decode,
    scl_decode_batch,
)
from .flip import (
    AttemptLog,
    FlipPlan,
    FvDecision,
    ScorerError,
    apply_alpha_threshold,
    decode_two_phase,
    encode_state,
    lsd_flip_vector,
)
from .harness import (
    DecoderConfig,
    ExperimentResult,
    generate_f_dnc_dataset,
    generate_fv_dnc_dataset,
    run_fer_sweep,
    run_identification_accuracy,
)
from .polar import PolarCode, construct_code, polar_encode, polar_transform
from .scorers import (
    ConstantValidator,
    ExternalScorer,
    GenieContext,
    GenieScorer,
    HeuristicScorer,
    ModelBundle,
    NeuralFlipScorer,
    NeuralFlipValidator,
    load_model_bundle,
    save_model_bundle,
)

__version__ = "0.1.0"
