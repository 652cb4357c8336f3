"""Training side of the polarflip toolchain.

Consumes `NFDS1` databases, trains LSTM or external-memory (DNC) scorer
models, exports `NFSW1` weight bundles for the decoder's native
inference, and serves models over the adapter wire protocol.
"""

from .dataset import TrainingSet, load_dataset, verify_action_ratio
from .models import DncScorer, LstmScorer, TrainConfig, build_model, state_to_steps
from .training import (
    evaluate_flip,
    evaluate_validate,
    train_flip_model,
    train_validate_model,
)

__version__ = "0.1.0"
