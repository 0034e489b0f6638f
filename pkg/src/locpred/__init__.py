"""Location-dependent convolution layers and one-layer video prediction models.

Library layout:

* ``tensor``     - float64 tensors with reverse-mode autodiff
* ``layers``     - coordinate ramps, input augmentation, location-dependent
                   convolutions, ConvLSTM cell, gated autoencoder
* ``models``     - VLN and Conv-PGP with the four location variants
* ``datasets``   - occluded Moving MNIST / Bouncing Ball generators, IDX
                   ingestion, the sequence container format, PGM export
* ``training``   - Adam loop, evaluation, metrics CSV
* ``checkpoint`` - single-file model serialization
* ``gradcheck``  - finite-difference gradient verification
* ``cli``        - the ``locpred`` command
"""

from .models import (
    ConvPgpConfig,
    ConvPgpModel,
    RolloutSchedule,
    Variant,
    VlnConfig,
    VlnModel,
    build_model,
    default_schedule,
    param_count,
)
from .tensor import Tensor

__all__ = [
    "ConvPgpConfig",
    "ConvPgpModel",
    "RolloutSchedule",
    "Tensor",
    "Variant",
    "VlnConfig",
    "VlnModel",
    "build_model",
    "default_schedule",
    "param_count",
]

__version__ = "0.1.0"
