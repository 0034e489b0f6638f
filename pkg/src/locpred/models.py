"""One-layer video prediction models with pluggable location injection.

Two architectures, four variants each:

* ``VlnModel`` - a recurrent encoder/decoder: two encoder convolutions (the
  second strided), a convolutional LSTM carrying state across time, then a
  transposed convolution and an output convolution.  The activation of the
  first encoder layer is added laterally into the decoder at matching
  resolution (the ladder-style shortcut), and the location bias attaches to
  that first encoder layer.

* ``ConvPgpModel`` - a convolutional gated autoencoder that infers the
  transformation between the two most recent frames and applies it to
  extrapolate the next one.  Its valid-padding factor convolutions carry
  the location bias in the biased variants.

Variants: ``base`` (no location information), ``ai`` (coordinate ramps and
occlusion pattern as extra input channels), ``ldc`` (learnable per-location
bias maps inside the first convolution), ``ldcai`` (bias maps plus fixed
ramps inside the layer, occlusion pattern still fed as an input channel).
Bias maps start at zero, so base and ldc are numerically identical at init.

``forward_sequence`` implements the teacher-forcing schedule: frames with
index below ``given_frames`` enter as ground truth, every later frame is
replaced by the model's own prediction, and gradients flow through the
closed-loop chain.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .layers import (
    ConvLstmCell,
    GatedAutoencoder,
    append_occlusion_channel,
    augment_input,
    ldc_forward,
    ldcai_forward,
    location_gradient,
)
from .rng import generator
from .tensor import (
    Tensor,
    add,
    add_channel_bias,
    conv2d,
    conv2d_transpose,
    relu,
    sigmoid,
)


class Variant(str, Enum):
    BASE = "base"
    AI = "ai"
    LDC = "ldc"
    LDCAI = "ldcai"


# input channels fed to the first convolution, per variant
_VARIANT_CHANNELS = {Variant.BASE: 1, Variant.AI: 4, Variant.LDC: 1, Variant.LDCAI: 2}


class RolloutSchedule(NamedTuple):
    """given_frames ground-truth inputs, then closed_loop_frames self-fed."""

    given_frames: int
    closed_loop_frames: int

    @property
    def horizon(self) -> int:
        return self.given_frames + self.closed_loop_frames


def _uniform_conv(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = (1.0 / fan_in) ** 0.5
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _needs_mask(variant: Variant) -> bool:
    return variant in (Variant.AI, Variant.LDCAI)


def _check_frames(frames: np.ndarray, height: int, width: int) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 5 or frames.shape[2] != 1:
        raise ValueError(f"frames must be [N,T,1,H,W], got {frames.shape}")
    if frames.shape[3:] != (height, width):
        raise ValueError(
            f"frames spatial shape {frames.shape[3:]} does not match model ({height}, {width})"
        )
    return frames


def _check_schedule(schedule: RolloutSchedule, total: int, min_given: int, model: str) -> None:
    if schedule.given_frames < min_given or schedule.closed_loop_frames < 0:
        raise ValueError(f"{model}: schedule {schedule} invalid (needs >= {min_given} given frames)")
    if schedule.horizon > total:
        raise ValueError(
            f"{model}: schedule spans {schedule.horizon} frames but sequence has only {total}"
        )


@dataclass
class VlnConfig:
    height: int = 64
    width: int = 64
    enc1_channels: int = 32
    enc1_kernel: int = 3
    enc2_channels: int = 32
    enc2_kernel: int = 3
    enc2_stride: int = 2
    lstm_channels: int = 32
    lstm_kernel: int = 3
    dec_channels: int = 32
    dec_kernel: int = 2
    dec_stride: int = 2
    out_kernel: int = 3
    variant: Variant = Variant.BASE

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.height % self.enc2_stride or self.width % self.enc2_stride:
            raise ValueError(f"frame size {self.height}x{self.width} must divide enc2 stride {self.enc2_stride}")
        if self.dec_stride != self.enc2_stride:
            raise ValueError("decoder stride must undo the encoder stride")
        if self.dec_channels != self.enc1_channels:
            raise ValueError("shortcut addition needs dec_channels == enc1_channels")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


class VlnModel:
    """One-layer VLN; predicts frame t+1 from frame t and recurrent state."""

    kind = "vln"

    def __init__(self, config: VlnConfig, seed: int = 0):
        self.config = config
        self.variant = config.variant
        rng = generator(seed, 0)
        c = config
        in_ch = _VARIANT_CHANNELS[self.variant]

        self.enc1_weight = _uniform_conv(
            rng, (c.enc1_channels, in_ch, c.enc1_kernel, c.enc1_kernel),
            in_ch * c.enc1_kernel ** 2)
        self.enc1_bias = Tensor(np.zeros(c.enc1_channels), requires_grad=True)
        self.bias_map1 = self.bias_map2 = None
        if self.variant in (Variant.LDC, Variant.LDCAI):
            self.bias_map1 = Tensor(np.zeros((c.height, c.width)), requires_grad=True)
            self.bias_map2 = Tensor(np.zeros((c.height, c.width)), requires_grad=True)
        if self.variant is Variant.LDCAI:
            self.loc_x = Tensor(location_gradient(c.height, c.width, "x"))
            self.loc_y = Tensor(location_gradient(c.height, c.width, "y"))

        self.enc2_weight = _uniform_conv(
            rng, (c.enc2_channels, c.enc1_channels, c.enc2_kernel, c.enc2_kernel),
            c.enc1_channels * c.enc2_kernel ** 2)
        self.enc2_bias = Tensor(np.zeros(c.enc2_channels), requires_grad=True)
        self.lstm = ConvLstmCell(c.enc2_channels, c.lstm_channels, c.lstm_kernel, rng)
        self.dec_weight = _uniform_conv(
            rng, (c.lstm_channels, c.dec_channels, c.dec_kernel, c.dec_kernel),
            c.lstm_channels * c.dec_kernel ** 2)
        self.dec_bias = Tensor(np.zeros(c.dec_channels), requires_grad=True)
        self.out_weight = _uniform_conv(
            rng, (1, c.dec_channels, c.out_kernel, c.out_kernel),
            c.dec_channels * c.out_kernel ** 2)
        self.out_bias = Tensor(np.zeros(1), requires_grad=True)

    def _encode_first(self, frame: Tensor, mask) -> Tensor:
        if self.variant is Variant.AI:
            x = augment_input(frame, mask)
            return relu(conv2d(x, self.enc1_weight, self.enc1_bias, padding="same"))
        if self.variant is Variant.LDC:
            return ldc_forward(frame, self.enc1_weight, self.enc1_bias,
                               self.bias_map1, self.bias_map2, "relu")
        if self.variant is Variant.LDCAI:
            x = append_occlusion_channel(frame, mask)
            return ldcai_forward(x, self.enc1_weight, self.enc1_bias,
                                 self.bias_map1, self.bias_map2,
                                 self.loc_x, self.loc_y, "relu")
        return relu(conv2d(frame, self.enc1_weight, self.enc1_bias, padding="same"))

    def step(self, frame: Tensor, mask, state) -> tuple[Tensor, object]:
        """One time step: returns (sigmoid prediction of the next frame, new state)."""
        e1 = self._encode_first(frame, mask)
        e2 = relu(conv2d(e1, self.enc2_weight, self.enc2_bias,
                         padding="same", stride=self.config.enc2_stride))
        h, state = self.lstm.step(e2, state)
        d = conv2d_transpose(h, self.dec_weight, stride=self.config.dec_stride)
        d = add_channel_bias(d, self.dec_bias)
        d = relu(add(d, e1))  # lateral encoder-to-decoder shortcut
        pred = sigmoid(conv2d(d, self.out_weight, self.out_bias, padding="same"))
        return pred, state

    def init_state(self, batch: int):
        c = self.config
        return self.lstm.init_state(batch, c.height // c.enc2_stride, c.width // c.enc2_stride)

    def forward_sequence(self, frames: np.ndarray, schedule: RolloutSchedule,
                         mask=None) -> list[tuple[int, Tensor]]:
        """Roll the model over a batch of sequences.

        Returns one (frame_index, prediction) pair per step: the model emits
        ``horizon`` predictions of frames 1..horizon, using ground-truth
        inputs for frame indices below ``given_frames`` and its own previous
        output afterwards.  The final prediction may point one frame past
        the clip (no target exists for it).
        """
        c = self.config
        frames = _check_frames(frames, c.height, c.width)
        _check_schedule(schedule, frames.shape[1], 1, "vln")
        if _needs_mask(self.variant) and mask is None:
            raise ValueError(f"variant {self.variant.value} requires an occlusion mask")
        n = frames.shape[0]
        state = self.init_state(n)
        predictions: list[tuple[int, Tensor]] = []
        for k in range(1, schedule.horizon + 1):
            j = k - 1  # index of the input frame
            x = Tensor(frames[:, j]) if j < schedule.given_frames else predictions[j - 1][1]
            pred, state = self.step(x, mask, state)
            predictions.append((k, pred))
        return predictions

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        params = [("enc1.weight", self.enc1_weight), ("enc1.bias", self.enc1_bias)]
        if self.bias_map1 is not None:
            params += [("enc1.bias_map1", self.bias_map1), ("enc1.bias_map2", self.bias_map2)]
        params += [
            ("enc2.weight", self.enc2_weight), ("enc2.bias", self.enc2_bias),
            *self.lstm.named_parameters("lstm"),
            ("dec.weight", self.dec_weight), ("dec.bias", self.dec_bias),
            ("out.weight", self.out_weight), ("out.bias", self.out_bias),
        ]
        return params


@dataclass
class ConvPgpConfig:
    height: int = 64
    width: int = 64
    factor_channels: int = 16
    factor_kernel: int = 3
    mapping_channels: int = 96
    mapping_kernel: int = 5
    variant: Variant = Variant.BASE

    def __post_init__(self):
        self.variant = Variant(self.variant)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


class ConvPgpModel:
    """One-layer Conv-PGP; predicts frame t+2 from the pair (t, t+1)."""

    kind = "conv-pgp"

    def __init__(self, config: ConvPgpConfig, seed: int = 0):
        self.config = config
        self.variant = config.variant
        rng = generator(seed, 0)
        self.gae = GatedAutoencoder(
            _VARIANT_CHANNELS[self.variant],
            config.factor_channels, config.factor_kernel,
            config.mapping_channels, config.mapping_kernel,
            config.height, config.width, self.variant.value, rng,
        )

    def _prepare(self, frame: Tensor, mask) -> Tensor:
        if self.variant is Variant.AI:
            return augment_input(frame, mask)
        if self.variant is Variant.LDCAI:
            return append_occlusion_channel(frame, mask)
        return frame

    def step(self, frame_a: Tensor, frame_b: Tensor, mask) -> tuple[Tensor, Tensor]:
        """Predict the frame following (frame_a, frame_b); returns (mapping, prediction)."""
        return self.gae.step(self._prepare(frame_a, mask), self._prepare(frame_b, mask))

    def forward_sequence(self, frames: np.ndarray, schedule: RolloutSchedule,
                         mask=None) -> list[tuple[int, Tensor]]:
        """Roll the model over a batch of sequences.

        Returns (frame_index, prediction) pairs for frames 2..horizon-1.
        A frame with index below ``given_frames`` enters input pairs as
        ground truth; every later frame is the model's own prediction, so
        frames given_frames..horizon-1 are produced closed-loop.
        """
        c = self.config
        frames = _check_frames(frames, c.height, c.width)
        _check_schedule(schedule, frames.shape[1], 2, "conv-pgp")
        if _needs_mask(self.variant) and mask is None:
            raise ValueError(f"variant {self.variant.value} requires an occlusion mask")
        predicted: dict[int, Tensor] = {}

        def frame_at(j: int) -> Tensor:
            return Tensor(frames[:, j]) if j < schedule.given_frames else predicted[j]

        predictions: list[tuple[int, Tensor]] = []
        for k in range(2, schedule.horizon):
            _, pred = self.step(frame_at(k - 2), frame_at(k - 1), mask)
            predicted[k] = pred
            predictions.append((k, pred))
        return predictions

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return self.gae.named_parameters("gae")


def param_count(model) -> int:
    """Exact number of learnable scalars (fixed encodings excluded)."""
    return sum(p.data.size for _, p in model.named_parameters())


def build_model(kind: str, config_dict: dict, seed: int = 0):
    """Construct a model from its kind tag and configuration mapping."""
    if kind == VlnModel.kind:
        return VlnModel(VlnConfig(**config_dict), seed)
    if kind == ConvPgpModel.kind:
        return ConvPgpModel(ConvPgpConfig(**config_dict), seed)
    raise ValueError(f"unknown model kind {kind!r}")


def default_schedule(kind: str) -> RolloutSchedule:
    """The published prediction schedules: (8,2) for VLN, (3,7) for Conv-PGP."""
    if kind == VlnModel.kind:
        return RolloutSchedule(8, 2)
    if kind == ConvPgpModel.kind:
        return RolloutSchedule(3, 7)
    raise ValueError(f"unknown model kind {kind!r}")
