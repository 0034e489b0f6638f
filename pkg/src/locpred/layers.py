"""Location-aware layers for video prediction.

Convolutions are spatially invariant, so a plain convolutional predictor
cannot learn patterns tied to absolute position (frame borders, a static
occlusion grid).  Three mechanisms break that invariance here:

* extra input channels: fixed 0..1 coordinate ramps plus the occlusion
  pattern, concatenated onto the frame (``augment_input``);
* learnable per-location bias maps, shared across all output channels of a
  convolution (``ldc_forward``);
* both combined: the fixed ramps are added to the learnable maps inside the
  layer, and the occlusion channel is still fed at the input
  (``ldcai_forward`` plus ``append_occlusion_channel``).

The module also provides the two recurrent/bilinear building blocks the
models need: a convolutional LSTM cell and a convolutional gated
autoencoder that infers the transformation between two frames.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .tensor import (
    Tensor,
    activate,
    add,
    add_location_map,
    concat_channels,
    conv2d,
    conv2d_transpose,
    mul,
    sigmoid,
    slice_channels,
    tanh,
)


def location_gradient(height: int, width: int, axis: str) -> np.ndarray:
    """[H,W] ramp running 0 to 1 along the given axis, constant along the other.

    The ramp axis needs at least two samples to hit both endpoints.
    """
    if axis == "x":
        if width < 2:
            raise ValueError(f"x gradient needs width >= 2, got {width}")
        return np.tile(np.linspace(0.0, 1.0, width), (height, 1))
    if axis == "y":
        if height < 2:
            raise ValueError(f"y gradient needs height >= 2, got {height}")
        return np.tile(np.linspace(0.0, 1.0, height)[:, None], (1, width))
    raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")


def _as_mask_array(mask) -> np.ndarray:
    return np.asarray(getattr(mask, "data", mask), dtype=np.float64)


def _constant_channel(plane: np.ndarray, batch: int) -> Tensor:
    return Tensor(np.broadcast_to(plane, (batch, 1) + plane.shape))


def augment_input(frame: Tensor, occlusion_mask) -> Tensor:
    """Concatenate [frame, x-ramp, y-ramp, occlusion] along channels.

    ``frame`` is [N,1,H,W]; the mask is an [H,W] 0/1 array shared by the
    batch.  The frame channel passes through untouched; the added channels
    are constants and never receive gradients.
    """
    if frame.data.ndim != 4 or frame.data.shape[1] != 1:
        raise ValueError(f"augment_input: frame must be [N,1,H,W], got {frame.data.shape}")
    n, _, h, w = frame.data.shape
    mask = _as_mask_array(occlusion_mask)
    if mask.shape != (h, w):
        raise ValueError(
            f"augment_input: occlusion mask shape {mask.shape} does not match frame spatial shape {(h, w)}"
        )
    return concat_channels([
        frame,
        _constant_channel(location_gradient(h, w, "x"), n),
        _constant_channel(location_gradient(h, w, "y"), n),
        _constant_channel(mask, n),
    ])


def append_occlusion_channel(frame: Tensor, occlusion_mask) -> Tensor:
    """[N,1,H,W] frame -> [N,2,H,W] with the occlusion pattern as channel 1.

    Used by the combined variant, where the coordinate ramps live inside the
    layer and only the occlusion pattern still arrives as an input channel.
    """
    if frame.data.ndim != 4 or frame.data.shape[1] != 1:
        raise ValueError(f"append_occlusion_channel: frame must be [N,1,H,W], got {frame.data.shape}")
    n, _, h, w = frame.data.shape
    mask = _as_mask_array(occlusion_mask)
    if mask.shape != (h, w):
        raise ValueError(
            f"append_occlusion_channel: mask shape {mask.shape} does not match frame spatial shape {(h, w)}"
        )
    return concat_channels([frame, _constant_channel(mask, n)])


def ldc_forward(x: Tensor, weight: Tensor, bias: Tensor | None, w1: Tensor, w2: Tensor,
                activation: str = "identity", padding: str = "same") -> Tensor:
    """Location-dependent convolution: A(conv(x) + b + W1' + W2').

    The two learnable maps are shared across all output channels (broadcast
    over batch and channel).  Keeping both maps is redundant in value (only
    their sum matters) but preserves the published layer shape and its
    parameter count.
    """
    y = conv2d(x, weight, bias, padding=padding)
    y = add_location_map(y, w1)
    y = add_location_map(y, w2)
    return activate(y, activation)


def ldcai_forward(x: Tensor, weight: Tensor, bias: Tensor | None, w1: Tensor, w2: Tensor,
                  lx: Tensor, ly: Tensor, activation: str = "identity",
                  padding: str = "same") -> Tensor:
    """Combined variant: A(conv(x) + b + (Lx + W1') + (Ly + W2')).

    ``lx``/``ly`` are fixed coordinate ramps (never updated); starting the
    learnable maps at zero makes the layer, at init, a plain convolution
    plus the two ramps.
    """
    y = conv2d(x, weight, bias, padding=padding)
    y = add_location_map(y, add(lx, w1))
    y = add_location_map(y, add(ly, w2))
    return activate(y, activation)


class ConvLstmState(NamedTuple):
    hidden: Tensor
    cell: Tensor


class ConvLstmCell:
    """Convolutional LSTM cell (no peepholes).

    All four gates come from one same-padding convolution over the channel
    concatenation [x, hidden]; gate order along the output channels is
    input, forget, output, candidate.

        c' = f * c + i * g
        h' = o * tanh(c')
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int,
                 rng: np.random.Generator):
        if kernel_size % 2 == 0:
            raise ValueError(f"ConvLstmCell kernel must be odd, got {kernel_size}")
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.kernel_size = kernel_size
        fan_in = (in_channels + hidden_channels) * kernel_size * kernel_size
        bound = (1.0 / fan_in) ** 0.5
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(4 * hidden_channels, in_channels + hidden_channels,
                                             kernel_size, kernel_size)),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(4 * hidden_channels), requires_grad=True)

    def init_state(self, batch: int, height: int, width: int) -> ConvLstmState:
        shape = (batch, self.hidden_channels, height, width)
        return ConvLstmState(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))

    def step(self, x: Tensor, state: ConvLstmState) -> tuple[Tensor, ConvLstmState]:
        h, c = state
        if x.data.shape[1] != self.in_channels:
            raise ValueError(
                f"ConvLstmCell: input shape {x.data.shape} does not carry {self.in_channels} channels"
            )
        if h.data.shape != (x.data.shape[0], self.hidden_channels) + x.data.shape[2:]:
            raise ValueError(
                f"ConvLstmCell: state shape {h.data.shape} inconsistent with input {x.data.shape}"
            )
        gates = conv2d(concat_channels([x, h]), self.weight, self.bias, padding="same")
        ch = self.hidden_channels
        i = sigmoid(slice_channels(gates, 0, ch))
        f = sigmoid(slice_channels(gates, ch, 2 * ch))
        o = sigmoid(slice_channels(gates, 2 * ch, 3 * ch))
        g = tanh(slice_channels(gates, 3 * ch, 4 * ch))
        c_next = add(mul(f, c), mul(i, g))
        h_next = mul(o, tanh(c_next))
        return h_next, ConvLstmState(h_next, c_next)

    def named_parameters(self, prefix: str = "lstm"):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class GatedAutoencoder:
    """One-layer convolutional gated autoencoder.

    Two valid-padding factor convolutions (no bias) produce responses
    u = U(x_t) and v = V(x_t+1); their Hadamard product feeds a same-padding
    mapping convolution whose sigmoid output m encodes the inferred
    transformation.  Decoding runs the adjoints of the same (tied) weights:

        prediction = sigmoid( V^T( M^T(m) * U(x_t+1) ) )

    Valid padding deliberately withholds border information; the
    location-injection variants restore it:

    * ``ldc`` / ``ldcai``: learnable per-location maps on both factor
      convolutions (plus fixed ramps for ldcai), per the location-dependent
      convolution layer;
    * ``ai`` / ``ldcai``: the caller widens the input frames with extra
      channels; decode then returns that many channels and the prediction
      is channel 0.
    """

    def __init__(self, in_channels: int, factor_channels: int, factor_kernel: int,
                 mapping_channels: int, mapping_kernel: int, height: int, width: int,
                 variant: str, rng: np.random.Generator):
        if mapping_kernel % 2 == 0:
            raise ValueError(f"mapping kernel must be odd, got {mapping_kernel}")
        if height < factor_kernel or width < factor_kernel:
            raise ValueError(
                f"input {height}x{width} too small for valid factor kernel {factor_kernel}"
            )
        self.in_channels = in_channels
        self.factor_channels = factor_channels
        self.factor_kernel = factor_kernel
        self.mapping_channels = mapping_channels
        self.mapping_kernel = mapping_kernel
        self.height, self.width = height, width
        self.variant = variant

        fan = in_channels * factor_kernel * factor_kernel
        bound = (1.0 / fan) ** 0.5
        shape = (factor_channels, in_channels, factor_kernel, factor_kernel)
        self.weight_u = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
        self.weight_v = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
        fan_m = factor_channels * mapping_kernel * mapping_kernel
        bound_m = (1.0 / fan_m) ** 0.5
        self.weight_m = Tensor(
            rng.uniform(-bound_m, bound_m,
                        size=(mapping_channels, factor_channels, mapping_kernel, mapping_kernel)),
            requires_grad=True,
        )
        self.bias_m = Tensor(np.zeros(mapping_channels), requires_grad=True)

        hv, wv = height - factor_kernel + 1, width - factor_kernel + 1
        self.factor_shape = (hv, wv)
        self.bias_maps: dict[str, Tensor] = {}
        if variant in ("ldc", "ldcai"):
            for name in ("u1", "u2", "v1", "v2"):
                self.bias_maps[name] = Tensor(np.zeros((hv, wv)), requires_grad=True)
        if variant == "ldcai":
            self.loc_x = Tensor(location_gradient(hv, wv, "x"))
            self.loc_y = Tensor(location_gradient(hv, wv, "y"))

    def _factor(self, x: Tensor, which: str) -> Tensor:
        weight = self.weight_u if which == "u" else self.weight_v
        if self.variant == "ldc":
            return ldc_forward(x, weight, None, self.bias_maps[which + "1"],
                               self.bias_maps[which + "2"], "identity", padding="valid")
        if self.variant == "ldcai":
            return ldcai_forward(x, weight, None, self.bias_maps[which + "1"],
                                 self.bias_maps[which + "2"], self.loc_x, self.loc_y,
                                 "identity", padding="valid")
        return conv2d(x, weight, None, padding="valid")

    def infer_mapping(self, x_t: Tensor, x_t1: Tensor) -> Tensor:
        if x_t.data.shape != x_t1.data.shape:
            raise ValueError(f"gae: frame shapes differ, {x_t.data.shape} vs {x_t1.data.shape}")
        u = self._factor(x_t, "u")
        v = self._factor(x_t1, "v")
        return sigmoid(conv2d(mul(u, v), self.weight_m, self.bias_m, padding="same"))

    def step(self, x_t: Tensor, x_t1: Tensor) -> tuple[Tensor, Tensor]:
        """Return (mapping units, predicted frame t+2), both graph-connected."""
        m = self.infer_mapping(x_t, x_t1)
        u1 = self._factor(x_t1, "u")
        back = conv2d_transpose(m, self.weight_m, stride=1, padding="same")
        decoded = conv2d_transpose(mul(back, u1), self.weight_v, stride=1, padding="valid")
        pred = sigmoid(decoded)
        if self.in_channels > 1:
            pred = slice_channels(pred, 0, 1)
        return m, pred

    def named_parameters(self, prefix: str = "gae"):
        params = [
            (f"{prefix}.weight_u", self.weight_u),
            (f"{prefix}.weight_v", self.weight_v),
        ]
        for name in ("u1", "u2", "v1", "v2"):
            if name in self.bias_maps:
                params.append((f"{prefix}.bias_map_{name}", self.bias_maps[name]))
        params.append((f"{prefix}.weight_m", self.weight_m))
        params.append((f"{prefix}.bias_m", self.bias_m))
        return params
