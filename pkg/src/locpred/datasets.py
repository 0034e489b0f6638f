"""Occluded synthetic video datasets and their file formats.

Two generators, both fully deterministic given (seed, sequence index) via
Philox keys:

* Occluded Moving MNIST: one digit bounces inside a 64x64 patch.  Invisible
  mirror lines sit 10 px from each border; a grid of 1 px occlusion bars
  every 8 px hides parts of the scene.
* Occluded Bouncing Ball: antialiased discs in a 32x32 patch, occlusion
  bars every 3 px, mirror lines 2 px from the border.

Occluded pixels are zeroed in the frames handed to a model; the clean
frames are kept as prediction targets and the mask is exported separately
so the input-augmentation variants can consume it as a channel.

Sequence container format (all integers little-endian):

    offset  size       content
    0       8          magic b"OMMV0001"
    8       4          u32 sequence count
    12      2          u16 frames per sequence (T)
    14      2          u16 height (H)
    16      2          u16 width (W)
    18      1          u8 dataset kind (0 moving-mnist, 1 bouncing-ball)
    19      ...        per sequence: T*H*W bytes clean frames (u8),
                       T*H*W bytes occluded frames (u8), H*W bytes mask (u8)

MNIST ingestion reads the standard big-endian IDX format:

    0000  u32  magic 0x00000803 (images) / 0x00000801 (labels)
    0004  u32  item count
    0008  u32  rows    (images only)
    0012  u32  columns (images only)
    ....  u8   pixel / label data
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import generator

MNIST_IMAGE_MAGIC = 0x00000803
MNIST_LABEL_MAGIC = 0x00000801

CONTAINER_MAGIC = b"OMMV0001"
DATASET_KINDS = {"moving-mnist": 0, "bouncing-ball": 1}
_KIND_NAMES = {v: k for k, v in DATASET_KINDS.items()}


# ---------------------------------------------------------------------------
# MNIST IDX ingestion


def _read_exact(f, count: int, path, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise ValueError(f"{path}: truncated IDX file while reading {what}")
    return data


def load_mnist_idx(path) -> np.ndarray:
    """Parse an IDX image file into a [count, rows, cols] u8 array."""
    with open(path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, path, "header"))
        if magic != MNIST_IMAGE_MAGIC:
            raise ValueError(
                f"{path}: magic 0x{magic:08x} is not the IDX image magic 0x{MNIST_IMAGE_MAGIC:08x}"
            )
        pixels = _read_exact(f, count * rows * cols, path, "pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows, cols)


def load_mnist_labels(path) -> np.ndarray:
    """Parse an IDX label file into a [count] u8 array."""
    with open(path, "rb") as f:
        magic, count = struct.unpack(">II", _read_exact(f, 8, path, "header"))
        if magic != MNIST_LABEL_MAGIC:
            raise ValueError(
                f"{path}: magic 0x{magic:08x} is not the IDX label magic 0x{MNIST_LABEL_MAGIC:08x}"
            )
        data = _read_exact(f, count, path, "label data")
    return np.frombuffer(data, dtype=np.uint8)


# ---------------------------------------------------------------------------
# geometry


@dataclass
class OcclusionGridSpec:
    """Vertical and horizontal bars: bar_width columns/rows starting at
    phase, repeating every spacing pixels."""

    spacing: int
    bar_width: int = 1
    phase: int = 0

    def __post_init__(self):
        if not (self.spacing > self.bar_width >= 1):
            raise ValueError(f"need spacing > bar_width >= 1, got {self}")
        if self.phase < 0:
            raise ValueError(f"phase must be >= 0, got {self.phase}")


@dataclass
class MirrorLineSpec:
    """Invisible reflection lines, inset pixels from every border."""

    inset: int

    def validate(self, height: int, width: int) -> None:
        if not (0 <= self.inset < min(height, width) / 2):
            raise ValueError(f"inset {self.inset} out of range for {height}x{width} frame")


@dataclass
class MotionState:
    position: tuple[float, float]  # top-left corner of the bounding box (x, y)
    velocity: tuple[float, float]  # pixels per frame (vx, vy)


@dataclass
class SequenceSample:
    clean_frames: np.ndarray      # [T,H,W] u8
    occluded_frames: np.ndarray   # [T,H,W] u8, masked pixels forced to 0
    occlusion_mask: np.ndarray    # [H,W] u8 in {0,1}
    seed: int | None = None
    initial_state: list[MotionState] | None = None


def occlusion_mask(height: int, width: int, grid: OcclusionGridSpec) -> np.ndarray:
    mask = np.zeros((height, width), dtype=np.uint8)
    for offset in range(grid.bar_width):
        mask[grid.phase + offset :: grid.spacing, :] = 1
        mask[:, grid.phase + offset :: grid.spacing] = 1
    return mask


def step_motion(state: MotionState, mirrors: MirrorLineSpec, bounds: tuple[int, int],
                extent: tuple[int, int]) -> MotionState:
    """Advance one frame, reflecting the bounding box off the mirror lines.

    Overshoot past a line is folded back, and the velocity component along
    that axis flips sign; speed magnitude is conserved.
    """
    height, width = bounds
    eh, ew = extent
    x, y = state.position
    vx, vy = state.velocity
    x += vx
    y += vy
    lo_x, hi_x = float(mirrors.inset), float(width - mirrors.inset - ew)
    lo_y, hi_y = float(mirrors.inset), float(height - mirrors.inset - eh)
    if x < lo_x:
        x, vx = 2 * lo_x - x, -vx
    elif x > hi_x:
        x, vx = 2 * hi_x - x, -vx
    if y < lo_y:
        y, vy = 2 * lo_y - y, -vy
    elif y > hi_y:
        y, vy = 2 * hi_y - y, -vy
    return MotionState((x, y), (vx, vy))


def _initial_state(rng: np.random.Generator, mirrors: MirrorLineSpec,
                   bounds: tuple[int, int], extent: tuple[int, int],
                   speed_range: tuple[float, float]) -> MotionState:
    height, width = bounds
    eh, ew = extent
    x = rng.uniform(mirrors.inset, width - mirrors.inset - ew)
    y = rng.uniform(mirrors.inset, height - mirrors.inset - eh)
    speed = rng.uniform(*speed_range)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    return MotionState((x, y), (speed * math.cos(angle), speed * math.sin(angle)))


# ---------------------------------------------------------------------------
# Occluded Moving MNIST


@dataclass
class MovingMnistConfig:
    count: int
    frames: int = 10
    height: int = 64
    width: int = 64
    grid: OcclusionGridSpec = field(default_factory=lambda: OcclusionGridSpec(8, 1, 4))
    mirrors: MirrorLineSpec = field(default_factory=lambda: MirrorLineSpec(10))
    speed_range: tuple[float, float] = (1.0, 3.0)


def gen_occluded_moving_mnist(seed: int, config: MovingMnistConfig,
                              mnist_images: np.ndarray) -> list[SequenceSample]:
    """One digit per sequence, nearest-pixel placement, no scaling."""
    if mnist_images.ndim != 3 or len(mnist_images) == 0:
        raise ValueError(f"need a non-empty [count, h, w] digit array, got {mnist_images.shape}")
    config.mirrors.validate(config.height, config.width)
    dh, dw = mnist_images.shape[1:]
    playable_w = config.width - 2 * config.mirrors.inset - dw
    playable_h = config.height - 2 * config.mirrors.inset - dh
    if playable_w <= 0 or playable_h <= 0:
        raise ValueError(
            f"{dh}x{dw} digit cannot move inside {config.height}x{config.width} "
            f"frame with inset {config.mirrors.inset}"
        )
    mask = occlusion_mask(config.height, config.width, config.grid)
    samples = []
    for index in range(config.count):
        rng = generator(seed, index)
        digit = mnist_images[rng.integers(len(mnist_images))]
        state = _initial_state(rng, config.mirrors, (config.height, config.width),
                               (dh, dw), config.speed_range)
        initial = MotionState(state.position, state.velocity)
        clean = np.zeros((config.frames, config.height, config.width), dtype=np.uint8)
        for t in range(config.frames):
            px = int(round(state.position[0]))
            py = int(round(state.position[1]))
            clean[t, py : py + dh, px : px + dw] = digit
            state = step_motion(state, config.mirrors, (config.height, config.width), (dh, dw))
        occluded = np.where(mask[None, :, :] == 1, 0, clean).astype(np.uint8)
        samples.append(SequenceSample(clean, occluded, mask.copy(), seed, [initial]))
    return samples


# ---------------------------------------------------------------------------
# Occluded Bouncing Ball


@dataclass
class BouncingBallConfig:
    count: int
    frames: int = 10
    height: int = 32
    width: int = 32
    ball_radius: float = 4.0
    ball_count: int = 1
    grid: OcclusionGridSpec = field(default_factory=lambda: OcclusionGridSpec(3, 1, 1))
    mirrors: MirrorLineSpec = field(default_factory=lambda: MirrorLineSpec(2))
    speed_range: tuple[float, float] = (1.0, 3.0)


def _render_ball(frame: np.ndarray, cx: float, cy: float, radius: float) -> None:
    # antialiased disc: per-pixel coverage approximated by a linear edge ramp
    h, w = frame.shape
    ys = np.arange(h)[:, None] + 0.5
    xs = np.arange(w)[None, :] + 0.5
    dist = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
    coverage = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    np.maximum(frame, np.round(coverage * 255.0).astype(np.uint8), out=frame)


def gen_occluded_bouncing_ball(seed: int, config: BouncingBallConfig) -> list[SequenceSample]:
    """Balls pass through each other; each reflects off the mirror lines."""
    config.mirrors.validate(config.height, config.width)
    diameter = 2.0 * config.ball_radius
    if config.width - 2 * config.mirrors.inset - diameter <= 0:
        raise ValueError(
            f"radius {config.ball_radius} ball cannot move inside "
            f"{config.height}x{config.width} frame with inset {config.mirrors.inset}"
        )
    mask = occlusion_mask(config.height, config.width, config.grid)
    extent = (diameter, diameter)
    samples = []
    for index in range(config.count):
        rng = generator(seed, index)
        states = [
            _initial_state(rng, config.mirrors, (config.height, config.width),
                           extent, config.speed_range)
            for _ in range(config.ball_count)
        ]
        initial = [MotionState(s.position, s.velocity) for s in states]
        clean = np.zeros((config.frames, config.height, config.width), dtype=np.uint8)
        for t in range(config.frames):
            for i, s in enumerate(states):
                cx = s.position[0] + config.ball_radius
                cy = s.position[1] + config.ball_radius
                _render_ball(clean[t], cx, cy, config.ball_radius)
                states[i] = step_motion(s, config.mirrors,
                                        (config.height, config.width), extent)
        occluded = np.where(mask[None, :, :] == 1, 0, clean).astype(np.uint8)
        samples.append(SequenceSample(clean, occluded, mask.copy(), seed, initial))
    return samples


# ---------------------------------------------------------------------------
# sequence container


def write_sequences(path, samples: list[SequenceSample], kind: str) -> None:
    if kind not in DATASET_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}, expected one of {sorted(DATASET_KINDS)}")
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    t, h, w = samples[0].clean_frames.shape
    with open(path, "wb") as f:
        f.write(CONTAINER_MAGIC)
        f.write(struct.pack("<IHHHB", len(samples), t, h, w, DATASET_KINDS[kind]))
        for i, s in enumerate(samples):
            if s.clean_frames.shape != (t, h, w) or s.occlusion_mask.shape != (h, w):
                raise ValueError(f"sample {i} has inconsistent shape {s.clean_frames.shape}")
            f.write(s.clean_frames.astype(np.uint8).tobytes())
            f.write(s.occluded_frames.astype(np.uint8).tobytes())
            f.write(s.occlusion_mask.astype(np.uint8).tobytes())


def read_sequences(path) -> tuple[list[SequenceSample], str]:
    with open(path, "rb") as f:
        blob = f.read()
    header = len(CONTAINER_MAGIC) + struct.calcsize("<IHHHB")
    if len(blob) < header:
        raise ValueError(f"{path}: truncated before container header")
    if blob[: len(CONTAINER_MAGIC)] != CONTAINER_MAGIC:
        raise ValueError(
            f"{path}: bad magic {blob[:len(CONTAINER_MAGIC)]!r}, expected {CONTAINER_MAGIC!r}"
        )
    count, t, h, w, kind_code = struct.unpack_from("<IHHHB", blob, len(CONTAINER_MAGIC))
    if kind_code not in _KIND_NAMES:
        raise ValueError(f"{path}: unknown dataset kind code {kind_code}")
    per_seq = 2 * t * h * w + h * w
    expected = header + count * per_seq
    if len(blob) != expected:
        raise ValueError(f"{path}: file is {len(blob)} bytes, format requires {expected}")
    samples = []
    offset = header
    for _ in range(count):
        clean = np.frombuffer(blob, np.uint8, t * h * w, offset).reshape(t, h, w)
        offset += t * h * w
        occluded = np.frombuffer(blob, np.uint8, t * h * w, offset).reshape(t, h, w)
        offset += t * h * w
        mask = np.frombuffer(blob, np.uint8, h * w, offset).reshape(h, w)
        offset += h * w
        samples.append(SequenceSample(clean.copy(), occluded.copy(), mask.copy()))
    return samples, _KIND_NAMES[kind_code]


def container_size(count: int, frames: int, height: int, width: int) -> int:
    """Exact byte size of a container file with the given geometry."""
    header = len(CONTAINER_MAGIC) + struct.calcsize("<IHHHB")
    return header + count * (2 * frames * height * width + height * width)


def resize_nearest(images: np.ndarray, size: int) -> np.ndarray:
    """Nearest-pixel resize of a [N,h,w] u8 stack to [N,size,size]."""
    if images.ndim != 3:
        raise ValueError(f"expected [N,h,w], got {images.shape}")
    rows = np.linspace(0, images.shape[1] - 1, size).round().astype(int)
    cols = np.linspace(0, images.shape[2] - 1, size).round().astype(int)
    return images[:, rows][:, :, cols]


# ---------------------------------------------------------------------------
# PGM export


def write_pgm(path, image: np.ndarray) -> None:
    """Write a [H,W] u8 array as a binary (P5) PGM."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(f"PGM export needs a 2-d u8 array, got {image.dtype} {image.shape}")
    with open(path, "wb") as f:
        f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        f.write(image.tobytes())
