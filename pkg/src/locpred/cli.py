"""Command-line entry point.

Subcommands: gen-data, train, eval, predict, grad-check, inspect.  Settings
come from built-in defaults, then an optional JSON config file, then flags
(flags win).  Every run echoes its fully resolved configuration.

Exit codes: 0 success, 1 usage or validation error, 2 numerical failure
(training divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import (
    BouncingBallConfig,
    MirrorLineSpec,
    MovingMnistConfig,
    OcclusionGridSpec,
    gen_occluded_bouncing_ball,
    gen_occluded_moving_mnist,
    load_mnist_idx,
    read_sequences,
    resize_nearest,
    write_pgm,
    write_sequences,
)
from .gradcheck import DEFAULT_TOLERANCE, check_model
from .models import (
    ConvPgpConfig,
    RolloutSchedule,
    VlnConfig,
    build_model,
    default_schedule,
    param_count,
)
from .rng import generator
from .tensor import Tensor, conv2d, relu
from .training import (
    TrainConfig,
    TrainingDivergedError,
    batch_arrays,
    evaluate,
    train,
    write_metrics_csv,
)

MNIST_IMAGES_FILE = "train-images-idx3-ubyte"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _echo(command: str, resolved: dict) -> None:
    print(f"[{command}] config {json.dumps(resolved, sort_keys=True)}")


def _load_json(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        loaded = json.load(f)
    if not isinstance(loaded, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return loaded


def _merge(defaults: dict, file_cfg: dict, args, names: list[str]) -> dict:
    resolved = dict(defaults)
    for key, value in file_cfg.items():
        if key not in resolved and key != "model":
            raise ValueError(f"unknown config key {key!r} (expected one of {sorted(resolved)})")
        resolved[key] = value
    for name in names:
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            resolved[name.replace("-", "_")] = value
    return resolved


def dump_image(path, values: np.ndarray, lo: float | None = None, hi: float | None = None) -> None:
    """Write a float map as PGM, normalized to 0..255, with a scale sidecar.

    Without explicit bounds each map is normalized independently; a constant
    map lands mid-gray.  The sidecar records the bounds so the dump stays
    reversible.
    """
    values = np.asarray(values, dtype=np.float64)
    lo = float(values.min()) if lo is None else float(lo)
    hi = float(values.max()) if hi is None else float(hi)
    if hi > lo:
        scaled = (values - lo) / (hi - lo) * 255.0
    else:
        scaled = np.full_like(values, 128.0)
    write_pgm(path, np.round(scaled).clip(0, 255).astype(np.uint8))
    Path(f"{path}.scale.txt").write_text(f"min={lo!r}\nmax={hi!r}\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# gen-data


_GEN_DEFAULTS = {
    "dataset": None, "count": 100, "seed": 0, "frames": 10,
    "height": None, "width": None, "spacing": None, "bar_width": 1, "phase": None,
    "inset": None, "speed_min": 1.0, "speed_max": 3.0,
    "digit_size": 28, "ball_radius": 4.0, "ball_count": 1,
}

_GEN_GEOMETRY = {
    # per-dataset defaults: frame size, bar spacing, first-bar offset, mirror inset
    "moving-mnist": {"height": 64, "width": 64, "spacing": 8, "phase": 4, "inset": 10},
    "bouncing-ball": {"height": 32, "width": 32, "spacing": 3, "phase": 1, "inset": 2},
}


def _cmd_gen_data(args) -> int:
    file_cfg = _load_json(args.config)
    cfg = _merge(_GEN_DEFAULTS, file_cfg, args,
                 ["dataset", "count", "seed", "frames", "height", "width", "spacing",
                  "bar_width", "phase", "inset", "speed_min", "speed_max",
                  "digit_size", "ball_radius", "ball_count"])
    dataset = cfg["dataset"]
    if dataset not in _GEN_GEOMETRY:
        raise ValueError(f"--dataset must be moving-mnist or bouncing-ball, got {dataset!r}")
    for key, value in _GEN_GEOMETRY[dataset].items():
        if cfg[key] is None:
            cfg[key] = value
    _echo("gen-data", {**cfg, "out": str(args.out)})

    grid = OcclusionGridSpec(cfg["spacing"], cfg["bar_width"], cfg["phase"])
    mirrors = MirrorLineSpec(cfg["inset"])
    speed = (cfg["speed_min"], cfg["speed_max"])
    if dataset == "moving-mnist":
        if args.mnist_dir is None:
            raise ValueError("--mnist-dir is required for moving-mnist")
        digits = load_mnist_idx(Path(args.mnist_dir) / MNIST_IMAGES_FILE)
        if cfg["digit_size"] != digits.shape[1]:
            digits = resize_nearest(digits, cfg["digit_size"])
        config = MovingMnistConfig(count=cfg["count"], frames=cfg["frames"],
                                   height=cfg["height"], width=cfg["width"],
                                   grid=grid, mirrors=mirrors, speed_range=speed)
        samples = gen_occluded_moving_mnist(cfg["seed"], config, digits)
    else:
        config = BouncingBallConfig(count=cfg["count"], frames=cfg["frames"],
                                    height=cfg["height"], width=cfg["width"],
                                    ball_radius=cfg["ball_radius"], ball_count=cfg["ball_count"],
                                    grid=grid, mirrors=mirrors, speed_range=speed)
        samples = gen_occluded_bouncing_ball(cfg["seed"], config)
    write_sequences(args.out, samples, dataset)
    digest = hashlib.sha256(Path(args.out).read_bytes()).hexdigest()
    print(f"wrote {len(samples)} sequences to {args.out}")
    print(f"sha256 {digest}")
    return 0


# ---------------------------------------------------------------------------
# train


_TRAIN_DEFAULTS = {
    "epochs": 10, "batch_size": 16, "learning_rate": 1e-3, "beta1": 0.9,
    "beta2": 0.999, "eps": 1e-8, "seed": 0,
    "given_frames": None, "closed_loop_frames": None, "model_seed": 0,
}


def _build_model_for_data(kind: str, variant: str, height: int, width: int,
                          overrides: dict, seed: int):
    if kind == "vln":
        config = VlnConfig(height=height, width=width, variant=variant, **overrides)
    elif kind == "conv-pgp":
        config = ConvPgpConfig(height=height, width=width, variant=variant, **overrides)
    else:
        raise ValueError(f"--model must be vln or conv-pgp, got {kind!r}")
    return build_model(kind, config.to_dict(), seed=seed)


def _resolve_schedule(cfg: dict, kind: str) -> RolloutSchedule:
    base = default_schedule(kind)
    given = cfg["given_frames"] if cfg["given_frames"] is not None else base.given_frames
    closed = (cfg["closed_loop_frames"] if cfg["closed_loop_frames"] is not None
              else base.closed_loop_frames)
    return RolloutSchedule(given, closed)


def _cmd_train(args) -> int:
    file_cfg = _load_json(args.config)
    cfg = _merge(_TRAIN_DEFAULTS, file_cfg, args,
                 ["epochs", "batch_size", "learning_rate", "seed",
                  "given_frames", "closed_loop_frames", "model_seed"])
    model_overrides = dict(file_cfg.get("model", {}))
    train_samples, kind_in_data = read_sequences(args.data)
    test_samples = None
    if args.test_data is not None:
        test_samples, _ = read_sequences(args.test_data)
    t, h, w = train_samples[0].clean_frames.shape
    schedule = _resolve_schedule(cfg, args.model)
    model = _build_model_for_data(args.model, args.variant, h, w,
                                  model_overrides, cfg["model_seed"])
    resolved = {**cfg, "model": args.model, "variant": args.variant,
                "model_config": model.config.to_dict(), "data": str(args.data),
                "data_kind": kind_in_data, "test_data": str(args.test_data),
                "given_frames": schedule.given_frames,
                "closed_loop_frames": schedule.closed_loop_frames, "out": str(args.out)}
    _echo("train", resolved)

    train_config = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                               learning_rate=cfg["learning_rate"], beta1=cfg["beta1"],
                               beta2=cfg["beta2"], eps=cfg["eps"], seed=cfg["seed"],
                               schedule=schedule)
    history = train(model, train_samples, test_samples, train_config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.ldvp")
    write_metrics_csv(out / "metrics.csv", history)
    last = history[-1]
    print(f"epoch {last.epoch}: train_bce {last.train_bce:.4f} test_bce {last.test_bce:.4f}")
    print(f"checkpoint {out / 'checkpoint.ldvp'}")
    return 0


# ---------------------------------------------------------------------------
# eval / predict


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    samples, _ = read_sequences(args.data)
    schedule = _resolve_schedule({"given_frames": args.given_frames,
                                  "closed_loop_frames": args.closed_loop_frames}, model.kind)
    _echo("eval", {"checkpoint": str(args.checkpoint), "data": str(args.data),
                   "given_frames": schedule.given_frames,
                   "closed_loop_frames": schedule.closed_loop_frames})
    bce = evaluate(model, samples, schedule)
    print(f"test_bce {bce!r}")
    print(f"params {param_count(model)}")
    return 0


def _cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    samples, _ = read_sequences(args.data)
    if not (0 <= args.index < len(samples)):
        raise ValueError(f"--index {args.index} out of range for {len(samples)} sequences")
    schedule = _resolve_schedule({"given_frames": args.given_frames,
                                  "closed_loop_frames": args.closed_loop_frames}, model.kind)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _echo("predict", {"checkpoint": str(args.checkpoint), "data": str(args.data),
                      "index": args.index, "given_frames": schedule.given_frames,
                      "closed_loop_frames": schedule.closed_loop_frames,
                      "out_dir": str(out)})
    sample = samples[args.index]
    inputs, targets, mask = batch_arrays([sample])
    predictions = model.forward_sequence(inputs, schedule, mask=mask)
    predicted = {k: p for k, p in predictions}
    for k, pred in predictions:
        newest = k - 1  # the most recent frame the model saw for this step
        if newest < schedule.given_frames:
            given = inputs[0, newest, 0]
        else:
            given = predicted[newest].data[0, 0]
        dump_image(out / f"step{k:02d}_given.pgm", given, 0.0, 1.0)
        dump_image(out / f"step{k:02d}_predicted.pgm", pred.data[0, 0], 0.0, 1.0)
        if k < targets.shape[1]:
            dump_image(out / f"step{k:02d}_truth.pgm", targets[0, k, 0], 0.0, 1.0)
    print(f"wrote prediction rollout for sequence {args.index} to {out}")
    return 0


# ---------------------------------------------------------------------------
# grad-check / inspect


def _cmd_grad_check(args) -> int:
    _echo("grad-check", {"model": args.model, "variant": args.variant,
                         "tolerance": args.tolerance, "seed": args.seed})
    errors = check_model(args.model, args.variant, seed=args.seed)
    worst = max(errors.values())
    for name, err in sorted(errors.items()):
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{status:4s} {name:24s} max rel err {err:.3e}")
    if worst >= args.tolerance:
        print(f"gradient check FAILED: worst {worst:.3e} >= {args.tolerance}", file=sys.stderr)
        return 2
    print(f"gradient check passed: worst {worst:.3e} < {args.tolerance}")
    return 0


def _cmd_inspect(args) -> int:
    model = load_checkpoint(args.checkpoint)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _echo("inspect", {"checkpoint": str(args.checkpoint), "out_dir": str(out),
                      "data": str(args.data), "index": args.index})

    dumped = []
    for name, p in model.named_parameters():
        if "bias_map" in name:
            fname = name.replace(".", "_") + ".pgm"
            dump_image(out / fname, p.data)
            dumped.append(fname)
    if not dumped:
        print("model variant has no location bias maps")

    c = model.config
    if args.data is not None:
        samples, _ = read_sequences(args.data)
        sample = samples[args.index]
        inputs, _, mask = batch_arrays([sample])
    else:
        rng = generator(0, 9)
        inputs = rng.random((1, 3, 1, c.height, c.width))
        mask = np.zeros((c.height, c.width))

    if model.kind == "vln":
        frame = Tensor(inputs[:, 0])
        e1 = model._encode_first(frame, mask)
        state = model.init_state(1)
        e2 = relu(conv2d(e1, model.enc2_weight, model.enc2_bias,
                         padding="same", stride=c.enc2_stride))
        _, state = model.lstm.step(e2, state)
        for ch in range(e1.data.shape[1]):
            dump_image(out / f"activation_enc1_ch{ch:02d}.pgm", e1.data[0, ch])
        for ch in range(state.hidden.data.shape[1]):
            dump_image(out / f"activation_lstm_ch{ch:02d}.pgm", state.hidden.data[0, ch])
    else:
        a = model._prepare(Tensor(inputs[:, 0]), mask)
        b = model._prepare(Tensor(inputs[:, 1]), mask)
        mapping = model.gae.infer_mapping(a, b)
        u = model.gae._factor(a, "u")
        for ch in range(u.data.shape[1]):
            dump_image(out / f"activation_factor_u_ch{ch:02d}.pgm", u.data[0, ch])
        for ch in range(mapping.data.shape[1]):
            dump_image(out / f"activation_mapping_ch{ch:02d}.pgm", mapping.data[0, ch])
    print(f"wrote {len(list(out.glob('*.pgm')))} images to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> _Parser:
    parser = _Parser(prog="locpred", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate an occluded video dataset")
    p.add_argument("--dataset", choices=["moving-mnist", "bouncing-ball"])
    p.add_argument("--config", type=Path, help="JSON config file; flags override it")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mnist-dir", type=Path, help=f"directory holding {MNIST_IMAGES_FILE}")
    for flag in ("frames", "height", "width", "spacing", "bar-width", "phase", "inset",
                 "digit-size", "ball-count"):
        p.add_argument(f"--{flag}", type=int)
    for flag in ("speed-min", "speed-max", "ball-radius"):
        p.add_argument(f"--{flag}", type=float)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset container")
    p.add_argument("--model", choices=["vln", "conv-pgp"], required=True)
    p.add_argument("--variant", choices=["base", "ai", "ldc", "ldcai"], default="base")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--test-data", type=Path)
    p.add_argument("--config", type=Path, help="JSON config file; flags override it")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--model-seed", type=int)
    p.add_argument("--given-frames", type=int)
    p.add_argument("--closed-loop-frames", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--given-frames", type=int)
    p.add_argument("--closed-loop-frames", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="dump a prediction rollout as PGM frames")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--given-frames", type=int)
    p.add_argument("--closed-loop-frames", type=int)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--model", choices=["vln", "conv-pgp"], required=True)
    p.add_argument("--variant", choices=["base", "ai", "ldc", "ldcai"], default="base")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("inspect", help="dump learned bias maps and activations")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--data", type=Path, help="optional dataset for a real input frame")
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
