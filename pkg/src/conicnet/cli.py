"""Command-line entry point: generate / train / evaluate / verify.

Configuration comes from a JSON file (nested key/value sections: "model",
"train", "data", "generate", plus top-level "seed"/"arch"/"precision"/
"out"); command-line flags override file values, and every run echoes its
effective configuration into the output directory so results are
replayable. Exit codes: 0 success, 1 validation error, 2 property
failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import verify as verify_mod
from .data import LabeledDataset, load_amat, load_dataset, save_dataset, split_dataset
from .network import (
    ModelConfig,
    TrainConfig,
    build_model,
    evaluate,
    load_checkpoint,
    metrics_to_csv,
    save_checkpoint,
    train,
)
from .synthgen import GenParams, generate_dataset, sample_class_specs
from .tensors import FormatError, make_rng, pad_spatial_to_odd

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PROPERTY = 2
EXIT_IO = 3


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON config ({e})")


def _merged_config(args) -> dict:
    config = _load_config(getattr(args, "config", None))
    for key in ("seed", "arch", "precision", "out"):
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    data = config.setdefault("data", {})
    if getattr(args, "train_data", None):
        data["train"] = args.train_data
    if getattr(args, "test_data", None):
        data["test"] = args.test_data
    config.setdefault("seed", 0)
    return config


def _echo_config(config: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True))
    print(f"seed: {config['seed']}")


def _load_split(data_cfg: dict, role: str, seed: int) -> LabeledDataset:
    fmt = data_cfg.get("format", "internal")
    path = data_cfg.get(role)
    if path is None:
        raise ValueError(f"data.{role} is not configured")
    if fmt == "internal":
        return load_dataset(path)
    if fmt == "amat":
        ds = load_amat(path)
        if role == "train":
            train_size = int(data_cfg.get("train_size", len(ds)))
            val_size = int(data_cfg.get("val_size", len(ds) - train_size))
            return split_dataset(ds, (train_size, val_size), seed)[0]
        subsample = int(data_cfg.get("test_subsample", 0))
        if 0 < subsample < len(ds):
            pick = make_rng(seed).choice(len(ds), size=subsample, replace=False)
            return ds.subset(np.sort(pick), name=f"{ds.name}/sub{subsample}")
        return ds
    raise ValueError(f"unknown data format {fmt!r}")


def cmd_generate(args) -> int:
    config = _merged_config(args)
    gen = dict(config.get("generate", {}))
    classes = int(gen.pop("classes", 50))
    gaussians = int(gen.pop("gaussians", 10))
    n_train = int(gen.pop("train_per_class", 25))
    n_test = int(gen.pop("test_per_class", 200))
    if n_train < 1 or n_test < 1:
        raise ValueError("train_per_class and test_per_class must be >= 1")
    params = GenParams.from_dict({**GenParams().to_dict(), **gen})
    seed = int(config["seed"])
    out_dir = Path(config.get("out", "dataset"))
    _echo_config(config, out_dir)

    specs = sample_class_specs(classes, gaussians, make_rng(seed))
    for role, per_class, role_seed in (("train", n_train, seed + 1), ("test", n_test, seed + 2)):
        images, labels, manifest = generate_dataset(specs, params, per_class, role_seed)
        ds = LabeledDataset(images, labels, classes, name=f"synthetic/{role}")
        save_dataset(out_dir / role, ds, manifest)
        print(f"{role}: {len(ds)} images -> {out_dir / role}")
    return EXIT_OK


def _model_config_from(config: dict) -> ModelConfig:
    """Model section plus optional per-architecture overrides ("model_by_arch"),
    used to keep baselines parameter-matched without duplicating the section."""
    model_cfg = dict(config.get("model", {}))
    arch = config.get("arch") or model_cfg.get("arch", "ricnn")
    model_cfg.update(config.get("model_by_arch", {}).get(arch, {}))
    model_cfg["arch"] = arch
    if config.get("precision"):
        model_cfg["precision"] = config["precision"]
    return ModelConfig.from_dict(model_cfg)


def cmd_train(args) -> int:
    config = _merged_config(args)
    seed = int(config["seed"])
    out_dir = Path(config.get("out", "run"))
    model_config = _model_config_from(config)
    config["arch"] = model_config.arch
    _echo_config(config, out_dir)

    data_cfg = config.get("data", {})
    train_ds = _load_split(data_cfg, "train", seed)
    eval_ds = _load_split(data_cfg, "test", seed)
    train_images = pad_spatial_to_odd(train_ds.images)
    eval_images = pad_spatial_to_odd(eval_ds.images)
    if train_images.shape[1] != model_config.padded_input_size:
        raise ValueError(
            f"model input_size {model_config.input_size} does not match "
            f"dataset extent {train_ds.images.shape[1]}"
        )

    train_config = TrainConfig.from_dict({**config.get("train", {}), "seed": seed})
    model = build_model(model_config, seed)
    print(f"arch: {model_config.arch}, parameters: {model.param_count()}")

    result = train(
        model, train_images, train_ds.labels, train_config, eval_images, eval_ds.labels
    )
    (out_dir / "metrics.csv").write_text(metrics_to_csv(result.metrics))
    save_checkpoint(
        out_dir / "checkpoint",
        model,
        extra={
            "train_config": train_config.to_dict(),
            "best_accuracy": result.best_accuracy,
            "best_step": result.best_step,
        },
    )
    print(f"best eval accuracy {result.best_accuracy:.4f} at step {result.best_step}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _merged_config(args)
    model, extra = load_checkpoint(args.checkpoint)
    data_cfg = config.get("data", {})
    if args.data:
        data_cfg = {**data_cfg, "test": args.data}
    ds = _load_split(data_cfg, "test", int(config["seed"]))
    images = pad_spatial_to_odd(ds.images)
    result = evaluate(model, images, ds.labels)
    test_error = 100.0 * (1.0 - result.accuracy)
    print(f"accuracy: {result.accuracy:.4f}")
    print(f"test error: {test_error:.2f}%")
    print(f"mAP: {result.mean_average_precision:.4f}")
    out_dir = Path(config.get("out", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["class,count,accuracy,average_precision"]
    for c in range(model.config.classes):
        count = int((ds.labels == c).sum())
        acc = result.per_class_accuracy[c]
        ap = result.per_class_ap[c]
        lines.append(
            f"{c},{count},{'' if np.isnan(acc) else f'{acc:.6f}'},"
            f"{'' if np.isnan(ap) else f'{ap:.6f}'}"
        )
    (out_dir / "per_class.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    config = _merged_config(args)
    seed = int(config["seed"])
    print(f"verification suites (seed {seed})")
    results = verify_mod.run_all(seed, perturb_origin=args.perturb_origin, quick=args.quick)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} suite(s) FAILED")
        return EXIT_PROPERTY
    print("all suites passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conicnet",
        description="rotation-equivariant conic convolution networks: data generation, "
        "training, evaluation and property verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="root seed (overrides config)")
        p.add_argument("--out", help="output directory (overrides config)")

    p = sub.add_parser("generate", help="write a synthetic labeled dataset")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and write metrics + checkpoint")
    common(p)
    p.add_argument("--arch", choices=("cnn", "ricnn", "recnn"), help="architecture override")
    p.add_argument("--precision", choices=("f32", "f64"))
    p.add_argument("--train-data", help="training dataset path")
    p.add_argument("--test-data", help="evaluation dataset path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--data", help="dataset directory (internal format)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="run the property suites")
    common(p)
    p.add_argument(
        "--perturb-origin",
        action="store_true",
        help="pool the origin over r < R only (negative control; must fail)",
    )
    p.add_argument("--quick", action="store_true", help="reduced instance counts")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, FileNotFoundError, NotADirectoryError, PermissionError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
