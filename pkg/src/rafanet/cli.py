"""Command-line entry point: ``rafanet {train,eval,augment,gradcheck,synth}``.

Settings come from built-in defaults, then an optional flat ``key=value``
config file, then ``--set key=value`` overrides, then dedicated flags.

Exit codes: 0 success, 1 usage/config error, 2 data or format error,
3 check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from rafanet.augment import EraseConfig, augment_with_info
from rafanet.backbone import BackboneConfig
from rafanet.checkpoint import load_tensors
from rafanet.data import (
    Dataset,
    dataset_exists,
    generate_synthetic,
    load_dataset,
    manifest_path,
    read_manifest,
    write_manifest,
)
from rafanet.errors import ConfigError, FormatError, RafaError
from rafanet.ffn import PyramidConfig
from rafanet.metrics import Metrics
from rafanet.model import VARIANTS, ModelConfig, gradient_check_model, init_params
from rafanet.ppm import read_ppm, write_ppm
from rafanet.rng import Rng
from rafanet.tensor import Tensor
from rafanet.train import TrainConfig, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("rafanet")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def _stages(text: str) -> tuple:
    """``"8:2,16:2,32:2"`` -> ``((8, 2), (16, 2), (32, 2))``."""
    out = []
    for item in text.replace(" ", "").split(","):
        ch, _, stride = item.partition(":")
        out.append((int(ch), int(stride or 1)))
    return tuple(out)


# key -> (parser, default). Defaults are the training recipe scaled to desk size.
SETTINGS: Dict[str, tuple] = {
    "epochs": (int, 100),
    "batch_size": (int, 8),
    "lr_initial": (float, 0.008),
    "lr_drop_epoch": (int, 50),
    "lr_drop_factor": (float, 10.0),
    "momentum": (float, 0.9),
    "seed": (int, 0),
    "variant": (str, "full"),
    "num_classes": (int, 4),
    "backbone": (str, "tiny_cnn"),
    "conv_stages": (_stages, ((8, 2), (16, 2), (32, 2))),
    "input_size": (int, 64),
    "pixel_offset": (float, 0.5),
    "feature_channels": (int, 32),
    "upsample_target": (int, 12),
    "region_size": (int, 4),
    "pyramid_levels": (_int_list, (1, 2, 3)),
    "spp_mode": (str, "mean"),
    "dropout": (float, 0.25),
    "second_ln": (_bool, True),
    "erase_lo": (float, 0.2),
    "erase_hi": (float, 0.7),
    "erase_fill": (int, 127),
    "erase_prob": (float, 1.0),
    "rotation_deg": (float, 25.0),
    "scale_frac": (float, 0.25),
    "crop": (int, 64),
    "augment": (_bool, True),
}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{a}:{b}" for a, b in value)
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_assignments(lines: Sequence[str], source: str) -> Dict[str, object]:
    values = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, text = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        if key not in SETTINGS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        parser = SETTINGS[key][0]
        try:
            values[key] = parser(text.strip())
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def read_config_file(path) -> Dict[str, object]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_assignments(text.splitlines(), str(path))


def write_config_file(path, settings: Dict[str, object]) -> None:
    Path(path).write_text("".join(f"{k}={_format_value(v)}\n" for k, v in settings.items()))


def resolve_settings(args, flag_keys: Sequence[str] = (), base_file: Optional[Path] = None) -> Dict[str, object]:
    settings = {key: default for key, (_, default) in SETTINGS.items()}
    config = getattr(args, "config", None)
    if config is None and base_file is not None and base_file.is_file():
        config = base_file
    if config is not None:
        settings.update(read_config_file(config))
    settings.update(parse_assignments(getattr(args, "set", None) or [], "--set"))
    for key in flag_keys:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def model_config(s: Dict[str, object]) -> ModelConfig:
    backbone = BackboneConfig(
        kind=s["backbone"],
        conv_stages=tuple(s["conv_stages"]),
        input_h=s["input_size"],
        input_w=s["input_size"],
        pixel_offset=s["pixel_offset"],
        upsample_target=s["upsample_target"],
        feature_channels=s["feature_channels"],
    )
    return ModelConfig(
        variant=s["variant"],
        num_classes=s["num_classes"],
        backbone=backbone,
        region_size=s["region_size"],
        pyramid=PyramidConfig(levels=tuple(s["pyramid_levels"]), mode=s["spp_mode"]),
        dropout=s["dropout"],
        second_ln=s["second_ln"],
    )


def erase_config(s: Dict[str, object]) -> EraseConfig:
    return EraseConfig(
        frac_lo=s["erase_lo"],
        frac_hi=s["erase_hi"],
        fill=s["erase_fill"],
        rotation_deg=s["rotation_deg"],
        scale_frac=s["scale_frac"],
        crop_h=s["crop"],
        crop_w=s["crop"],
        apply_prob=s["erase_prob"],
    )


def train_config(s: Dict[str, object]) -> TrainConfig:
    return TrainConfig(
        epochs=s["epochs"],
        batch_size=s["batch_size"],
        lr_initial=s["lr_initial"],
        lr_drop_epoch=s["lr_drop_epoch"],
        lr_drop_factor=s["lr_drop_factor"],
        momentum=s["momentum"],
        seed=s["seed"],
        variant=s["variant"],
    )


def _split_dir(root: Path, split: str) -> Optional[Path]:
    sub = root / split
    return sub if dataset_exists(sub) else None


def _load(root: Path, s: Dict[str, object]) -> Dataset:
    return load_dataset(root, s["num_classes"], features=s["backbone"] == "file_features")


def _augmenter(s: Dict[str, object]) -> Optional[EraseConfig]:
    if s["backbone"] == "file_features":
        return None
    cfg = erase_config(s)
    if not s["augment"]:
        cfg = replace(cfg, apply_prob=0.0, rotation_deg=0.0, scale_frac=0.0)
    return cfg


# ---------------------------------------------------------------------------
# subcommands

TRAIN_FLAGS = ("variant", "epochs", "seed", "batch_size", "lr_initial", "lr_drop_epoch", "backbone", "num_classes")


def cmd_train(args) -> int:
    s = resolve_settings(args, TRAIN_FLAGS)
    mcfg, tcfg, aug = model_config(s), train_config(s), _augmenter(s)
    root = Path(args.data)
    train_root = _split_dir(root, "train") or root
    val_root = Path(args.val) if args.val else _split_dir(root, "val")
    train_data = _load(train_root, s)
    val_data = _load(val_root, s) if val_root is not None else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(out / "config.txt", s)
    result = train(train_data, tcfg, mcfg, val_data, aug, out_dir=out)
    last = result.log[-1]
    print(
        f"trained {tcfg.variant} for {tcfg.epochs} epochs: "
        f"loss {last['train_loss']:.4f}, train top-1 {last['train_top1']:.4f}, val top-1 {last['val_top1']:.4f}"
    )
    print(f"checkpoint: {out / 'checkpoint.rafa'}\nlog: {out / 'train_log.csv'}")
    return EXIT_OK


def load_checkpoint_params(path, cfg: ModelConfig) -> Dict[str, Tensor]:
    """Load parameters and check them tensor by tensor against ``cfg``'s layout."""
    stored = load_tensors(path)
    expected = init_params(cfg)
    for name, p in expected.items():
        if name not in stored:
            raise FormatError(f"checkpoint {path} is missing tensor {name}")
        if stored[name].shape != p.shape:
            raise FormatError(f"tensor {name}: checkpoint shape {stored[name].shape}, model expects {p.shape}")
        p.data = stored[name]
    extra = sorted(set(stored) - set(expected))
    if extra:
        raise FormatError(f"checkpoint {path} has tensors the model does not use: {', '.join(extra)}")
    return expected


def format_metrics(m: Metrics) -> str:
    rows = [("top1", m.top1), ("top5", m.top5)]
    rows += [(f"top{k}", v) for k, v in sorted(m.extra_topk.items())]
    rows += [("precision", m.precision), ("recall", m.recall), ("f1", m.f1), ("cir", m.cir)]
    width = max(len(name) for name, _ in rows)
    lines = [f"{name:<{width}}  {value:.4f}" for name, value in rows]
    k = m.confusion.shape[0]
    cell = max(3, len(str(int(m.confusion.max(initial=0)))))
    lines.append("confusion (rows = true, cols = predicted):")
    lines.append(" " * 4 + " ".join(f"{j:>{cell}}" for j in range(k)))
    for i in range(k):
        lines.append(f"{i:>3} " + " ".join(f"{int(v):>{cell}}" for v in m.confusion[i]))
    return "\n".join(lines)


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    s = resolve_settings(args, ("num_classes", "variant", "backbone"), base_file=ckpt.parent / "config.txt")
    mcfg = model_config(s)
    params = load_checkpoint_params(ckpt, mcfg)
    root = Path(args.data)
    data = _load(_split_dir(root, "test") or root, s)
    aug = erase_config(s) if s["backbone"] != "file_features" else None
    metrics = evaluate(params, mcfg, data, aug, topk=args.topk)
    print(format_metrics(metrics))
    report = Path(args.report) if args.report else ckpt.parent / "eval_report.json"
    report.write_text(json.dumps(metrics.to_dict(), indent=2) + "\n")
    print(f"report: {report}")
    return EXIT_OK


def cmd_augment(args) -> int:
    s = resolve_settings(args, ("seed",))
    cfg = erase_config(s)
    root = Path(args.data)
    rows = read_manifest(root)
    base = manifest_path(root).parent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(s["seed"])
    fractions, out_rows = [], []
    for i, (rel, label) in enumerate(rows):
        try:
            img = read_ppm(base / rel)
        except OSError as exc:
            raise FormatError(f"cannot read {base / rel}: {exc}") from exc
        cfg.check_input_size(*img.shape[:2])
        aug, frac = augment_with_info(img, cfg, rng.derive(i), training=not args.inference)
        name = f"aug_{i:05d}.ppm"
        write_ppm(out / name, aug)
        out_rows.append((name, label))
        if frac is not None:
            fractions.append(frac)
    write_manifest(out, out_rows)
    stats = {"count": len(out_rows)}
    if fractions:
        stats.update(
            mean_erased_fraction=float(np.mean(fractions)),
            min_erased_fraction=float(np.min(fractions)),
            max_erased_fraction=float(np.max(fractions)),
        )
    (out / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    print(json.dumps(stats))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = gradient_check_model(args.seed, args.eps, args.tol, args.variant)
    width = max(len(name) for name in report.errors)
    for name, err in report.errors.items():
        mark = "ok" if err <= args.tol else "FAIL"
        print(f"{name:<{width}}  {err:.3e}  {mark}")
    if report.passed:
        print(f"all {len(report.errors)} parameter groups within {args.tol:g}")
        return EXIT_OK
    print(f"failing groups: {', '.join(report.failing)}")
    return EXIT_CHECK


def cmd_synth(args) -> int:
    try:
        fractions = tuple(float(x) for x in args.split.split(","))
    except ValueError:
        raise ConfigError(f"--split needs three comma-separated fractions, got {args.split!r}") from None
    if len(fractions) != 3:
        raise ConfigError(f"--split needs three comma-separated fractions, got {args.split!r}")
    try:
        counts = generate_synthetic(
            args.out, args.classes, args.per_class, args.seed, args.size, fractions, args.noise
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(f"wrote {sum(counts.values())} images to {args.out}: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _DefaultsFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Appends ``(default: X)`` unless the help text already names its default or there is none."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default" in text or action.default in (None, argparse.SUPPRESS) or action.required:
            return text
        return super()._get_help_string(action)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file (default: none)")
    p.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override one config key; repeatable (default: none)"
    )


def build_parser() -> argparse.ArgumentParser:
    fmt = _DefaultsFormatter
    parser = _Parser(prog="rafanet", description="Region-attention classification head, desk scale.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model variant", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset dir (uses train/ and val/ subdirs when present)")
    p.add_argument("--val", default=None, help="validation dataset dir")
    p.add_argument("--out", default="run", help="output dir for log, config and checkpoint")
    p.add_argument("--variant", choices=VARIANTS, default=None, help="model variant (config default: full)")
    p.add_argument("--epochs", type=int, default=None, help="epochs (config default: 100)")
    p.add_argument("--seed", type=int, default=None, help="random seed (config default: 0)")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None, help="batch size (config default: 8)")
    p.add_argument("--lr", dest="lr_initial", type=float, default=None, help="initial learning rate (config default: 0.008)")
    p.add_argument(
        "--lr-drop-epoch", dest="lr_drop_epoch", type=int, default=None, help="epoch of the 10x lr drop (config default: 50)"
    )
    p.add_argument("--backbone", choices=("tiny_cnn", "file_features"), default=None, help="backbone kind (config default: tiny_cnn)")
    p.add_argument("--classes", dest="num_classes", type=int, default=None, help="number of classes (config default: 4)")
    _add_config_args(p)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset dir (uses test/ subdir when present)")
    p.add_argument("--checkpoint", required=True, help="RAFA1 checkpoint; config.txt next to it is read by default")
    p.add_argument("--report", default=None, help="JSON report path (default: eval_report.json next to the checkpoint)")
    p.add_argument("--topk", type=int, default=5, help="extra top-k accuracy to report")
    p.add_argument("--variant", choices=VARIANTS, default=None, help="model variant (default: from config)")
    p.add_argument("--backbone", choices=("tiny_cnn", "file_features"), default=None, help="backbone kind (default: from config)")
    p.add_argument("--classes", dest="num_classes", type=int, default=None, help="number of classes (default: from config)")
    _add_config_args(p)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment", help="write augmented copies of a dataset", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset dir or manifest.csv")
    p.add_argument("--out", required=True, help="output dir")
    p.add_argument("--seed", type=int, default=None, help="random seed (config default: 0)")
    p.add_argument("--inference", action="store_true", help="apply the inference pipeline (centre crop only)")
    _add_config_args(p)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter group", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--tol", type=float, default=1e-4, help="max relative error")
    p.add_argument("--eps", type=float, default=1e-6, help="finite-difference step")
    p.add_argument("--variant", choices=VARIANTS, default="full", help="model variant")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate the synthetic texture dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output dir")
    p.add_argument("--classes", type=int, default=4, help="number of classes")
    p.add_argument("--per-class", dest="per_class", type=int, default=100, help="images per class")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--size", type=int, default=64, help="image side in pixels")
    p.add_argument("--split", default="0.7,0.1,0.2", help="train,val,test fractions")
    p.add_argument("--noise", type=float, default=20.0, help="pixel noise std")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RafaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
