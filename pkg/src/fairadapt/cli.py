"""Command-line workflows: synthesize, validate, init, zeroshot, train, eval, report.

Configuration precedence is CLI flag > JSON config file > built-in
default; unknown config keys are rejected. Every command is
deterministic given (config, seed): repeated runs produce byte-identical
artifacts.

Exit statuses partition outcomes: 0 success, 1 operational error
(usage problems, unreadable files, module errors), 2 dataset validation
failure. The FAIR_LOG environment variable sets log verbosity
(debug/info/warning/error).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field

from . import embdata, metrics, selftrain
from .cda import (
    Adapter,
    Checkpoint,
    CheckpointFormatError,
    init_cda,
    load_checkpoint_file,
    save_checkpoint_file,
)
from .embdata import DatasetFormatError, SynthSpec
from .selftrain import TrainConfig

log = logging.getLogger("fairadapt")


class UsageError(Exception):
    """Bad invocation: unknown flag, type mismatch, missing input."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; route through our
    # exit-status contract instead (usage errors are operational, exit 1)
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    """Fully resolved invocation: command, paths, and training knobs."""

    command: str
    train: TrainConfig
    dataset: str | None = None
    out: str | None = None
    checkpoint_in: str | None = None
    log_out: str | None = None
    log_in: str | None = None
    workers: int = 1
    synth: SynthSpec | None = None
    extras: dict = field(default_factory=dict)

    def hash_hex(self) -> str:
        return self.train.hash_hex()


# config-file keys and the TrainConfig/paths they resolve to
_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_PATH_KEYS = ("dataset", "out", "checkpoint_in", "log_out", "log_in")
_OTHER_KEYS = ("workers",)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fairadapt", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def common(p):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--dataset", help="embedding dataset file")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int)
        p.add_argument(
            "--workers",
            type=int,
            help="worker pool size; results are independent of this value",
        )

    def train_flags(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int, dest="batch_size")
        p.add_argument("--lr", type=float, dest="learning_rate")
        p.add_argument("--n-use", type=int, dest="n_use")
        p.add_argument("--k", type=int)
        p.add_argument("--logit-scale", type=float, dest="logit_scale")
        p.add_argument(
            "--no-pl-weight", action="store_true", default=None, dest="no_pl_weight"
        )
        p.add_argument("--no-las", action="store_true", default=None, dest="no_las")
        p.add_argument("--fair-g", action="store_true", default=None, dest="fairg_mode")
        p.add_argument(
            "--topk-renorm", action="store_true", default=None, dest="topk_renormalize"
        )
        p.add_argument("--raw-dot", action="store_true", default=None, dest="use_raw_dot")
        p.add_argument("--pbar", choices=["batch", "ema"], dest="pbar_mode")
        p.add_argument("--pbar-momentum", type=float, dest="pbar_momentum")

    p_synth = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    common(p_synth)
    p_synth.add_argument("--classes", type=int, default=10)
    p_synth.add_argument("--images", type=int, default=200)
    p_synth.add_argument("--d", type=int, default=64)
    p_synth.add_argument("--d-cls", type=int, default=48)
    p_synth.add_argument("--crops", type=int, default=16)
    p_synth.add_argument("--strong", type=int, default=8)
    p_synth.add_argument("--desc-per-class", type=int, default=5)
    p_synth.add_argument("--separation", type=float, default=1.0)
    p_synth.add_argument("--feature-noise", type=float, default=0.25)
    p_synth.add_argument("--crop-noise", type=float, default=0.3)
    p_synth.add_argument("--desc-noise", type=float, default=0.3)

    p_validate = sub.add_parser("validate", help="check a dataset's invariants")
    common(p_validate)

    p_init = sub.add_parser("init", help="write an epoch-0 checkpoint (anchors from descriptions)")
    common(p_init)
    train_flags(p_init)

    p_zeroshot = sub.add_parser("zeroshot", help="compare the four zero-shot scorers")
    common(p_zeroshot)
    train_flags(p_zeroshot)

    p_train = sub.add_parser("train", help="run self-training and write a checkpoint")
    common(p_train)
    train_flags(p_train)
    p_train.add_argument("--checkpoint-in", dest="checkpoint_in", help="resume from checkpoint")
    p_train.add_argument("--log-out", dest="log_out", help="JSON-lines training log")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a labeled dataset")
    common(p_eval)
    p_eval.add_argument("--checkpoint-in", dest="checkpoint_in", help="checkpoint to evaluate")

    p_report = sub.add_parser("report", help="convert a JSON-lines training log to CSV")
    common(p_report)
    p_report.add_argument("--log", dest="log_in", help="JSON-lines log file")

    return parser


def _coerce(key: str, value, into_type) -> object:
    try:
        if into_type in ("int", int):
            if isinstance(value, bool):
                raise TypeError
            return int(value)
        if into_type in ("float", float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if into_type in ("bool", bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if into_type in ("str", str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise UsageError(f"config key {key!r}: cannot interpret {value!r}") from None
    return value


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    known = set(_TRAIN_KEYS) | set(_PATH_KEYS) | set(_OTHER_KEYS)
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return data


def parse_config(argv: list[str]) -> RunConfig:
    """Resolve argv (+ optional config file) into a RunConfig.

    Raises UsageError on unknown flags/keys, type mismatches, or a
    missing dataset for commands that need one.
    """
    ns = _build_parser().parse_args(argv)
    if ns.command is None:
        raise UsageError("missing command (synth, validate, init, zeroshot, train, eval, report)")

    file_cfg = _load_config_file(ns.config) if getattr(ns, "config", None) else {}

    train_kwargs = {}
    for name, ftype in _TRAIN_KEYS.items():
        if name in file_cfg:
            train_kwargs[name] = _coerce(name, file_cfg[name], ftype)
    # inverted switch flags: --no-las means las_on=False
    flag_map = {
        "epochs": "epochs",
        "batch_size": "batch_size",
        "learning_rate": "learning_rate",
        "n_use": "n_use",
        "k": "k",
        "logit_scale": "logit_scale",
        "fairg_mode": "fairg_mode",
        "topk_renormalize": "topk_renormalize",
        "use_raw_dot": "use_raw_dot",
        "pbar_mode": "pbar_mode",
        "pbar_momentum": "pbar_momentum",
        "seed": "seed",
    }
    for dest, cfg_name in flag_map.items():
        value = getattr(ns, dest, None)
        if value is not None:
            train_kwargs[cfg_name] = value
    if getattr(ns, "no_pl_weight", None):
        train_kwargs["pl_weight_on"] = False
    if getattr(ns, "no_las", None):
        train_kwargs["las_on"] = False
    train_cfg = TrainConfig(**train_kwargs)

    def resolved(key, flag_value):
        if flag_value is not None:
            return flag_value
        return file_cfg.get(key)

    cfg = RunConfig(
        command=ns.command,
        train=train_cfg,
        dataset=resolved("dataset", getattr(ns, "dataset", None)),
        out=resolved("out", getattr(ns, "out", None)),
        checkpoint_in=resolved("checkpoint_in", getattr(ns, "checkpoint_in", None)),
        log_out=resolved("log_out", getattr(ns, "log_out", None)),
        log_in=resolved("log_in", getattr(ns, "log_in", None)),
        workers=resolved("workers", getattr(ns, "workers", None)) or 1,
    )

    if ns.command == "synth":
        cfg.synth = SynthSpec(
            num_classes=ns.classes,
            num_images=ns.images,
            d=ns.d,
            d_cls=ns.d_cls,
            crops_per_image=ns.crops,
            strong_variants=ns.strong,
            descriptions_per_class=ns.desc_per_class,
            cluster_separation=ns.separation,
            feature_noise=ns.feature_noise,
            crop_noise=ns.crop_noise,
            description_noise=ns.desc_noise,
            seed=train_cfg.seed,
        )
        if cfg.out is None:
            raise UsageError("synth needs --out")
    elif ns.command == "report":
        if cfg.log_in is None:
            raise UsageError("report needs --log")
        if cfg.out is None:
            raise UsageError("report needs --out")
    else:
        if cfg.dataset is None:
            raise UsageError(f"{ns.command} needs --dataset")

    try:
        train_cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    resolved_view = dataclasses.asdict(train_cfg)
    resolved_view.update(
        command=cfg.command, dataset=cfg.dataset, out=cfg.out,
        checkpoint_in=cfg.checkpoint_in, log_out=cfg.log_out, workers=cfg.workers,
    )
    log.info(
        "resolved config %s hash=%s",
        json.dumps(resolved_view, sort_keys=True),
        cfg.hash_hex(),
    )
    return cfg


def _load_dataset_checked(path: str):
    """Load a dataset, separating parse failures (1) from violations (2)."""
    with open(path, "rb") as fh:
        dataset = embdata.read_dataset(fh, validate=False)
    violations = embdata.validate_dataset(dataset)
    return dataset, violations


def _cmd_synth(cfg: RunConfig) -> int:
    dataset = embdata.synth_generate(cfg.synth)
    n = embdata.save_dataset(dataset, cfg.out)
    print(
        f"wrote {cfg.out}: {dataset.header.num_images} images, "
        f"{dataset.header.num_classes} classes, {n} bytes"
    )
    return 0


def _cmd_validate(cfg: RunConfig) -> int:
    dataset, violations = _load_dataset_checked(cfg.dataset)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        print(f"{len(violations)} violation(s)", file=sys.stderr)
        return 2
    h = dataset.header
    print(
        f"ok: {h.num_images} images, {h.num_classes} classes, d={h.d}, "
        f"crops={h.crops_per_image}, strong={h.strong_variants}"
    )
    return 0


def _require_valid(cfg: RunConfig):
    dataset, violations = _load_dataset_checked(cfg.dataset)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        raise _ValidationFailure(len(violations))
    return dataset


class _ValidationFailure(Exception):
    def __init__(self, count: int):
        super().__init__(f"{count} validation violation(s)")


def _cmd_init(cfg: RunConfig) -> int:
    dataset = _require_valid(cfg)
    if cfg.out is None:
        raise UsageError("init needs --out")
    cda = init_cda(dataset.classes)
    ckpt = Checkpoint(
        cda=cda,
        adapter=Adapter.identity(cda.d),
        epoch=0,
        config_hash=cfg.hash_hex(),
    )
    save_checkpoint_file(ckpt, cfg.out)
    print(f"wrote {cfg.out}: {cda.num_classes} anchors, d={cda.d}")
    return 0


def _cmd_zeroshot(cfg: RunConfig) -> int:
    dataset = _require_valid(cfg)
    cda = init_cda(dataset.classes)
    table = metrics.compare_scorers(
        dataset, cda, k=cfg.train.k, n_use=cfg.train.n_use, seed=cfg.train.seed
    )
    report = {name: metrics.metrics_to_dict(m) for name, m in table.items()}
    for name in ("clip", "cupl", "wca", "las"):
        print(f"{name:5s} top1={table[name].top1:.4f} macro={table[name].macro_accuracy():.4f}")
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {cfg.out}")
    return 0


def _cmd_train(cfg: RunConfig) -> int:
    dataset = _require_valid(cfg)
    resume = load_checkpoint_file(cfg.checkpoint_in) if cfg.checkpoint_in else None
    sink = open(cfg.log_out, "w", encoding="utf-8") if cfg.log_out else None
    try:
        result = selftrain.train(dataset, cfg.train, resume=resume, log_sink=sink)
    finally:
        if sink is not None:
            sink.close()
    for record in result.log:
        eval_acc = record["eval_acc"]
        print(
            f"epoch {record['epoch']:3d}  L={record['L']:.4f} "
            f"L_st={record['L_st']:.4f} L_reg={record['L_reg']:.4f} "
            f"pl_acc={record['pl_acc'] if record['pl_acc'] is not None else float('nan'):.4f} "
            f"eval_acc={eval_acc if eval_acc is not None else float('nan'):.4f}"
        )
    if cfg.out:
        save_checkpoint_file(result.checkpoint, cfg.out)
        print(f"wrote {cfg.out}")
    return 0


def _cmd_eval(cfg: RunConfig) -> int:
    dataset = _require_valid(cfg)
    if cfg.checkpoint_in:
        ckpt = load_checkpoint_file(cfg.checkpoint_in)
        cda, adapter = ckpt.cda, ckpt.adapter
    else:
        cda = init_cda(dataset.classes)
        adapter = Adapter.identity(cda.d)
    result = metrics.evaluate(dataset, cda, adapter)
    print(f"top1={result.top1:.4f} macro={result.macro_accuracy():.4f}")
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(metrics.metrics_to_json(result))
            fh.write("\n")
        with open(cfg.out + ".confusion.csv", "w", encoding="utf-8", newline="") as fh:
            metrics.confusion_to_csv(result, fh, class_names=dataset.class_names)
        print(f"wrote {cfg.out}")
    return 0


_REPORT_COLUMNS = [
    "epoch", "step", "L_st", "L_reg", "L",
    "pl_acc", "eval_acc", "gamma_mean", "degenerate_count",
]


def _cmd_report(cfg: RunConfig) -> int:
    import csv as _csv

    try:
        with open(cfg.log_in, "r", encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
    except json.JSONDecodeError as exc:
        raise UsageError(f"log file is not JSON-lines: {exc}") from None
    with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(_REPORT_COLUMNS)
        for rec in records:
            writer.writerow([rec.get(col, "") for col in _REPORT_COLUMNS])
    print(f"wrote {cfg.out}: {len(records)} rows")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "validate": _cmd_validate,
    "init": _cmd_init,
    "zeroshot": _cmd_zeroshot,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def run_command(cfg: RunConfig) -> int:
    return _COMMANDS[cfg.command](cfg)


def _setup_logging() -> None:
    level = os.environ.get("FAIR_LOG", "info").upper()
    logging.basicConfig(stream=sys.stderr)
    log.setLevel(getattr(logging, level, logging.INFO))


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
        return run_command(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetFormatError, CheckpointFormatError, OSError, ValueError,
            FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
