"""Command-line entry point: ``harnet <command> [flags]``.

Settings resolve as built-in defaults < ``--config`` file < ``--replay``
manifest < explicit flags. The config file is INI text::

    [model]
    conv_mode = separable
    kernel_sizes = 1, 5, 9, 13, 17, 21, 25, 29, 33

    [train]
    epochs = 60
    seed = 0

    [run]
    data_root = data/UCI HAR Dataset
    out_dir = runs/default

Every command that produces artifacts writes ``manifest.json`` next to them.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, nn
from .baseline import LinearOVAConfig, train_linear_ova
from .checkpoint import atomic_write_bytes
from .data import load_dataset
from .errors import ConfigError, HarNetError, NumericError
from .features import FUSION_MODES
from .fetch import DEFAULT_URL, fetch
from .metrics import EvalReport, build_stamp
from .model import CONV_MODES, HarNet, HarNetConfig, check_config_match
from .train import TrainConfig, ablate, evaluate, train

log = logging.getLogger("harnet")

COMMANDS = ("fetch", "train", "eval", "ablate", "baseline", "gradcheck")
GRADCHECK_TOLERANCE = 1e-4
MANIFEST_SCHEMA = "harnet.manifest/1"


def default_settings() -> dict:
    return {
        "model": HarNetConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "run": {
            "data_root": os.environ.get("HARNET_DATA_ROOT", "data/UCI HAR Dataset"),
            "out_dir": "runs",
            "checkpoint": "",
            "threads": os.cpu_count() or 1,
        },
    }


# flag name -> (section, key, type, help)
FLAGS = {
    "data-root": ("run", "data_root", str, "dataset release directory"),
    "seed": ("train", "seed", int, "seed for initialization, shuffling and validation split"),
    "epochs": ("train", "epochs", int, "maximum training epochs"),
    "batch-size": ("train", "batch_size", int, "minibatch size"),
    "conv-mode": ("model", "conv_mode", str, "convolution mode"),
    "fusion": ("model", "fusion_mode", str, "hand-crafted feature block fused into the head"),
    "threads": ("run", "threads", int, "BLAS threads"),
    "out-dir": ("run", "out_dir", str, "directory for reports and manifest"),
    "checkpoint": ("run", "checkpoint", str, "checkpoint path (written by train, read by eval)"),
}
CHOICES = {"conv-mode": CONV_MODES, "fusion": FUSION_MODES}


def _coerce(value: str, like):
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(like, list):
        return [int(v) for v in value.replace(",", " ").split()]
    try:
        return type(like)(value)
    except ValueError:
        raise ConfigError(f"cannot read {value!r} as {type(like).__name__}") from None


def read_config_file(path, settings: dict) -> set[tuple[str, str]]:
    """Merge an INI file into ``settings``; returns the (section, key) pairs it set."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None
    touched = set()
    for section in parser.sections():
        if section not in settings:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in settings[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            settings[section][key] = _coerce(value, settings[section][key])
            touched.add((section, key))
    return touched


def build_parser() -> argparse.ArgumentParser:
    defaults = default_settings()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI settings file (default: none)")
    common.add_argument("--replay", metavar="MANIFEST", help="re-run with a manifest's resolved settings (default: none)")
    for flag, (section, key, typ, text) in FLAGS.items():
        default = defaults[section][key]
        shown = "cpu count" if key == "threads" else (repr(default) if default != "" else "none")
        common.add_argument(
            f"--{flag}", type=typ, default=None, choices=CHOICES.get(flag),
            help=f"{text} (default: {shown})",
        )

    parser = argparse.ArgumentParser(prog="harnet", description="HAR-Net training and evaluation")
    parser.add_argument("--version", action="version", version=f"harnet {__version__}")
    parser.add_argument("--log-level", default="INFO", help="logging level (default: INFO)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("fetch", parents=[common], help="download or copy and unpack the dataset")
    p.add_argument("--source", default=DEFAULT_URL, help=f"archive URL or local path (default: {DEFAULT_URL})")
    p.add_argument("--sha256", required=True, help="expected archive digest (required, default: none)")
    sub.add_parser("train", parents=[common], help="train a model and evaluate it on the test split")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    sub.add_parser("ablate", parents=[common], help="train and compare the three reference variants")
    sub.add_parser("baseline", parents=[common], help="linear one-vs-all SVM on the 561 features")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the full graph")
    p.add_argument("--samples", type=int, default=100, help="coordinates checked per configuration (default: 100)")
    return parser


def resolve(args: argparse.Namespace) -> tuple[dict, set[tuple[str, str]]]:
    """Final settings and the (section, key) pairs chosen explicitly by the user."""
    settings = default_settings()
    explicit: set[tuple[str, str]] = set()
    if args.config:
        explicit |= read_config_file(args.config, settings)
    if args.replay:
        try:
            manifest = json.loads(Path(args.replay).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.replay} is not valid JSON: {exc}") from None
        if not isinstance(manifest, dict) or manifest.get("schema") != MANIFEST_SCHEMA:
            raise ConfigError(f"{args.replay} is not a run manifest")
        if manifest["command"] != args.command:
            raise ConfigError(f"manifest is for '{manifest['command']}', not '{args.command}'")
        for section, values in manifest["settings"].items():
            settings[section].update(values)
            explicit |= {(section, k) for k in values}
    for flag, (section, key, _, _) in FLAGS.items():
        value = getattr(args, flag.replace("-", "_"))
        if value is not None:
            settings[section][key] = value
            explicit.add((section, key))
    return settings, explicit


def _model_config(settings: dict) -> HarNetConfig:
    return HarNetConfig.from_dict(settings["model"])


def _train_config(settings: dict) -> TrainConfig:
    return TrainConfig(**settings["train"])


class Run:
    """Output directory bookkeeping plus the manifest written at the end."""

    def __init__(self, command: str, settings: dict, argv: list[str]):
        self.command = command
        self.settings = settings
        self.argv = argv
        self.out = Path(settings["run"]["out_dir"])
        self.outputs: dict[str, str] = {}
        self.dataset_checksum = ""
        self.started = time.perf_counter()

    def write(self, name: str, text: str, key: str | None = None) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(path, text.encode("utf-8"))
        self.outputs[key or name] = str(path)
        return path

    def report(self, report: EvalReport, stem: str = "report") -> None:
        self.write(f"{stem}.json", report.to_json() + "\n")
        self.write(f"{stem}_confusion.txt", report.confusion.format_table() + "\n")

    def finish(self) -> Path:
        manifest = {
            "schema": MANIFEST_SCHEMA,
            "command": self.command,
            "argv": self.argv,
            "settings": self.settings,
            "seed": self.settings["train"]["seed"],
            "dataset_checksum": self.dataset_checksum,
            "outputs": self.outputs,
            "duration_s": round(time.perf_counter() - self.started, 3),
            "build": build_stamp(),
        }
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / "manifest.json"
        atomic_write_bytes(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
        return path


def _progress(prefix: str = ""):
    def show(entry):
        val = "-" if entry.val_accuracy is None else f"{100 * entry.val_accuracy:.2f}%"
        print(f"{prefix}epoch {entry.epoch:3d}  loss {entry.train_loss:.4f}  val {val}", flush=True)
    return show


def cmd_fetch(args, run: Run) -> int:
    dest = fetch(args.source, run.settings["run"]["data_root"], args.sha256)
    run.outputs["data_root"] = str(dest)
    run.dataset_checksum = load_dataset(dest).checksum
    print(f"unpacked release to {dest}")
    return 0


def cmd_train(args, run: Run) -> int:
    ds = load_dataset(run.settings["run"]["data_root"])
    run.dataset_checksum = ds.checksum
    result = train(_model_config(run.settings), _train_config(run.settings), ds, on_epoch=_progress())
    ckpt = Path(run.settings["run"]["checkpoint"] or run.out / "model.ckpt")
    result.model.save(ckpt, result.checkpoint.meta)
    run.outputs["checkpoint"] = str(ckpt)
    run.write("train_log.json", json.dumps(result.log.to_list(), indent=2) + "\n")
    report = evaluate(result.model, ds.test, {"best_epoch": result.best_epoch, "epochs_run": result.epochs_run})
    run.report(report)
    print(report.confusion.format_table())
    print(report.summary())
    return 0


def cmd_eval(args, run: Run, explicit: set) -> int:
    path = run.settings["run"]["checkpoint"]
    if not path:
        raise ConfigError("eval needs --checkpoint")
    model = HarNet.load(path)
    # only settings the user actually chose are held against the checkpoint
    keys = [k for (section, k) in explicit if section == "model"]
    if keys:
        runtime = HarNetConfig.from_dict({**model.config.to_dict(), **run.settings["model"]})
        check_config_match(model.config, runtime, keys)
    run.settings["model"] = model.config.to_dict()
    ds = load_dataset(run.settings["run"]["data_root"])
    run.dataset_checksum = ds.checksum
    report = evaluate(model, ds.test, {"checkpoint": str(path)})
    run.report(report)
    print(report.confusion.format_table())
    print(report.summary())
    return 0


def cmd_ablate(args, run: Run) -> int:
    ds = load_dataset(run.settings["run"]["data_root"])
    run.dataset_checksum = ds.checksum
    table = ablate(ds, _model_config(run.settings), _train_config(run.settings),
                   on_epoch=lambda name, e: _progress(f"[{name}] ")(e))
    for row in table.rows:
        run.report(row.report, f"report_{row.name}")
    run.write("ablation.json", json.dumps(table.to_dict(), indent=2) + "\n")
    run.write("ablation.txt", table.format_table() + "\n")
    print(table.format_table())
    for name, ok in table.orderings().items():
        print(f"{'holds' if ok else 'FAILS'}: {name}")
    return 0


def cmd_baseline(args, run: Run) -> int:
    ds = load_dataset(run.settings["run"]["data_root"])
    run.dataset_checksum = ds.checksum
    _, report = train_linear_ova(ds, LinearOVAConfig(seed=run.settings["train"]["seed"]))
    run.report(report)
    print(report.confusion.format_table())
    print(report.summary())
    return 0


def full_graph_gradcheck(config: HarNetConfig, seed: int, samples: int = 100, batch: int = 4) -> nn.GradcheckReport:
    """Finite-difference check of every parameter group on a random batch."""
    model = HarNet.build(config, seed)
    model.chunk = batch
    rng = np.random.default_rng([seed, 7])
    x = rng.standard_normal((batch, config.streams, 1, config.length))
    f = rng.uniform(-1.0, 1.0, (batch, config.fusion_width))
    y = rng.integers(0, config.classes, batch)
    arrays = {k: p.value for k, p in model.params.items()}

    def loss_and_grads():
        loss, _ = model.loss_and_backward(x, f, y)
        return loss, {k: p.grad for k, p in model.params.items()}

    return nn.gradcheck(loss_and_grads, arrays, GRADCHECK_TOLERANCE, samples=samples, seed=seed,
                        loss_only=lambda: model.loss(x, f, y))


def cmd_gradcheck(args, run: Run) -> int:
    config = _model_config(run.settings)
    report = full_graph_gradcheck(config, run.settings["train"]["seed"], args.samples)
    line = f"conv_mode={config.conv_mode} fusion={config.fusion_mode} {report}"
    run.write("gradcheck.txt", line + "\n")
    print(line)
    if not report.passed:
        raise NumericError(f"gradcheck max relative error {report.max_rel_error:.3e} >= {GRADCHECK_TOLERANCE:g}")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        settings, explicit = resolve(args)
        run = Run(args.command, settings, argv)
        with threadpool_limits(limits=int(settings["run"]["threads"])):
            if args.command == "eval":
                status = cmd_eval(args, run, explicit)
            else:
                status = globals()[f"cmd_{args.command}"](args, run)
        path = run.finish()
        print(f"manifest: {path}")
        return status
    except HarNetError as exc:
        print(f"error category={exc.category} message={json.dumps(str(exc))}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error category=io message={json.dumps(str(exc))}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
