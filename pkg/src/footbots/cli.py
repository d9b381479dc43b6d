"""Command line entry point: ``footbots <command> ...``.

Commands
--------
gen-data   write synthetic ``train.fbds`` and ``val.fbds`` into a directory
train      fit one model for one task and write a checkpoint plus history
eval       metric table for checkpoints and/or the velocity baseline
compare    alias of ``eval`` that always includes the velocity baseline
predict    dump predictions ``[N, M, T, 2]`` to a ``.npy`` file
plot       SVG figure of one scene with ground truth and model predictions

Configuration files are INI documents with ``[synthetic]`` and ``[train]``
sections of ``key = value`` lines. ``FOOTBOTS_DATA_DIR`` is the default
data directory.

Exit codes: 0 success, 2 usage or contract errors, 3 data and file
errors, 4 numerical failures.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .exceptions import ConfigMismatchError, ContractError, DataError, FileFormatError, NonFiniteError
from .model import TaskKind, TaskSpec
from .persistence import load_checkpoint, load_dataset, save_dataset
from .synthetic import SyntheticConfig, generate_dataset
from .metrics import format_table
from .training import TrainConfig, evaluate, predict, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DATA_ENV = "FOOTBOTS_DATA_DIR"

log = logging.getLogger("footbots")


class UsageError(Exception):
    pass


# -- configuration ----------------------------------------------------------


def _coerce(type_name: str, default, text: str):
    text = text.strip()
    if text.lower() in ("none", "") and ("None" in type_name or default is None):
        return None
    if "bool" in type_name:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if "tuple" in type_name:
        kind = int if "int" in type_name else float
        return tuple(kind(v) for v in text.replace("(", "").replace(")", "").split(","))
    if "int" in type_name and "float" not in type_name:
        return int(text)
    if "float" in type_name:
        return float(text)
    return text


def config_from_section(cls, parser: configparser.ConfigParser | None, section: str, **overrides):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    if parser is not None and parser.has_section(section):
        for key, text in parser.items(section):
            if key not in fields:
                raise UsageError(f"unknown key {key!r} in [{section}]")
            f = fields[key]
            try:
                values[key] = _coerce(str(f.type), f.default, text)
            except ValueError as exc:
                raise UsageError(f"[{section}] {key}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**values)
    except ContractError as exc:
        raise UsageError(f"invalid [{section}] configuration: {exc}") from None


def read_config(path) -> configparser.ConfigParser | None:
    if path is None:
        return None
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise UsageError(f"cannot read config file {path}")
    unknown = set(parser.sections()) - {"synthetic", "train"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return parser


def print_config(section: str, config) -> None:
    print(f"[{section}]", file=sys.stderr)
    for key, value in dataclasses.asdict(config).items():
        print(f"{key} = {value}", file=sys.stderr)


# -- data helpers -------------------------------------------------------------


def _data_root(arg) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get(DATA_ENV)
    if env:
        return Path(env)
    raise UsageError(f"--data not given and {DATA_ENV} is not set")


def _split_path(arg, split: str) -> Path:
    path = _data_root(arg)
    return path / f"{split}.fbds" if path.is_dir() else path


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    parser = read_config(args.config)
    config = config_from_section(SyntheticConfig, parser, "synthetic", seed=args.seed)
    print_config("synthetic", config)
    out = Path(args.out) if args.out else _data_root(None)
    out.mkdir(parents=True, exist_ok=True)
    train_set, val_set = generate_dataset(config)
    save_dataset(out / "train.fbds", train_set, shape=(config.agents, config.t, config.T))
    save_dataset(out / "val.fbds", val_set, shape=(config.agents, config.t, config.T))
    print(f"wrote {len(train_set)} train and {len(val_set)} val sequences to {out} (seed {config.seed})")
    return EXIT_OK


def cmd_train(args) -> int:
    parser = read_config(args.config)
    root = _data_root(args.data)
    train_path = _split_path(args.data, "train")
    val_path = root / "val.fbds" if root.is_dir() else None
    suffix = "_ns" if args.ns else ""
    out = Path(args.out) if args.out else (root if root.is_dir() else root.parent) / f"footbots_{args.task}{suffix}.fbck"
    config = config_from_section(
        TrainConfig, parser, "train", task=args.task, seed=args.seed, epochs=args.epochs,
        ns_variant=True if args.ns else None, train_path=str(train_path),
        val_path=str(val_path) if val_path and val_path.exists() else None,
        checkpoint_path=str(out),
    )
    print_config("train", config)

    def report(rec):
        val = rec.val_ade.get("predicted", float("nan"))
        print(f"epoch {rec.epoch:3d}  loss {rec.train_loss:.4f}  val ADE_P {val:.4f}  "
              f"lr {rec.lr:.2e}  {rec.wall_time:.1f}s", flush=True)

    result = train(config, on_epoch=report)
    history = out.with_suffix(".history.json")
    history.write_text(result.history.to_json(indent=1))
    print(f"best epoch {result.history.best_epoch} val ADE_P {result.history.best_val_ade:.4f}")
    print(f"checkpoint {out}\nhistory {history}")
    return EXIT_OK


def _reports(args, include_baseline: bool):
    data = load_dataset(_split_path(args.data, "val"))
    if not data.samples:
        raise DataError("evaluation dataset is empty")
    unit = data.header.unit_scale
    reports = []
    for path in args.checkpoint or []:
        ckpt = load_checkpoint(path)
        m, t = data.header.M, data.header.t
        if ckpt.config.input_width not in (2, 3) or t < data.header.T:
            raise ConfigMismatchError(f"{path} cannot be applied to data with M={m}, t={t}")
        reports.append(evaluate(ckpt, data.samples, args.task, unit_scale=unit))
    if include_baseline:
        tasks = {r.task for r in reports} or {TaskSpec.from_name(args.task or "mp").label}
        for label in sorted(tasks):
            task = TaskSpec.from_name(label.lower())
            reports.append(evaluate("velocity", data.samples, task, unit_scale=unit))
    if not reports:
        raise UsageError("nothing to evaluate: give --checkpoint and/or --baseline velocity")
    return reports


def _write_reports(args, reports) -> None:
    table = format_table(reports)
    print(table)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(table + "\n")
        twin = out.with_suffix(".json")
        twin.write_text(json.dumps([r.to_dict() for r in reports], indent=1))
        print(f"report {out}\nreport json {twin}")


def cmd_eval(args) -> int:
    _write_reports(args, _reports(args, args.baseline == "velocity"))
    return EXIT_OK


def cmd_compare(args) -> int:
    _write_reports(args, _reports(args, True))
    return EXIT_OK


def cmd_predict(args) -> int:
    data = load_dataset(_split_path(args.data, "val"))
    ckpt = load_checkpoint(args.checkpoint)
    task = TaskSpec.from_name(args.task or ckpt.metadata.get("task", "mp"))
    preds = predict(ckpt.build_model(), data.samples, task)
    np.save(args.out, preds)
    print(f"wrote predictions {preds.shape} to {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import save_scene_figure

    data = load_dataset(_split_path(args.data, "val"))
    if not 0 <= args.index < len(data.samples):
        raise UsageError(f"--index {args.index} out of range for {len(data.samples)} sequences")
    sample = data.samples[args.index]
    panels = []
    for path in args.checkpoint or []:
        ckpt = load_checkpoint(path)
        task = TaskSpec.from_name(ckpt.metadata.get("task", "mp"))
        pred = ckpt.build_model().predict_sample(task, sample)
        name = ckpt.metadata.get("model_name", "FootBots")
        panels.append((f"{name} {task.label}", pred, task.predicted_mask(sample.roles)))
    bounds = None if data.header.normalized else float(np.ceil(np.abs(sample.positions).max()))
    save_scene_figure(args.out, sample, panels, bounds=bounds)
    print(f"wrote {args.out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="footbots", description="Soccer trajectory prediction.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    tasks = [k.value for k in TaskKind]

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("--config", help="INI file with a [synthetic] section")
    p.add_argument("--out", help=f"output directory (default ${DATA_ENV})")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--task", required=True, choices=tasks)
    p.add_argument("--data", help="dataset directory or train file")
    p.add_argument("--ns", action="store_true", help="non-social variant")
    p.add_argument("--config", help="INI file with a [train] section")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    for name, func in (("eval", cmd_eval), ("compare", cmd_compare)):
        p = sub.add_parser(name, help="metric table" if name == "eval" else "table with baseline")
        p.add_argument("--checkpoint", nargs="*", default=[])
        p.add_argument("--data", help="dataset directory (uses val.fbds) or file")
        p.add_argument("--task", choices=tasks, help="override the checkpoint's task")
        p.add_argument("--out", help="write the table here and a JSON twin next to it")
        if name == "eval":
            p.add_argument("--baseline", choices=["velocity"])
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="write predictions to .npy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--task", choices=tasks)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot", help="SVG of one scene")
    p.add_argument("--checkpoint", nargs="*", default=[])
    p.add_argument("--data")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ContractError) as exc:
        print(f"footbots: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"footbots: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileFormatError, ConfigMismatchError, OSError) as exc:
        print(f"footbots: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
