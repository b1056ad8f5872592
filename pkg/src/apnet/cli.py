"""Command-line entry point: train, eval, ablate, synth, dump-embeddings.

Every config field is exposed as a kebab-case flag.  Values resolve as
dataclass defaults < ``--config`` JSON file < explicit flags, and the resolved
config is written next to every run's outputs.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import typing
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .evaluator import evaluate_gzsl, evaluate_zsl
from .graph import MODES, PropagationConfig
from .head import HeadConfig
from .model import EncoderConfig, class_features, class_graph, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train

log = logging.getLogger("apnet")

# section name -> (config class, flag prefix)
SECTIONS = {
    "train": (TrainConfig, ""),
    "encoder": (EncoderConfig, ""),
    "propagation": (PropagationConfig, "prop-"),
    "head": (HeadConfig, ""),
    "synthetic": (SyntheticConfig, ""),
}
MODEL_SECTIONS = ("train", "encoder", "propagation", "head")
ABLATION_CELLS = [(ep, mode) for ep in ("episodic", "minibatch") for mode in ("none", "fixed_hop", "learned")]

CHECKPOINT = "checkpoint.apnet"
TRAIN_LOG = "train_log.jsonl"
RESOLVED = "run_config.json"


class CliError(ValueError):
    """Validation problem with the command line or config file."""


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    paths: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def to_dict(self, sections=tuple(SECTIONS)) -> dict:
        d = {s: asdict(getattr(self, s)) for s in sections}
        d["paths"] = dict(self.paths)
        d["flags"] = dict(self.flags)
        return d

    def write(self, path, sections=tuple(SECTIONS)) -> None:
        Path(path).write_text(json.dumps(self.to_dict(sections), indent=1, sort_keys=True) + "\n")


def _scalar_type(cls, name):
    hint = typing.get_type_hints(cls)[name]
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    return args[0] if args else hint


def _section_update(cls, cfg, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(values) - known
    if extra:
        raise CliError(f"unknown {where} keys: {sorted(extra)}")
    out = {}
    for k, v in values.items():
        t = _scalar_type(cls, k)
        if v is None or t is bool:
            out[k] = v
        else:
            try:
                out[k] = t(v)
            except (TypeError, ValueError):
                raise CliError(f"{where}.{k}: cannot convert {v!r} to {t.__name__}") from None
    return replace(cfg, **out)


def add_config_flags(parser: argparse.ArgumentParser, sections) -> None:
    parser.add_argument("--config", help="JSON run config; explicit flags override it")
    for section in sections:
        cls, prefix = SECTIONS[section]
        group = parser.add_argument_group(section)
        for f in fields(cls):
            flag = "--" + prefix + f.name.replace("_", "-")
            t = _scalar_type(cls, f.name)
            kw = dict(dest=f"{section}.{f.name}", default=argparse.SUPPRESS)
            if t is bool:
                group.add_argument(flag, action=argparse.BooleanOptionalAction, **kw)
            elif section == "propagation" and f.name == "mode":
                group.add_argument(flag, choices=MODES, **kw)
            else:
                group.add_argument(flag, type=t, metavar=t.__name__.upper(), **kw)


def resolve_config(args: argparse.Namespace, sections) -> RunConfig:
    rc = RunConfig()
    file_cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise CliError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(file_cfg, dict):
            raise CliError(f"{path}: top level must be an object")
    for section in SECTIONS:
        cls, _ = SECTIONS[section]
        cfg = getattr(rc, section)
        if section in file_cfg:
            cfg = _section_update(cls, cfg, file_cfg[section], section)
        flagged = {k.split(".", 1)[1]: v for k, v in vars(args).items() if k.startswith(section + ".")}
        cfg = _section_update(cls, cfg, flagged, section)
        setattr(rc, section, cfg)
    rc.flags = dict(file_cfg.get("flags", {}))
    return rc


def _prepare_out(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_and_save(dataset, rc: RunConfig, out: Path):
    out = _prepare_out(out)
    with open(out / TRAIN_LOG, "w") as fh:
        def on_epoch(rec):
            fh.write(json.dumps(asdict(rec)) + "\n")
            fh.flush()

        params, history = train(dataset, rc.train, rc.encoder, rc.propagation, rc.head, on_epoch=on_epoch)
    model_cfg = {s: asdict(getattr(rc, s)) for s in MODEL_SECTIONS}
    save_checkpoint(out / CHECKPOINT, params, model_cfg)
    return params, history


def _prop_from_checkpoint(cfg: dict, override_mode=None) -> PropagationConfig:
    prop = _section_update(PropagationConfig, PropagationConfig(), cfg.get("propagation", {}), "propagation")
    if override_mode is not None:
        prop = replace(prop, mode=override_mode)
    prop.validate()
    return prop


def _evaluate(params, dataset, prop, setting, graph_scope):
    if setting == "zsl":
        return evaluate_zsl(params, dataset, prop, graph_scope=graph_scope)
    return evaluate_gzsl(params, dataset, prop)


def cmd_train(args) -> int:
    rc = resolve_config(args, MODEL_SECTIONS)
    rc.paths = {"data": str(args.data), "out": str(args.out)}
    for cfg in (rc.train, rc.propagation, rc.head):
        cfg.validate()
    dataset = load_dataset(args.data)
    out = _prepare_out(args.out)
    rc.write(out / RESOLVED, MODEL_SECTIONS)
    _, history = _train_and_save(dataset, rc, out)
    last = history[-1].mean_loss if history else float("nan")
    print(f"trained {len(history)} epochs, final loss {last:.5f}; checkpoint {out / CHECKPOINT}")
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    params, cfg = load_checkpoint(args.checkpoint)
    prop = _prop_from_checkpoint(cfg, args.prop_mode)
    report = _evaluate(params, dataset, prop, args.setting, args.graph_scope)
    text = report.to_json()
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(text + "\n")
    print(text)
    return 0


def cmd_ablate(args) -> int:
    rc = resolve_config(args, MODEL_SECTIONS)
    cells = parse_cells(args.cells)
    dataset = load_dataset(args.data)
    if any(mode == "fixed_hop" for _, mode in cells) and dataset.distances is None:
        raise CliError(f"fixed_hop cells need distances.bin in {args.data}")
    out = _prepare_out(args.out)
    rc.paths = {"data": str(args.data), "out": str(args.out)}
    rc.flags = {"cells": [f"{e}/{m}" for e, m in cells]}
    rc.write(out / RESOLVED, MODEL_SECTIONS)

    rows = []
    for sampling, mode in cells:
        cell = replace(
            rc,
            train=replace(rc.train, episodic=sampling == "episodic"),
            propagation=replace(rc.propagation, mode=mode),
        )
        cell_dir = out / f"{sampling}_{mode}"
        cell_dir.mkdir(exist_ok=True)
        cell.write(cell_dir / RESOLVED, MODEL_SECTIONS)
        params, _ = _train_and_save(dataset, cell, cell_dir)
        report = evaluate_gzsl(params, dataset, cell.propagation)
        (cell_dir / "report.json").write_text(report.to_json() + "\n")
        rows.append({"sampling": sampling, "propagation": mode, "S": report.acc_seen, "U": report.acc_unseen, "H": report.harmonic})
        log.info("cell %s/%s: %s", sampling, mode, report.summary())

    (out / "ablation.json").write_text(json.dumps(rows, indent=1) + "\n")
    print(format_table(rows))
    return 0


def parse_cells(spec):
    if not spec:
        return list(ABLATION_CELLS)
    cells = []
    for item in spec.split(","):
        try:
            sampling, mode = item.strip().split("/")
        except ValueError:
            raise CliError(f"cell {item!r} must look like episodic/learned") from None
        if (sampling, mode) not in ABLATION_CELLS:
            raise CliError(f"unknown cell {item!r}; choose from {[f'{e}/{m}' for e, m in ABLATION_CELLS]}")
        cells.append((sampling, mode))
    return cells


def format_table(rows) -> str:
    lines = [f"{'sampling':<10} {'propagation':<11} {'S':>6} {'U':>6} {'H':>6}"]
    for r in rows:
        lines.append(f"{r['sampling']:<10} {r['propagation']:<11} {r['S']:6.1f} {r['U']:6.1f} {r['H']:6.1f}")
    return "\n".join(lines)


def cmd_synth(args) -> int:
    rc = resolve_config(args, ("synthetic",))
    rc.synthetic.validate()
    dataset = generate_synthetic(rc.synthetic)
    out = Path(args.out)
    save_dataset(dataset, out)
    rc.paths = {"out": str(out)}
    rc.write(out / RESOLVED, ("synthetic",))
    print(f"wrote {dataset.c} classes, {dataset.m} images to {out}")
    return 0


def cmd_dump_embeddings(args) -> int:
    dataset = load_dataset(args.data)
    params, cfg = load_checkpoint(args.checkpoint)
    prop = _prop_from_checkpoint(cfg, args.prop_mode)
    ids = {"all": dataset.seen + dataset.unseen, "seen": dataset.seen, "unseen": dataset.unseen}[args.scope]
    if not ids:
        raise CliError(f"no {args.scope} classes in {args.data}")
    S = dataset.class_attributes(ids)
    dist = dataset.class_distances(ids) if prop.mode == "fixed_hop" else None
    if prop.mode == "fixed_hop" and dist is None:
        raise CliError("fixed_hop propagation needs distances.bin")
    feats = class_features(params, S, prop, dist)
    seen = set(dataset.seen)

    out = _prepare_out(args.out)
    with open(out / "embeddings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "split"] + [f"v{j}" for j in range(feats.shape[1])])
        for cid, row in zip(ids, feats):
            w.writerow([cid, "seen" if cid in seen else "unseen"] + [repr(float(v)) for v in row])

    n = len(ids)
    if prop.mode == "learned":
        adjacency = class_graph(params, S, prop).adjacency
    elif prop.mode == "fixed_hop":
        adjacency = np.ones((n, n), dtype=bool)
    else:
        adjacency = np.eye(n, dtype=bool)
    with open(out / "edges.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "target"])
        ys, zs = np.nonzero(adjacency)
        for y, z in zip(ys.tolist(), zs.tolist()):
            w.writerow([ids[y], ids[z]])
    print(f"wrote {n} embeddings and {int(adjacency.sum())} edges to {out}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage problems are validation errors, not argparse's default exit 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="apnet", description="Attribute propagation for zero-shot learning.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="run directory")
    add_config_flags(t, MODEL_SECTIONS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint, print the report as JSON")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--setting", choices=("zsl", "gzsl"), default="gzsl")
    e.add_argument("--graph-scope", choices=("unseen", "all"), default="unseen", help="ZSL graph node set")
    e.add_argument("--prop-mode", choices=MODES, default=None, help="override the checkpoint's mode")
    e.add_argument("--report", help="also write the JSON report here")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate the sampling x propagation grid")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--cells", help="comma list such as episodic/learned,minibatch/none (default: all six)")
    add_config_flags(a, MODEL_SECTIONS)
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    add_config_flags(s, ("synthetic",))
    s.set_defaults(func=cmd_synth)

    d = sub.add_parser("dump-embeddings", help="write propagated class vectors and the graph edges as CSV")
    d.add_argument("--data", required=True)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--scope", choices=("all", "seen", "unseen"), default="all")
    d.add_argument("--prop-mode", choices=MODES, default=None)
    d.set_defaults(func=cmd_dump_embeddings)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help or a usage error
        return e.code if isinstance(e.code, int) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
