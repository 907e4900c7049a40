"""Command-line entry point.

Exit codes: 0 success, 1 validation/config/usage error, 2 numeric failure.
Set ``GKEDM_LOG`` (e.g. ``INFO``, ``DEBUG``) for log output on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import report as R
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigFileError, empty_config, load_config
from .datasets import (
    DatasetParseError, atomic_write_text, load_dataset, multilabel_sbm_generate, save_dataset, sbm_generate,
)
from .distill import DistillConfig
from .graph import GraphValidationError, NumericError
from .layers import ConfigError, parse_arch
from .pipeline import (
    DivergenceError, TrainConfig, alpha_sweep, build_architecture, distill_student, enhance_with_gkedm, evaluate,
    pretrain_gcn, student_architecture, sweep_csv,
)
from .tensor import ContractError, DimensionError

log = logging.getLogger("gkedm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

_TRAIN_FLAGS = {
    "epochs": ("--epochs", int),
    "learning_rate": ("--lr", float),
    "backbone_lr_scale": ("--backbone-lr-scale", float),
    "optimizer": ("--optimizer", str),
    "weight_decay": ("--weight-decay", float),
    "seed": ("--seed", int),
    "early_stop_patience": ("--patience", int),
}
_DISTILL_FLAGS = {
    "mode": ("--mode", str),
    "alpha": ("--alpha", float),
    "relation_set": ("--relations", str),
    "kd_temperature": ("--temperature", float),
    "kd_soft_weight": ("--kd-soft-weight", float),
    "kd_hard_weight": ("--kd-hard-weight", float),
    "fitnet_weight": ("--fitnet-weight", float),
    "lsp_weight": ("--lsp-weight", float),
    "lsp_kernel": ("--lsp-kernel", str),
    "lsp_sigma": ("--lsp-sigma", float),
}


def _add_common(p: argparse.ArgumentParser, data_required: bool = True) -> None:
    p.add_argument("--config", help="YAML experiment config; flags override it")
    p.add_argument("--data", required=False, help="dataset JSON-lines file")
    p.set_defaults(_data_required=data_required)


def _add_train(p: argparse.ArgumentParser) -> None:
    for flag, typ in _TRAIN_FLAGS.values():
        p.add_argument(flag, type=typ, default=None)


def _add_outputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--report", help="per-epoch CSV log")
    p.add_argument("--json", dest="json_out", help="full JSON report")
    p.add_argument("--timing", action="store_true", help="include wall time in the JSON report")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gkedm", description="GKEDM enhancement and attention distillation on node-classification graphs")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="generate a synthetic SBM dataset")
    g.add_argument("--blocks", type=int, default=4)
    g.add_argument("--nodes-per-block", type=int, default=50)
    g.add_argument("--p-in", type=float, default=0.15)
    g.add_argument("--p-out", type=float, default=0.03)
    g.add_argument("--feature-dim", type=int, default=16)
    g.add_argument("--noise", type=float, default=2.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--multilabel", action="store_true")
    g.add_argument("--n-labels", type=int, default=5)
    g.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", help="stage 1: train a conv backbone")
    _add_common(p)
    p.add_argument("--arch", help="kind:w1,w2,... e.g. gcn:64,64,64")
    p.add_argument("--out", required=True, help="checkpoint directory")
    _add_train(p)
    _add_outputs(p)

    e = sub.add_parser("enhance", help="stage 2: replace the last conv layer with the attention layer")
    _add_common(e, data_required=False)
    e.add_argument("--ckpt", required=True, help="pretrained checkpoint")
    e.add_argument("--m", type=int, default=None, help="PE width")
    e.add_argument("--heads", type=int, default=None)
    e.add_argument("--pe-scale", choices=("rms", "unit"), default=None)
    e.add_argument("--reuse-head", action="store_true", default=None)
    e.add_argument("--out", required=True)
    _add_train(e)
    _add_outputs(e)

    d = sub.add_parser("distill", help="train a student from an enhanced teacher")
    _add_common(d, data_required=False)
    d.add_argument("--teacher", required=True)
    d.add_argument("--student-arch", required=True)
    for flag, typ in _DISTILL_FLAGS.values():
        d.add_argument(flag, type=typ, default=None)
    d.add_argument("--out", help="student checkpoint directory")
    _add_train(d)
    _add_outputs(d)

    v = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(v, data_required=False)
    v.add_argument("--ckpt", required=True)
    v.add_argument("--split", choices=("train", "val", "test"), default="test")
    v.add_argument("--out", help="write the metric as JSON")

    s = sub.add_parser("alpha-sweep", help="distillation improvement as a function of alpha")
    _add_common(s, data_required=False)
    s.add_argument("--teacher", required=True)
    s.add_argument("--student-arch", required=True)
    s.add_argument("--alphas", default="0.01,0.1,1.0")
    s.add_argument("--seeds", default="0,1,2,3,4")
    s.add_argument("--relations", default=None)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True, help="sweep CSV")
    _add_train(s)

    r = sub.add_parser("report", help="merge JSON reports into a summary table")
    r.add_argument("inputs", nargs="+", help="JSON reports written with --json")
    r.add_argument("--out", required=True)
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _effective(args) -> dict:
    cfg = load_config(args.config) if getattr(args, "config", None) else empty_config()
    train = dict(cfg["train"])
    for field, (flag, _) in _TRAIN_FLAGS.items():
        val = getattr(args, flag.lstrip("-").replace("-", "_"), None)
        if val is not None:
            train[field] = val
    cfg["train"] = train
    distill = dict(cfg["distill"])
    for field, (flag, _) in _DISTILL_FLAGS.items():
        val = getattr(args, flag.lstrip("-").replace("-", "_"), None)
        if val is not None:
            distill[field] = tuple(x.strip() for x in val.split(",") if x.strip()) if field == "relation_set" else val
    cfg["distill"] = distill
    return cfg


def _dataset(args, cfg: dict, fallback: str | None = None):
    path = getattr(args, "data", None) or cfg["data"].get("path") or fallback
    if path:
        return load_dataset(path), str(path)
    gen = cfg["data"]["generator"]
    if gen:
        gen = dict(gen)
        multilabel = gen.pop("multilabel", False)
        n_labels = gen.pop("n_labels", 5)
        defaults = dict(blocks=4, nodes_per_block=50, p_in=0.15, p_out=0.03, feature_dim=16, noise_sigma=2.0, seed=0)
        defaults.update(gen)
        if multilabel:
            return multilabel_sbm_generate(**defaults, n_labels=n_labels), None
        return sbm_generate(**defaults), None
    raise ConfigError("no dataset: pass --data or set data.path / data.generator in the config")


def _write_outputs(args, rep, effective: dict) -> None:
    rep.config = effective
    if getattr(args, "report", None):
        atomic_write_text(args.report, R.epoch_csv(rep))
    if getattr(args, "json_out", None):
        atomic_write_text(args.json_out, R.report_json(rep, include_timing=args.timing))


def _echo(cfg: dict, tcfg: TrainConfig, dcfg: DistillConfig | None = None, **extra) -> dict:
    """Effective settings after defaults, config file and flags have been merged."""
    out = {**cfg, "train": tcfg.to_dict(), **extra}
    out["distill"] = dcfg.to_dict() if dcfg is not None else {}
    out["data"] = {**cfg["data"], "generator": dict(cfg["data"]["generator"])}
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> None:
    kw = dict(blocks=args.blocks, nodes_per_block=args.nodes_per_block, p_in=args.p_in, p_out=args.p_out,
              feature_dim=args.feature_dim, noise_sigma=args.noise, seed=args.seed)
    ds = multilabel_sbm_generate(**kw, n_labels=args.n_labels) if args.multilabel else sbm_generate(**kw)
    save_dataset(ds, args.out)
    log.info("wrote %s (%d nodes, %d edges)", args.out, ds.n_nodes, ds.graph.n_edges)


def cmd_pretrain(args) -> None:
    cfg = _effective(args)
    ds, data_path = _dataset(args, cfg)
    arch_text = args.arch or cfg["model"].get("arch")
    if not arch_text:
        raise ConfigError("no architecture: pass --arch or set model.arch")
    kind, widths = parse_arch(arch_text)
    arch = build_architecture(ds, kind, widths, head_hidden=cfg["model"].get("head_hidden"),
                              pe_scale=cfg["model"].get("pe_scale", "rms"))
    tcfg = TrainConfig(**cfg["train"])
    model, rep = pretrain_gcn(ds, arch, tcfg)
    save_checkpoint(model, args.out, {"data": data_path, "test_metric": rep.test_metric})
    _write_outputs(args, rep, _echo(cfg, tcfg, command="pretrain", arch=arch_text, data=data_path))
    print(f"pretrain test_metric={rep.test_metric!r} params={rep.param_count}")


def cmd_enhance(args) -> None:
    cfg = _effective(args)
    pretrained, manifest = load_checkpoint(args.ckpt)
    ds, data_path = _dataset(args, cfg, manifest["extra"].get("data"))
    m = args.m or cfg["model"].get("m", 8)
    heads = args.heads or cfg["model"].get("n_heads", 4)
    pe_scale = args.pe_scale or cfg["model"].get("pe_scale")
    if pe_scale:
        pretrained.arch = replace(pretrained.arch, pe_scale=pe_scale)
    reuse = args.reuse_head if args.reuse_head is not None else cfg["model"].get("reuse_head", False)
    tcfg = TrainConfig(**cfg["train"])
    model, rep = enhance_with_gkedm(pretrained, ds, m, heads, tcfg, reuse_head=reuse)
    base = manifest["extra"].get("test_metric")
    if base is not None:
        rep.baseline_metric = base
    save_checkpoint(model, args.out, {"data": data_path, "test_metric": rep.test_metric})
    _write_outputs(args, rep, _echo(cfg, tcfg, command="enhance", m=m, n_heads=heads, data=data_path))
    print(f"enhance test_metric={rep.test_metric!r} params={rep.param_count}")


def cmd_distill(args) -> None:
    cfg = _effective(args)
    teacher, manifest = load_checkpoint(args.teacher)
    ds, data_path = _dataset(args, cfg, manifest["extra"].get("data"))
    kind, widths = parse_arch(args.student_arch)
    sarch = student_architecture(ds, kind, widths, teacher)
    dcfg = DistillConfig(**cfg["distill"])
    tcfg = TrainConfig(**cfg["train"])
    student, rep = distill_student(teacher, sarch, ds, dcfg, tcfg)
    if args.out:
        save_checkpoint(student, args.out, {"data": data_path, "test_metric": rep.test_metric})
    _write_outputs(args, rep, _echo(cfg, tcfg, dcfg, command="distill", student_arch=args.student_arch, data=data_path))
    print(f"distill mode={dcfg.mode} test_metric={rep.test_metric!r} params={rep.param_count}")


def cmd_eval(args) -> None:
    cfg = _effective(args)
    model, manifest = load_checkpoint(args.ckpt)
    ds, _ = _dataset(args, cfg, manifest["extra"].get("data"))
    metric = evaluate(model, ds, args.split)
    if args.out:
        atomic_write_text(args.out, json.dumps({"split": args.split, "metric": metric}, sort_keys=True) + "\n")
    print(f"{args.split} metric={metric!r}")


def cmd_alpha_sweep(args) -> None:
    cfg = _effective(args)
    teacher, manifest = load_checkpoint(args.teacher)
    ds, _ = _dataset(args, cfg, manifest["extra"].get("data"))
    kind, widths = parse_arch(args.student_arch)
    sarch = student_architecture(ds, kind, widths, teacher)
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError("--alphas and --seeds take comma-separated numbers") from None
    dist = dict(cfg["distill"])
    if args.relations:
        dist["relation_set"] = tuple(x.strip() for x in args.relations.split(","))
    rows = alpha_sweep(teacher, sarch, ds, alphas, TrainConfig(**cfg["train"]), DistillConfig(**dist), seeds, args.workers)
    atomic_write_text(args.out, sweep_csv(rows))
    for r in rows:
        print(f"alpha={r.alpha!r} improvement={r.improvement!r}")


def cmd_report(args) -> None:
    reports = [R.load_report_json(p) for p in args.inputs]
    R.report_emit(reports, args.out, args.format)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "enhance": cmd_enhance,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "alpha-sweep": cmd_alpha_sweep,
    "report": cmd_report,
}

_VALIDATION = (UsageError, ConfigError, ConfigFileError, ContractError, DimensionError, DatasetParseError,
               GraphValidationError, CheckpointError, FileNotFoundError, IsADirectoryError, PermissionError, ValueError)
_NUMERIC = (DivergenceError, NumericError, FloatingPointError, ArithmeticError)


def run(argv=None) -> int:
    level = os.environ.get("GKEDM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except _NUMERIC as exc:
        print(f"gkedm: numeric failure: {exc}", file=sys.stderr)
        return 2
    except _VALIDATION as exc:
        print(f"gkedm: {exc}" if not isinstance(exc, UsageError) else str(exc), file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
