"""Experiment config files (YAML) and their validation.

Schema::

    data:                      # either a path or generator parameters
      path: g.jsonl
      generator: {blocks: 4, nodes_per_block: 50, p_in: 0.15, p_out: 0.03,
                  feature_dim: 16, noise_sigma: 2.0, seed: 0,
                  multilabel: false, n_labels: 5}
    model:   {arch: "gcn:64,64,64", n_heads: 4, m: 8, head_hidden: null,
              pe_scale: rms, reuse_head: false}
    train:   {<TrainConfig fields>}
    distill: {<DistillConfig fields>}
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any

import yaml

from .distill import DistillConfig
from .layers import ConfigError
from .pipeline import TrainConfig


class ConfigFileError(ConfigError):
    pass


_GENERATOR = {
    "blocks": int, "nodes_per_block": int, "p_in": float, "p_out": float, "feature_dim": int,
    "noise_sigma": float, "seed": int, "multilabel": bool, "n_labels": int,
}
_MODEL = {"arch": str, "n_heads": int, "m": int, "head_hidden": (int, type(None)), "pe_scale": str, "reuse_head": bool}


def _fields(cls) -> dict[str, Any]:
    hints = {"int": int, "float": float, "str": str, "bool": bool}
    out = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        out[f.name] = hints.get(t, tuple if t.startswith("tuple") else object)
    return out


def _check(section: dict, schema: dict, where: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigFileError(f"{where}: expected a mapping")
    out = {}
    for key, val in section.items():
        if key not in schema:
            raise ConfigFileError(f"{where}.{key}: unknown key")
        want = schema[key]
        if want is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if want is tuple:
            if isinstance(val, str):
                val = [v.strip() for v in val.split(",") if v.strip()]
            if not isinstance(val, (list, tuple)):
                raise ConfigFileError(f"{where}.{key}: expected a list")
            val = tuple(val)
        elif want is not object:
            ok = isinstance(val, want) and not (isinstance(val, bool) and want in (int, float))
            if not ok:
                name = want.__name__ if isinstance(want, type) else "/".join(t.__name__ for t in want)
                raise ConfigFileError(f"{where}.{key}: expected {name}, got {type(val).__name__}")
        out[key] = val
    return out


def validate_config(raw: dict) -> dict:
    """Check structure and types; returns a normalised nested dict."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigFileError("<root>: expected a mapping")
    unknown = set(raw) - {"data", "model", "train", "distill"}
    if unknown:
        raise ConfigFileError(f"{sorted(unknown)[0]}: unknown section")
    out: dict = {}
    data = raw.get("data", {}) or {}
    if not isinstance(data, dict):
        raise ConfigFileError("data: expected a mapping")
    extra = set(data) - {"path", "generator"}
    if extra:
        raise ConfigFileError(f"data.{sorted(extra)[0]}: unknown key")
    if "path" in data and not isinstance(data["path"], str):
        raise ConfigFileError("data.path: expected str")
    out["data"] = {"path": data.get("path"), "generator": _check(data.get("generator", {}) or {}, _GENERATOR, "data.generator")}
    out["model"] = _check(raw.get("model", {}) or {}, _MODEL, "model")
    out["train"] = _check(raw.get("train", {}) or {}, _fields(TrainConfig), "train")
    out["distill"] = _check(raw.get("distill", {}) or {}, _fields(DistillConfig), "distill")
    for name, cls in (("train", TrainConfig), ("distill", DistillConfig)):
        try:
            cls(**out[name])
        except ConfigError as exc:
            raise ConfigFileError(f"{name}: {exc}") from None
    return out


def load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "?"
        raise ConfigFileError(f"{path}: YAML syntax error at {where}") from None
    return validate_config(raw)


def empty_config() -> dict:
    return validate_config({})
