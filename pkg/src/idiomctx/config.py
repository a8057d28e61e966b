"""Declarative run configuration (YAML) with field-level validation.

Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .chunking import UnknownVariant, Variant
from .corpus import ColumnMapping, FormMode, Setting, UnknownLabel, load_dataset
from .encoding import load_tokenizer
from .model import ModelConfig
from .training import DataBundle, Selection, TrainConfig

ABLATION_AXES = {"variants": "variant", "form_modes": "form_mode", "selections": "selection"}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass
class RunConfig:
    train_path: Path
    dev_path: Path
    test_path: Path | None
    one_shot_train_path: Path | None
    columns: ColumnMapping
    model: ModelConfig
    tokenizer: str
    training: TrainConfig
    output_dir: Path
    overall: str = "pooled"
    ablation_axis: str | None = None
    ablation_values: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)

    def load_data(self) -> DataBundle:
        return DataBundle(
            train=load_dataset(self.train_path, self.columns),
            dev=load_dataset(self.dev_path, self.columns),
            test=load_dataset(self.test_path, self.columns) if self.test_path else [],
            one_shot_train=load_dataset(self.one_shot_train_path, self.columns) if self.one_shot_train_path else [],
        )

    def snapshot(self) -> str:
        """YAML text that reproduces this run; paths made absolute."""
        raw = copy.deepcopy(self.raw)
        data = raw.setdefault("data", {})
        for key, p in (("train", self.train_path), ("dev", self.dev_path),
                       ("test", self.test_path), ("one_shot_train", self.one_shot_train_path)):
            if p is not None:
                data[key] = str(p)
        raw["output_dir"] = str(self.output_dir)
        return yaml.safe_dump(raw, sort_keys=False, allow_unicode=True)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """``a.b=value`` overrides; the value is parsed as YAML."""
    raw = copy.deepcopy(raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError([f"override {item!r}: expected key=value"])
        key, value = item.split("=", 1)
        node = raw
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError([f"override {key}: {p} is not a mapping"])
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def load_config(path, overrides: list[str] | None = None, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except FileNotFoundError:
        raise ConfigError([f"config file {path} not found"]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([f"config file {path}: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    raw = apply_overrides(raw, overrides or [])
    return parse_config(raw, path.parent, check_paths)


def _section(raw: dict, name: str, problems: list[str]) -> dict:
    val = raw.get(name, {}) or {}
    if not isinstance(val, dict):
        problems.append(f"{name}: must be a mapping")
        return {}
    return val


def _unknown_keys(section: dict, allowed, prefix: str, problems: list[str]):
    for k in section:
        if k not in allowed:
            problems.append(f"{prefix}.{k}: unknown field")


def parse_config(raw: dict, base_dir: Path, check_paths: bool = True) -> RunConfig:
    problems: list[str] = []
    base_dir = Path(base_dir)

    def resolve(key: str, value, required: bool) -> Path | None:
        if value is None:
            if required:
                problems.append(f"data.{key}: required")
            return None
        p = Path(os.path.expandvars(str(value)))
        p = p if p.is_absolute() else (base_dir / p).resolve()
        if check_paths and not p.exists():
            problems.append(f"data.{key}: path {p} does not exist")
        return p

    data = _section(raw, "data", problems)
    _unknown_keys(data, {"train", "dev", "test", "one_shot_train", "columns", "label_values"}, "data", problems)
    train_p = resolve("train", data.get("train"), True)
    dev_p = resolve("dev", data.get("dev"), True)
    test_p = resolve("test", data.get("test"), False)
    one_p = resolve("one_shot_train", data.get("one_shot_train"), False)

    columns = ColumnMapping()
    cols = data.get("columns", {}) or {}
    if "label_values" not in data:
        problems.append("data.label_values: required (map raw label cells to idiomatic / non_idiomatic)")
    else:
        try:
            columns = ColumnMapping.from_dict({**cols, "label_values": data["label_values"]})
        except (TypeError, UnknownLabel, ValueError) as exc:
            problems.append(f"data.columns/label_values: {exc}")
        else:
            if set(columns.label_values.values()) != {0, 1}:
                problems.append("data.label_values: must map to both idiomatic and non_idiomatic")

    enc = _section(raw, "encoder", problems)
    mod = _section(raw, "model", problems)
    model_fields = {f.name for f in fields(ModelConfig)} - {"variant"}
    enc_map = {"name": "encoder"}
    model_kwargs: dict[str, Any] = {}
    for k, v in enc.items():
        if k == "tokenizer":
            continue
        kk = enc_map.get(k, k)
        if kk not in model_fields:
            problems.append(f"encoder.{k}: unknown field")
        else:
            model_kwargs[kk] = v
    for k, v in mod.items():
        if k not in model_fields:
            problems.append(f"model.{k}: unknown field")
        else:
            model_kwargs[k] = v
    variant = raw.get("variant", "Full")
    try:
        variant = Variant.parse(variant).value
    except UnknownVariant as exc:
        problems.append(f"variant: {exc}")
        variant = "Full"
    model_kwargs["variant"] = variant
    model_cfg = ModelConfig(**model_kwargs) if not problems else ModelConfig()
    tokenizer = enc.get("tokenizer") or ("toy:vocab=%d" % model_cfg.vocab_size if model_cfg.encoder == "toy"
                                         else model_cfg.encoder)
    if tokenizer == "toy" or tokenizer.startswith("toy:"):
        tokenizer = load_tokenizer(tokenizer).name  # canonical spelling, as stored in checkpoints

    tr = _section(raw, "training", problems)
    train_fields = {f.name for f in fields(TrainConfig)} - {"variant", "form_mode", "setting", "deterministic"}
    _unknown_keys(tr, train_fields, "training", problems)
    train_kwargs = {k: v for k, v in tr.items() if k in train_fields}
    try:
        train_kwargs["form_mode"] = FormMode(str(raw.get("form_mode", "inflectional")).lower())
    except ValueError:
        problems.append(f"form_mode: expected one of {[m.value for m in FormMode]}")
    try:
        train_kwargs["setting"] = Setting.parse(str(raw.get("setting", "zero_shot")))
    except ValueError as exc:
        problems.append(f"setting: {exc}")
    if "selection" in train_kwargs:
        try:
            train_kwargs["selection"] = Selection.parse(train_kwargs["selection"])
        except ValueError as exc:
            problems.append(f"training.selection: {exc}")
    train_kwargs["deterministic"] = bool(raw.get("deterministic", True))
    train_cfg = None
    if not problems:
        try:
            train_cfg = TrainConfig(variant=variant, **train_kwargs)
        except (ValueError, TypeError) as exc:
            problems.append(f"training: {exc}")

    overall = raw.get("overall", "pooled")
    if overall not in ("pooled", "language_mean"):
        problems.append("overall: expected 'pooled' or 'language_mean'")

    axis, values = None, []
    if "ablation" in raw:
        abl = _section(raw, "ablation", problems)
        _unknown_keys(abl, ABLATION_AXES, "ablation", problems)
        given = [k for k in ABLATION_AXES if k in abl]
        if len(given) != 1:
            problems.append("ablation: give exactly one of " + ", ".join(ABLATION_AXES))
        else:
            key = given[0]
            axis, values = ABLATION_AXES[key], abl[key] or []
            if not isinstance(values, list) or not values:
                problems.append(f"ablation.{key}: must be a non-empty list")
            else:
                parse = {"variant": Variant.parse, "form_mode": lambda v: FormMode(str(v).lower()),
                         "selection": Selection.parse}[axis]
                try:
                    values = [parse(v) for v in values]
                except (ValueError, UnknownVariant) as exc:
                    problems.append(f"ablation.{key}: {exc}")

    for key in raw:
        if key not in {"data", "encoder", "model", "training", "variant", "form_mode", "setting",
                       "deterministic", "output_dir", "overall", "ablation"}:
            problems.append(f"{key}: unknown field")

    out = raw.get("output_dir", "runs/default")
    out_p = Path(os.path.expandvars(str(out)))
    out_p = out_p if out_p.is_absolute() else (base_dir / out_p).resolve()

    if problems:
        raise ConfigError(problems)
    return RunConfig(train_p, dev_p, test_p, one_p, columns, model_cfg, tokenizer, train_cfg,
                     out_p, overall, axis, values, raw)
