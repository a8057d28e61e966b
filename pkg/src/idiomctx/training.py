"""Seeded fine-tuning runs, checkpoint selection and multi-seed sweeps."""

from __future__ import annotations

import json
import logging
import math
import random
import re
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .chunking import Variant, VariantConfig, ViewKind, build_views
from .corpus import FormMode, Instance, Label, Setting
from .encoding import TokenizerContract, encode_chunk, pad_batch
from .evaluation import EvalReport, Prediction, build_report, macro_f1
from .model import (
    IdiomaticityModel,
    checkpoint_payload,
    loss as ce_loss,
    model_from_payload,
    predict_proba,
    save_checkpoint,
    read_checkpoint,
)

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (42, 360, 2578, 5925, 9463)


class DivergenceDetected(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


class MissingCheckpoint(KeyError):
    pass


@dataclass(frozen=True)
class Selection:
    """Checkpoint-selection protocol: best dev macro-F1, or a fixed epoch."""

    mode: str = "best_dev_f1"
    epoch: int | None = None

    def __post_init__(self):
        if self.mode not in ("best_dev_f1", "fixed_epoch"):
            raise ValueError(f"unknown selection mode {self.mode!r}")
        if self.mode == "fixed_epoch" and (self.epoch is None or self.epoch < 1):
            raise ValueError("fixed_epoch selection needs an epoch >= 1")

    @classmethod
    def parse(cls, value) -> "Selection":
        if isinstance(value, Selection):
            return value
        s = str(value).strip().lower().replace(" ", "")
        if s in ("best_dev_f1", "bestdevf1", "best"):
            return cls()
        m = re.fullmatch(r"(?:fixed_?epoch)[:(=]?(\d+)\)?", s)
        if m:
            return cls("fixed_epoch", int(m.group(1)))
        raise ValueError(f"cannot parse selection {value!r}")

    def __str__(self):
        return self.mode if self.mode == "best_dev_f1" else f"fixed_epoch:{self.epoch}"


BEST_DEV_F1 = Selection()


def FixedEpoch(k: int) -> Selection:
    return Selection("fixed_epoch", k)


@dataclass
class TrainConfig:
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    epochs: int = 10
    lr: float = 3e-5
    train_batch: int = 16
    eval_batch: int = 8
    max_len: int = 300
    weight_decay: float = 0.01
    constant_epochs: int = 2
    schedule: str = "constant_then_linear"
    variant: Variant = Variant.FULL
    form_mode: FormMode = FormMode.INFLECTIONAL
    setting: Setting = Setting.ZERO_SHOT
    selection: Selection = BEST_DEV_F1
    # keep only the best-so-far and the fixed-epoch checkpoints
    storage_constrained: bool = False
    deterministic: bool = True

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.variant = Variant.parse(self.variant)
        self.form_mode = FormMode(self.form_mode)
        self.setting = Setting.parse(self.setting) if isinstance(self.setting, str) else self.setting
        self.selection = Selection.parse(self.selection)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.selection.mode == "fixed_epoch" and not 1 <= self.selection.epoch <= self.epochs:
            raise ValueError(f"fixed epoch {self.selection.epoch} outside 1..{self.epochs}")
        if self.schedule != "constant_then_linear":
            raise ValueError(f"unknown schedule {self.schedule!r}")

    @property
    def variant_config(self) -> VariantConfig:
        return VariantConfig(self.variant, self.form_mode)


def checkpoint_id(seed: int, epoch: int) -> str:
    return f"seed{seed}-epoch{epoch}"


@dataclass
class RunResult:
    seed: int
    per_epoch_dev_f1: list[float]
    best_epoch: int
    selected_checkpoint_id: str | None = None
    wall_time: float = 0.0
    train_loss: list[float] = field(default_factory=list)
    # ids of persisted checkpoints; None means every epoch was kept
    checkpoints: list[str] | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "per_epoch_dev_f1": self.per_epoch_dev_f1,
            "best_epoch": self.best_epoch,
            "selected_checkpoint_id": self.selected_checkpoint_id,
            "wall_time": self.wall_time,
            "train_loss": self.train_loss,
            "checkpoints": self.checkpoints,
        }


def lr_at(step: int, total_steps: int, steps_per_epoch: int, base_lr: float,
          constant_epochs: int = 2) -> float:
    """Constant for the first ``constant_epochs`` epochs, then linear to zero at ``total_steps``."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    flat = constant_epochs * steps_per_epoch
    if step < flat or total_steps <= flat:
        return base_lr
    return base_lr * ((total_steps - step) / (total_steps - flat))


def best_epoch(scores: Sequence[float]) -> int:
    """1-based epoch of the highest score; the earliest wins ties."""
    return max(range(len(scores)), key=lambda i: (scores[i], -i)) + 1


def select_checkpoint(run: RunResult, mode: Selection | str = BEST_DEV_F1) -> str:
    mode = Selection.parse(mode)
    n = len(run.per_epoch_dev_f1)
    epoch = best_epoch(run.per_epoch_dev_f1) if mode.mode == "best_dev_f1" else mode.epoch
    if not 1 <= epoch <= n:
        raise MissingCheckpoint(f"run seed {run.seed} has {n} epochs, no epoch {epoch}")
    cid = checkpoint_id(run.seed, epoch)
    if run.checkpoints is not None and cid not in run.checkpoints:
        raise MissingCheckpoint(f"checkpoint {cid} was not persisted")
    return cid


def set_seed(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic)


# --- data plumbing ---------------------------------------------------------------

Encoded = dict  # ViewKind -> EncodedInput


def encode_instances(instances: Sequence[Instance], tokenizer: TokenizerContract,
                     variant_config: VariantConfig, max_len: int = 300) -> list[Encoded]:
    vc = VariantConfig(variant_config.variant, variant_config.form_mode, tokenizer.mask_token,
                       variant_config.allow_fallback)
    use_segments = Variant.parse(vc.variant).use_segments
    out = []
    for inst in instances:
        chunks = build_views(inst, vc)
        out.append({c.kind: encode_chunk(c, tokenizer, max_len, use_segments) for c in chunks})
    return out


def collate(encoded: Sequence[Encoded], pad_id: int) -> dict[ViewKind, dict[str, torch.Tensor]]:
    views = list(encoded[0])
    return {v: pad_batch([e[v] for e in encoded], pad_id) for v in views}


@torch.no_grad()
def predict_probs(model: IdiomaticityModel, encoded: Sequence[Encoded], pad_id: int,
                  batch_size: int = 8) -> list[float]:
    was_training = model.training
    model.eval()
    probs: list[float] = []
    for i in range(0, len(encoded), batch_size):
        logits = model(collate(encoded[i:i + batch_size], pad_id))
        probs.extend(predict_proba(logits).tolist())
    model.train(was_training)
    return probs


def to_predictions(instances: Sequence[Instance], probs: Sequence[float]) -> list[Prediction]:
    return [Prediction(i.id, i.language, i.setting, float(p)) for i, p in zip(instances, probs)]


def gold_ints(instances: Sequence[Instance]) -> list[int]:
    if any(i.label is None for i in instances):
        raise ValueError("dataset contains unlabeled rows")
    return [int(i.label) for i in instances]


# --- checkpoint storage ------------------------------------------------------------

class CheckpointStore:
    """Per-epoch checkpoints on disk (``root`` given) or in memory."""

    def __init__(self, root: Path | None = None):
        self.root = Path(root) if root is not None else None
        self._mem: dict[str, dict] = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def path(self, cid: str) -> Path:
        return self.root / f"{cid}.pt"

    def put(self, cid: str, model: IdiomaticityModel, tokenizer_name: str, form_mode: str, extra=None):
        if self.root is None:
            self._mem[cid] = checkpoint_payload(model, tokenizer_name, form_mode, extra)
        else:
            save_checkpoint(self.path(cid), model, tokenizer_name, form_mode, extra)

    def payload(self, cid: str) -> dict:
        if self.root is None:
            if cid not in self._mem:
                raise MissingCheckpoint(cid)
            return self._mem[cid]
        if not self.path(cid).exists():
            raise MissingCheckpoint(cid)
        return read_checkpoint(self.path(cid))

    def load(self, cid: str) -> IdiomaticityModel:
        return model_from_payload(self.payload(cid))

    def discard(self, cid: str) -> None:
        if self.root is None:
            self._mem.pop(cid, None)
        elif self.path(cid).exists():
            self.path(cid).unlink()

    def ids(self) -> list[str]:
        if self.root is None:
            return list(self._mem)
        return sorted(p.stem for p in self.root.glob("*.pt"))


def _param_groups(model: torch.nn.Module, weight_decay: float):
    decay, no_decay = [], []
    for _, p in model.named_parameters():
        if not p.requires_grad:
            continue
        # biases and normalization weights are 1-D
        (no_decay if p.ndim < 2 else decay).append(p)
    return [{"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}]


ModelFactory = Callable[[], IdiomaticityModel]


def train_one(config: TrainConfig, model_factory: ModelFactory, train_data: Sequence[Instance],
              dev_data: Sequence[Instance], seed: int, tokenizer: TokenizerContract,
              store: CheckpointStore | None = None, run_dir: Path | None = None) -> RunResult:
    """Train one seeded instance for ``config.epochs`` epochs, scoring dev after each."""
    if not train_data or not dev_data:
        raise ValueError("train and dev data must be non-empty")
    t0 = time.perf_counter()
    set_seed(seed, config.deterministic)
    model = model_factory()
    if model.variant is not config.variant:
        raise ValueError(f"model built for variant {model.variant.value}, config says {config.variant.value}")
    store = store if store is not None else CheckpointStore(run_dir / "checkpoints" if run_dir else None)
    metrics_path = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = run_dir / "metrics.jsonl"
        metrics_path.write_text("")

    vc = config.variant_config
    train_enc = encode_instances(train_data, tokenizer, vc, config.max_len)
    dev_enc = encode_instances(dev_data, tokenizer, vc, config.max_len)
    train_y = torch.tensor(gold_ints(train_data))
    dev_y = gold_ints(dev_data)

    n = len(train_enc)
    spe = math.ceil(n / config.train_batch)
    total = spe * config.epochs
    opt = torch.optim.AdamW(_param_groups(model, config.weight_decay), lr=config.lr)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: lr_at(min(s, total - 1), total, spe, config.lr, config.constant_epochs) / config.lr
    )
    gen = torch.Generator().manual_seed(seed)

    dev_f1: list[float] = []
    losses: list[float] = []
    kept: list[str] = []
    best_so_far = None
    fixed = config.selection.epoch if config.selection.mode == "fixed_epoch" else None
    step = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        perm = torch.randperm(n, generator=gen).tolist()
        epoch_loss = 0.0
        for b in range(spe):
            idx = perm[b * config.train_batch:(b + 1) * config.train_batch]
            logits = model(collate([train_enc[i] for i in idx], tokenizer.pad_id))
            lval = ce_loss(logits, train_y[idx])
            if not torch.isfinite(lval):
                raise DivergenceDetected(step, lval.item())
            opt.zero_grad()
            lval.backward()
            opt.step()
            sched.step()
            epoch_loss += lval.item() * len(idx)
            step += 1
        losses.append(epoch_loss / n)

        probs = predict_probs(model, dev_enc, tokenizer.pad_id, config.eval_batch)
        preds = [int(p.predicted) for p in to_predictions(dev_data, probs)]
        score = macro_f1(dev_y, preds)
        dev_f1.append(score)

        cid = checkpoint_id(seed, epoch)
        is_best = best_so_far is None or score > dev_f1[best_so_far - 1]
        if not config.storage_constrained or is_best or epoch == fixed:
            store.put(cid, model, tokenizer.name, config.form_mode.value,
                      {"seed": seed, "epoch": epoch, "dev_macro_f1": score})
            kept.append(cid)
        if config.storage_constrained and is_best and best_so_far is not None and best_so_far != fixed:
            old = checkpoint_id(seed, best_so_far)
            store.discard(old)
            kept.remove(old)
        if is_best:
            best_so_far = epoch
        if metrics_path is not None:
            with metrics_path.open("a") as fh:
                fh.write(json.dumps({
                    "seed": seed, "epoch": epoch, "step": step, "train_loss": losses[-1],
                    "dev_macro_f1": score, "lr": sched.get_last_lr()[0],
                }) + "\n")
        logger.info("seed %d epoch %d loss %.4f dev macro-F1 %.4f", seed, epoch, losses[-1], score)

    result = RunResult(seed, dev_f1, best_epoch(dev_f1), None, 0.0, losses, kept)
    result.selected_checkpoint_id = select_checkpoint(result, config.selection)
    result.wall_time = time.perf_counter() - t0
    if run_dir is not None:
        (run_dir / "result.json").write_text(json.dumps(result.to_dict(), indent=2))
    return result


# --- sweeps ----------------------------------------------------------------------

@dataclass
class DataBundle:
    train: list[Instance]
    dev: list[Instance]
    test: list[Instance] = field(default_factory=list)
    # extra rows added to the training set in the one-shot setting
    one_shot_train: list[Instance] = field(default_factory=list)

    def training_set(self, setting: Setting) -> list[Instance]:
        if setting is Setting.ONE_SHOT:
            return self.train + self.one_shot_train
        return list(self.train)


def one_shot_coverage(train: Sequence[Instance], evaluation: Sequence[Instance]) -> dict:
    """Which evaluation MWEs lack training rows, or lack an idiomatic/literal pair."""
    seen: dict[str, set] = {}
    for inst in train:
        seen.setdefault(inst.mwe_lemma.casefold(), set()).add(inst.label)
    mwes = sorted({i.mwe_lemma.casefold() for i in evaluation})
    missing = [m for m in mwes if m not in seen]
    unpaired = [m for m in mwes if m in seen and not {Label.IDIOMATIC, Label.NON_IDIOMATIC} <= seen[m]]
    return {
        "n_eval_mwes": len(mwes),
        "missing": missing,
        "unpaired": unpaired,
        "covered": not missing,
        "paired": not missing and not unpaired,
    }


def aggregate(scores: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation."""
    return statistics.fmean(scores), statistics.pstdev(scores)


@dataclass
class SweepResult:
    runs: list[RunResult]
    reports: list[EvalReport]
    failures: dict[int, str]
    summary: dict

    def reports_for(self, split: str) -> list[EvalReport]:
        return [r for r in self.reports if r.meta.get("split") == split]


def sweep(config: TrainConfig, data: DataBundle, model_factory: ModelFactory,
          tokenizer: TokenizerContract, run_dir: Path | None = None,
          overall: str = "pooled") -> SweepResult:
    """One run per seed; failed seeds are recorded and skipped."""
    train = data.training_set(config.setting)
    runs, reports, failures = [], [], {}
    meta_base = {
        "variant": config.variant.value,
        "selection": str(config.selection),
        "form_mode": config.form_mode.value,
        "setting": config.setting.value,
    }
    for seed in config.seeds:
        seed_dir = run_dir / f"seed_{seed}" if run_dir is not None else None
        store = CheckpointStore(seed_dir / "checkpoints" if seed_dir else None)
        try:
            run = train_one(config, model_factory, train, data.dev, seed, tokenizer, store, seed_dir)
        except Exception as exc:
            logger.exception("seed %d failed", seed)
            failures[seed] = f"{type(exc).__name__}: {exc}"
            continue
        runs.append(run)
        model = store.load(run.selected_checkpoint_id)
        meta = dict(meta_base, seed=seed, checkpoint=run.selected_checkpoint_id)
        for split, rows in (("dev", data.dev), ("test", data.test)):
            if not rows or any(r.label is None for r in rows):
                continue
            probs = predict_probs(model, encode_instances(rows, tokenizer, config.variant_config, config.max_len),
                                  tokenizer.pad_id, config.eval_batch)
            reports.append(build_report(to_predictions(rows, probs), rows, overall, dict(meta, split=split)))

    summary: dict = {"n_runs": len(runs), "failures": failures, **meta_base}
    for split in ("dev", "test"):
        scores = [r.overall for r in reports if r.meta["split"] == split]
        if scores:
            mean, std = aggregate(scores)
            summary[split] = {"mean": mean, "std": std, "scores": scores}
    if config.setting is Setting.ONE_SHOT:
        summary["one_shot_coverage"] = {
            split: one_shot_coverage(train, rows) for split, rows in (("dev", data.dev), ("test", data.test)) if rows
        }
        for split, cov in summary["one_shot_coverage"].items():
            if not cov["paired"]:
                logger.warning("one-shot %s set: %d MWEs missing, %d unpaired in training data",
                               split, len(cov["missing"]), len(cov["unpaired"]))
    return SweepResult(runs, reports, failures, summary)
