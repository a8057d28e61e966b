"""Macro-F1, per-language reports, run comparisons and submission files."""

from __future__ import annotations

import csv
import io
import logging
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import ColumnMapping, Instance, Label, Setting
from .files import atomic_write_bytes

logger = logging.getLogger(__name__)

LANGUAGE_NAMES = {"EN": "English", "PT": "Portuguese", "GL": "Galician"}
THRESHOLD = 0.5


class LengthMismatch(ValueError):
    pass


class UnmatchedId(KeyError):
    pass


class InconsistentGrouping(ValueError):
    pass


def macro_f1(golds: Sequence, preds: Sequence, classes: Sequence = (0, 1)) -> float:
    """Unweighted mean of per-class F1 over both classes.

    A class with no true positives, false positives or false negatives
    (absent from golds and preds) scores 0 and triggers a warning.
    """
    if len(golds) != len(preds):
        raise LengthMismatch(f"{len(golds)} golds vs {len(preds)} predictions")
    if not golds:
        raise LengthMismatch("empty input")
    total = 0.0
    for c in classes:
        tp = fp = fn = 0
        for g, p in zip(golds, preds):
            if p == c and g == c:
                tp += 1
            elif p == c:
                fp += 1
            elif g == c:
                fn += 1
        if tp + fp + fn == 0:
            logger.warning("class %r absent from golds and predictions; F1 taken as 0", c)
            continue
        total += 2 * tp / (2 * tp + fp + fn)
    return total / len(classes)


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    language: str
    setting: Setting
    prob_idiomatic: float

    @property
    def predicted(self) -> Label:
        # ties go to the idiomatic class
        return Label.IDIOMATIC if self.prob_idiomatic >= THRESHOLD else Label.NON_IDIOMATIC


@dataclass
class EvalReport:
    """Scores in percent. ``overall`` is pooled over all rows unless built otherwise."""

    per_language: dict[str, float]
    overall: float
    n_per_language: dict[str, int] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        return list(self.per_language)

    def header(self, sep: str = "\t") -> str:
        names = [LANGUAGE_NAMES.get(c, c) for c in self.columns] + ["Overall"]
        return sep.join(names)

    def format_row(self, sep: str = " ") -> str:
        vals = [self.per_language[c] for c in self.columns] + [self.overall]
        return sep.join(f"{v:.2f}" for v in vals)

    def render(self, label: str = "", sep: str = "\t") -> str:
        head = sep.join(["Model / Lang.", self.header(sep)])
        row = sep.join([label or str(self.meta.get("variant", "")), self.format_row(sep)])
        return head + "\n" + row + "\n"

    def to_dict(self) -> dict:
        return {
            "per_language": self.per_language,
            "overall": self.overall,
            "n_per_language": self.n_per_language,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        return cls(dict(d["per_language"]), d["overall"], dict(d.get("n_per_language", {})), dict(d.get("meta", {})))


def build_report(predictions: Iterable[Prediction], golds: Mapping[str, Label] | Iterable[Instance],
                 overall: str = "pooled", meta: dict | None = None) -> EvalReport:
    """Per-language and overall macro-F1 (percent) for one prediction set.

    ``overall="pooled"`` scores all rows together; ``"language_mean"`` averages
    the per-language scores instead.
    """
    if not isinstance(golds, Mapping):
        golds = {i.id: i.label for i in golds}
    by_lang: dict[str, tuple[list, list]] = defaultdict(lambda: ([], []))
    all_g, all_p = [], []
    for pred in predictions:
        if pred.instance_id not in golds or golds[pred.instance_id] is None:
            raise UnmatchedId(f"no gold label for prediction {pred.instance_id!r}")
        g = int(golds[pred.instance_id])
        p = int(pred.predicted)
        by_lang[pred.language][0].append(g)
        by_lang[pred.language][1].append(p)
        all_g.append(g)
        all_p.append(p)
    if not all_g:
        raise LengthMismatch("no predictions")
    order = [lang for lang in LANGUAGE_NAMES if lang in by_lang] + sorted(set(by_lang) - set(LANGUAGE_NAMES))
    per_lang = {lang: 100 * macro_f1(*by_lang[lang]) for lang in order}
    if overall == "pooled":
        total = 100 * macro_f1(all_g, all_p)
    elif overall == "language_mean":
        total = statistics.fmean(per_lang.values())
    else:
        raise ValueError(f"unknown overall mode {overall!r}")
    meta = dict(meta or {})
    meta.setdefault("overall_mode", overall)
    return EvalReport(per_lang, total, {k: len(v[0]) for k, v in by_lang.items()}, meta)


def render_table(rows: Sequence[tuple[str, EvalReport]], sep: str = "\t") -> str:
    """Several reports as one table with a shared language header."""
    cols: list[str] = []
    for _, rep in rows:
        cols += [c for c in rep.columns if c not in cols]
    names = [LANGUAGE_NAMES.get(c, c) for c in cols] + ["Overall"]
    out = [sep.join(["Model / Lang."] + names)]
    for label, rep in rows:
        cells = [f"{rep.per_language[c]:.2f}" if c in rep.per_language else "-" for c in cols]
        out.append(sep.join([label] + cells + [f"{rep.overall:.2f}"]))
    return "\n".join(out) + "\n"


# --- comparisons ----------------------------------------------------------------

GROUPING_KEYS = ("variant", "form_mode", "selection")


@dataclass
class ComparisonRow:
    setting: str
    group: str
    split: str
    n: int
    mean: float
    std: float
    per_language: dict[str, float]


@dataclass
class Comparison:
    grouping: tuple[str, ...]
    rows: list[ComparisonRow]

    def table(self, sep: str = "\t") -> str:
        langs: list[str] = []
        for r in self.rows:
            langs += [lang for lang in r.per_language if lang not in langs]
        head = ["setting", "group", "split", "n", "mean", "std"] + [f"mean_{lang}" for lang in langs]
        out = [sep.join(head)]
        for r in self.rows:
            cells = [r.setting, r.group, r.split, str(r.n), f"{r.mean:.2f}", f"{r.std:.2f}"]
            cells += [f"{r.per_language[lang]:.2f}" if lang in r.per_language else "" for lang in langs]
            out.append(sep.join(cells))
        return "\n".join(out) + "\n"

    def plot_data(self, sep: str = "\t") -> str:
        out = [sep.join(["setting", "split", "group", "mean", "std"])]
        for r in self.rows:
            out.append(sep.join([r.setting, r.split, r.group, f"{r.mean:.4f}", f"{r.std:.4f}"]))
        return "\n".join(out) + "\n"

    def pivot(self) -> dict[tuple[str, str], dict[str, float]]:
        """(setting, group) -> {split: mean}; e.g. the form-mode 2x2 by split."""
        grid: dict[tuple[str, str], dict[str, float]] = {}
        for r in self.rows:
            grid.setdefault((r.setting, r.group), {})[r.split] = r.mean
        return grid

    def pivot_table(self, sep: str = "\t") -> str:
        grid = self.pivot()
        splits: list[str] = []
        for cells in grid.values():
            splits += [s for s in cells if s not in splits]
        out = [sep.join(["setting", "group"] + splits)]
        for (setting, group), cells in grid.items():
            out.append(sep.join([setting, group] + [f"{cells[s]:.2f}" if s in cells else "" for s in splits]))
        return "\n".join(out) + "\n"


def _group_value(report: EvalReport, key: str) -> str:
    if key not in report.meta:
        raise InconsistentGrouping(f"report lacks metadata field {key!r}")
    return str(report.meta[key])


def compare_runs(reports: Sequence[EvalReport], grouping: str | Sequence[str] = "variant") -> Comparison:
    """Mean and population std of overall scores per (setting, group, split)."""
    keys = (grouping,) if isinstance(grouping, str) else tuple(grouping)
    for k in keys:
        if k not in GROUPING_KEYS:
            raise InconsistentGrouping(f"cannot group by {k!r}; choose from {GROUPING_KEYS}")
    cells: dict[tuple[str, str, str], list[EvalReport]] = {}
    for rep in reports:
        group = "/".join(_group_value(rep, k) for k in keys)
        setting = str(rep.meta.get("setting", ""))
        split = str(rep.meta.get("split", "test"))
        cells.setdefault((setting, group, split), []).append(rep)
    if len({g for _, g, _ in cells}) < 2:
        raise InconsistentGrouping("need at least two groups to compare")
    rows = []
    for (setting, group, split), reps in cells.items():
        seeds = [r.meta.get("seed") for r in reps if r.meta.get("seed") is not None]
        if len(seeds) != len(set(seeds)):
            raise InconsistentGrouping(f"duplicate seeds in group {group!r} ({setting}, {split})")
        scores = [r.overall for r in reps]
        langs: dict[str, list[float]] = defaultdict(list)
        for r in reps:
            for lang, v in r.per_language.items():
                langs[lang].append(v)
        rows.append(ComparisonRow(
            setting, group, split, len(scores), statistics.fmean(scores), statistics.pstdev(scores),
            {lang: statistics.fmean(v) for lang, v in langs.items()},
        ))
    return Comparison(keys, rows)


# --- submission -------------------------------------------------------------------

SUBMISSION_COLUMNS = ("ID", "Language", "Setting", "Label")


def submission_text(predictions: Sequence[Prediction], schema: ColumnMapping, delimiter: str = ",") -> str:
    """Upload-format table; labels written through the schema's raw label values."""
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(SUBMISSION_COLUMNS)
    for p in predictions:
        w.writerow([p.instance_id, p.language, p.setting.value, schema.raw_label(p.predicted)])
    return buf.getvalue()


def write_submission(predictions: Sequence[Prediction], path, schema: ColumnMapping, delimiter: str = ",") -> Path:
    path = Path(path)
    atomic_write_bytes(path, submission_text(predictions, schema, delimiter).encode("utf-8"))
    return path

