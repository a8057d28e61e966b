"""Dataset ingestion and MWE localization.

Rows come from delimited task files (comma or tab, header required). The
MWE column holds the lemma; the occurrence inside the target sentence is
found with an inflection-tolerant word-window match so that downstream
views can mark or mask the exact characters.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

# max characters a sentence word may exceed its lemma word by
MAX_SUFFIX_LEN = 4


class CorpusError(ValueError):
    pass


class MissingColumn(CorpusError):
    pass


class MalformedRow(CorpusError):
    pass


class EmptyTarget(CorpusError):
    pass


class InvalidMwe(CorpusError):
    pass


class UnknownLabel(CorpusError):
    pass


class MweNotFound(LookupError):
    pass


class Label(enum.IntEnum):
    """Class index convention shared with the classifier head."""

    NON_IDIOMATIC = 0
    IDIOMATIC = 1


class Setting(str, enum.Enum):
    ZERO_SHOT = "zero_shot"
    ONE_SHOT = "one_shot"

    @classmethod
    def parse(cls, value: str) -> "Setting":
        key = value.strip().lower().replace("-", "").replace("_", "").replace(" ", "")
        if key in ("zeroshot", "zero"):
            return cls.ZERO_SHOT
        if key in ("oneshot", "one"):
            return cls.ONE_SHOT
        raise ValueError(f"unknown setting {value!r}")


class FormMode(str, enum.Enum):
    INFLECTIONAL = "inflectional"
    ORIGINAL = "original"


KNOWN_LANGUAGES = ("EN", "PT", "GL")


@dataclass(frozen=True)
class MweSpan:
    char_start: int
    char_end: int
    surface: str


@dataclass(frozen=True)
class Instance:
    id: str
    language: str
    mwe_lemma: str
    previous: str
    target: str
    next: str
    label: Label | None  # None for unlabeled (test) rows
    setting: Setting = Setting.ZERO_SHOT

    def __post_init__(self):
        if not " ".join(self.target.split()):
            raise EmptyTarget(f"row {self.id!r}: empty target sentence")
        if len(self.mwe_lemma.split()) < 2:
            raise InvalidMwe(f"row {self.id!r}: MWE {self.mwe_lemma!r} has fewer than 2 words")

    def locate(self) -> MweSpan | None:
        try:
            return localize_mwe(self.target, self.mwe_lemma)
        except MweNotFound:
            return None


@dataclass
class ColumnMapping:
    """Maps logical fields to header names in a data file.

    ``label_values`` maps raw cell values to labels; the task files do not
    fix a polarity so it must be given explicitly whenever labels are read.
    """

    id: str = "ID"
    language: str = "Language"
    mwe: str = "MWE"
    previous: str = "Previous"
    target: str = "Target"
    next: str = "Next"
    label: str | None = "Label"
    setting: str | None = "Setting"
    label_optional: bool = True
    setting_optional: bool = True
    default_setting: Setting = Setting.ZERO_SHOT
    label_values: dict[str, Label] = field(
        default_factory=lambda: {"1": Label.IDIOMATIC, "0": Label.NON_IDIOMATIC}
    )

    @classmethod
    def from_dict(cls, d: Mapping) -> "ColumnMapping":
        d = dict(d)
        if "label_values" in d:
            d["label_values"] = {
                str(k): _parse_label_name(v) for k, v in d["label_values"].items()
            }
        if "default_setting" in d:
            d["default_setting"] = Setting.parse(d["default_setting"])
        return cls(**d)

    def raw_label(self, label: Label) -> str:
        for raw, lab in self.label_values.items():
            if lab == label:
                return raw
        raise UnknownLabel(f"no raw value mapped to {label.name}")


def _parse_label_name(v) -> Label:
    if isinstance(v, Label):
        return v
    key = str(v).strip().lower().replace("-", "_")
    if key in ("idiomatic", "1"):
        return Label.IDIOMATIC
    if key in ("non_idiomatic", "nonidiomatic", "literal", "0"):
        return Label.NON_IDIOMATIC
    raise UnknownLabel(f"cannot interpret label name {v!r}")


def sniff_delimiter(header_line: str) -> str:
    return "\t" if header_line.count("\t") > header_line.count(",") else ","


def parse_dataset(source: IO[bytes] | IO[str] | bytes | str, schema: ColumnMapping | None = None) -> list[Instance]:
    """Read a delimited table into :class:`Instance` objects, in file order.

    ``source`` may be a binary or text stream, raw bytes, or a decoded string.
    Empty previous/next cells are kept as empty strings. Rows whose MWE cannot
    be localized in the target are kept; they are only logged here.
    """
    schema = schema or ColumnMapping()
    text = _read_text(source)
    first_line = text.split("\n", 1)[0]
    reader = csv.reader(io.StringIO(text), delimiter=sniff_delimiter(first_line))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MalformedRow("missing header row") from None
    col = {name: i for i, name in enumerate(header)}

    required = [schema.id, schema.language, schema.mwe, schema.previous, schema.target, schema.next]
    for name in required:
        if name not in col:
            raise MissingColumn(f"column {name!r} not in header {header}")
    label_col = _optional_column(col, schema.label, schema.label_optional, "label")
    setting_col = _optional_column(col, schema.setting, schema.setting_optional, "setting")

    out: list[Instance] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise MalformedRow(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        rid = row[col[schema.id]].strip()
        if not row[col[schema.target]].strip():
            raise EmptyTarget(f"row {rid!r} (line {lineno}): empty target sentence")
        label = None
        if label_col is not None:
            raw = row[label_col].strip()
            if raw not in schema.label_values:
                raise UnknownLabel(f"row {rid!r}: label value {raw!r} not in label_values")
            label = schema.label_values[raw]
        setting = Setting.parse(row[setting_col]) if setting_col is not None else schema.default_setting
        inst = Instance(
            id=rid,
            language=row[col[schema.language]].strip().upper(),
            mwe_lemma=" ".join(row[col[schema.mwe]].split()),
            previous=row[col[schema.previous]].strip(),
            target=row[col[schema.target]].strip(),
            next=row[col[schema.next]].strip(),
            label=label,
            setting=setting,
        )
        if inst.locate() is None:
            logger.warning("row %s: MWE %r not found in target; flagged", rid, inst.mwe_lemma)
        out.append(inst)
    return out


def load_dataset(path, schema: ColumnMapping | None = None) -> list[Instance]:
    with open(path, "rb") as fh:
        return parse_dataset(fh, schema)


def _read_text(source) -> str:
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, str):
        return source.lstrip("﻿")
    else:
        data = source.read()
        if isinstance(data, str):
            return data.lstrip("﻿")
    return data.decode("utf-8-sig")


def _optional_column(col, name, optional, what):
    if name is None:
        return None
    if name in col:
        return col[name]
    if optional:
        return None
    raise MissingColumn(f"{what} column {name!r} not in header")


# --- localization -----------------------------------------------------------

def _words(text: str) -> list[tuple[int, int]]:
    """Whitespace-delimited words with boundary punctuation stripped.

    Returns (start, end) offsets into ``text``; words made only of
    punctuation are dropped.
    """
    spans = []
    i, n = 0, len(text)
    while i < n:
        while i < n and text[i].isspace():
            i += 1
        j = i
        while j < n and not text[j].isspace():
            j += 1
        s, e = i, j
        while s < e and not text[s].isalnum():
            s += 1
        while e > s and not text[e - 1].isalnum():
            e -= 1
        if s < e:
            spans.append((s, e))
        i = j
    return spans


def _norm(word: str) -> str:
    return word.casefold()


def _prefix_match(lemma_word: str, word: str) -> bool:
    return word.startswith(lemma_word) and len(word) - len(lemma_word) <= MAX_SUFFIX_LEN


def localize_mwe(target: str, mwe_lemma: str) -> MweSpan:
    """Find the leftmost occurrence of ``mwe_lemma`` in ``target``.

    A verbatim (case-insensitive, word-aligned) occurrence is preferred.
    Otherwise each lemma word must be a prefix of the corresponding
    sentence word, at most ``MAX_SUFFIX_LEN`` characters shorter, over a run
    of consecutive words.
    """
    lemma = [_norm(w) for w in mwe_lemma.split()]
    if len(lemma) < 2:
        raise InvalidMwe(f"MWE {mwe_lemma!r} has fewer than 2 words")
    # lemma words carrying punctuation (e.g. "mother-in-law,") compare stripped
    lemma = [w.strip() for w in lemma]
    spans = _words(target)
    words = [_norm(target[s:e]) for s, e in spans]
    n = len(lemma)
    for match in (str.__eq__, _prefix_match):
        for i in range(len(words) - n + 1):
            if all(match(lemma[k], words[i + k]) for k in range(n)):
                start, end = spans[i][0], spans[i + n - 1][1]
                return MweSpan(start, end, target[start:end])
    raise MweNotFound(f"{mwe_lemma!r} not found in {target!r}")


def surface_form(instance: Instance, mode: FormMode) -> str:
    """The MWE string used for repeated tails and the MWE-only view."""
    if mode == FormMode.ORIGINAL:
        return instance.mwe_lemma
    return localize_mwe(instance.target, instance.mwe_lemma).surface


def resolve_surface(instance: Instance, mode: FormMode) -> str:
    """Like :func:`surface_form` but falls back to the lemma when unlocalizable."""
    try:
        return surface_form(instance, mode)
    except MweNotFound:
        logger.warning("instance %s: falling back to original MWE form", instance.id)
        return instance.mwe_lemma


def languages_in(instances: Iterable[Instance]) -> list[str]:
    seen = {i.language for i in instances}
    ordered = [lang for lang in KNOWN_LANGUAGES if lang in seen]
    return ordered + sorted(seen - set(KNOWN_LANGUAGES))


def label_counts(instances: Sequence[Instance]) -> dict[Label, int]:
    counts = {Label.NON_IDIOMATIC: 0, Label.IDIOMATIC: 0}
    for inst in instances:
        if inst.label is not None:
            counts[inst.label] += 1
    return counts
