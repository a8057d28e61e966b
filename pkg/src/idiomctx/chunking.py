"""Text-level input views built from one instance, before tokenization."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

from .corpus import (
    FormMode, Instance, MweNotFound, MweSpan, localize_mwe, resolve_surface, surface_form,
)

logger = logging.getLogger(__name__)

DEFAULT_MASK = "<mask>"


class ViewKind(str, enum.Enum):
    PREV_TARGET = "prev_target"  # feature 1
    TARGET_NEXT = "target_next"  # feature 2
    CONTEXT_EXCLUSIVE = "context_exclusive"  # feature 3
    MWE_EXCLUSIVE = "mwe_exclusive"  # feature 4
    TARGET_ONLY = "target_only"  # ablation A
    TRIPLE_CONCAT = "triple_concat"  # ablation B

    @property
    def contextual(self) -> bool:
        """Views whose feature is a projected [CLS]+MWE pair."""
        return self in CONTEXTUAL_VIEWS


CONTEXTUAL_VIEWS = frozenset(
    {ViewKind.PREV_TARGET, ViewKind.TARGET_NEXT, ViewKind.TARGET_ONLY, ViewKind.TRIPLE_CONCAT}
)


class Role(str, enum.Enum):
    """Where a segment came from; drives truncation priority."""

    BEFORE = "before"  # previous sentence, trimmed from its start
    AFTER = "after"  # next sentence, trimmed from its end
    TARGET = "target"
    TAIL = "tail"


class UnknownVariant(ValueError):
    pass


class Variant(str, enum.Enum):
    FULL = "Full"
    A = "A"  # target sentence only
    B = "B"  # prev/target/next in one chunk
    C = "C"  # no segment embeddings
    D = "D"  # no MWE repetition at chunk tails
    E = "E"  # MWE left unmasked in the context-exclusive view
    F = "F"  # no MWE-exclusive view

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, Variant):
            return value
        key = str(value).strip()
        for v in cls:
            if key.lower() == v.value.lower():
                return v
        raise UnknownVariant(f"unknown variant {value!r}; expected one of {[v.value for v in cls]}")

    @property
    def views(self) -> tuple[ViewKind, ...]:
        return VARIANT_VIEWS[self]

    @property
    def use_segments(self) -> bool:
        return self is not Variant.C


VARIANT_VIEWS = {
    Variant.FULL: (ViewKind.PREV_TARGET, ViewKind.TARGET_NEXT, ViewKind.CONTEXT_EXCLUSIVE, ViewKind.MWE_EXCLUSIVE),
    Variant.A: (ViewKind.TARGET_ONLY, ViewKind.CONTEXT_EXCLUSIVE, ViewKind.MWE_EXCLUSIVE),
    Variant.B: (ViewKind.TRIPLE_CONCAT, ViewKind.CONTEXT_EXCLUSIVE, ViewKind.MWE_EXCLUSIVE),
    Variant.F: (ViewKind.PREV_TARGET, ViewKind.TARGET_NEXT, ViewKind.CONTEXT_EXCLUSIVE),
}
for _v in (Variant.C, Variant.D, Variant.E):
    VARIANT_VIEWS[_v] = VARIANT_VIEWS[Variant.FULL]


@dataclass(frozen=True)
class VariantConfig:
    variant: Variant = Variant.FULL
    form_mode: FormMode = FormMode.INFLECTIONAL
    mask_token: str = DEFAULT_MASK
    # when False, unlocalizable MWEs raise instead of degrading
    allow_fallback: bool = True


@dataclass(frozen=True)
class TextChunk:
    kind: ViewKind
    segments: tuple[str, ...]
    roles: tuple[Role, ...]
    mwe_surface: str | None
    # (segment_index, char_start, char_end) for every marked MWE occurrence
    mwe_char_spans: tuple[tuple[int, int, int], ...] = ()
    repeated_tail: bool = False
    # location of the mask placeholder in a context-exclusive chunk
    anchor: tuple[int, int, int] | None = None

    def __post_init__(self):
        if len(self.segments) != len(self.roles):
            raise ValueError("segments and roles differ in length")
        if self.repeated_tail and self.segments[-1] != self.mwe_surface:
            raise ValueError("repeated tail must equal the MWE surface")


def _span_or_none(instance: Instance, allow_fallback: bool) -> MweSpan | None:
    try:
        return localize_mwe(instance.target, instance.mwe_lemma)
    except MweNotFound:
        if not allow_fallback:
            raise
        return None


def _with_context(instance: Instance, kind: ViewKind, before: str, after: str,
                  form_mode: FormMode, repeat_mwe: bool, allow_fallback: bool = True) -> TextChunk:
    span = _span_or_none(instance, allow_fallback)
    if span is not None:
        surface = surface_form_from_span(instance, span, form_mode)
    else:
        surface = resolve_surface(instance, FormMode.ORIGINAL)
    segments, roles, spans = [], [], []
    if before:
        segments.append(before)
        roles.append(Role.BEFORE)
    if span is not None:
        spans.append((len(segments), span.char_start, span.char_end))
    segments.append(instance.target)
    roles.append(Role.TARGET)
    if after:
        segments.append(after)
        roles.append(Role.AFTER)
    if repeat_mwe:
        spans.append((len(segments), 0, len(surface)))
        segments.append(surface)
        roles.append(Role.TAIL)
    return TextChunk(kind, tuple(segments), tuple(roles), surface, tuple(spans), repeat_mwe)


def surface_form_from_span(instance: Instance, span: MweSpan, mode: FormMode) -> str:
    return span.surface if mode == FormMode.INFLECTIONAL else instance.mwe_lemma


def build_prev_target(instance: Instance, form_mode: FormMode = FormMode.INFLECTIONAL,
                      repeat_mwe: bool = True, allow_fallback: bool = True) -> TextChunk:
    return _with_context(instance, ViewKind.PREV_TARGET, instance.previous, "",
                         form_mode, repeat_mwe, allow_fallback)


def build_target_next(instance: Instance, form_mode: FormMode = FormMode.INFLECTIONAL,
                      repeat_mwe: bool = True, allow_fallback: bool = True) -> TextChunk:
    return _with_context(instance, ViewKind.TARGET_NEXT, "", instance.next,
                         form_mode, repeat_mwe, allow_fallback)


def build_target_only(instance: Instance, form_mode: FormMode = FormMode.INFLECTIONAL,
                      repeat_mwe: bool = True, allow_fallback: bool = True) -> TextChunk:
    return _with_context(instance, ViewKind.TARGET_ONLY, "", "", form_mode, repeat_mwe, allow_fallback)


def build_triple_concat(instance: Instance, form_mode: FormMode = FormMode.INFLECTIONAL,
                        repeat_mwe: bool = True, allow_fallback: bool = True) -> TextChunk:
    return _with_context(instance, ViewKind.TRIPLE_CONCAT, instance.previous, instance.next,
                         form_mode, repeat_mwe, allow_fallback)


def build_context_exclusive(instance: Instance, mask_token: str = DEFAULT_MASK) -> TextChunk:
    """Target sentence with the whole MWE span replaced by one mask token.

    Raises MweNotFound: the view has no meaning without a located span.
    """
    span = localize_mwe(instance.target, instance.mwe_lemma)
    t = instance.target
    text = t[:span.char_start] + mask_token + t[span.char_end:]
    anchor = (0, span.char_start, span.char_start + len(mask_token))
    return TextChunk(ViewKind.CONTEXT_EXCLUSIVE, (text,), (Role.TARGET,), span.surface, (), False, anchor)


def build_context_unmasked(instance: Instance, allow_fallback: bool = True) -> TextChunk:
    """Variant E: the context-exclusive slot fed the target with the MWE intact.

    No segment marking, so the feature stays a plain [CLS] vector.
    """
    span = _span_or_none(instance, allow_fallback)
    anchor = (0, span.char_start, span.char_end) if span else None
    surface = span.surface if span else instance.mwe_lemma
    return TextChunk(ViewKind.CONTEXT_EXCLUSIVE, (instance.target,), (Role.TARGET,), surface, (), False, anchor)


def build_mwe_exclusive(instance: Instance, form_mode: FormMode = FormMode.INFLECTIONAL,
                        allow_fallback: bool = True) -> TextChunk:
    if allow_fallback:
        surface = resolve_surface(instance, form_mode)
    else:
        surface = surface_form(instance, form_mode)
    return TextChunk(ViewKind.MWE_EXCLUSIVE, (surface,), (Role.TAIL,), surface, ((0, 0, len(surface)),))


def _context_exclusive_or_fallback(instance: Instance, config: VariantConfig) -> TextChunk:
    try:
        return build_context_exclusive(instance, config.mask_token)
    except MweNotFound:
        if not config.allow_fallback:
            raise
        logger.warning("instance %s: MWE not located, context-exclusive view left unmasked", instance.id)
        return TextChunk(ViewKind.CONTEXT_EXCLUSIVE, (instance.target,), (Role.TARGET,), instance.mwe_lemma)


def build_views(instance: Instance, config: VariantConfig | Variant | str = VariantConfig()) -> list[TextChunk]:
    """All chunks an instance contributes under one ablation variant, in feature order."""
    if not isinstance(config, VariantConfig):
        config = VariantConfig(variant=Variant.parse(config))
    variant = Variant.parse(config.variant)
    fm, fb = config.form_mode, config.allow_fallback
    repeat = variant is not Variant.D
    chunks = []
    for kind in variant.views:
        if kind is ViewKind.PREV_TARGET:
            chunks.append(build_prev_target(instance, fm, repeat, fb))
        elif kind is ViewKind.TARGET_NEXT:
            chunks.append(build_target_next(instance, fm, repeat, fb))
        elif kind is ViewKind.TARGET_ONLY:
            chunks.append(build_target_only(instance, fm, repeat, fb))
        elif kind is ViewKind.TRIPLE_CONCAT:
            chunks.append(build_triple_concat(instance, fm, repeat, fb))
        elif kind is ViewKind.CONTEXT_EXCLUSIVE:
            if variant is Variant.E:
                chunks.append(build_context_unmasked(instance, fb))
            else:
                chunks.append(_context_exclusive_or_fallback(instance, config))
        else:
            chunks.append(build_mwe_exclusive(instance, fm, fb))
    return chunks
