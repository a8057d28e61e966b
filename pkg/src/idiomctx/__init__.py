"""Idiomaticity detection for multi-word expressions using contextual views."""

__version__ = "0.1.0"

from .chunking import TextChunk, Variant, VariantConfig, ViewKind, build_views  # noqa: E402
from .corpus import ColumnMapping, FormMode, Instance, Label, Setting, localize_mwe, parse_dataset  # noqa: E402
from .corpus import load_dataset  # noqa: E402
from .model import IdiomaticityModel, ModelConfig  # noqa: E402
from .evaluation import EvalReport, build_report, compare_runs, macro_f1  # noqa: E402

__all__ = [
    "ColumnMapping", "EvalReport", "FormMode", "Instance", "Label", "Setting", "TextChunk",
    "Variant", "VariantConfig", "ViewKind", "IdiomaticityModel", "ModelConfig", "build_report", "build_views",
    "compare_runs", "load_dataset", "localize_mwe", "macro_f1", "parse_dataset",
]
