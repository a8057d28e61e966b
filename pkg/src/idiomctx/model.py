"""Four-view idiomaticity classifier over a shared text encoder.

Contextual views (previous+target, target+next, and the ablation chunks)
give ``proj([v_cls; v_mwe])``; the masked-context view gives its raw
[CLS] vector and the MWE-only view the mean of its MWE token states. The
features are concatenated in view order and fed to one linear layer.
Logit 0 is non-idiomatic, logit 1 idiomatic.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass
from typing import Mapping, Protocol

import torch
import torch.nn as nn
import torch.nn.functional as F

from .chunking import ViewKind, Variant
from .encoding import EncodedInput, pad_batch
from .files import atomic_write_bytes

CHECKPOINT_SCHEMA = "idiomctx.checkpoint/v1"


class EmptySequence(ValueError):
    pass


class EmptyMweSpan(ValueError):
    pass


class VariantMismatch(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


class FingerprintMismatch(CheckpointError):
    pass


class EncoderAdapter(Protocol):
    hidden_size: int

    def __call__(self, token_ids: torch.Tensor, attention_mask: torch.Tensor,
                 extra_input_embedding_offset: torch.Tensor | None = None) -> torch.Tensor: ...


class _Block(nn.Module):
    """Post-norm transformer layer with explicit attention (no fused fast path)."""

    def __init__(self, d: int, heads: int, ff: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.ff1 = nn.Linear(d, ff)
        self.ff2 = nn.Linear(ff, d)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_mask):
        B, L, D = x.shape
        q, k, v = self.qkv(x).view(B, L, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(D // self.heads)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        att = self.drop(scores.softmax(-1))
        h = (att @ v).transpose(1, 2).reshape(B, L, D)
        x = self.norm1(x + self.drop(self.out(h)))
        return self.norm2(x + self.drop(self.ff2(F.gelu(self.ff1(x)))))


class ToyEncoder(nn.Module):
    """Small random-init transformer encoder for offline runs and tests."""

    def __init__(self, vocab_size: int = 2048, hidden_size: int = 32, layers: int = 2,
                 heads: int = 2, ff_size: int = 64, max_positions: int = 512, dropout: float = 0.0):
        super().__init__()
        self.hidden_size = hidden_size
        self.tok_emb = nn.Embedding(vocab_size, hidden_size)
        self.pos_emb = nn.Embedding(max_positions, hidden_size)
        self.emb_norm = nn.LayerNorm(hidden_size)
        self.blocks = nn.ModuleList(_Block(hidden_size, heads, ff_size, dropout) for _ in range(layers))

    def forward(self, token_ids, attention_mask, extra_input_embedding_offset=None):
        x = self.tok_emb(token_ids)
        if extra_input_embedding_offset is not None:
            x = x + extra_input_embedding_offset
        pos = torch.arange(token_ids.shape[1], device=token_ids.device)
        x = self.emb_norm(x + self.pos_emb(pos)[None])
        key_mask = attention_mask.bool()
        for blk in self.blocks:
            x = blk(x, key_mask)
        return x


class HFEncoder(nn.Module):
    """Adapter over a ``transformers`` encoder; the offset is added to word embeddings."""

    def __init__(self, model):
        super().__init__()
        self.model = model
        self.hidden_size = model.config.hidden_size

    @classmethod
    def from_pretrained(cls, name: str, cache_dir: str | None = None) -> "HFEncoder":
        from transformers import AutoModel

        cache_dir = cache_dir or os.environ.get("IDIOMCTX_CACHE")
        return cls(AutoModel.from_pretrained(name, cache_dir=cache_dir))

    @classmethod
    def from_config_dict(cls, config: dict) -> "HFEncoder":
        from transformers import AutoConfig, AutoModel

        config = dict(config)
        cfg = AutoConfig.for_model(config.pop("model_type"), **config)
        return cls(AutoModel.from_config(cfg))

    def forward(self, token_ids, attention_mask, extra_input_embedding_offset=None):
        x = self.model.get_input_embeddings()(token_ids)
        if extra_input_embedding_offset is not None:
            x = x + extra_input_embedding_offset
        return self.model(inputs_embeds=x, attention_mask=attention_mask).last_hidden_state


class SegmentEmbeddingTable(nn.Module):
    """Trainable 2-row table added to input embeddings; row 1 marks MWE tokens.

    Zero-initialized, so enabling it changes nothing until it is trained.
    """

    def __init__(self, hidden_size: int, enabled: bool = True):
        super().__init__()
        self.table = nn.Parameter(torch.zeros(2, hidden_size))
        self.enabled = enabled

    def forward(self, segment_ids: torch.Tensor) -> torch.Tensor:
        return F.embedding(segment_ids, self.table)


@dataclass
class ModelConfig:
    encoder: str = "toy"  # "toy" or a pretrained checkpoint id
    vocab_size: int = 2048  # toy encoder only
    hidden_size: int = 32
    layers: int = 2
    heads: int = 2
    ff_size: int = 64
    max_positions: int = 512
    encoder_dropout: float = 0.0
    d_proj: int | None = None  # defaults to the encoder width
    dropout: float = 0.1
    shared_projection: bool = True
    variant: str = "Full"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def build_encoder(cfg: ModelConfig, cache_dir: str | None = None) -> nn.Module:
    if cfg.encoder == "toy":
        return ToyEncoder(cfg.vocab_size, cfg.hidden_size, cfg.layers, cfg.heads,
                          cfg.ff_size, cfg.max_positions, cfg.encoder_dropout)
    return HFEncoder.from_pretrained(cfg.encoder, cache_dir)


def extract_cls(hidden: torch.Tensor) -> torch.Tensor:
    """Row 0 of a [seq_len x d] hidden-state matrix."""
    if hidden.shape[0] == 0:
        raise EmptySequence("empty hidden-state matrix")
    return hidden[0]


def extract_mwe(hidden: torch.Tensor, mwe_indices) -> torch.Tensor:
    """Mean of the hidden rows at the MWE token positions."""
    idx = sorted(mwe_indices)
    if not idx:
        raise EmptyMweSpan("no MWE token positions")
    if idx[-1] >= hidden.shape[0] or idx[0] < 0:
        raise IndexError("MWE index out of range")
    return hidden[idx].mean(0)


def _batched_mwe_mean(hidden: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    m = mask.to(hidden.dtype).unsqueeze(-1)
    # rows without MWE tokens (unlocalized MWE and no tail) pool to zero
    return (hidden * m).sum(1) / m.sum(1).clamp(min=1.0)


def feature_dims(variant: Variant, d_enc: int, d_proj: int) -> list[int]:
    return [d_proj if v.contextual else d_enc for v in variant.views]


class IdiomaticityModel(nn.Module):
    def __init__(self, encoder: nn.Module, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        self.encoder = encoder
        d = encoder.hidden_size
        self.d_enc = d
        self.d_proj = self.config.d_proj or d
        self.variant = Variant.parse(self.config.variant)
        self.seg_table = SegmentEmbeddingTable(d, enabled=self.variant.use_segments)
        if self.config.shared_projection:
            self.proj = nn.Linear(2 * d, self.d_proj)
        else:
            self.proj = nn.ModuleDict({
                v.value: nn.Linear(2 * d, self.d_proj) for v in self.variant.views if v.contextual
            })
        self.dropout = nn.Dropout(self.config.dropout)
        self.classifier = nn.Linear(sum(feature_dims(self.variant, d, self.d_proj)), 2)

    @classmethod
    def from_config(cls, config: ModelConfig, cache_dir: str | None = None) -> "IdiomaticityModel":
        return cls(build_encoder(config, cache_dir), config)

    def _proj(self, view: ViewKind):
        return self.proj if isinstance(self.proj, nn.Linear) else self.proj[view.value]

    def encode(self, batch: Mapping[str, torch.Tensor], use_segments: bool) -> torch.Tensor:
        offset = None
        if use_segments and self.seg_table.enabled:
            offset = self.seg_table(batch["segment_ids"])
        return self.encoder(batch["input_ids"], batch["attention_mask"], offset)

    def view_features(self, view: ViewKind, batch: Mapping[str, torch.Tensor],
                      use_segments: bool = True) -> torch.Tensor:
        hidden = self.encode(batch, use_segments)
        cls_vec = hidden[:, 0]
        if view is ViewKind.CONTEXT_EXCLUSIVE:
            return cls_vec
        mwe_vec = _batched_mwe_mean(hidden, batch["mwe_mask"])
        if view is ViewKind.MWE_EXCLUSIVE:
            return mwe_vec
        return self._proj(view)(torch.cat([cls_vec, mwe_vec], -1))

    def forward(self, batches: Mapping[ViewKind, Mapping[str, torch.Tensor]],
                variant: Variant | str | None = None) -> torch.Tensor:
        variant = self.variant if variant is None else Variant.parse(variant)
        if set(batches) != set(variant.views):
            raise VariantMismatch(
                f"variant {variant.value} needs views {[v.value for v in variant.views]}, "
                f"got {[v.value for v in batches]}"
            )
        dim = sum(feature_dims(variant, self.d_enc, self.d_proj))
        if dim != self.classifier.in_features:
            raise VariantMismatch(
                f"variant {variant.value} gives {dim} features, classifier takes {self.classifier.in_features}"
            )
        feats = [self.view_features(v, batches[v], variant.use_segments) for v in variant.views]
        return self.classifier(self.dropout(torch.cat(feats, -1)))


def view_feature(view: ViewKind, encoded: EncodedInput, model: IdiomaticityModel,
                 pad_id: int = 0) -> torch.Tensor:
    """Feature vector for a single encoded view (no batching)."""
    if encoded.view is not view:
        raise VariantMismatch(f"encoded view {encoded.view.value} != {view.value}")
    if view is not ViewKind.CONTEXT_EXCLUSIVE and not encoded.mwe_indices:
        raise EmptyMweSpan(f"view {view.value} needs MWE positions")
    batch = pad_batch([encoded], pad_id)
    return model.view_features(view, batch, model.variant.use_segments)[0]


def loss(logits: torch.Tensor, label) -> torch.Tensor:
    """Softmax cross-entropy; ``label`` may be an int or a tensor of class indices."""
    if not torch.is_tensor(label):
        label = torch.tensor(label, dtype=torch.long)
    if logits.dim() == 1:
        logits = logits[None]
    if label.dim() == 0:
        label = label.expand(logits.shape[0])
    return F.cross_entropy(logits, label)


def predict_proba(logits: torch.Tensor) -> torch.Tensor:
    """Probability of the idiomatic class."""
    return logits.softmax(-1)[..., 1]


# --- checkpoints -------------------------------------------------------------

def fingerprint(model_config: dict, tokenizer_name: str, form_mode: str) -> str:
    payload = json.dumps(
        {"model": model_config, "tokenizer": tokenizer_name, "form_mode": form_mode},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def checkpoint_payload(model: IdiomaticityModel, tokenizer_name: str, form_mode: str,
                       extra: dict | None = None) -> dict:
    cfg = model.config.to_dict()
    payload = {
        "schema": CHECKPOINT_SCHEMA,
        "fingerprint": fingerprint(cfg, tokenizer_name, form_mode),
        "model_config": cfg,
        "tokenizer": tokenizer_name,
        "form_mode": form_mode,
        "variant": model.variant.value,
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "extra": extra or {},
    }
    if isinstance(model.encoder, HFEncoder):
        payload["hf_config"] = model.encoder.model.config.to_dict()
    return payload


def save_checkpoint(path, model: IdiomaticityModel, tokenizer_name: str, form_mode: str,
                    extra: dict | None = None) -> None:
    buf = io.BytesIO()
    torch.save(checkpoint_payload(model, tokenizer_name, form_mode, extra), buf)
    atomic_write_bytes(path, buf.getvalue())


def read_checkpoint(path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:  # torch raises a variety of unpickling errors
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("schema") != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_SCHEMA} checkpoint")
    expect = fingerprint(payload["model_config"], payload["tokenizer"], payload["form_mode"])
    if payload["fingerprint"] != expect:
        raise FingerprintMismatch(f"{path}: stored fingerprint does not match its config")
    return payload


def model_from_payload(payload: dict, expected_fingerprint: str | None = None) -> IdiomaticityModel:
    if expected_fingerprint is not None and payload["fingerprint"] != expected_fingerprint:
        raise FingerprintMismatch(
            f"checkpoint fingerprint {payload['fingerprint']} != expected {expected_fingerprint}"
        )
    cfg = ModelConfig(**payload["model_config"])
    if "hf_config" in payload:
        model = IdiomaticityModel(HFEncoder.from_config_dict(payload["hf_config"]), cfg)
    else:
        model = IdiomaticityModel(build_encoder(cfg), cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model


def load_checkpoint(path, expected_fingerprint: str | None = None) -> tuple[IdiomaticityModel, dict]:
    payload = read_checkpoint(path)
    return model_from_payload(payload, expected_fingerprint), payload
