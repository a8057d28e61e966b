"""Tokenization of text chunks into encoder-ready id sequences.

Layout of an encoded chunk::

    [BOS] seg_0 [SEP] seg_1 [SEP] ... seg_k [SEP]

A token is an MWE token when its character offsets overlap one of the
chunk's marked MWE spans. Truncation removes context before target and
never touches special tokens or the repeated tail.
"""

from __future__ import annotations

import os
import re
import threading
import zlib
from dataclasses import dataclass
from typing import Protocol, Sequence

import torch

from .chunking import Role, TextChunk, ViewKind

DEFAULT_MAX_LEN = 300


class BudgetTooSmall(ValueError):
    pass


class TokenizerContract(Protocol):
    bos_id: int
    sep_id: int
    mask_id: int
    pad_id: int
    mask_token: str
    vocab_size: int
    name: str

    def tokenize_with_offsets(self, text: str) -> list[tuple[int, int, int]]: ...

    def decode(self, ids: Sequence[int]) -> str: ...


class ToyTokenizer:
    """Deterministic hashed sub-word tokenizer for tests and offline runs.

    Words (``\\w+`` runs or single punctuation marks) are cut into pieces of
    at most ``piece_len`` characters, so most words span several tokens.
    Piece ids are a CRC32 hash into the vocabulary; decoding uses a table of
    pieces seen so far.
    """

    PAD, BOS, SEP, MASK = 0, 1, 2, 3
    N_SPECIAL = 4
    _word_re = re.compile(r"\w+|[^\w\s]")

    def __init__(self, vocab_size: int = 2048, piece_len: int = 4, mask_token: str = "<mask>"):
        if vocab_size <= self.N_SPECIAL:
            raise ValueError("vocab_size too small")
        self.vocab_size = vocab_size
        self.piece_len = piece_len
        self.mask_token = mask_token
        self.bos_id, self.sep_id, self.mask_id, self.pad_id = self.BOS, self.SEP, self.MASK, self.PAD
        self.name = f"toy:vocab={vocab_size},piece={piece_len}"
        self._pieces: dict[int, str] = {}
        self._lock = threading.Lock()

    def _piece_id(self, piece: str, cont: bool) -> int:
        key = ("##" + piece) if cont else piece
        pid = zlib.crc32(key.encode("utf-8")) % (self.vocab_size - self.N_SPECIAL) + self.N_SPECIAL
        with self._lock:
            self._pieces.setdefault(pid, key)
        return pid

    def tokenize_with_offsets(self, text: str) -> list[tuple[int, int, int]]:
        out = []
        pos = 0
        for part in text.split(self.mask_token):
            for m in self._word_re.finditer(part):
                w, ws = m.group(), pos + m.start()
                for k in range(0, len(w), self.piece_len):
                    piece = w[k:k + self.piece_len].lower()
                    out.append((self._piece_id(piece, k > 0), ws + k, ws + k + len(piece)))
            pos += len(part)
            if pos < len(text):
                out.append((self.MASK, pos, pos + len(self.mask_token)))
                pos += len(self.mask_token)
        return out

    def decode(self, ids: Sequence[int]) -> str:
        words: list[str] = []
        for i in ids:
            if i in (self.PAD, self.BOS, self.SEP):
                continue
            if i == self.MASK:
                words.append(self.mask_token)
                continue
            p = self._pieces.get(i, "<unk>")
            if p.startswith("##") and words:
                words[-1] += p[2:]
            else:
                words.append(p.removeprefix("##"))
        return " ".join(words)


class HFTokenizer:
    """Adapter over a fast ``transformers`` tokenizer (needs offset mappings)."""

    def __init__(self, tokenizer):
        if not getattr(tokenizer, "is_fast", False):
            raise TypeError("a fast tokenizer is required for offset mappings")
        self.tok = tokenizer
        self.name = getattr(tokenizer, "name_or_path", "") or "hf"
        self.bos_id = tokenizer.cls_token_id if tokenizer.cls_token_id is not None else tokenizer.bos_token_id
        self.sep_id = tokenizer.sep_token_id if tokenizer.sep_token_id is not None else tokenizer.eos_token_id
        self.mask_id = tokenizer.mask_token_id
        self.pad_id = tokenizer.pad_token_id if tokenizer.pad_token_id is not None else 0
        self.mask_token = tokenizer.mask_token
        self.vocab_size = len(tokenizer)

    @classmethod
    def from_pretrained(cls, name: str, cache_dir: str | None = None) -> "HFTokenizer":
        from transformers import AutoTokenizer

        cache_dir = cache_dir or os.environ.get("IDIOMCTX_CACHE")
        return cls(AutoTokenizer.from_pretrained(name, cache_dir=cache_dir, use_fast=True))

    def tokenize_with_offsets(self, text: str) -> list[tuple[int, int, int]]:
        enc = self.tok(text, add_special_tokens=False, return_offsets_mapping=True)
        return [(i, s, e) for i, (s, e) in zip(enc["input_ids"], enc["offset_mapping"])]

    def decode(self, ids: Sequence[int]) -> str:
        return self.tok.decode(list(ids), skip_special_tokens=True)


def load_tokenizer(name: str, **kwargs) -> TokenizerContract:
    """``toy`` (optionally ``toy:vocab=N,piece=K``) or a pretrained checkpoint id."""
    if name == "toy" or name.startswith("toy:"):
        opts = {}
        if ":" in name:
            for kv in name.split(":", 1)[1].split(","):
                k, v = kv.split("=")
                opts[{"vocab": "vocab_size", "piece": "piece_len"}.get(k, k)] = int(v)
        return ToyTokenizer(**opts)
    return HFTokenizer.from_pretrained(name, cache_dir=kwargs.get("cache_dir"))


@dataclass(frozen=True)
class EncodedInput:
    token_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    # 1 marks MWE tokens; all zero when segment embeddings are disabled
    segment_ids: tuple[int, ...]
    # MWE token positions; kept even when segment ids are zeroed
    mwe_indices: frozenset[int]
    view: ViewKind

    def __len__(self):
        return len(self.token_ids)


@dataclass
class Piece:
    token_id: int
    start: int
    end: int
    protected: bool  # overlaps the MWE span (or the mask anchor)
    is_mwe: bool


@dataclass
class SegmentPieces:
    role: Role
    pieces: list[Piece]


def _overlaps(s: int, e: int, spans) -> bool:
    return any(s < b and a < e for a, b in spans)


def segment_pieces(chunk: TextChunk, tokenizer: TokenizerContract) -> list[SegmentPieces]:
    out = []
    for idx, (text, role) in enumerate(zip(chunk.segments, chunk.roles)):
        mwe = [(a, b) for si, a, b in chunk.mwe_char_spans if si == idx]
        anchor = [(chunk.anchor[1], chunk.anchor[2])] if chunk.anchor and chunk.anchor[0] == idx else []
        pieces = []
        for tid, s, e in tokenizer.tokenize_with_offsets(text):
            is_mwe = _overlaps(s, e, mwe)
            pieces.append(Piece(tid, s, e, is_mwe or _overlaps(s, e, anchor), is_mwe))
        out.append(SegmentPieces(role, pieces))
    return out


def encoded_length(segments: Sequence[SegmentPieces]) -> int:
    return 1 + sum(len(s.pieces) + 1 for s in segments)


def truncate_policy(segments: list[SegmentPieces], max_len: int) -> list[SegmentPieces]:
    """Trim ``segments`` so the encoded length fits ``max_len``.

    Context goes first, farthest-from-target tokens first (start of the
    previous sentence, end of the next one; the longer of the two first when
    a chunk holds both). A context segment emptied this way is dropped together with
    its separator. Then target tokens are trimmed from whichever side lies
    farther from the protected MWE tokens. Special tokens, the tail and the
    protected tokens are never removed.
    """
    if max_len < 8:
        raise ValueError("max_len must be at least 8")
    segs = [SegmentPieces(s.role, list(s.pieces)) for s in segments]
    excess = encoded_length(segs) - max_len
    if excess <= 0:
        return segs

    def context_segments():
        return [s for s in segs if s.role in (Role.BEFORE, Role.AFTER) and s.pieces]

    while excess > 0:
        ctx = context_segments()
        if not ctx:
            break
        seg = max(ctx, key=lambda s: (len(s.pieces), s.role is Role.BEFORE))
        if seg.role is Role.BEFORE:
            seg.pieces.pop(0)
        else:
            seg.pieces.pop()
        excess -= 1
        if not seg.pieces:
            segs.remove(seg)
            excess -= 1

    for seg in segs:
        if excess <= 0:
            break
        if seg.role is not Role.TARGET:
            continue
        p = seg.pieces
        prot = [i for i, pc in enumerate(p) if pc.protected]
        lo, hi = 0, len(p)  # keep p[lo:hi]
        while excess > 0:
            if prot:
                left_gap, right_gap = prot[0] - lo, hi - 1 - prot[-1]
            else:
                left_gap, right_gap = 0, hi - lo
            if left_gap <= 0 and right_gap <= 0:
                break
            if right_gap >= left_gap:
                hi -= 1
            else:
                lo += 1
            excess -= 1
        seg.pieces = p[lo:hi]

    if excess > 0:
        raise BudgetTooSmall(
            f"needs {encoded_length(segs)} positions after truncation, max_len is {max_len}"
        )
    return segs


def encode_chunk(chunk: TextChunk, tokenizer: TokenizerContract, max_len: int = DEFAULT_MAX_LEN,
                 use_segments: bool = True) -> EncodedInput:
    if max_len < 8:
        raise ValueError("max_len must be at least 8")
    segs = truncate_policy(segment_pieces(chunk, tokenizer), max_len)
    ids, mwe_flags = [tokenizer.bos_id], [False]
    for seg in segs:
        for pc in seg.pieces:
            ids.append(pc.token_id)
            mwe_flags.append(pc.is_mwe)
        ids.append(tokenizer.sep_id)
        mwe_flags.append(False)
    mwe_indices = frozenset(i for i, f in enumerate(mwe_flags) if f)
    seg_ids = tuple(int(f and use_segments) for f in mwe_flags)
    return EncodedInput(tuple(ids), (1,) * len(ids), seg_ids, mwe_indices, chunk.kind)


def pad_batch(inputs: Sequence[EncodedInput], pad_id: int) -> dict[str, torch.Tensor]:
    """Right-pad a list of encodings of one view into batch tensors."""
    width = max(len(x) for x in inputs)
    n = len(inputs)
    ids = torch.full((n, width), pad_id, dtype=torch.long)
    attn = torch.zeros((n, width), dtype=torch.long)
    seg = torch.zeros((n, width), dtype=torch.long)
    mwe = torch.zeros((n, width), dtype=torch.bool)
    for r, x in enumerate(inputs):
        L = len(x)
        ids[r, :L] = torch.tensor(x.token_ids)
        attn[r, :L] = torch.tensor(x.attention_mask)
        seg[r, :L] = torch.tensor(x.segment_ids)
        if x.mwe_indices:
            mwe[r, sorted(x.mwe_indices)] = True
    return {"input_ids": ids, "attention_mask": attn, "segment_ids": seg, "mwe_mask": mwe}
