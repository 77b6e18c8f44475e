"""Training-artifact assembly: token chunks, dataset mixes, bilingual
warm-up documents, and fine-tuning samples with assistant-only loss masks.

Chunking packs documents back to back with a separator token between them
and drops the final partial window, reporting how many tokens fell off.
Mixing operates on chunk manifests, not payloads: repeating a source
duplicates manifest entries byte-identically, and every shuffle is seeded.
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, UntrainableSampleError

FA_MARKER = "<FA>"
EN_MARKER = "<EN>"

_WARMUP_LINE_RE = re.compile(r"^<(FA|EN)> (.*)$")


# ------------------------------------------------------------------ chunks

@dataclass(frozen=True)
class TokenChunk:
    token_ids: tuple[int, ...]
    source: str
    chunk_index: int


@dataclass(frozen=True)
class ChunkingResult:
    chunks: list[TokenChunk]
    dropped_tokens: int
    input_documents: int
    input_tokens: int


def chunk_stream(
    docs: Iterable[Sequence[int]],
    chunk_len: int = 2048,
    separator_id: int = 0,
    source: str = "",
) -> ChunkingResult:
    """Concatenate token sequences with a separator between documents and
    cut exact chunk_len windows; the final partial window is dropped."""
    if chunk_len <= 1:
        raise ConfigurationError(f"chunk_len must be greater than 1, got {chunk_len}")
    chunks: list[TokenChunk] = []
    buffer: list[int] = []
    n_docs = 0
    n_tokens = 0
    for doc in docs:
        if n_docs > 0:
            buffer.append(separator_id)
        n_docs += 1
        n_tokens += len(doc)
        buffer.extend(doc)
        while len(buffer) >= chunk_len:
            chunks.append(
                TokenChunk(
                    token_ids=tuple(buffer[:chunk_len]),
                    source=source,
                    chunk_index=len(chunks),
                )
            )
            del buffer[:chunk_len]
    return ChunkingResult(
        chunks=chunks,
        dropped_tokens=len(buffer),
        input_documents=n_docs,
        input_tokens=n_tokens,
    )


# --------------------------------------------------------------------- mix

@dataclass(frozen=True)
class MixSource:
    tag: str
    repeat_factor: int = 1
    cap: int | None = None

    def __post_init__(self):
        if self.repeat_factor < 1:
            raise ConfigurationError(f"repeat_factor must be >= 1 for source {self.tag!r}")
        if self.cap is not None and self.cap < 0:
            raise ConfigurationError(f"cap must be non-negative for source {self.tag!r}")


@dataclass(frozen=True)
class MixSpec:
    sources: tuple[MixSource, ...]
    shuffle_seed: int = 0
    chunk_len: int = 2048

    def source_map(self) -> dict[str, MixSource]:
        out = {}
        for src in self.sources:
            if src.tag in out:
                raise ConfigurationError(f"duplicate source tag {src.tag!r} in mix spec")
            out[src.tag] = src
        return out


@dataclass(frozen=True)
class MixReport:
    per_source_chunks: dict[str, int]
    per_source_tokens: dict[str, int]
    total_chunks: int
    total_tokens: int
    chunk_len: int
    shuffle_seed: int

    def to_record(self) -> dict:
        return {
            "per_source_chunks": self.per_source_chunks,
            "per_source_tokens": self.per_source_tokens,
            "total_chunks": self.total_chunks,
            "total_tokens": self.total_tokens,
            "chunk_len": self.chunk_len,
            "shuffle_seed": self.shuffle_seed,
        }


@dataclass
class MixedManifest:
    """Shuffled manifest as parallel arrays; entries() yields (tag, entry)."""

    tags: tuple[str, ...]
    source_codes: np.ndarray  # uint16 index into tags
    entry_indices: np.ndarray  # int64 index into the source's selected entries
    selected: dict[str, list]  # per tag, the capped entry list (before repeat)

    def __len__(self) -> int:
        return len(self.source_codes)

    def entries(self):
        for code, idx in zip(self.source_codes, self.entry_indices):
            tag = self.tags[code]
            yield tag, self.selected[tag][idx]


def plan_mix(available: Mapping[str, int], spec: MixSpec) -> MixReport:
    """Pure arithmetic over chunk counts; validates caps against availability."""
    per_chunks: dict[str, int] = {}
    per_tokens: dict[str, int] = {}
    for src in spec.sources:
        if src.tag not in available:
            raise ConfigurationError(f"mix source {src.tag!r} has no chunk manifest")
        avail = available[src.tag]
        take = avail if src.cap is None else src.cap
        if take > avail:
            raise ConfigurationError(
                f"cap {src.cap} for source {src.tag!r} exceeds the {avail} available chunks"
            )
        n = take * src.repeat_factor
        per_chunks[src.tag] = n
        per_tokens[src.tag] = n * spec.chunk_len
    total_chunks = sum(per_chunks.values())
    return MixReport(
        per_source_chunks=per_chunks,
        per_source_tokens=per_tokens,
        total_chunks=total_chunks,
        total_tokens=total_chunks * spec.chunk_len,
        chunk_len=spec.chunk_len,
        shuffle_seed=spec.shuffle_seed,
    )


def mix_datasets(
    sources: Mapping[str, Sequence],
    spec: MixSpec,
) -> tuple[MixedManifest, MixReport]:
    """Cap, repeat, and globally shuffle per-source chunk manifests.

    Caps take the leading entries; repetition duplicates entries verbatim,
    so a doubled source contributes byte-identical copies.  The shuffle is a
    single seeded permutation over all manifest entries.
    """
    report = plan_mix({tag: len(entries) for tag, entries in sources.items()}, spec)
    tags = tuple(src.tag for src in spec.sources)
    selected: dict[str, list] = {}
    codes: list[np.ndarray] = []
    indices: list[np.ndarray] = []
    for code, src in enumerate(spec.sources):
        entries = sources[src.tag]
        take = len(entries) if src.cap is None else src.cap
        selected[src.tag] = list(entries[:take])
        idx = np.tile(np.arange(take, dtype=np.int64), src.repeat_factor)
        codes.append(np.full(idx.shape, code, dtype=np.uint16))
        indices.append(idx)
    all_codes = np.concatenate(codes) if codes else np.empty(0, dtype=np.uint16)
    all_indices = np.concatenate(indices) if indices else np.empty(0, dtype=np.int64)
    perm = np.random.default_rng(spec.shuffle_seed).permutation(len(all_codes))
    manifest = MixedManifest(
        tags=tags,
        source_codes=all_codes[perm],
        entry_indices=all_indices[perm],
        selected=selected,
    )
    return manifest, report


# ------------------------------------------------------------ warm-up docs

@dataclass(frozen=True)
class ParallelDoc:
    """Aligned story: ordered (english, persian) paragraph pairs."""

    story_id: str
    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        for en, fa in self.pairs:
            if not en or not fa:
                raise DataError(f"story {self.story_id!r}: empty side in a parallel pair")
            if "\n" in en or "\n" in fa:
                raise DataError(
                    f"story {self.story_id!r}: paragraph contains a newline; "
                    "alignment units must be single lines"
                )


def format_warmup(doc: ParallelDoc, direction: str = "fa_first") -> str:
    """Render alternating <FA>/<EN> lines, one marker per paragraph, pair
    order preserved, terminated by a trailing newline."""
    if direction not in ("fa_first", "en_first"):
        raise ConfigurationError(f"direction must be fa_first or en_first, got {direction!r}")
    if not doc.pairs:
        raise DataError(f"story {doc.story_id!r} has no parallel pairs")
    lines = []
    for en, fa in doc.pairs:
        if direction == "fa_first":
            lines.append(f"{FA_MARKER} {fa}")
            lines.append(f"{EN_MARKER} {en}")
        else:
            lines.append(f"{EN_MARKER} {en}")
            lines.append(f"{FA_MARKER} {fa}")
    return "\n".join(lines) + "\n"


def parse_warmup(text: str, story_id: str = "") -> tuple[ParallelDoc, str]:
    """Invert format_warmup: recover the pairs and the direction."""
    lines = [l for l in text.split("\n") if l]
    if not lines or len(lines) % 2 != 0:
        raise DataError("warm-up document must hold an even number of marker lines")
    parsed = []
    for line in lines:
        m = _WARMUP_LINE_RE.match(line)
        if not m:
            raise DataError(f"line without a language marker: {line!r}")
        parsed.append((m.group(1), m.group(2)))
    first = parsed[0][0]
    direction = "fa_first" if first == "FA" else "en_first"
    pairs = []
    for i in range(0, len(parsed), 2):
        (lang_a, text_a), (lang_b, text_b) = parsed[i], parsed[i + 1]
        if lang_a != first or lang_b == first:
            raise DataError("marker alternation is broken")
        if first == "FA":
            pairs.append((text_b, text_a))
        else:
            pairs.append((text_a, text_b))
    return ParallelDoc(story_id=story_id, pairs=tuple(pairs)), direction


# --------------------------------------------------------------- sft masks

@dataclass(frozen=True)
class ChatTemplate:
    role_prefixes: tuple[tuple[str, str], ...] = (
        ("system", "<|system|>\n"),
        ("user", "<|user|>\n"),
        ("assistant", "<|assistant|>\n"),
    )
    turn_suffix: str = "<|end|>\n"

    def prefix_for(self, role: str) -> str:
        for r, p in self.role_prefixes:
            if r == role:
                return p
        raise ConfigurationError(f"role {role!r} has no template prefix")


DEFAULT_CHAT_TEMPLATE = ChatTemplate()

_VALID_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class SftSample:
    token_ids: tuple[int, ...]
    loss_mask: tuple[int, ...]
    roles: tuple[tuple[str, int, int], ...]  # (role, start, end) spans

    def to_record(self) -> dict:
        return {
            "token_ids": list(self.token_ids),
            "loss_mask": list(self.loss_mask),
            "roles": [[r, s, e] for r, s, e in self.roles],
        }


def format_sft(
    conversation: Sequence[tuple[str, str]],
    encoder,
    max_len: int = 512,
    template: ChatTemplate = DEFAULT_CHAT_TEMPLATE,
) -> SftSample:
    """Render, tokenize, and mask a conversation.

    The mask is 1 exactly on assistant response tokens plus each assistant
    turn's end marker; role markers and non-assistant turns are 0.  When the
    rendered sample exceeds max_len, the oldest tokens are dropped first
    (the final assistant span sits at the end and survives).  A sample whose
    assistant response carries no trainable token is rejected.
    """
    if not conversation:
        raise DataError("empty conversation")
    for role, _ in conversation:
        if role not in _VALID_ROLES:
            raise DataError(f"unknown role {role!r}")
    if conversation[-1][0] != "assistant":
        raise DataError("conversation must end with an assistant turn")
    if max_len < 1:
        raise ConfigurationError(f"max_len must be >= 1, got {max_len}")

    tokens: list[int] = []
    mask: list[int] = []
    spans: list[tuple[str, int, int]] = []
    final_response_tokens = 0
    for turn_idx, (role, text) in enumerate(conversation):
        start = len(tokens)
        trainable = 1 if role == "assistant" else 0
        for piece, m, is_body in (
            (template.prefix_for(role), 0, False),
            (text, trainable, True),
            (template.turn_suffix, trainable, False),
        ):
            ids = encoder.encode(piece)
            tokens.extend(ids)
            mask.extend([m] * len(ids))
            if is_body and turn_idx == len(conversation) - 1:
                final_response_tokens = len(ids)
        spans.append((role, start, len(tokens)))
    if final_response_tokens == 0:
        raise UntrainableSampleError("final assistant response encodes to zero tokens")

    if len(tokens) > max_len:
        cut = len(tokens) - max_len
        tokens = tokens[cut:]
        mask = mask[cut:]
        spans = [
            (role, max(0, s - cut), e - cut)
            for role, s, e in spans
            if e - cut > 0
        ]
    if sum(mask) == 0:
        raise UntrainableSampleError("no assistant tokens remain after truncation")
    return SftSample(token_ids=tuple(tokens), loss_mask=tuple(mask), roles=tuple(spans))


TRANSLATE_TO_FA = "جمله زیر را به فارسی ترجمه کن."
TRANSLATE_TO_EN = "Translate the following sentence to English."


def translation_conversation(en: str, fa: str, direction: str) -> list[tuple[str, str]]:
    """Render one bilingual pair as an instruction-response conversation."""
    if direction == "en_to_fa":
        return [("user", f"{TRANSLATE_TO_FA}\n{en}"), ("assistant", fa)]
    if direction == "fa_to_en":
        return [("user", f"{TRANSLATE_TO_EN}\n{fa}"), ("assistant", en)]
    raise ConfigurationError(f"direction must be en_to_fa or fa_to_en, got {direction!r}")


def build_sft_mix(
    sources: Mapping[str, Sequence],
    counts: Mapping[str, int],
    seed: int = 0,
) -> tuple[list[tuple[str, int]], dict]:
    """Capped, shuffled manifest of (source tag, record index) entries.

    Each source contributes a seeded sample without replacement of `counts`
    records; the combined manifest is shuffled with the same seed.  Caps
    above availability are configuration errors naming the source.
    """
    rng = random.Random(seed)
    manifest: list[tuple[str, int]] = []
    per_source: dict[str, int] = {}
    for tag in sorted(counts):
        if tag not in sources:
            raise ConfigurationError(f"sft source {tag!r} is not available")
        avail = len(sources[tag])
        cap = counts[tag]
        if cap > avail:
            raise ConfigurationError(
                f"requested {cap} samples from source {tag!r} but only {avail} available"
            )
        picks = rng.sample(range(avail), cap) if cap < avail else list(range(avail))
        manifest.extend((tag, i) for i in picks)
        per_source[tag] = cap
    rng.shuffle(manifest)
    report = {"per_source": per_source, "total": len(manifest), "seed": seed}
    return manifest, report


# ---------------------------------------------------------------- chunk io

def write_chunk_payload(chunks: Iterable[TokenChunk], path: str | Path) -> list[dict]:
    """Fixed-record binary payload: chunk_len little-endian uint32 ids per
    chunk.  Returns manifest entries with byte offsets."""
    entries = []
    with open(path, "wb") as fh:
        offset = 0
        for chunk in chunks:
            arr = np.asarray(chunk.token_ids, dtype="<u4")
            fh.write(arr.tobytes())
            entries.append(
                {
                    "source": chunk.source,
                    "file": str(Path(path).name),
                    "offset": offset,
                    "chunk_index": chunk.chunk_index,
                }
            )
            offset += arr.nbytes
    return entries


def read_chunk_payload(path: str | Path, chunk_len: int) -> list[tuple[int, ...]]:
    data = np.fromfile(path, dtype="<u4")
    if data.size % chunk_len:
        raise DataError(f"{path}: payload size is not a multiple of chunk_len {chunk_len}")
    return [tuple(int(x) for x in row) for row in data.reshape(-1, chunk_len)]
