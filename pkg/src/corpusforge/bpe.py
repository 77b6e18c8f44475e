"""Byte-pair encoding: training, vocabulary extension, encoding.

The extension contract is append-only: an extended vocabulary encodes by
running the base model first and then applying the newly trained merges, and
new token ids start after the base id space.  Two guarantees follow by
construction and are property-tested rather than assumed:

* per-document non-regression: the extended encoding is never longer than
  the base encoding of the same text;
* base preservation: ids below the base vocabulary size decode exactly as
  the base model decodes them.

Pre-tokenization splits on whitespace and prefixes words with a boundary
marker; merges never cross segment boundaries.  A single space before a word
is folded into the marker, any other whitespace is encoded literally, and
unknown codepoints fall back to UTF-8 byte tokens, so ``decode(encode(x))``
reproduces ``x`` exactly for arbitrary input.
"""
from __future__ import annotations

import heapq
import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigurationError, DataError, TrainingDataError, VocabUnreachableError

DEFAULT_MARKER = "▁"

BYTE_TOKENS = tuple(f"<0x{i:02X}>" for i in range(256))
_BYTE_VALUE = {tok: i for i, tok in enumerate(BYTE_TOKENS)}
_BYTE_SET = frozenset(BYTE_TOKENS)

_RUNS_RE = re.compile(r"\S+|\s+")

_HEADER_BASE = "corpusforge-bpe v1"
_HEADER_EXT = "corpusforge-bpe-ext v1"


def pretokenize(text: str, marker: str = DEFAULT_MARKER) -> list[tuple[str, bool]]:
    """Split text into (segment, marked) pairs.

    Words preceded by exactly one space are marked (the marker stands for
    that space); remaining whitespace becomes literal segments.  This makes
    detokenization exact for any input.
    """
    segments: list[tuple[str, bool]] = []
    runs = _RUNS_RE.findall(text)
    j = 0
    while j < len(runs):
        run = runs[j]
        if not run[0].isspace():
            segments.append((run, False))
            j += 1
            continue
        if j + 1 < len(runs) and run.endswith(" "):
            rest = run[:-1]
            if rest:
                segments.append((rest, False))
            segments.append((runs[j + 1], True))
            j += 2
        else:
            segments.append((run, False))
            j += 1
    return segments


def detokenize(tokens: Iterable[str], marker: str = DEFAULT_MARKER) -> str:
    parts: list[str] = []
    byte_buf = bytearray()
    for tok in tokens:
        bv = _BYTE_VALUE.get(tok)
        if bv is not None:
            byte_buf.append(bv)
            continue
        if byte_buf:
            parts.append(byte_buf.decode("utf-8", errors="replace"))
            byte_buf = bytearray()
        if tok and tok[0] == marker:
            parts.append(" " + tok[1:])
        else:
            parts.append(tok)
    if byte_buf:
        parts.append(byte_buf.decode("utf-8", errors="replace"))
    return "".join(parts)


def _segment_symbols(seg: str, marked: bool, alpha_set: frozenset[str], marker: str) -> list[str]:
    syms = [marker] if marked else []
    for ch in seg:
        if ch != marker and ch in alpha_set:
            syms.append(ch)
        else:
            # Literal markers and unknown codepoints fall back to bytes.
            syms.extend(BYTE_TOKENS[b] for b in ch.encode("utf-8"))
    return syms


def _merge_pair(syms: Sequence[str], pair: tuple[str, str]) -> list[str]:
    a, b = pair
    out: list[str] = []
    i = 0
    n = len(syms)
    while i < n:
        if i < n - 1 and syms[i] == a and syms[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return out


def _apply_ranks(syms: Sequence[str], ranks: Mapping[tuple[str, str], int]) -> list[str]:
    """Apply merges by priority.  Equivalent to applying the merge list in
    order because a merge's inputs always predate it."""
    word = list(syms)
    if not ranks:
        return word
    while len(word) >= 2:
        best_pair = None
        best_rank = None
        for p in zip(word, word[1:]):
            r = ranks.get(p)
            if r is not None and (best_rank is None or r < best_rank):
                best_rank, best_pair = r, p
        if best_pair is None:
            break
        word = _merge_pair(word, best_pair)
    return word


@dataclass
class BpeModel:
    """A trained BPE model: alphabet, ordered merges, token-to-id vocabulary.

    The vocabulary is laid out as 256 byte-fallback tokens, then the
    alphabet in sorted order, then merge products in acquisition order.
    """

    alphabet: tuple[str, ...]
    merges: tuple[tuple[str, str], ...]
    vocab: dict[str, int]
    marker: str = DEFAULT_MARKER

    def __post_init__(self):
        self._ranks = {tuple(p): i for i, p in enumerate(self.merges)}
        self._alpha_set = frozenset(self.alphabet)
        self._id_to_token = {i: t for t, i in self.vocab.items()}
        self._cache: dict[tuple[str, bool], tuple[str, ...]] = {}
        for left, right in self.merges:
            if left + right not in self.vocab:
                raise ConfigurationError(f"merge output {left + right!r} missing from vocab")

    @classmethod
    def from_vocab(cls, mapping: Mapping[str, int], marker: str = DEFAULT_MARKER) -> "BpeModel":
        """Wrap a plain token-to-id table as a merge-less model.

        Encoding through such a model is character-level; byte fallback only
        works if the table itself carries the ``<0xNN>`` tokens.
        """
        ids = sorted(mapping.values())
        if ids != list(range(len(mapping))):
            raise ConfigurationError("base vocabulary ids must be contiguous from 0")
        alphabet = tuple(sorted(t for t in mapping if len(t) == 1 and t != marker))
        return cls(alphabet=alphabet, merges=(), vocab=dict(mapping), marker=marker)

    @property
    def base_size(self) -> int:
        return 256 + len(self.alphabet)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def _segment_tokens(self, seg: str, marked: bool) -> tuple[str, ...]:
        key = (seg, marked)
        hit = self._cache.get(key)
        if hit is None:
            syms = _segment_symbols(seg, marked, self._alpha_set, self.marker)
            hit = tuple(_apply_ranks(syms, self._ranks))
            self._cache[key] = hit
        return hit

    def encode_tokens(self, text: str) -> list[str]:
        out: list[str] = []
        for seg, marked in pretokenize(text, self.marker):
            out.extend(self._segment_tokens(seg, marked))
        return out

    def encode(self, text: str) -> list[int]:
        ids = []
        vocab = self.vocab
        for tok in self.encode_tokens(text):
            tid = vocab.get(tok)
            if tid is None:
                raise DataError(
                    f"token {tok!r} not in vocabulary; the model lacks byte fallback tokens"
                )
            ids.append(tid)
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        try:
            tokens = [self._id_to_token[i] for i in ids]
        except KeyError as exc:
            raise DataError(f"unknown token id {exc.args[0]}") from exc
        return detokenize(tokens, self.marker)


def _train_merges(
    segments: list[list[str]],
    freqs: list[int],
    vocab: dict[str, int],
    vocab_size: int,
) -> list[tuple[str, str]]:
    """Greedy highest-frequency pair merging with a lazy max-heap.

    Ties break on the lexicographically smallest pair.  Pairs touching byte
    fallback tokens never merge (their concatenations would not decode).
    Selection depends only on (count, pair) keys, so the result is stable
    across hash seeds and platforms.
    """
    pair_counts: dict[tuple[str, str], int] = {}
    pair_segs: dict[tuple[str, str], set[int]] = defaultdict(set)

    def scan(si: int, syms: list[str], f: int, sign: int, touched: set) -> None:
        for p in zip(syms, syms[1:]):
            if p[0] in _BYTE_SET or p[1] in _BYTE_SET:
                continue
            pair_counts[p] = pair_counts.get(p, 0) + sign * f
            touched.add(p)
            if sign > 0:
                pair_segs[p].add(si)
        if sign < 0:
            for p in set(zip(syms, syms[1:])):
                if p in pair_segs:
                    pair_segs[p].discard(si)

    initial: set = set()
    for si, syms in enumerate(segments):
        scan(si, syms, freqs[si], 1, initial)

    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)
    merges: list[tuple[str, str]] = []

    while heap and len(vocab) < vocab_size:
        negc, pair = heapq.heappop(heap)
        count = pair_counts.get(pair, 0)
        if count != -negc:
            continue  # stale entry; the current count was pushed separately
        if count < 2:
            break
        merges.append(pair)
        new_tok = pair[0] + pair[1]
        if new_tok not in vocab:
            vocab[new_tok] = len(vocab)
        touched: set = set()
        for si in sorted(pair_segs.get(pair, ())):
            syms = segments[si]
            f = freqs[si]
            scan(si, syms, f, -1, touched)
            new_syms = _merge_pair(syms, pair)
            segments[si] = new_syms
            scan(si, new_syms, f, 1, touched)
        for p in touched:
            c2 = pair_counts.get(p, 0)
            if c2 > 0:
                heapq.heappush(heap, (-c2, p))
            elif p in pair_counts:
                del pair_counts[p]
                pair_segs.pop(p, None)
    return merges


def train_bpe(corpus: Iterable[str], vocab_size: int, marker: str = DEFAULT_MARKER) -> BpeModel:
    """Train on a normalized document stream.

    Merging stops when the vocabulary reaches `vocab_size` or no pair occurs
    at least twice.  Requesting fewer slots than bytes + alphabet raises
    VocabUnreachableError reporting the achievable size.
    """
    seg_counts: Counter = Counter()
    chars: set[str] = set()
    n_docs = 0
    for text in corpus:
        n_docs += 1
        for seg, marked in pretokenize(text, marker):
            seg_counts[(seg, marked)] += 1
            chars.update(seg)
    if n_docs == 0 or not seg_counts:
        raise TrainingDataError("cannot train on an empty corpus")
    chars.discard(marker)
    alphabet = tuple(sorted(chars | {marker}))

    vocab: dict[str, int] = {tok: i for i, tok in enumerate(BYTE_TOKENS)}
    for ch in alphabet:
        vocab[ch] = len(vocab)
    if vocab_size < len(vocab):
        raise VocabUnreachableError(vocab_size, len(vocab))

    alpha_set = frozenset(alphabet)
    segments: list[list[str]] = []
    freqs: list[int] = []
    for (seg, marked), f in sorted(seg_counts.items()):
        segments.append(_segment_symbols(seg, marked, alpha_set, marker))
        freqs.append(f)

    merges = _train_merges(segments, freqs, vocab, vocab_size)
    return BpeModel(alphabet=alphabet, merges=tuple(merges), vocab=vocab, marker=marker)


@dataclass
class ExtendedVocab:
    """Base vocabulary plus net-new tokens and merges from a trained model.

    New token ids are contiguous after the base id space; new merges run
    after base encoding.  When nothing is net-new the extension is the
    identity, keeping base encodings bit-stable.
    """

    base: BpeModel
    new_tokens: tuple[str, ...]
    new_merges: tuple[tuple[str, str], ...]
    net_new_count: int

    def __post_init__(self):
        base_n = len(self.base.vocab)
        self._new_ids = {t: base_n + i for i, t in enumerate(self.new_tokens)}
        self._new_ranks = {tuple(p): i for i, p in enumerate(self.new_merges)}
        self._cache: dict[tuple[str, bool], tuple[str, ...]] = {}

    @property
    def base_vocab(self) -> dict[str, int]:
        return self.base.vocab

    @property
    def vocab_size(self) -> int:
        return len(self.base.vocab) + len(self.new_tokens)

    def _segment_tokens(self, seg: str, marked: bool) -> tuple[str, ...]:
        key = (seg, marked)
        hit = self._cache.get(key)
        if hit is None:
            base_toks = self.base._segment_tokens(seg, marked)
            if self._new_ranks:
                hit = tuple(_apply_ranks(base_toks, self._new_ranks))
            else:
                hit = base_toks
            self._cache[key] = hit
        return hit

    def encode_tokens(self, text: str) -> list[str]:
        out: list[str] = []
        for seg, marked in pretokenize(text, self.base.marker):
            out.extend(self._segment_tokens(seg, marked))
        return out

    def encode(self, text: str) -> list[int]:
        ids = []
        base_vocab = self.base.vocab
        for tok in self.encode_tokens(text):
            tid = base_vocab.get(tok)
            if tid is None:
                tid = self._new_ids.get(tok)
            if tid is None:
                raise DataError(f"token {tok!r} not in extended vocabulary")
            ids.append(tid)
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        base_n = len(self.base.vocab)
        tokens = []
        for i in ids:
            if i < base_n:
                tok = self.base._id_to_token.get(i)
            elif i - base_n < len(self.new_tokens):
                tok = self.new_tokens[i - base_n]
            else:
                tok = None
            if tok is None:
                raise DataError(f"unknown token id {i}")
            tokens.append(tok)
        return detokenize(tokens, self.base.marker)


def extend_vocab(base: BpeModel | Mapping[str, int], trained: BpeModel) -> ExtendedVocab:
    """Append the trained model's net-new tokens and merges to a base vocab.

    net_new_count is exactly |trained vocab| minus the string overlap with
    the base.  A fully overlapped trained model yields an identity extension.
    """
    if isinstance(base, BpeModel):
        base_model = base
    else:
        base_model = BpeModel.from_vocab(base, marker=trained.marker)
    if base_model.marker != trained.marker:
        raise ConfigurationError("base and trained models use different boundary markers")
    base_vocab = base_model.vocab
    by_id = sorted(trained.vocab.items(), key=lambda kv: kv[1])
    new_tokens = tuple(tok for tok, _ in by_id if tok not in base_vocab)
    net_new = len(new_tokens)
    new_merges = trained.merges if net_new else ()
    return ExtendedVocab(
        base=base_model,
        new_tokens=new_tokens,
        new_merges=tuple(tuple(p) for p in new_merges),
        net_new_count=net_new,
    )


@dataclass(frozen=True)
class FertilityReport:
    base_tokens_per_word: float
    extended_tokens_per_word: float
    reduction: float
    word_count: int
    base_token_count: int
    extended_token_count: int


def fertility(texts: Iterable[str], ext: ExtendedVocab) -> FertilityReport:
    """Average tokens per word under the base and the extended encodings.

    reduction = 1 - extended/base.  Raises DataError on a wordless stream.
    """
    words = 0
    base_total = 0
    ext_total = 0
    for text in texts:
        words += len(text.split())
        base_total += len(ext.base.encode_tokens(text))
        ext_total += len(ext.encode_tokens(text))
    if words == 0:
        raise DataError("fertility is undefined on a stream with zero words")
    base_tpw = base_total / words
    ext_tpw = ext_total / words
    reduction = 1.0 - ext_tpw / base_tpw if base_tpw else 0.0
    return FertilityReport(base_tpw, ext_tpw, reduction, words, base_total, ext_total)


# ---------------------------------------------------------------- model io

def _write_base(fh, model: BpeModel) -> None:
    fh.write(json.dumps({"marker": model.marker}, ensure_ascii=False) + "\n")
    fh.write("[alphabet]\n")
    for ch in model.alphabet:
        fh.write(json.dumps(ch, ensure_ascii=False) + "\n")
    fh.write("[merges]\n")
    for pair in model.merges:
        fh.write(json.dumps(list(pair), ensure_ascii=False) + "\n")
    fh.write("[vocab]\n")
    for tok, tid in sorted(model.vocab.items(), key=lambda kv: kv[1]):
        fh.write(json.dumps([tok, tid], ensure_ascii=False) + "\n")


def save_model(model: BpeModel | ExtendedVocab, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if isinstance(model, BpeModel):
            fh.write(_HEADER_BASE + "\n")
            _write_base(fh, model)
        else:
            fh.write(_HEADER_EXT + "\n")
            fh.write(json.dumps({"net_new_count": model.net_new_count}) + "\n")
            fh.write("[base]\n")
            _write_base(fh, model.base)
            fh.write("[new_merges]\n")
            for pair in model.new_merges:
                fh.write(json.dumps(list(pair), ensure_ascii=False) + "\n")
            fh.write("[new_tokens]\n")
            for tok in model.new_tokens:
                fh.write(json.dumps(tok, ensure_ascii=False) + "\n")


_BASE_SECTIONS = frozenset({"[alphabet]", "[merges]", "[vocab]"})
_EXT_SECTIONS = frozenset({"[base]", "[new_merges]", "[new_tokens]"})


def _parse_sections(lines: list[str], headers: frozenset[str]) -> dict[str, list[str]]:
    """Split lines on the given section headers; other lines (including the
    base model's own headers inside an extended file) stay payload."""
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in lines:
        if line in headers:
            current = sections.setdefault(line[1:-1], [])
        elif current is not None:
            current.append(line)
        else:
            raise ConfigurationError(f"unexpected line outside any section: {line!r}")
    return sections


def _base_from_sections(marker: str, sections: dict[str, list[str]]) -> BpeModel:
    alphabet = tuple(json.loads(l) for l in sections.get("alphabet", []))
    merges = tuple(tuple(json.loads(l)) for l in sections.get("merges", []))
    vocab = {tok: tid for tok, tid in (json.loads(l) for l in sections.get("vocab", []))}
    return BpeModel(alphabet=alphabet, merges=merges, vocab=vocab, marker=marker)


def load_model(path: str | Path) -> BpeModel | ExtendedVocab:
    with open(path, encoding="utf-8") as fh:
        lines = [l.rstrip("\n") for l in fh]
    lines = [l for l in lines if l]
    if not lines:
        raise ConfigurationError(f"{path}: empty model file")
    header = lines[0]
    if header == _HEADER_BASE:
        marker = json.loads(lines[1])["marker"]
        return _base_from_sections(marker, _parse_sections(lines[2:], _BASE_SECTIONS))
    if header == _HEADER_EXT:
        meta = json.loads(lines[1])
        sections = _parse_sections(lines[2:], _EXT_SECTIONS)
        base_lines = sections.get("base", [])
        marker = json.loads(base_lines[0])["marker"]
        base = _base_from_sections(marker, _parse_sections(base_lines[1:], _BASE_SECTIONS))
        new_merges = tuple(tuple(json.loads(l)) for l in sections.get("new_merges", []))
        new_tokens = tuple(json.loads(l) for l in sections.get("new_tokens", []))
        return ExtendedVocab(
            base=base,
            new_tokens=new_tokens,
            new_merges=new_merges,
            net_new_count=int(meta["net_new_count"]),
        )
    raise ConfigurationError(f"{path}: unrecognized model header {header!r}")


class BpeTokenizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper: fit trains a BPE model, transform encodes."""

    def __init__(self, vocab_size: int = 5000, marker: str = DEFAULT_MARKER):
        self.vocab_size = vocab_size
        self.marker = marker

    def fit(self, X, y=None):
        self.model_ = train_bpe(X, self.vocab_size, marker=self.marker)
        return self

    def transform(self, X) -> list[list[int]]:
        check_is_fitted(self, "model_")
        return [self.model_.encode(t) for t in X]

    def inverse_transform(self, X) -> list[str]:
        check_is_fitted(self, "model_")
        return [self.model_.decode(ids) for ids in X]
