"""Profanity gate, heuristic quality rules, and intra-document repetition removal.

The eight rules (codes q1..q8) operate on normalized text.  A word is a
maximal non-whitespace run; lines are newline-separated and only non-empty
lines enter line statistics.  Rule boundary semantics follow the written
thresholds literally: the word-count and word-length windows are inclusive,
the ratio rules fire strictly above their limits.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .documents import Document, StageDecision
from .errors import ConfigurationError
from .validation import check_fraction, check_text_sequence

# Words containing at least one codepoint from these ranges count as Persian.
_PERSIAN_RANGES = (
    (0x0600, 0x06FF),
    (0x0750, 0x077F),  # Arabic Supplement
    (0xFB50, 0xFDFF),  # presentation forms A
    (0xFE70, 0xFEFF),  # presentation forms B
)

DEFAULT_NECESSARY_WORDS = frozenset(
    # Common conjunctions and additive words.  The first three are the
    # core list; the rest are conventional additions and can be replaced
    # through the Lexicons config.
    {"و", "سپس", "اینکه", "که", "اما", "یا", "چون"}
)

DEFAULT_BULLET_MARKERS = frozenset(
    {"•", "‣", "⁃", "●", "○", "▪", "▫", "◦", "·", "-", "–", "—", "*"}
)

DEFAULT_ELLIPSIS_MARKERS = ("…", "...")

DEFAULT_SPECIAL_SYMBOLS = ("#", "…", "...")

RULE_CODES = ("q1", "q2", "q3", "q4", "q5", "q6", "q7", "q8")


@dataclass(frozen=True)
class Lexicons:
    profanity: frozenset[str] = frozenset()
    necessary_words: frozenset[str] = DEFAULT_NECESSARY_WORDS
    bullet_markers: frozenset[str] = DEFAULT_BULLET_MARKERS
    ellipsis_markers: tuple[str, ...] = DEFAULT_ELLIPSIS_MARKERS
    special_symbols: tuple[str, ...] = DEFAULT_SPECIAL_SYMBOLS


@dataclass(frozen=True)
class QualityThresholds:
    min_words: int = 50
    max_words: int = 20000
    min_avg_word_len: float = 3.0
    max_avg_word_len: float = 7.0
    max_symbol_ratio: float = 0.1
    min_persian_word_fraction: float = 0.8
    max_bullet_line_fraction: float = 0.9
    max_ellipsis_line_fraction: float = 0.3
    min_necessary_words: int = 2
    max_line_word_ratio: float = 0.1

    def __post_init__(self):
        if self.min_words >= self.max_words:
            raise ConfigurationError("min_words must be below max_words")
        if self.min_avg_word_len >= self.max_avg_word_len:
            raise ConfigurationError("min_avg_word_len must be below max_avg_word_len")
        for name in (
            "max_symbol_ratio",
            "min_persian_word_fraction",
            "max_bullet_line_fraction",
            "max_ellipsis_line_fraction",
            "max_line_word_ratio",
        ):
            check_fraction(getattr(self, name), name)


@dataclass(frozen=True)
class QualityStats:
    word_count: int
    avg_word_len: float
    symbol_to_word_ratio: float
    persian_word_fraction: float
    bullet_line_fraction: float
    ellipsis_line_fraction: float
    necessary_word_count: int
    line_to_word_ratio: float


@dataclass(frozen=True)
class RepetitionParams:
    """Thresholds for the repetition stage (Gopher-lineage defaults).

    Duplicate lines beyond their first occurrence are always removed; the
    document as a whole is dropped when duplicated lines cover more than
    `duplicate_char_drop_threshold` of its characters, or when the most
    frequent word n-gram covers more than its per-n cap of all words.
    """

    duplicate_char_drop_threshold: float = 0.30
    ngram_caps: tuple[tuple[int, float], ...] = ((2, 0.20), (3, 0.18), (4, 0.16))
    min_words_for_ngram_check: int = 50

    def __post_init__(self):
        check_fraction(self.duplicate_char_drop_threshold, "duplicate_char_drop_threshold")
        for n, cap in self.ngram_caps:
            if n < 2:
                raise ConfigurationError(f"n-gram order must be >= 2, got {n}")
            check_fraction(cap, f"ngram cap for n={n}")


def is_persian_char(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _PERSIAN_RANGES)


def _has_persian_letter(word: str) -> bool:
    return any(is_persian_char(ch) for ch in word)


def _count_symbols(text: str, symbols: Sequence[str]) -> int:
    total = 0
    for sym in symbols:
        if sym == "...":
            # A run of three or more ASCII dots is one ellipsis cluster.
            total += len(re.findall(r"\.{3,}", text))
        else:
            total += text.count(sym)
    return total


def profanity_gate(doc: Document, lexicon: Iterable[str], stage: str = "profanity") -> StageDecision:
    """Drop iff any whitespace-delimited token equals a lexicon term.

    Matching is whole-token by design: substring matching over Persian would
    mass-delete innocent words.  The decision records the first matched term.
    """
    terms = frozenset(lexicon)
    if not terms:
        raise ConfigurationError("profanity rule enabled with an empty lexicon")
    for token in doc.text.split():
        if token in terms:
            return StageDecision(
                doc.id, stage, keep=False, reasons=("profanity",), detail={"term": token}
            )
    return StageDecision(doc.id, stage, keep=True)


def compute_quality_stats(doc: Document | str, lexicons: Lexicons | None = None) -> QualityStats:
    """All eight statistics for one normalized document.  Deterministic;
    an empty document yields zeroed stats."""
    lex = lexicons or Lexicons()
    text = doc.text if isinstance(doc, Document) else doc
    words = text.split()
    n_words = len(words)
    if n_words == 0:
        return QualityStats(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0.0)

    lines = [l for l in text.split("\n") if l.strip()]
    n_lines = len(lines)
    bullet = sum(1 for l in lines if l.lstrip()[:1] in lex.bullet_markers)
    ellipsis = sum(
        1 for l in lines if any(l.rstrip().endswith(m) for m in lex.ellipsis_markers)
    )
    return QualityStats(
        word_count=n_words,
        avg_word_len=sum(len(w) for w in words) / n_words,
        symbol_to_word_ratio=_count_symbols(text, lex.special_symbols) / n_words,
        persian_word_fraction=sum(1 for w in words if _has_persian_letter(w)) / n_words,
        bullet_line_fraction=bullet / n_lines if n_lines else 0.0,
        ellipsis_line_fraction=ellipsis / n_lines if n_lines else 0.0,
        necessary_word_count=sum(1 for w in words if w in lex.necessary_words),
        line_to_word_ratio=n_lines / n_words,
    )


def apply_quality_rules(
    stats: QualityStats,
    thresholds: QualityThresholds | None = None,
    doc_id: str = "",
    stage: str = "quality",
) -> StageDecision:
    """Drop iff any rule is violated; the decision lists every violated code."""
    t = thresholds or QualityThresholds()
    violations = []
    if not (t.min_words <= stats.word_count <= t.max_words):
        violations.append("q1")
    if not (t.min_avg_word_len <= stats.avg_word_len <= t.max_avg_word_len):
        violations.append("q2")
    if stats.symbol_to_word_ratio > t.max_symbol_ratio:
        violations.append("q3")
    if stats.persian_word_fraction < t.min_persian_word_fraction:
        violations.append("q4")
    if stats.bullet_line_fraction > t.max_bullet_line_fraction:
        violations.append("q5")
    if stats.ellipsis_line_fraction > t.max_ellipsis_line_fraction:
        violations.append("q6")
    if stats.necessary_word_count < t.min_necessary_words:
        violations.append("q7")
    if stats.line_to_word_ratio > t.max_line_word_ratio:
        violations.append("q8")
    return StageDecision(doc_id, stage, keep=not violations, reasons=tuple(violations))


def _dedup_lines(lines: Sequence[str]) -> tuple[list[str], int, int]:
    """Keep the first occurrence of each non-empty line.

    Returns (kept lines, removed line count, characters inside removed lines).
    Empty lines never count as duplicates; they carry paragraph structure.
    """
    seen: set[str] = set()
    kept: list[str] = []
    removed = 0
    dup_chars = 0
    for line in lines:
        if not line.strip():
            kept.append(line)
            continue
        if line in seen:
            removed += 1
            dup_chars += len(line)
            continue
        seen.add(line)
        kept.append(line)
    return kept, removed, dup_chars


def _top_ngram_coverage(words: Sequence[str], n: int) -> float:
    if len(words) < n:
        return 0.0
    counts = Counter(zip(*(words[i:] for i in range(n))))
    top = max(counts.values())
    return top * n / len(words)


def remove_repetition(
    doc: Document,
    params: RepetitionParams | None = None,
    stage: str = "repetition",
) -> tuple[Document, StageDecision]:
    """Clean or drop a document based on internal repetition.

    The duplicate-character fraction is measured on the original text; the
    n-gram caps are evaluated on the cleaned text so that re-running the
    stage on its own keep-path output changes nothing.
    """
    p = params or RepetitionParams()
    lines = doc.text.split("\n")
    kept_lines, removed, dup_chars = _dedup_lines(lines)
    total_chars = len(doc.text)
    dup_fraction = dup_chars / total_chars if total_chars else 0.0
    if dup_fraction > p.duplicate_char_drop_threshold:
        decision = StageDecision(
            doc.id,
            stage,
            keep=False,
            reasons=("dup_line_char_fraction",),
            detail={"fraction": round(dup_fraction, 6)},
        )
        return doc, decision

    cleaned_text = "\n".join(kept_lines)
    words = cleaned_text.split()
    if len(words) >= p.min_words_for_ngram_check:
        for n, cap in p.ngram_caps:
            coverage = _top_ngram_coverage(words, n)
            if coverage > cap:
                decision = StageDecision(
                    doc.id,
                    stage,
                    keep=False,
                    reasons=("top_ngram_fraction",),
                    detail={"n": n, "coverage": round(coverage, 6)},
                )
                return doc, decision

    cleaned = doc if removed == 0 else doc.with_text(cleaned_text)
    detail = {"removed_lines": removed} if removed else {}
    return cleaned, StageDecision(doc.id, stage, keep=True, detail=detail)


class QualityFilter(BaseEstimator):
    """Estimator-style wrapper over the quality rules.

    `predict` returns a boolean keep mask for a sequence of texts;
    `decide` returns the full StageDecision for one document.
    """

    def __init__(self, thresholds=None, lexicons=None):
        self.thresholds = thresholds
        self.lexicons = lexicons

    def fit(self, X=None, y=None):
        return self

    def decide(self, doc: Document) -> StageDecision:
        stats = compute_quality_stats(doc, self.lexicons)
        return apply_quality_rules(stats, self.thresholds, doc_id=doc.id)

    def predict(self, X) -> np.ndarray:
        texts = check_text_sequence(X)
        return np.array(
            [
                apply_quality_rules(
                    compute_quality_stats(t, self.lexicons), self.thresholds
                ).keep
                for t in texts
            ],
            dtype=bool,
        )


def load_lexicon_file(path) -> frozenset[str]:
    """One term per line, # comments, blank lines ignored."""
    terms = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            term = line.strip()
            if term and not term.startswith("#"):
                terms.add(term)
    return frozenset(terms)
