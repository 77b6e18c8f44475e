"""Character n-gram language identification with calibrated confidences.

A multinomial model over character 1-3 grams.  Scores are per-n-gram mean
log-likelihoods (length-normalized), turned into a posterior with a softmax.
The normalization matters: it keeps confidences comparable across document
lengths and makes a 50/50 bilingual mixture score near 0.5 instead of
saturating, which is what a threshold gate needs.

Smoothing is additive on relative frequencies, not raw counts, so feeding
the corpus twice yields bit-identical posteriors.
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .documents import Document, StageDecision
from .errors import ConfigurationError, TrainingDataError, UnclassifiableTextError
from .validation import check_text_sequence

_MAGIC = b"CFLM"
_VERSION = 1


@dataclass
class LangDecision:
    label: str
    confidence: float
    kept: bool | None = None
    posteriors: dict[str, float] = field(default_factory=dict)


def _char_ngrams(text: str, order: int) -> Iterable[str]:
    for i in range(len(text) - order + 1):
        yield text[i : i + order]


class CharNgramLanguageIdentifier(ClassifierMixin, BaseEstimator):
    """Language classifier over character n-grams.

    Parameters
    ----------
    orders : tuple of int
        N-gram orders pooled into the score (default 1, 2, 3).
    smoothing : float
        Additive smoothing mass on relative frequencies.  Must sit well
        below typical gram frequencies (about 1/vocab) or it drowns the
        signal; the default suits corpus-scale gram tables.
    window : int
        Classification looks at the first `window` characters only, which
        bounds cost on long documents and keeps audits reproducible.
    min_chars_per_label : int
        Training rejects labels with less text than this.
    """

    def __init__(self, orders=(1, 2, 3), smoothing=1e-6, window=2000, min_chars_per_label=1000):
        self.orders = orders
        self.smoothing = smoothing
        self.window = window
        self.min_chars_per_label = min_chars_per_label

    # ------------------------------------------------------------------ fit

    def fit(self, X, y):
        texts = check_text_sequence(X)
        labels = [str(l) for l in y]
        if len(texts) != len(labels):
            raise ConfigurationError("X and y must have the same length")
        if self.smoothing <= 0:
            raise ConfigurationError(f"smoothing must be positive, got {self.smoothing}")
        orders = tuple(int(o) for o in self.orders)
        if not orders or any(o < 1 for o in orders):
            raise ConfigurationError(f"invalid n-gram orders {self.orders}")

        classes = sorted(set(labels))
        if len(classes) < 2:
            raise ConfigurationError(f"need at least 2 labels, got {len(classes)}")

        per_label_text: dict[str, list[str]] = {c: [] for c in classes}
        doc_counts = Counter(labels)
        for text, label in zip(texts, labels):
            per_label_text[label].append(text)
        for label in classes:
            n_chars = sum(len(t) for t in per_label_text[label])
            if n_chars < self.min_chars_per_label:
                raise TrainingDataError(
                    f"label {label!r} has {n_chars} characters of text, "
                    f"need at least {self.min_chars_per_label}"
                )

        counts: dict[int, dict[str, Counter]] = {o: {c: Counter() for c in classes} for o in orders}
        for label in classes:
            for text in per_label_text[label]:
                for o in orders:
                    counts[o][label].update(_char_ngrams(text, o))

        self.classes_ = np.array(classes, dtype=object)
        self._orders = orders
        self._counts = counts
        self._doc_counts = dict(doc_counts)
        self._finalize()
        return self

    def _finalize(self):
        """Derive log-probability tables from raw counts."""
        alpha = float(self.smoothing)
        classes = list(self.classes_)
        total_docs = sum(self._doc_counts.values())
        self._log_priors = {
            c: math.log(self._doc_counts[c] / total_docs) for c in classes
        }
        self._log_probs: dict[int, dict[str, dict[str, float]]] = {}
        self._log_unseen: dict[int, dict[str, float]] = {}
        for o in self._orders:
            vocab = set()
            for c in classes:
                vocab.update(self._counts[o][c])
            v = len(vocab)
            denom = 1.0 + alpha * (v + 1)
            self._log_probs[o] = {}
            self._log_unseen[o] = {}
            for c in classes:
                table = self._counts[o][c]
                total = sum(table.values())
                probs = {}
                for gram in vocab:
                    f = table.get(gram, 0) / total if total else 0.0
                    probs[gram] = math.log((f + alpha) / denom)
                self._log_probs[o][c] = probs
                self._log_unseen[o][c] = math.log(alpha / denom)

    # ------------------------------------------------------------- predict

    def _scores(self, text: str) -> dict[str, float]:
        window = text[: self.window]
        classes = list(self.classes_)
        totals = {c: 0.0 for c in classes}
        n_grams = 0
        for o in self._orders:
            gram_counts = Counter(_char_ngrams(window, o))
            tables = self._log_probs[o]
            unseen = self._log_unseen[o]
            for gram, k in gram_counts.items():
                n_grams += k
                for c in classes:
                    totals[c] += k * tables[c].get(gram, unseen[c])
        if n_grams == 0:
            raise UnclassifiableTextError("text has no character n-grams")
        return {c: totals[c] / n_grams + self._log_priors[c] for c in classes}

    def _posteriors(self, text: str) -> dict[str, float]:
        scores = self._scores(text)
        peak = max(scores.values())
        exp = {c: math.exp(s - peak) for c, s in scores.items()}
        z = sum(exp.values())
        return {c: e / z for c, e in exp.items()}

    def classify(self, text: str) -> LangDecision:
        """Label and posterior confidence for one text.

        Raises UnclassifiableTextError on empty or whitespace-only input.
        """
        check_is_fitted(self, "classes_")
        if not text.strip():
            raise UnclassifiableTextError("empty or whitespace-only text")
        post = self._posteriors(text)
        label = max(sorted(post), key=lambda c: post[c])
        return LangDecision(label=label, confidence=post[label], posteriors=post)

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "classes_")
        texts = check_text_sequence(X)
        out = np.empty((len(texts), len(self.classes_)))
        for i, text in enumerate(texts):
            post = self._posteriors(text)
            out[i] = [post[c] for c in self.classes_]
        return out

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    # --------------------------------------------------------- persistence

    def save(self, path: str | Path) -> None:
        check_is_fitted(self, "classes_")
        payload = {
            "orders": list(self._orders),
            "smoothing": self.smoothing,
            "window": self.window,
            "min_chars_per_label": self.min_chars_per_label,
            "labels": list(self.classes_),
            "doc_counts": self._doc_counts,
            "counts": {
                str(o): {c: dict(self._counts[o][c]) for c in self.classes_}
                for o in self._orders
            },
        }
        blob = zlib.compress(json.dumps(payload, ensure_ascii=False).encode("utf-8"))
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<HI", _VERSION, len(blob)))
            fh.write(blob)

    @classmethod
    def load(cls, path: str | Path) -> "CharNgramLanguageIdentifier":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _MAGIC:
                raise ConfigurationError(f"{path}: not a language model file")
            version, size = struct.unpack("<HI", fh.read(6))
            if version != _VERSION:
                raise ConfigurationError(f"{path}: unsupported model version {version}")
            payload = json.loads(zlib.decompress(fh.read(size)).decode("utf-8"))
        model = cls(
            orders=tuple(payload["orders"]),
            smoothing=payload["smoothing"],
            window=payload["window"],
            min_chars_per_label=payload["min_chars_per_label"],
        )
        model.classes_ = np.array(payload["labels"], dtype=object)
        model._orders = tuple(payload["orders"])
        model._doc_counts = {k: int(v) for k, v in payload["doc_counts"].items()}
        model._counts = {
            int(o): {c: Counter(table) for c, table in per_label.items()}
            for o, per_label in payload["counts"].items()
        }
        model._finalize()
        return model


def train_langid(
    labeled_corpus: Sequence[tuple[str, str]],
    smoothing: float = 1e-6,
    **kwargs,
) -> CharNgramLanguageIdentifier:
    """Train from (text, language tag) pairs.  Deterministic given input order."""
    texts = [t for t, _ in labeled_corpus]
    labels = [l for _, l in labeled_corpus]
    return CharNgramLanguageIdentifier(smoothing=smoothing, **kwargs).fit(texts, labels)


def classify(text: str, model: CharNgramLanguageIdentifier) -> LangDecision:
    return model.classify(text)


def filter_language(
    doc: Document,
    model: CharNgramLanguageIdentifier | None,
    target: str,
    threshold: float,
    stage: str = "langid",
) -> StageDecision:
    """Keep iff the winning label equals `target` with confidence >= threshold.

    The decision records the winning label, its confidence, and the posterior
    of the target label, so audits can reconstruct the gate either way.
    Externally produced annotations in doc.meta ("lang", "lang_confidence")
    are honored when no model is given, so another identifier can be swapped
    in upstream.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ConfigurationError(f"threshold must lie in [0, 1], got {threshold}")
    if model is None:
        label = doc.meta.get("lang")
        conf = doc.meta.get("lang_confidence")
        if label is None or conf is None:
            raise ConfigurationError(
                "no language model and no lang/lang_confidence annotations on document"
            )
        detail = {"label": str(label), "confidence": float(conf)}
        target_conf = float(conf) if label == target else 0.0
    else:
        try:
            decision = model.classify(doc.text)
        except UnclassifiableTextError:
            return StageDecision(doc.id, stage, keep=False, reasons=("empty_text",))
        label = decision.label
        conf = decision.confidence
        target_conf = decision.posteriors.get(target, 0.0)
        detail = {
            "label": label,
            "confidence": round(conf, 6),
            "target_confidence": round(target_conf, 6),
        }
    if label != target:
        return StageDecision(doc.id, stage, keep=False, reasons=("wrong_language",), detail=detail)
    if float(conf) < threshold:
        return StageDecision(doc.id, stage, keep=False, reasons=("low_confidence",), detail=detail)
    return StageDecision(doc.id, stage, keep=True, detail=detail)
