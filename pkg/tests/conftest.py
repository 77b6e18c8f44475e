"""Shared synthetic-text generators and heavyweight session fixtures.

Everything here is seeded; tests that consume these fixtures are
deterministic across runs and machines.
"""
from __future__ import annotations

import random

import pytest

from corpusforge import bpe

FA_LETTERS = "ابپتثجچحخدذرزژسشصضطظعغفقکگلمنوهی"
FA_SUFFIXES = ["", "", "", "", "ها", "ی", "تر", "ان", "م", "ش", "‌ها"]

EN_WORDS = (
    "the a and of to in once upon time there was little girl boy named who loved "
    "play park tree garden friend mother father day sun happy sad big small dog cat "
    "bird house went said saw found made wanted could would one two three red blue "
    "green toy ball story night morning smile laugh jump run walk look help share"
).split()


class TextGen:
    """Seeded generator of Persian-like and English-like prose."""

    def __init__(self, seed: int = 0, lemma_count: int = 3000):
        self.rng = random.Random(seed)
        self.lemmas = [
            "".join(self.rng.choice(FA_LETTERS) for _ in range(self.rng.randint(2, 6)))
            for _ in range(lemma_count)
        ]
        weights = [1.0 / (i + 1) for i in range(lemma_count)]
        self._cum = []
        acc = 0.0
        for w in weights:
            acc += w
            self._cum.append(acc)

    def fa_words(self, n: int) -> list[str]:
        base = self.rng.choices(self.lemmas, cum_weights=self._cum, k=n)
        sufs = self.rng.choices(FA_SUFFIXES, k=n)
        return [b + s for b, s in zip(base, sufs)]

    def fa_text(self, n_words: int, words_per_line: int = 15, with_necessary: bool = True) -> str:
        words = self.fa_words(n_words)
        if with_necessary and n_words >= 8:
            words[2] = "و"
            words[6] = "سپس"
            if n_words >= 30:
                words[20] = "اینکه"
        lines = [
            " ".join(words[i : i + words_per_line])
            for i in range(0, len(words), words_per_line)
        ]
        return "\n".join(lines)

    def en_text(self, n_words: int, words_per_line: int = 15) -> str:
        words = self.rng.choices(EN_WORDS, k=n_words)
        lines = [
            " ".join(words[i : i + words_per_line])
            for i in range(0, len(words), words_per_line)
        ]
        return "\n".join(lines)

    def mixed_text(self, n_pairs: int) -> str:
        """Strictly alternating Persian/English words, balanced halves."""
        fa = self.fa_words(n_pairs)
        en = self.rng.choices(EN_WORDS, k=n_pairs)
        return " ".join(x for pair in zip(fa, en) for x in pair)


@pytest.fixture(scope="session")
def textgen() -> TextGen:
    return TextGen(seed=20240401)


@pytest.fixture(scope="session")
def langid_model(textgen):
    from corpusforge.langid import train_langid

    gen = TextGen(seed=11)
    pairs = [(gen.fa_text(80), "fa") for _ in range(60)]
    pairs += [(gen.en_text(80), "en") for _ in range(60)]
    return train_langid(pairs)


@pytest.fixture(scope="session")
def big_persian_corpus():
    """At least 10 MB (utf-8) of morphology-rich Persian-like prose."""
    gen = TextGen(seed=7)
    docs = []
    total = 0
    while total < 10_500_000:
        text = gen.fa_text(150)
        docs.append(text)
        total += len(text.encode("utf-8"))
    return docs


@pytest.fixture(scope="session")
def english_base_model():
    """A base tokenizer trained on English with bare Persian char coverage,
    so Persian text falls back to character-level pieces under it."""
    gen = TextGen(seed=13)
    corpus = [gen.en_text(300) for _ in range(60)]
    corpus.append(" ".join(FA_LETTERS))
    corpus.append(" ".join("ها ی تر ان".split()))
    return bpe.train_bpe(corpus, vocab_size=900)


@pytest.fixture(scope="session")
def persian_trained_model(big_persian_corpus):
    return bpe.train_bpe(big_persian_corpus, vocab_size=5000)


@pytest.fixture(scope="session")
def extended_vocab(english_base_model, persian_trained_model):
    return bpe.extend_vocab(english_base_model, persian_trained_model)


@pytest.fixture(scope="session")
def small_extended_vocab():
    """Quick extended tokenizer for tests that only need mechanics."""
    gen = TextGen(seed=29, lemma_count=200)
    base = bpe.train_bpe(
        [gen.en_text(150) for _ in range(10)] + [" ".join(FA_LETTERS)], vocab_size=420
    )
    trained = bpe.train_bpe([gen.fa_text(120) for _ in range(25)], vocab_size=700)
    return bpe.extend_vocab(base, trained)
