import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corpusforge.bpe import (
    BpeModel,
    BpeTokenizer,
    DEFAULT_MARKER,
    ExtendedVocab,
    extend_vocab,
    fertility,
    load_model,
    pretokenize,
    save_model,
    train_bpe,
)
from corpusforge.errors import (
    ConfigurationError,
    DataError,
    TrainingDataError,
    VocabUnreachableError,
)

from conftest import FA_LETTERS, TextGen

ROUNDTRIP_ALPHABET = "ab کتاب‌ی xyz01 \t\n▁…#"


# ------------------------------------------------------------ pretokenizer

def test_pretokenize_marks_space_preceded_words():
    assert pretokenize("a b") == [("a", False), ("b", True)]
    assert pretokenize(" a") == [("a", True)]
    assert pretokenize("a  b") == [("a", False), (" ", False), ("b", True)]
    assert pretokenize("a\nb") == [("a", False), ("\n", False), ("b", False)]
    assert pretokenize("a\n b") == [("a", False), ("\n", False), ("b", True)]
    assert pretokenize("a ") == [("a", False), (" ", False)]
    assert pretokenize("") == []


# ----------------------------------------------------------------- training

def test_hand_traced_first_merge():
    # corpus "ab ab ab": segments ab(x1), marked-ab(x2)
    # pair counts: (a,b) -> 3, (marker,a) -> 2, so (a,b) merges first
    base = train_bpe(["ab ab ab"], vocab_size=259)  # 256 bytes + {a,b,marker}
    assert base.merges == ()
    model = train_bpe(["ab ab ab"], vocab_size=260)
    assert model.merges == (("a", "b"),)


def test_zero_merges_at_alphabet_size():
    model = train_bpe(["ab ab ab"], vocab_size=259)
    assert model.base_size == 259
    assert model.vocab_size == 259
    assert model.merges == ()


def test_vocab_unreachable():
    with pytest.raises(VocabUnreachableError) as err:
        train_bpe(["ab ab ab"], vocab_size=100)
    assert err.value.achieved == 259


def test_duplicated_corpus_identical_merges(textgen):
    docs = [textgen.fa_text(60) for _ in range(10)]
    m1 = train_bpe(docs, vocab_size=500)
    m2 = train_bpe(docs + docs, vocab_size=500)
    assert m1.merges == m2.merges
    assert m1.vocab == m2.vocab


def test_training_deterministic(textgen):
    docs = [textgen.fa_text(60) for _ in range(10)]
    assert train_bpe(docs, vocab_size=400).merges == train_bpe(docs, vocab_size=400).merges


def test_merge_stops_below_frequency_two():
    # every pair unique: no merge can reach frequency 2
    model = train_bpe(["abcdefg"], vocab_size=500)
    assert model.merges == ()


def test_vocab_size_reached_exactly(textgen):
    docs = [textgen.fa_text(100) for _ in range(20)]
    model = train_bpe(docs, vocab_size=600)
    assert model.vocab_size == 600
    assert len(model.vocab) == len(set(model.vocab.values()))


def test_empty_corpus_rejected():
    with pytest.raises(TrainingDataError):
        train_bpe([], vocab_size=300)


# ----------------------------------------------------------------- encoding

def _random_strings(seed, count, alphabet=ROUNDTRIP_ALPHABET, max_len=60):
    rng = random.Random(seed)
    for _ in range(count):
        yield "".join(rng.choice(alphabet) for _ in range(rng.randint(0, max_len)))


def test_roundtrip_randomized(textgen):
    model = train_bpe([textgen.fa_text(100) for _ in range(10)], vocab_size=500)
    for text in _random_strings(42, 1500):
        assert model.decode(model.encode(text)) == text


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet=ROUNDTRIP_ALPHABET, max_size=50))
def test_roundtrip_property(text):
    model = _PROPERTY_MODEL
    assert model.decode(model.encode(text)) == text


_PROPERTY_MODEL = train_bpe(
    ["کتاب کتاب‌ها مدرسه و رفتند " * 5, "ab ab abc xyz " * 5], vocab_size=420
)


def test_byte_fallback_totality():
    model = train_bpe(["ab ab"], vocab_size=300)
    probe = "漢字 emoji 😀 ژ"  # none of these are in the alphabet
    assert model.decode(model.encode(probe)) == probe


def test_known_ids_below_vocab_size(textgen):
    model = train_bpe([textgen.fa_text(80)], vocab_size=400)
    ids = model.encode(textgen.fa_text(40))
    assert all(0 <= i < model.vocab_size for i in ids)


# ---------------------------------------------------------------- extension

def test_net_new_arithmetic(textgen):
    base = train_bpe([textgen.en_text(200) for _ in range(10)], vocab_size=500)
    trained = train_bpe([textgen.fa_text(150) for _ in range(10)], vocab_size=700)
    ext = extend_vocab(base, trained)
    overlap = sum(1 for t in trained.vocab if t in base.vocab)
    assert ext.net_new_count == 700 - overlap
    assert len(ext.new_tokens) == ext.net_new_count
    # ids contiguous after the base space
    ids = [ext._new_ids[t] for t in ext.new_tokens]
    assert ids == list(range(len(base.vocab), len(base.vocab) + len(ids)))


def test_engineered_overlap_count():
    # a synthetic base containing exactly 79 of the trained model's tokens
    gen = TextGen(seed=101)
    trained = train_bpe([gen.fa_text(150) for _ in range(30)], vocab_size=1000)
    by_id = sorted(trained.vocab.items(), key=lambda kv: kv[1])
    shared = [tok for tok, _ in by_id[300:379]]
    filler = [f"en_filler_{i}" for i in range(400)]
    assert not set(filler) & set(trained.vocab)
    base_tokens = shared + filler
    base = {tok: i for i, tok in enumerate(base_tokens)}
    ext = extend_vocab(base, trained)
    assert ext.net_new_count == 1000 - 79


def test_fully_contained_extension_is_identity(textgen):
    docs = [textgen.fa_text(100) for _ in range(10)]
    trained = train_bpe(docs, vocab_size=400)
    bigger = train_bpe(docs, vocab_size=600)
    assert set(trained.vocab) <= set(bigger.vocab)
    ext = extend_vocab(bigger, trained)
    assert ext.net_new_count == 0
    assert ext.new_merges == ()
    for text in docs[:3]:
        assert ext.encode(text) == bigger.encode(text)


def test_disjoint_vocab_all_new():
    gen = TextGen(seed=102)
    trained = train_bpe([gen.fa_text(100) for _ in range(10)], vocab_size=500)
    base = {f"tok{i}": i for i in range(100)}
    ext = extend_vocab(base, trained)
    assert ext.net_new_count == 500


def test_non_regression_randomized(small_extended_vocab):
    ext = small_extended_vocab
    gen = TextGen(seed=200)
    for _ in range(500):
        text = gen.fa_text(gen.rng.randint(1, 60))
        assert len(ext.encode(text)) <= len(ext.base.encode(text))


def test_extended_roundtrip(small_extended_vocab):
    ext = small_extended_vocab
    gen = TextGen(seed=201)
    for _ in range(300):
        text = gen.fa_text(gen.rng.randint(1, 40))
        assert ext.decode(ext.encode(text)) == text
    for text in _random_strings(7, 300):
        assert ext.decode(ext.encode(text)) == text


def test_base_ids_decode_identically(small_extended_vocab):
    # original-language capability untouched: ids below the base size decode
    # exactly as the base model decodes them
    ext = small_extended_vocab
    base = ext.base
    gen = TextGen(seed=202)
    for _ in range(50):
        text = gen.en_text(20)
        ids = base.encode(text)
        assert all(i < len(base.vocab) for i in ids)
        assert ext.decode(ids) == base.decode(ids)


def test_english_unchanged_when_merges_persian_only(small_extended_vocab):
    ext = small_extended_vocab
    persian = set(FA_LETTERS) | {"‌"}
    only_persian_merges = all(
        set(l + r) <= persian or set(l + r) <= persian | {DEFAULT_MARKER}
        for l, r in ext.new_merges
    )
    gen = TextGen(seed=203)
    if only_persian_merges:
        for _ in range(30):
            text = gen.en_text(25)
            assert ext.encode(text) == ext.base.encode(text)


def test_marker_mismatch_rejected(textgen):
    base = train_bpe([textgen.en_text(50)], vocab_size=400)
    trained = train_bpe([textgen.fa_text(50)], vocab_size=400, marker="▂")
    with pytest.raises(ConfigurationError):
        extend_vocab(base, trained)


def test_from_vocab_requires_contiguous_ids():
    with pytest.raises(ConfigurationError):
        BpeModel.from_vocab({"a": 0, "b": 2})


# ---------------------------------------------------------------- fertility

def test_fertility_reduction_positive(small_extended_vocab):
    gen = TextGen(seed=300)
    report = fertility([gen.fa_text(120) for _ in range(20)], small_extended_vocab)
    assert report.extended_tokens_per_word <= report.base_tokens_per_word
    assert report.reduction > 0.2
    assert report.word_count == 120 * 20


def test_fertility_english_stream_zero_reduction(small_extended_vocab):
    gen = TextGen(seed=301)
    report = fertility([gen.en_text(100) for _ in range(5)], small_extended_vocab)
    assert report.reduction == pytest.approx(0.0, abs=1e-9)


def test_fertility_empty_stream_error(small_extended_vocab):
    with pytest.raises(DataError):
        fertility(["", "   "], small_extended_vocab)


def test_sample_sentence_non_regression(small_extended_vocab):
    # the classic morphology showcase: clitics and verb suffixes
    sentence = "علی با دوستانش به مدرسه رفتند."
    ext = small_extended_vocab
    n_base = len(ext.base.encode(sentence))
    n_ext = len(ext.encode(sentence))
    assert n_ext <= n_base
    assert ext.decode(ext.encode(sentence)) == sentence


# ----------------------------------------------------------------- model io

def test_save_load_base_model(tmp_path, textgen):
    model = train_bpe([textgen.fa_text(80) for _ in range(5)], vocab_size=450)
    path = tmp_path / "base.model"
    save_model(model, path)
    loaded = load_model(path)
    assert isinstance(loaded, BpeModel)
    assert loaded.vocab == model.vocab
    assert loaded.merges == model.merges
    text = textgen.fa_text(30)
    assert loaded.encode(text) == model.encode(text)


def test_save_load_extended_model(tmp_path, small_extended_vocab):
    path = tmp_path / "ext.model"
    save_model(small_extended_vocab, path)
    loaded = load_model(path)
    assert isinstance(loaded, ExtendedVocab)
    assert loaded.net_new_count == small_extended_vocab.net_new_count
    gen = TextGen(seed=400)
    text = gen.fa_text(40)
    assert loaded.encode(text) == small_extended_vocab.encode(text)


def test_load_rejects_unknown_header(tmp_path):
    path = tmp_path / "bad.model"
    path.write_text("who knows v9\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_model(path)


# ------------------------------------------------------------ estimator api

def test_tokenizer_estimator(textgen):
    tok = BpeTokenizer(vocab_size=420)
    docs = [textgen.fa_text(60) for _ in range(5)]
    encoded = tok.fit(docs).transform(docs)
    assert tok.inverse_transform(encoded) == docs
    assert tok.get_params() == {"vocab_size": 420, "marker": DEFAULT_MARKER}


def test_tokenizer_unfitted_raises(textgen):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        BpeTokenizer().transform([textgen.fa_text(10)])
