import numpy as np
import pytest

from corpusforge.documents import Document
from corpusforge.errors import (
    ConfigurationError,
    TrainingDataError,
    UnclassifiableTextError,
)
from corpusforge.langid import (
    CharNgramLanguageIdentifier,
    filter_language,
    train_langid,
)

from conftest import TextGen


def _training_pairs(seed=5, n=50, words=60):
    gen = TextGen(seed=seed)
    pairs = [(gen.fa_text(words), "fa") for _ in range(n)]
    pairs += [(gen.en_text(words), "en") for _ in range(n)]
    return gen, pairs


def test_held_out_persian_high_confidence(langid_model, textgen):
    for _ in range(20):
        decision = langid_model.classify(textgen.fa_text(40))
        assert decision.label == "fa"
        assert decision.confidence >= 0.95


def test_held_out_english_high_confidence(langid_model, textgen):
    for _ in range(20):
        decision = langid_model.classify(textgen.en_text(40))
        assert decision.label == "en"
        assert decision.confidence >= 0.95


def test_balanced_mixture_below_threshold(langid_model, textgen):
    for _ in range(10):
        decision = langid_model.classify(textgen.mixed_text(60))
        assert decision.confidence < 0.8


def test_posteriors_sum_to_one(langid_model, textgen):
    texts = [textgen.fa_text(30), textgen.en_text(30), textgen.mixed_text(30)]
    proba = langid_model.predict_proba(texts)
    assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)


def test_single_label_is_configuration_error():
    gen = TextGen(seed=1)
    with pytest.raises(ConfigurationError):
        train_langid([(gen.fa_text(100), "fa") for _ in range(5)])


def test_insufficient_text_names_label():
    gen = TextGen(seed=2)
    pairs = [(gen.fa_text(400), "fa"), ("tiny", "en")]
    with pytest.raises(TrainingDataError, match="'en'"):
        train_langid(pairs)


def test_empty_text_unclassifiable(langid_model):
    with pytest.raises(UnclassifiableTextError):
        langid_model.classify("")
    with pytest.raises(UnclassifiableTextError):
        langid_model.classify("   \n\t ")


def test_duplicated_corpus_identical_posteriors():
    gen, pairs = _training_pairs(seed=9)
    single = train_langid(pairs)
    double = train_langid(pairs + pairs)
    for _ in range(10):
        text = gen.fa_text(25) if gen.rng.random() < 0.5 else gen.en_text(25)
        p1 = single._posteriors(text)
        p2 = double._posteriors(text)
        assert p1 == pytest.approx(p2, abs=1e-12)


def test_determinism():
    gen, pairs = _training_pairs(seed=3)
    a = train_langid(pairs)
    b = train_langid(pairs)
    text = gen.fa_text(40)
    assert a.classify(text).confidence == b.classify(text).confidence


def test_label_swap_symmetry():
    _, pairs = _training_pairs(seed=4)
    swapped = [(t, {"fa": "en", "en": "fa"}[l]) for t, l in pairs]
    a = train_langid(pairs)
    b = train_langid(swapped)
    gen = TextGen(seed=44)
    for _ in range(5):
        text = gen.fa_text(30)
        pa = a._posteriors(text)
        pb = b._posteriors(text)
        assert pa["fa"] == pytest.approx(pb["en"], abs=1e-12)
        assert pa["en"] == pytest.approx(pb["fa"], abs=1e-12)


def test_monotone_threshold(langid_model, textgen):
    doc = Document(id="d", text=textgen.fa_text(40))
    kept_low = filter_language(doc, langid_model, "fa", 0.5).keep
    kept_high = filter_language(doc, langid_model, "fa", 0.99).keep
    # raising the threshold can only turn keeps into drops
    assert kept_low or not kept_high


def test_sklearn_estimator_api(langid_model, textgen):
    assert list(langid_model.classes_) == ["en", "fa"]
    labels = langid_model.predict([textgen.fa_text(20), textgen.en_text(20)])
    assert list(labels) == ["fa", "en"]
    params = langid_model.get_params()
    assert params["window"] == 2000
    clone_params = CharNgramLanguageIdentifier(**params)
    assert clone_params.get_params() == params


def test_save_load_roundtrip(tmp_path, langid_model, textgen):
    path = tmp_path / "model.bin"
    langid_model.save(path)
    loaded = CharNgramLanguageIdentifier.load(path)
    for _ in range(5):
        text = textgen.fa_text(30)
        assert loaded.classify(text).confidence == pytest.approx(
            langid_model.classify(text).confidence, abs=1e-12
        )
    assert list(loaded.classes_) == list(langid_model.classes_)


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"not a model")
    with pytest.raises(ConfigurationError):
        CharNgramLanguageIdentifier.load(path)


# ------------------------------------------------------------ filter stage

def test_filter_keeps_persian(langid_model, textgen):
    doc = Document(id="p1", text=textgen.fa_text(60))
    decision = filter_language(doc, langid_model, "fa", 0.8)
    assert decision.keep
    assert decision.detail["label"] == "fa"


def test_filter_drops_english_with_reason(langid_model, textgen):
    doc = Document(id="e1", text=textgen.en_text(60))
    decision = filter_language(doc, langid_model, "fa", 0.8)
    assert not decision.keep
    assert decision.reasons == ("wrong_language",)


def test_filter_drops_low_confidence(langid_model, textgen):
    # Persian with heavy Latin boilerplate lands under the 0.8 gate.
    doc = Document(id="m1", text=textgen.mixed_text(80))
    decision = filter_language(doc, langid_model, "fa", 0.8)
    assert not decision.keep
    assert decision.reasons[0] in ("low_confidence", "wrong_language")


def test_filter_empty_text_reason(langid_model):
    decision = filter_language(Document(id="x", text="  "), langid_model, "fa", 0.8)
    assert not decision.keep
    assert decision.reasons == ("empty_text",)


def test_filter_uses_meta_annotations():
    doc = Document(id="a", text="whatever", meta={"lang": "fa", "lang_confidence": 0.93})
    decision = filter_language(doc, None, "fa", 0.8)
    assert decision.keep
    doc2 = Document(id="b", text="whatever", meta={"lang": "fa", "lang_confidence": 0.7})
    assert not filter_language(doc2, None, "fa", 0.8).keep


def test_filter_invalid_threshold(langid_model):
    with pytest.raises(ConfigurationError):
        filter_language(Document(id="x", text="متن"), langid_model, "fa", 1.5)
