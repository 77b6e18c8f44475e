import random

import numpy as np
import pytest

from corpusforge.dedup import (
    DedupParams,
    MinHashDeduplicator,
    cluster_duplicates,
    estimate_jaccard,
    lsh_band_keys,
    minhash_signature,
    read_signatures,
    shingle,
    write_signatures,
)
from corpusforge.errors import ConfigurationError, UnsignableDocumentError


def _pair_with_jaccard(rng: random.Random, intersection: int, union: int):
    """Two uint64 sets with exact Jaccard intersection/union."""
    pool = rng.sample(range(1, 2 ** 62), union)
    shared = pool[:intersection]
    rest = pool[intersection:]
    extra_a = rest[: len(rest) // 2]
    extra_b = rest[len(rest) // 2 :]
    a = np.array(sorted(shared + extra_a), dtype=np.uint64)
    b = np.array(sorted(shared + extra_b), dtype=np.uint64)
    return a, b


def _exact_jaccard(a: np.ndarray, b: np.ndarray) -> float:
    sa, sb = set(a.tolist()), set(b.tolist())
    return len(sa & sb) / len(sa | sb)


# ------------------------------------------------------------------ shingle

def test_shingle_enumeration():
    assert shingle("a b c", 2).size == 2
    assert shingle("a b c d", 2).size == 3


def test_shingle_degenerate_length():
    assert shingle("a", 2).size == 0
    assert shingle("", 2).size == 0


def test_shingle_set_semantics():
    # repeated bigram collapses: "x y x y" has bigrams (x,y),(y,x),(x,y)
    assert shingle("x y x y", 2).size == 2


def test_shingle_thousand_word_doc(textgen):
    words = textgen.fa_words(1000)
    sh = shingle(" ".join(words), 2)
    assert sh.size <= 999
    distinct = {(words[i], words[i + 1]) for i in range(999)}
    assert sh.size == len(distinct)


# ---------------------------------------------------------------- signature

def test_identical_sets_identical_signatures():
    params = DedupParams(seed=3)
    rng = random.Random(0)
    a, _ = _pair_with_jaccard(rng, 50, 100)
    s1 = minhash_signature(a, params, doc_id="x")
    s2 = minhash_signature(a.copy(), params, doc_id="y")
    assert np.array_equal(s1.minima, s2.minima)


def test_disjoint_sets_estimate_zero():
    params = DedupParams(seed=3)
    rng = random.Random(1)
    a, b = _pair_with_jaccard(rng, 0, 200)
    sa = minhash_signature(a, params)
    sb = minhash_signature(b, params)
    assert estimate_jaccard(sa, sb) == 0.0


def test_self_estimate_one():
    params = DedupParams(seed=9)
    a, _ = _pair_with_jaccard(random.Random(2), 30, 60)
    s = minhash_signature(a, params)
    assert estimate_jaccard(s, s) == 1.0


def test_empty_shingles_unsignable():
    with pytest.raises(UnsignableDocumentError):
        minhash_signature(np.empty(0, dtype=np.uint64), DedupParams())


def test_params_mismatch_is_config_error():
    rng = random.Random(3)
    a, b = _pair_with_jaccard(rng, 50, 100)
    sa = minhash_signature(a, DedupParams(seed=1))
    sb = minhash_signature(b, DedupParams(seed=2))
    with pytest.raises(ConfigurationError):
        estimate_jaccard(sa, sb)


def test_signature_length_is_bands_times_rows():
    params = DedupParams(num_bands=10, rows_per_band=6)
    assert params.num_hashes == 60
    a, _ = _pair_with_jaccard(random.Random(4), 20, 40)
    assert minhash_signature(a, params).minima.shape == (60,)


def test_half_jaccard_estimate_within_three_sigma():
    # sigma = sqrt(0.25 / 60) ~ 0.0645; allow 3 sigma ~ 0.194 per pair
    params_seedless = DedupParams()
    for seed in range(10):
        rng = random.Random(seed)
        a, b = _pair_with_jaccard(rng, 60, 120)
        params = DedupParams(seed=seed)
        est = estimate_jaccard(minhash_signature(a, params), minhash_signature(b, params))
        assert abs(est - 0.5) <= 0.2


def test_estimator_mean_absolute_error():
    # 100 random pairs with known exact Jaccard; MAE bound 0.09
    params = DedupParams(seed=1234)
    rng = random.Random(99)
    errors = []
    for i in range(100):
        union = rng.randint(60, 300)
        inter = rng.randint(0, union)
        a, b = _pair_with_jaccard(rng, inter, union)
        exact = _exact_jaccard(a, b)
        est = estimate_jaccard(minhash_signature(a, params), minhash_signature(b, params))
        errors.append(abs(est - exact))
    assert float(np.mean(errors)) <= 0.09


# ---------------------------------------------------------------------- lsh

def test_band_keys_count_and_determinism():
    params = DedupParams(seed=5)
    a, _ = _pair_with_jaccard(random.Random(5), 40, 80)
    s = minhash_signature(a, params, doc_id="d")
    keys = lsh_band_keys(s)
    assert len(keys) == params.num_bands
    assert keys == lsh_band_keys(s)
    assert [b for b, _ in keys] == list(range(10))


def test_single_position_change_alters_exactly_one_band():
    params = DedupParams(seed=6)
    a, _ = _pair_with_jaccard(random.Random(6), 40, 80)
    s = minhash_signature(a, params, doc_id="d")
    for pos in (0, 7, 33, 59):
        minima = s.minima.copy()
        minima[pos] ^= np.uint64(1)
        from corpusforge.dedup import MinHashSignature

        other = MinHashSignature(doc_id="d2", minima=minima, params=params)
        diff = [
            band
            for (band, k1), (_, k2) in zip(lsh_band_keys(s), lsh_band_keys(other))
            if k1 != k2
        ]
        assert diff == [pos // params.rows_per_band]


def _candidate_rate(jaccard_frac, trials, seed0):
    inter, union = jaccard_frac
    hits = 0
    for t in range(trials):
        rng = random.Random(seed0 + t)
        params = DedupParams(seed=seed0 + t)
        a, b = _pair_with_jaccard(rng, inter, union)
        ka = set(lsh_band_keys(minhash_signature(a, params)))
        kb = set(lsh_band_keys(minhash_signature(b, params)))
        if ka & kb:
            hits += 1
    return hits / trials


def _closed_form(j, rows=6, bands=10):
    return 1.0 - (1.0 - j ** rows) ** bands


@pytest.mark.parametrize(
    "frac,j", [((30, 100), 0.3), ((50, 100), 0.5), ((80, 100), 0.8), ((95, 100), 0.95)]
)
def test_s_curve_matches_closed_form(frac, j):
    rate = _candidate_rate(frac, trials=500, seed0=int(j * 1000))
    assert abs(rate - _closed_form(j)) <= 0.05


def test_detection_and_false_candidate_rates():
    # duplicates at J=0.8 detected at >= 90%; false candidates at J=0.3 <= 5%
    assert _candidate_rate((80, 100), 500, 7000) >= 0.90
    assert _candidate_rate((30, 100), 500, 8000) <= 0.05


# ----------------------------------------------------------------- clusters

def test_three_identical_docs_one_cluster(textgen):
    text = textgen.fa_text(80)
    dedup = MinHashDeduplicator(seed=1).fit([text, text, text, textgen.fa_text(90)])
    assert dedup.clusters_.clusters == [["0", "1", "2"]]
    assert dedup.clusters_.representatives == ["0"]
    assert dedup.drop_ids_ == ["1", "2"]
    assert list(dedup.labels_) == [0, 0, 0, -1]


def test_all_distinct_docs_no_clusters(textgen):
    texts = [textgen.fa_text(80) for _ in range(20)]
    dedup = MinHashDeduplicator(seed=2).fit(texts)
    assert dedup.clusters_.clusters == []
    assert set(dedup.labels_) == {-1}


def test_transitive_closure_chain():
    stream = [
        ("A", (0, "k1")),
        ("B", (0, "k1")),
        ("B", (1, "k2")),
        ("C", (1, "k2")),
    ]
    clusters = cluster_duplicates(stream)
    assert clusters.clusters == [["A", "B", "C"]]
    assert clusters.representatives == ["A"]
    assert clusters.drop_list == ["B", "C"]


def test_cluster_stream_order_invariance():
    base = [
        ("d3", (0, "x")),
        ("d1", (0, "x")),
        ("d2", (4, "y")),
        ("d1", (4, "y")),
        ("d9", (2, "z")),
    ]
    expected = cluster_duplicates(base)
    rng = random.Random(0)
    for _ in range(10):
        shuffled = base[:]
        rng.shuffle(shuffled)
        got = cluster_duplicates(shuffled)
        assert got.clusters == expected.clusters
        assert got.drop_list == expected.drop_list


def test_exact_duplicate_completeness(textgen):
    # byte-identical documents always cluster together
    for seed in range(5):
        text = textgen.fa_text(60)
        dedup = MinHashDeduplicator(seed=seed).fit([text, text])
        assert dedup.drop_ids_ == ["1"]


def test_near_duplicates_clustered(textgen):
    words = textgen.fa_words(200)
    original = " ".join(words)
    mutated = words[:]
    mutated[10] = "تغییر"
    mutated[150] = "دیگر"
    near = " ".join(mutated)
    dedup = MinHashDeduplicator(seed=3).fit([original, near])
    assert dedup.drop_ids_ == ["1"]


def test_unsignable_routed_around(textgen):
    dedup = MinHashDeduplicator(seed=4).fit(["تک", "", textgen.fa_text(60)])
    assert dedup.unsignable_ids_ == ["0", "1"]
    assert list(dedup.labels_) == [-1, -1, -1]


def test_verify_threshold_blocks_weak_candidates(textgen):
    # force a fake band collision between dissimilar docs via a tiny band count
    a = textgen.fa_text(60)
    b = textgen.fa_text(60)
    strict = MinHashDeduplicator(num_bands=1, rows_per_band=1, seed=11, verify_threshold=0.5)
    strict.fit([a, b])
    loose = MinHashDeduplicator(num_bands=1, rows_per_band=1, seed=11)
    loose.fit([a, b])
    assert len(strict.drop_ids_) <= len(loose.drop_ids_)


def test_estimator_get_params():
    d = MinHashDeduplicator(seed=42)
    params = d.get_params()
    assert params["num_bands"] == 10 and params["rows_per_band"] == 6
    assert params["seed"] == 42


# ------------------------------------------------------------- signature io

def test_signature_file_roundtrip(tmp_path, textgen):
    params = DedupParams(seed=77)
    sigs = []
    for i in range(5):
        sh = shingle(textgen.fa_text(50), 2)
        sigs.append(minhash_signature(sh, params, doc_id=f"doc-{i}"))
    path = tmp_path / "sigs.bin"
    assert write_signatures(sigs, path) == 5
    loaded = list(read_signatures(path))
    assert [s.doc_id for s in loaded] == [f"doc-{i}" for i in range(5)]
    for orig, back in zip(sigs, loaded):
        assert back.params == params
        assert np.array_equal(orig.minima, back.minima)


def test_signature_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"garbage here")
    with pytest.raises(ConfigurationError):
        list(read_signatures(path))
