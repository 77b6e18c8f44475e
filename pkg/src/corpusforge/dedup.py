"""Near-duplicate detection: word-bigram shingles, MinHash, LSH banding.

Signatures hold 60 minima (10 bands of 6 rows) of seeded 64-bit hashes over
the document's shingle set.  The fraction of agreeing positions between two
signatures is an unbiased estimate of Jaccard similarity with standard error
sqrt(J(1-J)/60) <= 0.065.  Documents colliding on any band become duplicate
candidates; for true similarity J the collision probability is
1 - (1 - J^6)^10.

Phase 1 (shingle, sign, band keys) is a pure per-document map.  Phase 2
(clustering) is a single logical reducer over the merged band-key stream;
its output depends only on the set of keys, not their order.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConfigurationError, UnsignableDocumentError
from .validation import check_text_sequence

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)

_SIG_MAGIC = b"CFSG"
_SIG_VERSION = 1


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = x + _GOLDEN
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def stable_hash64(data: str | bytes) -> int:
    """Stable 64-bit hash (process-independent, unlike built-in hash)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class DedupParams:
    num_bands: int = 10
    rows_per_band: int = 6
    hash_width: int = 64
    shingle_order: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_bands < 1 or self.rows_per_band < 1:
            raise ConfigurationError("num_bands and rows_per_band must be >= 1")
        if self.hash_width != 64:
            raise ConfigurationError("only 64-bit hash functions are supported")
        if self.shingle_order < 1:
            raise ConfigurationError("shingle_order must be >= 1")

    @property
    def num_hashes(self) -> int:
        return self.num_bands * self.rows_per_band

    def hash_keys(self) -> np.ndarray:
        idx = np.arange(1, self.num_hashes + 1, dtype=np.uint64)
        return _splitmix64(idx * _GOLDEN + _U64(self.seed & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True, eq=False)
class MinHashSignature:
    doc_id: str
    minima: np.ndarray  # uint64 of length num_bands * rows_per_band
    params: DedupParams

    def same_values(self, other: "MinHashSignature") -> bool:
        return self.params == other.params and bool(np.array_equal(self.minima, other.minima))


def shingle(text: str, order: int = 2) -> np.ndarray:
    """Set of 64-bit hashes of consecutive word n-grams, sorted ascending.

    Documents with fewer than `order` words yield the empty set.
    """
    words = text.split()
    if len(words) < order:
        return np.empty(0, dtype=np.uint64)
    hashes = np.fromiter(
        (
            stable_hash64("\x1f".join(words[i : i + order]))
            for i in range(len(words) - order + 1)
        ),
        dtype=np.uint64,
    )
    return np.unique(hashes)


def minhash_signature(
    shingles: np.ndarray | Sequence[int],
    params: DedupParams,
    doc_id: str = "",
) -> MinHashSignature:
    """minima[i] = min over shingles of the i-th seeded hash variant."""
    arr = np.asarray(shingles, dtype=np.uint64)
    if arr.size == 0:
        raise UnsignableDocumentError(f"document {doc_id!r} has no shingles to sign")
    keys = params.hash_keys()
    minima = np.empty(params.num_hashes, dtype=np.uint64)
    for i, key in enumerate(keys):
        minima[i] = _splitmix64(arr ^ key).min()
    return MinHashSignature(doc_id=doc_id, minima=minima, params=params)


def estimate_jaccard(a: MinHashSignature, b: MinHashSignature) -> float:
    """Fraction of signature positions where the minima agree."""
    if a.params != b.params:
        raise ConfigurationError("signatures were produced with different params or seed")
    return float(np.mean(a.minima == b.minima))


def lsh_band_keys(sig: MinHashSignature) -> list[tuple[int, str]]:
    """Exactly num_bands (band index, band digest) pairs.

    The digest hashes the band's minima together with the band index, so
    identical row values in different bands cannot collide.
    """
    p = sig.params
    keys = []
    for band in range(p.num_bands):
        rows = sig.minima[band * p.rows_per_band : (band + 1) * p.rows_per_band]
        digest = hashlib.blake2b(
            band.to_bytes(4, "little") + rows.tobytes(), digest_size=8
        ).hexdigest()
        keys.append((band, digest))
    return keys


@dataclass
class DuplicateClusters:
    clusters: list[list[str]]  # each sorted; list ordered by representative
    representatives: list[str]
    drop_list: list[str]


class _UnionFind:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def find(self, x: str) -> str:
        parent = self.parent
        root = x
        while parent.setdefault(root, root) != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # Attach the larger id under the smaller for determinism.
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def cluster_duplicates(
    band_key_stream: Iterable[tuple[str, tuple[int, str]]],
    signatures: dict[str, MinHashSignature] | None = None,
    verify_threshold: float | None = None,
) -> DuplicateClusters:
    """Union documents sharing any band key; transitive closure applies.

    Representatives are the lexicographically lowest doc id per cluster and
    the drop list is every other member, so the result is deterministic no
    matter how the stream was sharded.  With `verify_threshold` set, a
    candidate pair is only united when the signature agreement estimate
    reaches the threshold (requires `signatures`).
    """
    if verify_threshold is not None and signatures is None:
        raise ConfigurationError("verify_threshold requires signatures")
    by_key: dict[tuple[int, str], list[str]] = {}
    for doc_id, key in band_key_stream:
        by_key.setdefault(key, []).append(doc_id)

    uf = _UnionFind()
    members: set[str] = set()
    for key in sorted(by_key):
        group = sorted(set(by_key[key]))
        if len(group) < 2:
            continue
        anchor = group[0]
        for other in group[1:]:
            if verify_threshold is not None:
                sim = estimate_jaccard(signatures[anchor], signatures[other])
                if sim < verify_threshold:
                    continue
            uf.union(anchor, other)
            members.add(anchor)
            members.add(other)

    groups: dict[str, list[str]] = {}
    for doc_id in sorted(members):
        groups.setdefault(uf.find(doc_id), []).append(doc_id)

    clusters = sorted((sorted(g) for g in groups.values() if len(g) > 1), key=lambda g: g[0])
    representatives = [c[0] for c in clusters]
    drop_list = sorted(d for c in clusters for d in c[1:])
    return DuplicateClusters(clusters=clusters, representatives=representatives, drop_list=drop_list)


class MinHashDeduplicator(BaseEstimator):
    """Corpus-level near-duplicate detector.

    After `fit`, `labels_` assigns each input a cluster index (-1 when the
    document is not part of any duplicate cluster), `drop_ids_` lists the
    non-representative members, and `unsignable_ids_` the documents that
    were too short to shingle (those are routed around deduplication).
    """

    def __init__(
        self,
        num_bands: int = 10,
        rows_per_band: int = 6,
        shingle_order: int = 2,
        seed: int = 0,
        verify_threshold: float | None = None,
    ):
        self.num_bands = num_bands
        self.rows_per_band = rows_per_band
        self.shingle_order = shingle_order
        self.seed = seed
        self.verify_threshold = verify_threshold

    def _params(self) -> DedupParams:
        return DedupParams(
            num_bands=self.num_bands,
            rows_per_band=self.rows_per_band,
            shingle_order=self.shingle_order,
            seed=self.seed,
        )

    def fit(self, X, y=None, ids: Sequence[str] | None = None):
        texts = check_text_sequence(X)
        if ids is None:
            width = len(str(max(len(texts) - 1, 0)))
            ids = [str(i).zfill(width) for i in range(len(texts))]
        ids = [str(i) for i in ids]
        if len(ids) != len(texts):
            raise ConfigurationError("ids and X must have the same length")
        params = self._params()

        signatures: dict[str, MinHashSignature] = {}
        unsignable: list[str] = []
        stream: list[tuple[str, tuple[int, str]]] = []
        for doc_id, text in zip(ids, texts):
            sh = shingle(text, params.shingle_order)
            if sh.size == 0:
                unsignable.append(doc_id)
                continue
            sig = minhash_signature(sh, params, doc_id=doc_id)
            signatures[doc_id] = sig
            stream.extend((doc_id, key) for key in lsh_band_keys(sig))

        clusters = cluster_duplicates(
            stream,
            signatures=signatures if self.verify_threshold is not None else None,
            verify_threshold=self.verify_threshold,
        )
        cluster_of = {
            doc_id: ci for ci, cluster in enumerate(clusters.clusters) for doc_id in cluster
        }
        self.ids_ = list(ids)
        self.signatures_ = signatures
        self.clusters_ = clusters
        self.unsignable_ids_ = unsignable
        self.drop_ids_ = clusters.drop_list
        self.labels_ = np.array([cluster_of.get(i, -1) for i in ids], dtype=int)
        return self

    def fit_predict(self, X, y=None, ids: Sequence[str] | None = None) -> np.ndarray:
        return self.fit(X, y=y, ids=ids).labels_


# ------------------------------------------------------------- signature io

def write_signatures(signatures: Iterable[MinHashSignature], path: str | Path) -> int:
    """Binary signature file: versioned header (params + seed), then
    fixed-width records of (id length, id bytes, minima)."""
    sigs = list(signatures)
    if not sigs:
        raise ConfigurationError("no signatures to write")
    params = sigs[0].params
    n = 0
    with open(path, "wb") as fh:
        fh.write(_SIG_MAGIC)
        fh.write(
            struct.pack(
                "<HHHHq",
                _SIG_VERSION,
                params.num_bands,
                params.rows_per_band,
                params.shingle_order,
                params.seed,
            )
        )
        for sig in sigs:
            if sig.params != params:
                raise ConfigurationError("mixed params in one signature file")
            ident = sig.doc_id.encode("utf-8")
            fh.write(struct.pack("<I", len(ident)))
            fh.write(ident)
            fh.write(sig.minima.astype("<u8").tobytes())
            n += 1
    return n


def read_signatures(path: str | Path) -> Iterator[MinHashSignature]:
    with open(path, "rb") as fh:
        if fh.read(4) != _SIG_MAGIC:
            raise ConfigurationError(f"{path}: not a signature file")
        head_fmt = "<HHHHq"
        version, bands, rows, order, seed = struct.unpack(
            head_fmt, fh.read(struct.calcsize(head_fmt))
        )
        if version != _SIG_VERSION:
            raise ConfigurationError(f"{path}: unsupported signature version {version}")
        params = DedupParams(
            num_bands=bands, rows_per_band=rows, shingle_order=order, seed=seed
        )
        width = params.num_hashes * 8
        while True:
            head = fh.read(4)
            if not head:
                return
            (id_len,) = struct.unpack("<I", head)
            doc_id = fh.read(id_len).decode("utf-8")
            minima = np.frombuffer(fh.read(width), dtype="<u8").astype(np.uint64)
            yield MinHashSignature(doc_id=doc_id, minima=minima, params=params)
