"""End-to-end pipeline execution with exact accounting.

Stages run in a configurable order (default: normalize, langid, profanity,
quality, repetition, dedup, tokenize, chunk, mix).  Stage boundaries are
materialized JSONL files, per-document stages are pure maps executed by an
order-preserving worker pool, and deduplication's clustering step is the
single serial reducer.  Every stage writes exact input/kept/dropped counts
into the run manifest, and every dropped document gets exactly one audit
record, so corpus-scale figures can be reproduced from the manifest alone.

Interrupted runs resume from per-stage completion sentinels; a resumed run
produces byte-identical artifacts because stage outputs are already on disk.
"""
from __future__ import annotations

import glob
import hashlib
import json
import time
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import yaml

from . import dedup as dedup_mod
from .bpe import BpeModel, ExtendedVocab, load_model
from .corpus import MixSource, MixSpec, chunk_stream, mix_datasets, write_chunk_payload
from .documents import Document, StageDecision, dumps, parse_document
from .errors import ConfigurationError, DataError
from .langid import CharNgramLanguageIdentifier, filter_language
from .normalize import (
    NormalizationProfile,
    WikiSectionPolicy,
    normalize_document,
)
from .quality import (
    Lexicons,
    QualityThresholds,
    RepetitionParams,
    apply_quality_rules,
    compute_quality_stats,
    load_lexicon_file,
    profanity_gate,
    remove_repetition,
)

CANONICAL_STAGE_ORDER = (
    "normalize",
    "langid",
    "profanity",
    "quality",
    "repetition",
    "dedup",
    "tokenize",
    "chunk",
    "mix",
)

_DOC_STAGES = ("normalize", "langid", "profanity", "quality", "repetition")

# Stages that may only run after every listed stage that is configured.
_MUST_FOLLOW = {
    "langid": ("normalize",),
    "profanity": ("normalize",),
    "quality": ("normalize",),
    "repetition": ("normalize",),
    "dedup": ("normalize",),
    "tokenize": ("normalize", "langid", "profanity", "quality", "repetition", "dedup"),
    "chunk": ("tokenize",),
    "mix": ("chunk",),
}

CONFIG_VERSION = 1


@dataclass
class PipelineConfig:
    raw: dict
    stages: tuple[str, ...]
    workers: int
    seeds: dict[str, int]
    allow_sources: tuple[str, ...] | None

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("pipeline config must be a mapping")
        version = raw.get("version")
        if version != CONFIG_VERSION:
            raise ConfigurationError(
                f"unsupported config version {version!r}, expected {CONFIG_VERSION}"
            )
        stages = tuple(raw.get("stages", CANONICAL_STAGE_ORDER))
        unknown = [s for s in stages if s not in CANONICAL_STAGE_ORDER]
        if unknown:
            raise ConfigurationError(f"unknown stages {unknown}")
        if len(set(stages)) != len(stages):
            raise ConfigurationError("stage list contains duplicates")
        positions = {s: i for i, s in enumerate(stages)}
        for stage, deps in _MUST_FOLLOW.items():
            if stage not in positions:
                continue
            for dep in deps:
                if dep in positions and positions[dep] > positions[stage]:
                    raise ConfigurationError(
                        f"stage {stage!r} cannot run before its dependency {dep!r}"
                    )
            if stage in ("chunk", "mix", "tokenize"):
                hard = {"chunk": "tokenize", "mix": "chunk"}.get(stage)
                if hard and hard not in positions:
                    raise ConfigurationError(f"stage {stage!r} requires stage {hard!r}")
        seeds = {str(k): int(v) for k, v in (raw.get("seeds") or {}).items()}
        for stage, key in (("dedup", "dedup"), ("mix", "mix")):
            if stage in stages and key not in seeds:
                raise ConfigurationError(f"stage {stage!r} requires seeds.{key}")
        workers = int(raw.get("workers", 1))
        if workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {workers}")
        allow = raw.get("allow_sources")
        allow_sources = tuple(str(s) for s in allow) if allow is not None else None
        for stage in stages:
            section = raw.get(stage)
            if section is not None and not isinstance(section, dict):
                raise ConfigurationError(f"config section {stage!r} must be a mapping")
        if "langid" in stages:
            section = raw.get("langid") or {}
            if not section.get("use_meta") and not section.get("model"):
                raise ConfigurationError("langid stage requires langid.model or use_meta")
        if "profanity" in stages and not (raw.get("profanity") or {}).get("lexicon"):
            raise ConfigurationError("profanity stage requires profanity.lexicon")
        if "tokenize" in stages and not (raw.get("tokenize") or {}).get("model"):
            raise ConfigurationError("tokenize stage requires tokenize.model")
        return cls(
            raw=raw,
            stages=stages,
            workers=workers,
            seeds=seeds,
            allow_sources=allow_sources,
        )

    def section(self, name: str) -> dict:
        return self.raw.get(name) or {}

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def load_config(path: str | Path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return PipelineConfig.from_dict(raw)


def _dedup_params_from_config(config: PipelineConfig) -> dedup_mod.DedupParams:
    ded = config.section("dedup")
    return dedup_mod.DedupParams(
        num_bands=int(ded.get("bands", 10)),
        rows_per_band=int(ded.get("rows", 6)),
        shingle_order=int(ded.get("shingle_order", 2)),
        seed=config.seeds.get("dedup", 0),
    )


# ----------------------------------------------------------------- runtime

class PipelineRuntime:
    """Loaded models and rule tables for stage execution.

    Built once per process (worker initializer) from the plain config dict;
    everything here is read-only during the run.
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        norm = config.section("normalize")
        self.profile = (
            NormalizationProfile.from_files(
                replacements=norm.get("replacements"), unification=norm.get("unification")
            )
            if (norm.get("replacements") or norm.get("unification"))
            else NormalizationProfile.default()
        )
        drop_sections = norm.get("drop_sections")
        self.section_policy = (
            WikiSectionPolicy(drop_sections=frozenset(drop_sections))
            if drop_sections
            else WikiSectionPolicy()
        )
        self.strip_sources = frozenset(norm.get("strip_sections_sources") or ())

        lid = config.section("langid")
        self.langid_model = (
            CharNgramLanguageIdentifier.load(lid["model"]) if lid.get("model") else None
        )
        self.langid_target = lid.get("target", "fa")
        self.langid_threshold = float(lid.get("threshold", 0.8))

        prof = config.section("profanity")
        self.profanity_lexicon = (
            load_lexicon_file(prof["lexicon"]) if prof.get("lexicon") else frozenset()
        )

        qual = config.section("quality")
        self.thresholds = QualityThresholds(**(qual.get("thresholds") or {}))
        lex_overrides = qual.get("lexicons") or {}
        lex_kwargs = {}
        if "necessary_words" in lex_overrides:
            lex_kwargs["necessary_words"] = frozenset(lex_overrides["necessary_words"])
        if "bullet_markers" in lex_overrides:
            lex_kwargs["bullet_markers"] = frozenset(lex_overrides["bullet_markers"])
        if "ellipsis_markers" in lex_overrides:
            lex_kwargs["ellipsis_markers"] = tuple(lex_overrides["ellipsis_markers"])
        if "special_symbols" in lex_overrides:
            lex_kwargs["special_symbols"] = tuple(lex_overrides["special_symbols"])
        self.lexicons = Lexicons(**lex_kwargs)

        rep = config.section("repetition")
        rep_kwargs = {}
        if "drop_threshold" in rep:
            rep_kwargs["duplicate_char_drop_threshold"] = float(rep["drop_threshold"])
        if "ngram_caps" in rep:
            rep_kwargs["ngram_caps"] = tuple(
                (int(n), float(c)) for n, c in sorted(rep["ngram_caps"].items(), key=lambda kv: int(kv[0]))
            )
        if "min_words" in rep:
            rep_kwargs["min_words_for_ngram_check"] = int(rep["min_words"])
        self.repetition_params = RepetitionParams(**rep_kwargs)

        ded = config.section("dedup")
        self.dedup_params = _dedup_params_from_config(config)
        self.dedup_skip_sources = frozenset(ded.get("skip_sources") or ())

        tok = config.section("tokenize")
        self.encoder: BpeModel | ExtendedVocab | None = (
            load_model(tok["model"]) if tok.get("model") else None
        )

    # Per-document stage handlers; each returns (doc_or_none, decision_or_none,
    # payload).  Payloads carry stage-specific side data (signatures, ids).

    def apply_stage(self, stage: str, doc: Document):
        if stage == "normalize":
            out = normalize_document(
                doc,
                self.profile,
                self.section_policy,
                strip_sections=doc.source in self.strip_sources,
            )
            return out, None, None
        if stage == "langid":
            decision = filter_language(
                doc, self.langid_model, self.langid_target, self.langid_threshold
            )
            return (doc if decision.keep else None), decision, None
        if stage == "profanity":
            decision = profanity_gate(doc, self.profanity_lexicon)
            return (doc if decision.keep else None), decision, None
        if stage == "quality":
            stats = compute_quality_stats(doc, self.lexicons)
            decision = apply_quality_rules(stats, self.thresholds, doc_id=doc.id)
            return (doc if decision.keep else None), decision, None
        if stage == "repetition":
            cleaned, decision = remove_repetition(doc, self.repetition_params)
            return (cleaned if decision.keep else None), decision, None
        if stage == "dedup_sign":
            if doc.source in self.dedup_skip_sources:
                return doc, None, "skipped_source"
            shingles = dedup_mod.shingle(doc.text, self.dedup_params.shingle_order)
            if shingles.size == 0:
                return doc, None, "unsignable"
            sig = dedup_mod.minhash_signature(shingles, self.dedup_params, doc_id=doc.id)
            return doc, None, sig.minima.tobytes()
        if stage == "tokenize":
            if self.encoder is None:
                raise ConfigurationError("tokenize stage has no model configured")
            ids = self.encoder.encode(doc.text)
            return doc, None, ids
        raise ConfigurationError(f"unknown per-document stage {stage!r}")


_RUNTIME: PipelineRuntime | None = None


def _init_worker(config_raw: dict) -> None:
    global _RUNTIME
    _RUNTIME = PipelineRuntime(PipelineConfig.from_dict(config_raw))


def _worker_apply(args):
    stage, doc = args
    return _RUNTIME.apply_stage(stage, doc)


# ---------------------------------------------------------------- manifest

@dataclass
class StageStats:
    name: str
    input: int = 0
    kept: int = 0
    dropped: int = 0
    drop_reasons: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def record_drop(self, reason: str) -> None:
        self.dropped += 1
        self.drop_reasons[reason] = self.drop_reasons.get(reason, 0) + 1

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "input": self.input,
            "kept": self.kept,
            "dropped": self.dropped,
            "drop_reasons": self.drop_reasons,
            "notes": self.notes,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "StageStats":
        return cls(
            name=rec["name"],
            input=int(rec["input"]),
            kept=int(rec["kept"]),
            dropped=int(rec["dropped"]),
            drop_reasons=dict(rec.get("drop_reasons") or {}),
            notes=dict(rec.get("notes") or {}),
        )


@dataclass
class RunManifest:
    config_hash: str
    stages: list[StageStats] = field(default_factory=list)
    totals: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    version: int = 1

    def validate(self) -> None:
        for st in self.stages:
            if st.input != st.kept + st.dropped:
                raise DataError(
                    f"stage {st.name!r} violates conservation: "
                    f"{st.input} != {st.kept} + {st.dropped}"
                )
            if sum(st.drop_reasons.values()) != st.dropped:
                raise DataError(f"stage {st.name!r}: drop reasons do not sum to dropped")

    def to_record(self) -> dict:
        return {
            "version": self.version,
            "config_hash": self.config_hash,
            "stages": [s.to_record() for s in self.stages],
            "totals": self.totals,
            "artifacts": self.artifacts,
            "timing": self.timing,
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_record(), fh, ensure_ascii=False, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_record(cls, rec: dict) -> "RunManifest":
        return cls(
            config_hash=rec["config_hash"],
            stages=[StageStats.from_record(s) for s in rec["stages"]],
            totals=dict(rec.get("totals") or {}),
            artifacts=dict(rec.get("artifacts") or {}),
            timing=dict(rec.get("timing") or {}),
            version=int(rec.get("version", 1)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_record(json.load(fh))


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# --------------------------------------------------------------- execution

def _expand_inputs(inputs: str | Sequence[str]) -> list[Path]:
    if isinstance(inputs, (str, Path)):
        patterns = [str(inputs)]
    else:
        patterns = [str(p) for p in inputs]
    paths: list[Path] = []
    for pattern in patterns:
        matched = sorted(glob.glob(pattern))
        if matched:
            paths.extend(Path(m) for m in matched)
        elif Path(pattern).exists():
            paths.append(Path(pattern))
    if not paths:
        raise ConfigurationError(f"no input files match {patterns}")
    return paths


class _StageIO:
    """Stage directory bookkeeping: sentinel-based resume support."""

    def __init__(self, out_dir: Path, index: int, name: str, config_hash: str):
        self.dir = out_dir / "stages" / f"{index:02d}_{name}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.docs_path = self.dir / "docs.jsonl"
        self.audit_path = self.dir / "audit.jsonl"
        self.sentinel = self.dir / "_COMPLETE.json"
        self.config_hash = config_hash

    def completed_stats(self) -> StageStats | None:
        if not self.sentinel.exists():
            return None
        rec = json.loads(self.sentinel.read_text(encoding="utf-8"))
        if rec.get("config_hash") != self.config_hash:
            return None
        return StageStats.from_record(rec["stats"])

    def mark_complete(self, stats: StageStats) -> None:
        self.sentinel.write_text(
            json.dumps(
                {"config_hash": self.config_hash, "stats": stats.to_record()},
                sort_keys=True,
                ensure_ascii=False,
            ),
            encoding="utf-8",
        )


def _iter_docs(path: Path) -> Iterator[Document]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield parse_document(line)


def run_pipeline(
    config: PipelineConfig,
    inputs: str | Sequence[str],
    out_dir: str | Path,
    workers: int | None = None,
    resume: bool = False,
    stop_after: str | None = None,
) -> RunManifest:
    """Execute the configured stages over the input document files.

    Identical (config, inputs, seeds) produce identical artifacts and
    manifest counts regardless of worker count.  With `resume`, stages whose
    completion sentinel matches the config hash are skipped.
    """
    t0 = time.monotonic()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_workers = workers if workers is not None else config.workers
    if n_workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {n_workers}")
    if stop_after is not None and stop_after not in config.stages:
        raise ConfigurationError(f"stop_after names an unconfigured stage {stop_after!r}")
    config_hash = config.config_hash()

    manifest = RunManifest(config_hash=config_hash)
    pool = None
    runtime = None
    try:
        if n_workers > 1:
            ctx = get_context("fork")
            pool = ctx.Pool(n_workers, initializer=_init_worker, initargs=(config.raw,))
        else:
            runtime = PipelineRuntime(config)

        def stage_map(stage: str, docs: Iterable[Document]):
            if pool is None:
                for doc in docs:
                    yield runtime.apply_stage(stage, doc)
            else:
                yield from pool.imap(
                    _worker_apply, ((stage, d) for d in docs), chunksize=64
                )

        # Ingest: parse inputs, apply the source allowlist, count everything.
        ingest_io = _StageIO(out, 0, "ingest", config_hash)
        stats = ingest_io.completed_stats() if resume else None
        if stats is None:
            stats = StageStats("ingest")
            allow = config.allow_sources
            with open(ingest_io.docs_path, "w", encoding="utf-8") as doc_out, open(
                ingest_io.audit_path, "w", encoding="utf-8"
            ) as audit_out:
                for path in _expand_inputs(inputs):
                    with open(path, encoding="utf-8") as fh:
                        for lineno, line in enumerate(fh, 1):
                            line = line.strip()
                            if not line:
                                continue
                            stats.input += 1
                            try:
                                doc = parse_document(line)
                            except DataError:
                                stats.record_drop("malformed_input")
                                audit_out.write(
                                    dumps(
                                        StageDecision(
                                            f"{path.name}:{lineno}",
                                            "ingest",
                                            keep=False,
                                            reasons=("malformed_input",),
                                        ).to_record()
                                    )
                                    + "\n"
                                )
                                continue
                            if allow is not None and doc.source not in allow:
                                stats.record_drop("source_filtered")
                                audit_out.write(
                                    dumps(
                                        StageDecision(
                                            doc.id,
                                            "ingest",
                                            keep=False,
                                            reasons=("source_filtered",),
                                        ).to_record()
                                    )
                                    + "\n"
                                )
                                continue
                            stats.kept += 1
                            doc_out.write(dumps(doc.to_record()) + "\n")
            ingest_io.mark_complete(stats)
        manifest.stages.append(stats)
        current = ingest_io.docs_path

        for idx, stage in enumerate(config.stages, start=1):
            if stage in _DOC_STAGES:
                io = _StageIO(out, idx, stage, config_hash)
                stats = io.completed_stats() if resume else None
                if stats is None:
                    stats = StageStats(stage)
                    with open(io.docs_path, "w", encoding="utf-8") as doc_out, open(
                        io.audit_path, "w", encoding="utf-8"
                    ) as audit_out:
                        for doc, decision, _ in stage_map(stage, _iter_docs(current)):
                            stats.input += 1
                            if doc is not None:
                                stats.kept += 1
                                doc_out.write(dumps(doc.to_record()) + "\n")
                            else:
                                stats.record_drop(decision.reason or "dropped")
                            if decision is not None and not decision.keep:
                                audit_out.write(dumps(decision.to_record()) + "\n")
                    io.mark_complete(stats)
                manifest.stages.append(stats)
                current = io.docs_path

            elif stage == "dedup":
                io = _StageIO(out, idx, stage, config_hash)
                stats = io.completed_stats() if resume else None
                if stats is None:
                    stats = StageStats(stage)
                    band_stream: list[tuple[str, tuple[int, str]]] = []
                    skipped = 0
                    unsignable = 0
                    params = _dedup_params_from_config(config)
                    for doc, _, payload in stage_map("dedup_sign", _iter_docs(current)):
                        stats.input += 1
                        if payload == "skipped_source":
                            skipped += 1
                            continue
                        if payload == "unsignable":
                            unsignable += 1
                            continue
                        sig = dedup_mod.MinHashSignature(
                            doc_id=doc.id,
                            minima=np.frombuffer(payload, dtype=np.uint64),
                            params=params,
                        )
                        band_stream.extend(
                            (doc.id, key) for key in dedup_mod.lsh_band_keys(sig)
                        )
                    clusters = dedup_mod.cluster_duplicates(band_stream)
                    drop_set = set(clusters.drop_list)
                    with open(io.docs_path, "w", encoding="utf-8") as doc_out, open(
                        io.audit_path, "w", encoding="utf-8"
                    ) as audit_out:
                        for doc in _iter_docs(current):
                            if doc.id in drop_set:
                                stats.record_drop("near_duplicate")
                                audit_out.write(
                                    dumps(
                                        StageDecision(
                                            doc.id,
                                            "dedup",
                                            keep=False,
                                            reasons=("near_duplicate",),
                                        ).to_record()
                                    )
                                    + "\n"
                                )
                            else:
                                stats.kept += 1
                                doc_out.write(dumps(doc.to_record()) + "\n")
                    stats.notes["skipped_source"] = skipped
                    stats.notes["unsignable"] = unsignable
                    stats.notes["clusters"] = len(clusters.clusters)
                    (io.dir / "clusters.jsonl").write_text(
                        "".join(
                            dumps({"representative": c[0], "members": c}) + "\n"
                            for c in clusters.clusters
                        ),
                        encoding="utf-8",
                    )
                    io.mark_complete(stats)
                manifest.stages.append(stats)
                current = io.docs_path

            elif stage == "tokenize":
                io = _StageIO(out, idx, stage, config_hash)
                stats = io.completed_stats() if resume else None
                if stats is None:
                    stats = StageStats(stage)
                    total_tokens = 0
                    with open(io.docs_path, "w", encoding="utf-8") as tok_out:
                        for doc, _, ids in stage_map("tokenize", _iter_docs(current)):
                            stats.input += 1
                            stats.kept += 1
                            total_tokens += len(ids)
                            tok_out.write(
                                dumps({"id": doc.id, "source": doc.source, "ids": ids}) + "\n"
                            )
                    stats.notes["tokens"] = total_tokens
                    io.mark_complete(stats)
                manifest.stages.append(stats)
                current = io.docs_path

            elif stage == "chunk":
                io = _StageIO(out, idx, stage, config_hash)
                stats = io.completed_stats() if resume else None
                chunk_cfg = config.section("chunk")
                chunk_len = int(chunk_cfg.get("chunk_len", 2048))
                separator_id = int(chunk_cfg.get("separator_id", 0))
                chunks_dir = out / "chunks"
                if stats is None:
                    stats = StageStats(stage)
                    chunks_dir.mkdir(parents=True, exist_ok=True)
                    per_source: dict[str, list[list[int]]] = {}
                    with open(current, encoding="utf-8") as fh:
                        for line in fh:
                            rec = json.loads(line)
                            stats.input += 1
                            stats.kept += 1
                            per_source.setdefault(rec["source"], []).append(rec["ids"])
                    entries = []
                    dropped_tokens = 0
                    n_chunks = 0
                    for tag in sorted(per_source):
                        result = chunk_stream(
                            per_source[tag],
                            chunk_len=chunk_len,
                            separator_id=separator_id,
                            source=tag,
                        )
                        dropped_tokens += result.dropped_tokens
                        n_chunks += len(result.chunks)
                        if result.chunks:
                            entries.extend(
                                write_chunk_payload(result.chunks, chunks_dir / f"{tag}.bin")
                            )
                    with open(chunks_dir / "manifest.jsonl", "w", encoding="utf-8") as fh:
                        for entry in entries:
                            fh.write(dumps(entry) + "\n")
                    stats.notes["chunks"] = n_chunks
                    stats.notes["chunk_len"] = chunk_len
                    stats.notes["dropped_tokens"] = dropped_tokens
                    io.mark_complete(stats)
                manifest.stages.append(stats)

            elif stage == "mix":
                io = _StageIO(out, idx, stage, config_hash)
                stats = io.completed_stats() if resume else None
                mix_cfg = config.section("mix")
                chunk_cfg = config.section("chunk")
                chunk_len = int(chunk_cfg.get("chunk_len", 2048))
                sources_cfg = mix_cfg.get("sources") or {}
                spec = MixSpec(
                    sources=tuple(
                        MixSource(
                            tag=tag,
                            repeat_factor=int((cfg or {}).get("repeat_factor", 1)),
                            cap=(cfg or {}).get("cap"),
                        )
                        for tag, cfg in sorted(sources_cfg.items())
                    ),
                    shuffle_seed=config.seeds.get("mix", 0),
                    chunk_len=chunk_len,
                )
                if stats is None:
                    stats = StageStats(stage)
                    by_tag: dict[str, list[dict]] = {src.tag: [] for src in spec.sources}
                    chunk_manifest = out / "chunks" / "manifest.jsonl"
                    if chunk_manifest.exists():
                        with open(chunk_manifest, encoding="utf-8") as fh:
                            for line in fh:
                                entry = json.loads(line)
                                if entry["source"] in by_tag:
                                    by_tag[entry["source"]].append(entry)
                    manifest_mix, report = mix_datasets(by_tag, spec)
                    mix_dir = out / "mix"
                    mix_dir.mkdir(parents=True, exist_ok=True)
                    with open(mix_dir / "manifest.jsonl", "w", encoding="utf-8") as fh:
                        for _, entry in manifest_mix.entries():
                            fh.write(dumps(entry) + "\n")
                    stats.input = sum(len(v) for v in by_tag.values())
                    stats.kept = stats.input
                    stats.notes["report"] = report.to_record()
                    io.mark_complete(stats)
                manifest.stages.append(stats)
                if "report" in stats.notes:
                    manifest.totals["mix"] = stats.notes["report"]

            if stage == stop_after:
                manifest.totals["stopped_after"] = stage
                break
    finally:
        if pool is not None:
            pool.close()
            pool.join()

    # Assemble the combined audit sidecar in stage order.
    audit_path = out / "audit.jsonl"
    with open(audit_path, "w", encoding="utf-8") as combined:
        for stage_dir in sorted((out / "stages").iterdir()):
            part = stage_dir / "audit.jsonl"
            if part.exists():
                combined.write(part.read_text(encoding="utf-8"))

    for rel in ("audit.jsonl", "chunks/manifest.jsonl", "mix/manifest.jsonl"):
        path = out / rel
        if path.exists():
            manifest.artifacts[rel] = _sha256_file(path)
    chunks_dir = out / "chunks"
    if chunks_dir.exists():
        for payload in sorted(chunks_dir.glob("*.bin")):
            manifest.artifacts[f"chunks/{payload.name}"] = _sha256_file(payload)

    manifest.timing["wall_clock_s"] = round(time.monotonic() - t0, 3)
    if manifest.stages:
        docs_in = manifest.stages[0].input
        elapsed = max(manifest.timing["wall_clock_s"], 1e-9)
        manifest.timing["docs_per_s"] = round(docs_in / elapsed, 3)
    manifest.validate()
    manifest.save(out / "manifest.json")
    return manifest


# ------------------------------------------------------------------ report

def stats_report(manifest: RunManifest) -> tuple[str, dict]:
    """Human-readable and machine-readable per-stage retention summary.

    Raises DataError when the manifest violates conservation.
    """
    manifest.validate()
    rows = []
    machine_stages = []
    for st in manifest.stages:
        retention = st.kept / st.input if st.input else 0.0
        top = sorted(st.drop_reasons.items(), key=lambda kv: (-kv[1], kv[0]))[:3]
        rows.append(
            (
                st.name,
                st.input,
                st.kept,
                st.dropped,
                f"{retention * 100:.1f}%",
                ", ".join(f"{r}({n})" for r, n in top) or "-",
            )
        )
        machine_stages.append(
            {
                "name": st.name,
                "input": st.input,
                "kept": st.kept,
                "dropped": st.dropped,
                "retention": retention,
                "drop_reasons": st.drop_reasons,
                "notes": st.notes,
            }
        )
    headers = ("stage", "input", "kept", "dropped", "retention", "top drop reasons")
    widths = [max(len(str(r[i])) for r in rows + [headers]) for i in range(len(headers))]
    lines = [
        "  ".join(str(h).ljust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))
    machine = {
        "config_hash": manifest.config_hash,
        "stages": machine_stages,
        "totals": manifest.totals,
    }
    if "mix" in manifest.totals:
        mix = manifest.totals["mix"]
        lines.append("")
        lines.append(
            f"mixed chunks: {mix['total_chunks']}  "
            f"tokens: {mix['total_tokens']}  chunk_len: {mix['chunk_len']}"
        )
    return "\n".join(lines) + "\n", machine
