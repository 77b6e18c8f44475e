"""The ``forge`` command line: one subcommand group per pipeline module.

Exit codes: 0 success, 1 configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bpe, corpus, dedup, langid, metrics, normalize, quality
from .documents import Document, StageDecision, dumps, read_documents, write_documents
from .errors import ConfigurationError, DataError, ForgeError
from .pipeline import RunManifest, load_config, run_pipeline, stats_report


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forge",
        description="Corpus curation and curriculum-data toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normalize", help="canonicalize document text")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--profile", help="replacement rule table (source<TAB>target lines)")
    p.add_argument("--unification", help="character unification table")
    p.add_argument("--strip-sections", action="store_true")
    p.set_defaults(func=_cmd_normalize)

    lang = sub.add_parser("langid", help="language identification").add_subparsers(
        dest="subcommand", required=True
    )
    p = lang.add_parser("train")
    p.add_argument("--labeled", required=True, help="JSONL with {text, label} records")
    p.add_argument("--model", required=True)
    p.add_argument("--smoothing", type=float, default=0.5)
    p.add_argument("--window", type=int, default=2000)
    p.set_defaults(func=_cmd_langid_train)
    p = lang.add_parser("classify")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=_cmd_langid_classify)
    p = lang.add_parser("filter")
    p.add_argument("--model", required=True)
    p.add_argument("--target", default="fa")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--audit")
    p.set_defaults(func=_cmd_langid_filter)

    p = sub.add_parser("quality", help="profanity gate, quality rules, repetition removal")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--audit")
    p.add_argument("--profanity-lexicon")
    p.add_argument("--skip-repetition", action="store_true")
    p.set_defaults(func=_cmd_quality)

    ded = sub.add_parser("dedup", help="MinHash/LSH near-duplicate detection").add_subparsers(
        dest="subcommand", required=True
    )
    p = ded.add_parser("sign")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--sigs", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bands", type=int, default=10)
    p.add_argument("--rows", type=int, default=6)
    p.add_argument("--shingle-order", type=int, default=2)
    p.set_defaults(func=_cmd_dedup_sign)
    p = ded.add_parser("cluster")
    p.add_argument("--sigs", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--verify-threshold", type=float)
    p.set_defaults(func=_cmd_dedup_cluster)
    p = ded.add_parser("apply")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--drops", required=True, help="cluster file from `forge dedup cluster`")
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=_cmd_dedup_apply)

    tok = sub.add_parser("tok", help="BPE tokenizer").add_subparsers(
        dest="subcommand", required=True
    )
    p = tok.add_parser("train")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--vocab-size", type=int, default=5000)
    p.set_defaults(func=_cmd_tok_train)
    p = tok.add_parser("extend")
    p.add_argument("--base", required=True)
    p.add_argument("--trained", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_tok_extend)
    p = tok.add_parser("encode")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=_cmd_tok_encode)
    p = tok.add_parser("fertility")
    p.add_argument("--model", required=True, help="extended model file")
    p.add_argument("--in", dest="inputs", required=True)
    p.set_defaults(func=_cmd_tok_fertility)

    p = sub.add_parser("chunk", help="pack token streams into fixed-length chunks")
    p.add_argument("--in", dest="inputs", required=True, help="JSONL with {id, source, ids}")
    p.add_argument("--out", dest="output", required=True, help="output directory")
    p.add_argument("--chunk-len", type=int, default=2048)
    p.add_argument("--separator-id", type=int, default=0)
    p.set_defaults(func=_cmd_chunk)

    p = sub.add_parser("mix", help="cap, repeat, and shuffle chunk manifests")
    p.add_argument("--manifest", required=True, help="chunk manifest JSONL")
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--chunk-len", type=int, default=2048)
    p.add_argument(
        "--source",
        action="append",
        default=[],
        metavar="TAG[:repeat[:cap]]",
        help="may be given multiple times",
    )
    p.set_defaults(func=_cmd_mix)

    p = sub.add_parser("warmup", help="format bilingual warm-up documents")
    p.add_argument("--in", dest="inputs", required=True, help="JSONL with {story_id, pairs}")
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--direction", choices=["fa_first", "en_first"], default="fa_first")
    p.set_defaults(func=_cmd_warmup)

    sft = sub.add_parser("sft", help="fine-tuning samples with loss masks").add_subparsers(
        dest="subcommand", required=True
    )
    p = sft.add_parser("format")
    p.add_argument("--in", dest="inputs", required=True, help="JSONL with {id, turns}")
    p.add_argument("--model", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--max-len", type=int, default=512)
    p.set_defaults(func=_cmd_sft_format)
    p = sft.add_parser("mix")
    p.add_argument("--source", action="append", required=True, metavar="TAG=FILE")
    p.add_argument("--count", action="append", required=True, metavar="TAG=N")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=_cmd_sft_mix)

    met = sub.add_parser("metrics", help="training bookkeeping").add_subparsers(
        dest="subcommand", required=True
    )
    p = met.add_parser("ppl")
    p.add_argument("--perplexity", type=float)
    p.add_argument("--mean-nll", type=float)
    p.set_defaults(func=_cmd_metrics_ppl)
    p = met.add_parser("budget")
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--alpha", type=float, default=32.0)
    p.add_argument("--new-tokens", type=int, default=0)
    p.add_argument("--scope", choices=["new_rows_only", "full_embed_and_head"],
                   default="full_embed_and_head")
    p.add_argument("--total-params", type=int)
    p.set_defaults(func=_cmd_metrics_budget)
    p = met.add_parser("align")
    p.add_argument("--embeddings", required=True, help="token<TAB>v1 v2 ... lines")
    p.add_argument("--pairs", required=True, help="token_a<TAB>token_b lines")
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--plot", help="also render a heatmap PNG (needs matplotlib)")
    p.set_defaults(func=_cmd_metrics_align)

    p = sub.add_parser("run", help="run the configured pipeline end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--stop-after")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="summarize a run manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_report)

    return parser


# ---------------------------------------------------------------- handlers

def _cmd_normalize(args) -> int:
    profile = (
        normalize.NormalizationProfile.from_files(
            replacements=args.profile, unification=args.unification
        )
        if (args.profile or args.unification)
        else normalize.default_profile()
    )
    docs = (
        normalize.normalize_document(
            doc, profile, strip_sections=args.strip_sections
        )
        for doc in read_documents(args.inputs)
    )
    n = write_documents(docs, args.output)
    print(f"normalized {n} documents -> {args.output}")
    return 0


def _cmd_langid_train(args) -> int:
    pairs = []
    with open(args.labeled, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                pairs.append((rec["text"], rec["label"]))
    model = langid.train_langid(pairs, smoothing=args.smoothing, window=args.window)
    model.save(args.model)
    print(f"trained on {len(pairs)} texts, labels {list(model.classes_)} -> {args.model}")
    return 0


def _cmd_langid_classify(args) -> int:
    model = langid.CharNgramLanguageIdentifier.load(args.model)
    with open(args.output, "w", encoding="utf-8") as out:
        for doc in read_documents(args.inputs):
            decision = model.classify(doc.text)
            out.write(
                dumps(
                    {
                        "id": doc.id,
                        "label": decision.label,
                        "confidence": round(decision.confidence, 6),
                    }
                )
                + "\n"
            )
    return 0


def _cmd_langid_filter(args) -> int:
    model = langid.CharNgramLanguageIdentifier.load(args.model)
    kept = 0
    dropped = 0
    audit = open(args.audit, "w", encoding="utf-8") if args.audit else None
    try:
        with open(args.output, "w", encoding="utf-8") as out:
            for doc in read_documents(args.inputs):
                decision = langid.filter_language(doc, model, args.target, args.threshold)
                if decision.keep:
                    kept += 1
                    out.write(dumps(doc.to_record()) + "\n")
                else:
                    dropped += 1
                    if audit:
                        audit.write(dumps(decision.to_record()) + "\n")
    finally:
        if audit:
            audit.close()
    print(f"kept {kept}, dropped {dropped}")
    return 0


def _cmd_quality(args) -> int:
    lexicons = quality.Lexicons()
    profanity = (
        quality.load_lexicon_file(args.profanity_lexicon) if args.profanity_lexicon else None
    )
    kept = 0
    dropped = 0
    audit = open(args.audit, "w", encoding="utf-8") if args.audit else None
    try:
        with open(args.output, "w", encoding="utf-8") as out:
            for doc in read_documents(args.inputs):
                decision = None
                if profanity is not None:
                    decision = quality.profanity_gate(doc, profanity)
                if decision is None or decision.keep:
                    stats = quality.compute_quality_stats(doc, lexicons)
                    decision = quality.apply_quality_rules(stats, doc_id=doc.id)
                if decision.keep and not args.skip_repetition:
                    doc, decision = quality.remove_repetition(doc)
                if decision.keep:
                    kept += 1
                    out.write(dumps(doc.to_record()) + "\n")
                else:
                    dropped += 1
                    if audit:
                        audit.write(dumps(decision.to_record()) + "\n")
    finally:
        if audit:
            audit.close()
    print(f"kept {kept}, dropped {dropped}")
    return 0


def _cmd_dedup_sign(args) -> int:
    params = dedup.DedupParams(
        num_bands=args.bands,
        rows_per_band=args.rows,
        shingle_order=args.shingle_order,
        seed=args.seed,
    )
    sigs = []
    unsignable = 0
    for doc in read_documents(args.inputs):
        shingles = dedup.shingle(doc.text, params.shingle_order)
        if shingles.size == 0:
            unsignable += 1
            continue
        sigs.append(dedup.minhash_signature(shingles, params, doc_id=doc.id))
    n = dedup.write_signatures(sigs, args.sigs)
    print(f"signed {n} documents ({unsignable} unsignable) -> {args.sigs}")
    return 0


def _cmd_dedup_cluster(args) -> int:
    signatures = {}
    stream = []
    for sig in dedup.read_signatures(args.sigs):
        signatures[sig.doc_id] = sig
        stream.extend((sig.doc_id, key) for key in dedup.lsh_band_keys(sig))
    clusters = dedup.cluster_duplicates(
        stream,
        signatures=signatures if args.verify_threshold is not None else None,
        verify_threshold=args.verify_threshold,
    )
    with open(args.output, "w", encoding="utf-8") as out:
        for cluster in clusters.clusters:
            out.write(dumps({"representative": cluster[0], "members": cluster}) + "\n")
    print(f"{len(clusters.clusters)} clusters, {len(clusters.drop_list)} documents to drop")
    return 0


def _cmd_dedup_apply(args) -> int:
    drop = set()
    with open(args.drops, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                drop.update(m for m in rec["members"] if m != rec["representative"])
    kept = 0
    with open(args.output, "w", encoding="utf-8") as out:
        for doc in read_documents(args.inputs):
            if doc.id not in drop:
                kept += 1
                out.write(dumps(doc.to_record()) + "\n")
    print(f"kept {kept}, dropped {len(drop)}")
    return 0


def _cmd_tok_train(args) -> int:
    corpus_texts = (doc.text for doc in read_documents(args.inputs))
    model = bpe.train_bpe(corpus_texts, args.vocab_size)
    bpe.save_model(model, args.model)
    print(
        f"trained: alphabet {len(model.alphabet)}, merges {len(model.merges)}, "
        f"vocab {model.vocab_size} -> {args.model}"
    )
    return 0


def _cmd_tok_extend(args) -> int:
    base = bpe.load_model(args.base)
    trained = bpe.load_model(args.trained)
    if not isinstance(base, bpe.BpeModel) or not isinstance(trained, bpe.BpeModel):
        raise ConfigurationError("extend expects two base model files")
    ext = bpe.extend_vocab(base, trained)
    bpe.save_model(ext, args.model)
    print(
        f"net new tokens: {ext.net_new_count} "
        f"(base {len(base.vocab)} -> extended {ext.vocab_size}) -> {args.model}"
    )
    return 0


def _cmd_tok_encode(args) -> int:
    model = bpe.load_model(args.model)
    with open(args.output, "w", encoding="utf-8") as out:
        for doc in read_documents(args.inputs):
            ids = model.encode(doc.text)
            out.write(dumps({"id": doc.id, "source": doc.source, "ids": ids}) + "\n")
    return 0


def _cmd_tok_fertility(args) -> int:
    model = bpe.load_model(args.model)
    if not isinstance(model, bpe.ExtendedVocab):
        raise ConfigurationError("fertility expects an extended model file")
    report = bpe.fertility((doc.text for doc in read_documents(args.inputs)), model)
    print(
        f"words: {report.word_count}\n"
        f"base tokens/word: {report.base_tokens_per_word:.4f}\n"
        f"extended tokens/word: {report.extended_tokens_per_word:.4f}\n"
        f"reduction: {report.reduction * 100:.1f}%"
    )
    return 0


def _cmd_chunk(args) -> int:
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_source: dict[str, list[list[int]]] = {}
    with open(args.inputs, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                per_source.setdefault(rec.get("source", ""), []).append(rec["ids"])
    entries = []
    dropped = 0
    total = 0
    for tag in sorted(per_source):
        result = corpus.chunk_stream(
            per_source[tag],
            chunk_len=args.chunk_len,
            separator_id=args.separator_id,
            source=tag,
        )
        dropped += result.dropped_tokens
        total += len(result.chunks)
        if result.chunks:
            entries.extend(
                corpus.write_chunk_payload(result.chunks, out_dir / f"{tag or 'chunks'}.bin")
            )
    with open(out_dir / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(dumps(entry) + "\n")
    print(f"{total} chunks of {args.chunk_len} tokens, {dropped} tokens dropped")
    return 0


def _parse_mix_source(text: str) -> corpus.MixSource:
    parts = text.split(":")
    tag = parts[0]
    repeat = int(parts[1]) if len(parts) > 1 and parts[1] else 1
    cap = int(parts[2]) if len(parts) > 2 and parts[2] else None
    return corpus.MixSource(tag=tag, repeat_factor=repeat, cap=cap)


def _cmd_mix(args) -> int:
    entries_by_tag: dict[str, list[dict]] = {}
    with open(args.manifest, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entry = json.loads(line)
                entries_by_tag.setdefault(entry["source"], []).append(entry)
    sources = (
        tuple(_parse_mix_source(s) for s in args.source)
        if args.source
        else tuple(corpus.MixSource(tag=t) for t in sorted(entries_by_tag))
    )
    spec = corpus.MixSpec(sources=sources, shuffle_seed=args.seed, chunk_len=args.chunk_len)
    for src in sources:
        entries_by_tag.setdefault(src.tag, [])
    manifest, report = corpus.mix_datasets(entries_by_tag, spec)
    with open(args.output, "w", encoding="utf-8") as out:
        for _, entry in manifest.entries():
            out.write(dumps(entry) + "\n")
    print(dumps(report.to_record()))
    return 0


def _cmd_warmup(args) -> int:
    n = 0
    with open(args.output, "w", encoding="utf-8") as out:
        with open(args.inputs, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                doc = corpus.ParallelDoc(
                    story_id=str(rec["story_id"]),
                    pairs=tuple((p["en"], p["fa"]) for p in rec["pairs"]),
                )
                if n:
                    out.write("\n")
                out.write(corpus.format_warmup(doc, args.direction))
                n += 1
    print(f"formatted {n} stories -> {args.output}")
    return 0


def _cmd_sft_format(args) -> int:
    model = bpe.load_model(args.model)
    formatted = 0
    skipped = 0
    with open(args.output, "w", encoding="utf-8") as out:
        with open(args.inputs, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                turns = [(t["role"], t["text"]) for t in rec["turns"]]
                try:
                    sample = corpus.format_sft(turns, model, max_len=args.max_len)
                except DataError:
                    skipped += 1
                    continue
                record = sample.to_record()
                record["id"] = rec.get("id", str(formatted))
                out.write(dumps(record) + "\n")
                formatted += 1
    print(f"formatted {formatted} samples, skipped {skipped}")
    return 0


def _parse_kv(pairs: list[str], what: str) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigurationError(f"{what} must look like TAG=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = value
    return out


def _cmd_sft_mix(args) -> int:
    files = _parse_kv(args.source, "--source")
    counts = {k: int(v) for k, v in _parse_kv(args.count, "--count").items()}
    sources = {}
    for tag, path in files.items():
        with open(path, encoding="utf-8") as fh:
            sources[tag] = [json.loads(l) for l in fh if l.strip()]
    manifest, report = corpus.build_sft_mix(sources, counts, seed=args.seed)
    with open(args.output, "w", encoding="utf-8") as out:
        for tag, index in manifest:
            out.write(dumps({"source": tag, "index": index}) + "\n")
    print(dumps(report))
    return 0


def _cmd_metrics_ppl(args) -> int:
    if args.perplexity is None and args.mean_nll is None:
        raise ConfigurationError("give --perplexity or --mean-nll")
    if args.perplexity is not None:
        prob = metrics.mean_token_probability(args.perplexity)
        print(f"perplexity {args.perplexity} -> mean token probability {prob:.5f}")
    if args.mean_nll is not None:
        ppl = metrics.perplexity_from_mean_nll(args.mean_nll)
        print(f"mean nll {args.mean_nll} -> perplexity {ppl:.5f}")
    return 0


def _cmd_metrics_budget(args) -> int:
    dims = metrics.ModelDims(new_tokens=args.new_tokens)
    report = metrics.parameter_budget_report(
        dims,
        rank=args.rank,
        alpha=args.alpha,
        scope=args.scope,
        total_params=args.total_params,
    )
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_metrics_align(args) -> int:
    embeddings = {}
    with open(args.embeddings, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                token, _, values = line.rstrip("\n").partition("\t")
                embeddings[token] = [float(v) for v in values.split()]
    pairs = []
    with open(args.pairs, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                a, _, b = line.rstrip("\n").partition("\t")
                pairs.append((a, b))
    report = metrics.alignment_matrix(embeddings, pairs)
    Path(args.output).write_text(report.to_tsv(), encoding="utf-8")
    if args.plot:
        _plot_alignment(report, args.plot)
    print(f"{len(pairs)}x{len(pairs)} matrix -> {args.output}")
    return 0


def _plot_alignment(report, path: str) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigurationError("plotting requires matplotlib (install extra 'plot')") from exc
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(report.cosine_matrix, vmin=-1.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(report.col_labels)), report.col_labels, rotation=90)
    ax.set_yticks(range(len(report.row_labels)), report.row_labels)
    fig.colorbar(im, ax=ax, label="cosine similarity")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _cmd_run(args) -> int:
    config = load_config(args.config)
    manifest = run_pipeline(
        config,
        args.inputs,
        args.output,
        workers=args.workers,
        resume=args.resume,
        stop_after=args.stop_after,
    )
    text, _ = stats_report(manifest)
    print(text, end="")
    print(f"manifest -> {Path(args.output) / 'manifest.json'}")
    return 0


def _cmd_report(args) -> int:
    manifest = RunManifest.load(args.manifest)
    text, machine = stats_report(manifest)
    if args.json:
        print(json.dumps(machine, indent=2, sort_keys=True, ensure_ascii=False))
    else:
        print(text, end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except ForgeError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
