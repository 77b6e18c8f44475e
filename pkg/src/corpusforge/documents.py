"""Document records, stage decisions, and JSON-Lines interchange.

Documents travel through the pipeline as JSONL records ``{id, text, source,
meta}``.  Stage decisions are the per-document audit records written to the
sidecar file: every dropped document gets exactly one (stage, reason) record.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataError


@dataclass
class Document:
    id: str
    text: str
    source: str = ""
    meta: dict = field(default_factory=dict)

    def with_text(self, text: str) -> "Document":
        return Document(id=self.id, text=text, source=self.source, meta=dict(self.meta))

    def to_record(self) -> dict:
        rec = {"id": self.id, "text": self.text, "source": self.source}
        if self.meta:
            rec["meta"] = self.meta
        return rec


@dataclass
class StageDecision:
    doc_id: str
    stage: str
    keep: bool
    reasons: tuple[str, ...] = ()
    detail: dict = field(default_factory=dict)

    @property
    def reason(self) -> str:
        return self.reasons[0] if self.reasons else ""

    def to_record(self) -> dict:
        rec = {
            "id": self.doc_id,
            "stage": self.stage,
            "verdict": "keep" if self.keep else "drop",
            "reasons": list(self.reasons),
        }
        if self.detail:
            rec["detail"] = self.detail
        return rec


def dumps(record: dict) -> str:
    """Canonical JSON encoding used everywhere artifacts must be byte-stable."""
    return json.dumps(record, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def parse_document(line: str) -> Document:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed document record: {exc}") from exc
    if not isinstance(rec, dict) or "id" not in rec or "text" not in rec:
        raise DataError("document record must be an object with 'id' and 'text'")
    if not isinstance(rec["text"], str):
        raise DataError("document 'text' must be a string")
    return Document(
        id=str(rec["id"]),
        text=rec["text"],
        source=str(rec.get("source", "")),
        meta=rec.get("meta", {}) or {},
    )


def read_documents(path: str | Path) -> Iterator[Document]:
    """Yield documents from a JSONL file, raising DataError on malformed lines."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield parse_document(line)


def write_documents(docs: Iterable[Document], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(dumps(doc.to_record()) + "\n")
            n += 1
    return n


def write_decisions(decisions: Iterable[StageDecision], path: str | Path, append: bool = False) -> int:
    n = 0
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for dec in decisions:
            fh.write(dumps(dec.to_record()) + "\n")
            n += 1
    return n
