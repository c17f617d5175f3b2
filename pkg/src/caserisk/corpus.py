"""Corpus ingestion, cleaning and attribute extraction.

A corpus is a flat line-delimited JSON file, one record per line, with
required fields ``id``, ``domain`` and ``text``; optional ``phones``,
``locations`` and ``date``; any further string-valued fields are kept in
``extras``.  Ingestion is strict: malformed records are counted and
skipped, never repaired.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .errors import EmptyCorpusError, MalformedRecordError

_TAG_RE = re.compile(r"<[^>]*>")
_WS_RE = re.compile(r"\s+")
_TOKEN_RE = re.compile(r"[a-z0-9]+")

# North-American style numbers (optional +1 / separators) plus bare digit runs.
_PHONE_CANDIDATE_RE = re.compile(
    r"(?<!\d)(?:\+?1[-. ]?)?(?:\(\d{3}\)[-. ]?|\d{3}[-. ])\d{3}[-. ]?\d{4}(?!\d)"
    r"|(?<!\d)\d{7,15}(?!\d)"
)

PHONE_MIN_DIGITS = 7
PHONE_MAX_DIGITS = 15


def clean_text(raw: str) -> str:
    """Strip markup tags and collapse whitespace runs; case is preserved."""
    text = _TAG_RE.sub(" ", raw)
    return _WS_RE.sub(" ", text).strip()


def tokenize(text: str) -> list[str]:
    """Lowercased tokens split on non-alphanumeric boundaries."""
    return _TOKEN_RE.findall(text.lower())


def normalize_phone(raw: str) -> Optional[str]:
    """Normalize a phone-like string to a bare digit string.

    Strips every non-digit character, drops a single leading country-code
    "1" when exactly 11 digits remain, and returns None when the digit
    count falls outside 7..15.
    """
    digits = re.sub(r"\D", "", raw)
    if len(digits) == 11 and digits.startswith("1"):
        digits = digits[1:]
    if PHONE_MIN_DIGITS <= len(digits) <= PHONE_MAX_DIGITS:
        return digits
    return None


def phones_in_text(text: str) -> list[str]:
    """Scan free text for phone-like spans and normalize the hits."""
    found = []
    for candidate in _PHONE_CANDIDATE_RE.findall(text):
        normalized = normalize_phone(candidate)
        if normalized is not None and normalized not in found:
            found.append(normalized)
    return found


@dataclass(frozen=True)
class Document:
    """One cleaned record with its extracted linking attributes."""

    id: str
    source_domain: str
    text: str
    phones: tuple[str, ...] = ()
    locations: tuple[str, ...] = ()
    posted_date: Optional[date] = None
    extras: Mapping[str, str] = field(default_factory=dict)

    def attribute_names(self) -> set[str]:
        names = {"id", "domain", "text"}
        if self.phones:
            names.add("phones")
        if self.locations:
            names.add("locations")
        if self.posted_date is not None:
            names.add("date")
        names.update(self.extras)
        return names


class Corpus:
    """Immutable ordered collection of documents with a derived schema."""

    def __init__(self, documents: Sequence[Document]):
        self.documents: tuple[Document, ...] = tuple(documents)
        by_id: dict[str, Document] = {}
        for doc in self.documents:
            if doc.id in by_id:
                raise MalformedRecordError(f"duplicate document id {doc.id!r}")
            by_id[doc.id] = doc
        self._by_id = by_id
        schema: set[str] = set()
        for doc in self.documents:
            schema |= doc.attribute_names()
        self.schema: frozenset[str] = frozenset(schema)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def get(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def ids(self) -> list[str]:
        return [doc.id for doc in self.documents]


class Gazetteer:
    """Location lexicon; terms are lowercase, possibly multi-word."""

    def __init__(self, terms: Iterable[str]):
        cleaned = {" ".join(tokenize(t)) for t in terms}
        cleaned.discard("")
        self.terms: frozenset[str] = frozenset(cleaned)
        self._single = {t for t in self.terms if " " not in t}
        self._multi = [tuple(t.split(" ")) for t in self.terms if " " in t]

    @classmethod
    def from_file(cls, path: str | Path) -> "Gazetteer":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(line.strip().lower() for line in fh if line.strip())

    def matches(self, text: str) -> list[str]:
        """All terms present as whole-token spans of the text, sorted."""
        tokens = tokenize(text)
        token_set = set(tokens)
        hits = {t for t in self._single if t in token_set}
        for parts in self._multi:
            n = len(parts)
            for i in range(len(tokens) - n + 1):
                if tuple(tokens[i : i + n]) == parts:
                    hits.add(" ".join(parts))
                    break
        return sorted(hits)


def extract_attributes(record: Mapping[str, object], gazetteer: Optional[Gazetteer] = None) -> Document:
    """Build a Document from a raw record dict.

    Raises MalformedRecordError when required fields are missing/empty or
    optional fields have the wrong shape.
    """
    if not isinstance(record, Mapping):
        raise MalformedRecordError("record is not an object")
    doc_id = record.get("id")
    domain = record.get("domain")
    raw_text = record.get("text")
    if not isinstance(doc_id, str) or not doc_id.strip():
        raise MalformedRecordError("missing or empty 'id'")
    if not isinstance(domain, str) or not domain.strip():
        raise MalformedRecordError("missing or empty 'domain'")
    if not isinstance(raw_text, str):
        raise MalformedRecordError("missing 'text'")
    text = clean_text(raw_text)
    if not text:
        raise MalformedRecordError("text empty after cleaning")

    phones: list[str] = []
    raw_phones = record.get("phones", [])
    if not isinstance(raw_phones, list) or any(not isinstance(p, str) for p in raw_phones):
        raise MalformedRecordError("'phones' must be a list of strings")
    for raw in raw_phones:
        normalized = normalize_phone(raw)
        if normalized is not None and normalized not in phones:
            phones.append(normalized)
    for normalized in phones_in_text(text):
        if normalized not in phones:
            phones.append(normalized)

    raw_locations = record.get("locations", [])
    if not isinstance(raw_locations, list) or any(not isinstance(x, str) for x in raw_locations):
        raise MalformedRecordError("'locations' must be a list of strings")
    locations = {loc.strip().lower() for loc in raw_locations if loc.strip()}
    if gazetteer is not None:
        locations.update(gazetteer.matches(text))

    posted = None
    raw_date = record.get("date")
    if raw_date is not None:
        if not isinstance(raw_date, str):
            raise MalformedRecordError("'date' must be an ISO-8601 string")
        try:
            posted = date.fromisoformat(raw_date)
        except ValueError as exc:
            raise MalformedRecordError(f"bad date {raw_date!r}") from exc

    extras: dict[str, str] = {}
    for key, value in record.items():
        if key in ("id", "domain", "text", "phones", "locations", "date"):
            continue
        if not isinstance(value, str):
            raise MalformedRecordError(f"extra field {key!r} is not a string")
        extras[key] = value

    return Document(
        id=doc_id.strip(),
        source_domain=domain.strip(),
        text=text,
        phones=tuple(phones),
        locations=tuple(sorted(locations)),
        posted_date=posted,
        extras=extras,
    )


@dataclass
class IngestStats:
    total_lines: int = 0
    ingested: int = 0
    skipped: int = 0


def ingest(
    path: str | Path,
    limit: Optional[int] = None,
    gazetteer: Optional[Gazetteer] = None,
) -> tuple[Corpus, IngestStats]:
    """Read a line-delimited corpus file into a Corpus.

    Malformed lines (bad JSON, failed extraction, duplicate ids) are
    counted in the returned stats and skipped.  A file whose non-blank
    lines yield zero valid records raises EmptyCorpusError; an entirely
    empty file yields an empty corpus.
    """
    stats = IngestStats()
    documents: list[Document] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            stats.total_lines += 1
            if limit is not None and stats.ingested >= limit:
                continue
            try:
                record = json.loads(line)
                doc = extract_attributes(record, gazetteer)
                if doc.id in seen:
                    raise MalformedRecordError(f"duplicate id {doc.id!r}")
            except (json.JSONDecodeError, MalformedRecordError):
                stats.skipped += 1
                continue
            seen.add(doc.id)
            documents.append(doc)
            stats.ingested += 1
    if stats.total_lines > 0 and stats.ingested == 0:
        raise EmptyCorpusError(f"no valid records in {path}")
    return Corpus(documents), stats


def document_to_record(doc: Document) -> dict:
    record: dict[str, object] = {
        "id": doc.id,
        "domain": doc.source_domain,
        "text": doc.text,
    }
    if doc.phones:
        record["phones"] = list(doc.phones)
    if doc.locations:
        record["locations"] = list(doc.locations)
    if doc.posted_date is not None:
        record["date"] = doc.posted_date.isoformat()
    record.update(doc.extras)
    return record


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Export as line-delimited JSON; re-ingesting yields identical documents."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(json.dumps(document_to_record(doc), sort_keys=True))
            fh.write("\n")


def remove_tokens(corpus: Corpus, lexicon: Iterable[str]) -> Corpus:
    """Delete whole-token occurrences of lexicon entries from every text.

    Matching is case-insensitive; multi-word entries match across single
    whitespace runs.  All other document fields are unchanged and the
    input corpus is not modified.
    """
    terms = sorted({t.strip().lower() for t in lexicon if t.strip()})
    if not terms:
        return Corpus(corpus.documents)
    alternatives = []
    for term in terms:
        parts = [re.escape(p) for p in term.split()]
        alternatives.append(r"\s+".join(parts))
    pattern = re.compile(r"\b(?:" + "|".join(alternatives) + r")\b", re.IGNORECASE)
    out = []
    for doc in corpus:
        new_text = _WS_RE.sub(" ", pattern.sub(" ", doc.text)).strip()
        if new_text == doc.text:
            out.append(doc)
        else:
            out.append(
                Document(
                    id=doc.id,
                    source_domain=doc.source_domain,
                    text=new_text,
                    phones=doc.phones,
                    locations=doc.locations,
                    posted_date=doc.posted_date,
                    extras=doc.extras,
                )
            )
    return Corpus(out)
