"""Deterministic tokenizer, inverted index, BM25 scoring and top-k retrieval.

The index is immutable after construction; every query-facing result is
independent of the order documents were inserted in (ties between equal
scores break on ascending doc_id, never on internal ordinals).
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4
DEFAULT_SNIPPET_TOKENS = 64

# Maximal runs of Unicode alphanumerics; underscore is punctuation here.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any maximal run of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def query_term_weights(query: str) -> dict[str, float]:
    """Unweighted query representation: weight of a term = its count in the query."""
    return {term: float(count) for term, count in Counter(tokenize(query)).items()}


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str

    def __post_init__(self):
        if not self.doc_id:
            raise DataError("document doc_id must be non-empty")


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise DataError(f"non-finite score for doc {self.doc_id!r}")


@dataclass(frozen=True)
class ContextEntry:
    doc_id: str
    score: float
    snippet: str


@dataclass(frozen=True)
class RetrievalContext:
    """Ranked top-k documents for one query, with truncated snippets."""

    query_id: str
    entries: tuple[ContextEntry, ...]
    k: int

    def __post_init__(self):
        if len(self.entries) > self.k:
            raise DataError(f"context holds {len(self.entries)} entries but k={self.k}")

    @property
    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]

    @property
    def snippets(self) -> list[str]:
        return [e.snippet for e in self.entries]


class InvertedIndex:
    """Postings with per-document lengths; built once, then read-only.

    Ordinals are assigned in insertion order and never leak into results:
    scoring and tie-breaking depend only on doc_id and corpus statistics.
    """

    def __init__(
        self,
        postings: dict[str, list[tuple[int, int]]],
        doc_ids: list[str],
        doc_tokens: list[list[str]],
        k1: float = DEFAULT_K1,
        b: float = DEFAULT_B,
    ):
        self.postings = postings
        self.doc_ids = doc_ids
        self._doc_tokens = doc_tokens
        self.doc_lengths = [len(toks) for toks in doc_tokens]
        self.num_docs = len(doc_ids)
        total = sum(self.doc_lengths)
        self.avg_doc_length = total / self.num_docs if self.num_docs > 0 else 0.0
        self.k1 = k1
        self.b = b
        self._ordinal_of = {doc_id: i for i, doc_id in enumerate(doc_ids)}

    def ordinal(self, doc_id: str) -> int:
        try:
            return self._ordinal_of[doc_id]
        except KeyError:
            raise DataError(f"unknown doc_id {doc_id!r}") from None

    def document_frequency(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        """Smoothed, nonnegative idf: ln(1 + (N - df + 0.5) / (df + 0.5))."""
        df = self.document_frequency(term)
        return math.log(1.0 + (self.num_docs - df + 0.5) / (df + 0.5))

    def term_frequencies(self, ordinal: int) -> Counter[str]:
        return Counter(self._doc_tokens[ordinal])

    def snippet(self, ordinal: int, max_tokens: int = DEFAULT_SNIPPET_TOKENS) -> str:
        return " ".join(self._doc_tokens[ordinal][:max_tokens])


def build_index(
    docs: Iterable[Document], k1: float = DEFAULT_K1, b: float = DEFAULT_B
) -> InvertedIndex:
    """Build an inverted index over the collection; rejects duplicate doc_ids."""
    doc_ids: list[str] = []
    doc_tokens: list[list[str]] = []
    postings: dict[str, list[tuple[int, int]]] = {}
    seen: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen:
            raise DataError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        ordinal = len(doc_ids)
        doc_ids.append(doc.doc_id)
        tokens = tokenize(doc.text)
        doc_tokens.append(tokens)
        for term, tf in sorted(Counter(tokens).items()):
            postings.setdefault(term, []).append((ordinal, tf))
    return InvertedIndex(postings, doc_ids, doc_tokens, k1=k1, b=b)


def bm25_score(
    index: InvertedIndex, query_terms: Mapping[str, float], ordinal: int
) -> float:
    """BM25 score of one document for a weighted query.

    score = sum_t w_t * idf(t) * tf*(k1+1) / (tf + k1*(1 - b + b*len/avgdl)).
    Unknown terms contribute 0.
    """
    if index.num_docs == 0:
        raise DataError("cannot score against an empty index")
    doc_len = index.doc_lengths[ordinal]
    norm = _length_norm(index, doc_len)
    score = 0.0
    for term in sorted(query_terms):
        weight = query_terms[term]
        tf = _term_frequency(index, term, ordinal)
        if tf == 0 or weight == 0.0:
            continue
        score += weight * index.idf(term) * tf * (index.k1 + 1.0) / (tf + index.k1 * norm)
    return score


def _length_norm(index: InvertedIndex, doc_len: int) -> float:
    if index.avg_doc_length > 0:
        return 1.0 - index.b + index.b * doc_len / index.avg_doc_length
    return 1.0


def _term_frequency(index: InvertedIndex, term: str, ordinal: int) -> int:
    for doc_ord, tf in index.postings.get(term, ()):
        if doc_ord == ordinal:
            return tf
    return 0


def retrieve_topk(
    index: InvertedIndex,
    query: str | Mapping[str, float],
    k: int,
    query_id: str = "",
    snippet_tokens: int = DEFAULT_SNIPPET_TOKENS,
) -> RetrievalContext:
    """Top-k retrieval: exactly min(k, #docs with positive score) ranked entries.

    Sorted by score descending, ties broken by ascending doc_id. Accumulation
    walks query terms in sorted order so scores are bit-reproducible across
    document insertion orders.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    weights = query_term_weights(query) if isinstance(query, str) else query
    scores: dict[int, float] = {}
    for term in sorted(weights):
        weight = weights[term]
        if weight == 0.0:
            continue
        idf = index.idf(term)
        for ordinal, tf in index.postings.get(term, ()):
            norm = _length_norm(index, index.doc_lengths[ordinal])
            contribution = weight * idf * tf * (index.k1 + 1.0) / (tf + index.k1 * norm)
            scores[ordinal] = scores.get(ordinal, 0.0) + contribution
    ranked = sorted(
        ((index.doc_ids[o], s) for o, s in scores.items() if s > 0.0),
        key=lambda pair: (-pair[1], pair[0]),
    )[:k]
    entries = tuple(
        ContextEntry(doc_id, score, index.snippet(index.ordinal(doc_id), snippet_tokens))
        for doc_id, score in ranked
    )
    return RetrievalContext(query_id=query_id, entries=entries, k=k)


def read_corpus_tsv(path: str | Path) -> list[Document]:
    """Corpus ingestion: one `doc_id<TAB>text` document per line, UTF-8, no header."""
    docs = []
    for line_no, line in _tsv_lines(path):
        doc_id, sep, text = line.partition("\t")
        if not sep:
            raise DataError(f"{path}:{line_no}: expected doc_id<TAB>text")
        if not doc_id:
            raise DataError(f"{path}:{line_no}: empty doc_id")
        docs.append(Document(doc_id=doc_id, text=text))
    return docs


def read_queries_tsv(path: str | Path) -> list[tuple[str, str]]:
    """Queries: one `query_id<TAB>text` per line."""
    queries = []
    for line_no, line in _tsv_lines(path):
        query_id, sep, text = line.partition("\t")
        if not sep or not query_id:
            raise DataError(f"{path}:{line_no}: expected query_id<TAB>text")
        queries.append((query_id, text))
    return queries


def _tsv_lines(path: str | Path):
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for line_no, line in enumerate(raw.splitlines(), start=1):
        if line == "":
            continue
        yield line_no, line


def save_index(index: InvertedIndex, path: str | Path, config_hash: str = "") -> None:
    """Persist the index as JSON; `config_hash` records the producing configuration."""
    payload = {
        "format": "patternqr-index-v1",
        "config_hash": config_hash,
        "k1": index.k1,
        "b": index.b,
        "doc_ids": index.doc_ids,
        "doc_tokens": index._doc_tokens,
        "postings": {t: [[o, tf] for o, tf in plist] for t, plist in index.postings.items()},
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_index(path: str | Path) -> InvertedIndex:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load index from {path}: {exc}") from exc
    if payload.get("format") != "patternqr-index-v1":
        raise DataError(f"{path} is not a patternqr index file")
    postings = {
        t: [(int(o), int(tf)) for o, tf in plist] for t, plist in payload["postings"].items()
    }
    return InvertedIndex(
        postings,
        payload["doc_ids"],
        payload["doc_tokens"],
        k1=payload["k1"],
        b=payload["b"],
    )
