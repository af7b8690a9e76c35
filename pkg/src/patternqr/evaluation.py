"""TREC-format run/qrels IO and ranking effectiveness metrics.

Metrics follow the graded-judgment conventions of the deep-learning passage
benchmarks: nDCG uses exponential gain over full grades, while AP and recall
binarize at grade >= 2 by default. Means are unweighted over judged queries.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError

DEFAULT_NDCG_K = 10
DEFAULT_MAP_K = 1000
DEFAULT_RECALL_K = 1000
DEFAULT_BINARIZE_AT = 2


@dataclass(frozen=True)
class RunEntry:
    query_id: str
    doc_id: str
    rank: int
    score: float
    tag: str


Run = dict[str, list[RunEntry]]  # query_id -> entries ordered by rank
Qrels = dict[str, dict[str, int]]  # query_id -> doc_id -> grade


def parse_qrels(path: str | Path) -> Qrels:
    """Parse `query_id 0 doc_id grade` lines (whitespace-separated)."""
    qrels: Qrels = {}
    for line_no, fields in _split_lines(path, expected=4):
        query_id, _, doc_id, grade_text = fields
        try:
            grade = int(grade_text)
        except ValueError:
            raise DataError(f"{path}:{line_no}: bad grade {grade_text!r}") from None
        if grade < 0:
            raise DataError(f"{path}:{line_no}: negative grade {grade}")
        per_query = qrels.setdefault(query_id, {})
        if doc_id in per_query:
            raise DataError(f"{path}:{line_no}: duplicate judgment for ({query_id}, {doc_id})")
        per_query[doc_id] = grade
    return qrels


def parse_run(path: str | Path) -> Run:
    """Parse `query_id Q0 doc_id rank score tag` lines and validate per-query invariants."""
    grouped: dict[str, list[RunEntry]] = {}
    for line_no, fields in _split_lines(path, expected=6):
        query_id, _, doc_id, rank_text, score_text, tag = fields
        try:
            entry = RunEntry(query_id, doc_id, int(rank_text), float(score_text), tag)
        except ValueError as exc:
            raise DataError(f"{path}:{line_no}: {exc}") from None
        grouped.setdefault(query_id, []).append(entry)
    run: Run = {}
    for query_id, entries in grouped.items():
        entries.sort(key=lambda e: e.rank)
        ranks = [e.rank for e in entries]
        if ranks != list(range(1, len(entries) + 1)):
            raise DataError(f"{path}: query {query_id}: ranks are not dense 1..n")
        doc_ids = [e.doc_id for e in entries]
        if len(set(doc_ids)) != len(doc_ids):
            raise DataError(f"{path}: query {query_id}: duplicate doc_id in ranking")
        for prev, cur in zip(entries, entries[1:]):
            if cur.score > prev.score:
                raise DataError(f"{path}: query {query_id}: scores increase with rank")
        run[query_id] = entries
    return run


def _split_lines(path: str | Path, expected: int):
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for line_no, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != expected:
            raise DataError(
                f"{path}:{line_no}: expected {expected} whitespace-separated fields, "
                f"got {len(fields)}"
            )
        yield line_no, fields


def run_from_rankings(rankings: dict[str, list[tuple[str, float]]], tag: str) -> Run:
    """Build a validated run from per-query (doc_id, score) lists in rank order."""
    run: Run = {}
    for query_id, ranked in rankings.items():
        run[query_id] = [
            RunEntry(query_id, doc_id, rank, score, tag)
            for rank, (doc_id, score) in enumerate(ranked, start=1)
        ]
    return run


def write_run(run: Run, path: str | Path) -> None:
    """Deterministic emission: query_id ascending, rank ascending, scores at 6 decimals."""
    lines = []
    for query_id in sorted(run):
        for entry in sorted(run[query_id], key=lambda e: e.rank):
            lines.append(
                f"{entry.query_id} Q0 {entry.doc_id} {entry.rank} "
                f"{entry.score:.6f} {entry.tag}"
            )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def ndcg_at_k(
    ranked_doc_ids: list[str], judgments: dict[str, int], k: int = DEFAULT_NDCG_K
) -> float:
    """Exponential-gain nDCG over graded judgments; 0 when the query has no relevant docs."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    dcg = 0.0
    for i, doc_id in enumerate(ranked_doc_ids[:k], start=1):
        grade = judgments.get(doc_id, 0)
        dcg += (2.0**grade - 1.0) / math.log2(i + 1)
    ideal = sorted(judgments.values(), reverse=True)[:k]
    idcg = sum((2.0**g - 1.0) / math.log2(i + 1) for i, g in enumerate(ideal, start=1))
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def average_precision_at_k(
    ranked_doc_ids: list[str],
    judgments: dict[str, int],
    k: int = DEFAULT_MAP_K,
    binarize_at: int = DEFAULT_BINARIZE_AT,
) -> float:
    """AP over the top k with relevance = grade >= binarize_at; 0 when nothing is relevant."""
    if binarize_at < 1:
        raise DataError(f"binarize_at must be >= 1, got {binarize_at}")
    relevant = {d for d, g in judgments.items() if g >= binarize_at}
    if not relevant:
        return 0.0
    hits = 0
    precision_sum = 0.0
    for i, doc_id in enumerate(ranked_doc_ids[:k], start=1):
        if doc_id in relevant:
            hits += 1
            precision_sum += hits / i
    return precision_sum / len(relevant)


def recall_at_k(
    ranked_doc_ids: list[str],
    judgments: dict[str, int],
    k: int = DEFAULT_RECALL_K,
    binarize_at: int = DEFAULT_BINARIZE_AT,
) -> float:
    relevant = {d for d, g in judgments.items() if g >= binarize_at}
    if not relevant:
        return 0.0
    retrieved = set(ranked_doc_ids[:k])
    return len(relevant & retrieved) / len(relevant)


@dataclass(frozen=True)
class QueryMetrics:
    map: float
    ndcg10: float
    recall1k: float


@dataclass(frozen=True)
class MetricsReport:
    per_query: dict[str, QueryMetrics]
    mean_map: float
    mean_ndcg10: float
    mean_recall1k: float
    num_judged: int
    num_unjudged: int


def evaluate_run(
    run: Run,
    qrels: Qrels,
    map_k: int = DEFAULT_MAP_K,
    ndcg_k: int = DEFAULT_NDCG_K,
    recall_k: int = DEFAULT_RECALL_K,
    binarize_at: int = DEFAULT_BINARIZE_AT,
) -> MetricsReport:
    """Per-query metrics for judged queries; run-only queries count as unjudged."""
    judged = sorted(set(run) & set(qrels))
    if not judged:
        raise DataError("no query in the run has judgments in the qrels")
    per_query: dict[str, QueryMetrics] = {}
    for query_id in judged:
        ranked = [e.doc_id for e in run[query_id]]
        judgments = qrels[query_id]
        per_query[query_id] = QueryMetrics(
            map=average_precision_at_k(ranked, judgments, k=map_k, binarize_at=binarize_at),
            ndcg10=ndcg_at_k(ranked, judgments, k=ndcg_k),
            recall1k=recall_at_k(ranked, judgments, k=recall_k, binarize_at=binarize_at),
        )
    n = len(judged)
    return MetricsReport(
        per_query=per_query,
        mean_map=sum(m.map for m in per_query.values()) / n,
        mean_ndcg10=sum(m.ndcg10 for m in per_query.values()) / n,
        mean_recall1k=sum(m.recall1k for m in per_query.values()) / n,
        num_judged=n,
        num_unjudged=len(set(run) - set(qrels)),
    )


def render_report_table(report: MetricsReport) -> str:
    header = f"{'query':<16} {'mAP@1k':>10} {'nDCG@10':>10} {'Recall@1k':>10}"
    lines = [header, "-" * len(header)]
    for query_id in sorted(report.per_query):
        m = report.per_query[query_id]
        lines.append(f"{query_id:<16} {m.map:>10.4f} {m.ndcg10:>10.4f} {m.recall1k:>10.4f}")
    lines.append("-" * len(header))
    lines.append(
        f"{'mean':<16} {report.mean_map:>10.4f} {report.mean_ndcg10:>10.4f} "
        f"{report.mean_recall1k:>10.4f}"
    )
    lines.append(f"judged queries: {report.num_judged}, unjudged: {report.num_unjudged}")
    return "\n".join(lines)


def write_report_csv(report: MetricsReport, path: str | Path, config_hash: str = "") -> None:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["query_id", "map", "ndcg10", "recall1k"])
    for query_id in sorted(report.per_query):
        m = report.per_query[query_id]
        writer.writerow([query_id, f"{m.map:.6f}", f"{m.ndcg10:.6f}", f"{m.recall1k:.6f}"])
    writer.writerow(
        [
            "mean",
            f"{report.mean_map:.6f}",
            f"{report.mean_ndcg10:.6f}",
            f"{report.mean_recall1k:.6f}",
        ]
    )
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
