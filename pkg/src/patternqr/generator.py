"""Pattern-constrained reformulation generation and hybrid query composition.

The generation prompt carries the chosen pattern (name, description, rule,
one example), the original query, and the retrieval-context snippets. LLM
output is cleaned up aggressively (quote/markup stripping, newline collapse)
because model output is messy; an empty result after one re-ask falls back
to the identity reformulation and is flagged as such.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError
from .gateway import ChatMessage, ChatRequest, Gateway, fingerprint
from .index import RetrievalContext
from .induction import ReformulationPattern

GENERATION_SYSTEM = (
    "You rewrite search queries to improve retrieval. Rewrite the query by "
    "applying exactly the named reformulation pattern. Output only the "
    "reformulated query, with no explanations, labels, or quotes."
)

_WS_RE = re.compile(r"\s+")
_QUOTE_PAIRS = [('"', '"'), ("'", "'"), ("“", "”"), ("`", "`")]


@dataclass(frozen=True)
class Reformulation:
    text: str
    pattern_id: int
    query_id: str
    prompt_fingerprint: str
    fallback: bool = False

    def __post_init__(self):
        if not self.text.strip():
            raise DataError(f"empty reformulation for query {self.query_id!r}")
        if "\n" in self.text:
            raise DataError(f"reformulation for query {self.query_id!r} spans lines")


@dataclass(frozen=True)
class HybridQuery:
    text: str
    repetition: int = 1


def build_generation_prompt(
    query: str,
    context: RetrievalContext,
    pattern: ReformulationPattern,
    model: str,
    extra_context: list[str] | None = None,
    max_tokens: int = 512,
    temperature: float = 1.0,
) -> ChatRequest:
    """Render the reformulation request for (query, context, pattern).

    `extra_context` is the augmentation hook: externally produced pseudo-passage
    text prepended to the context block. With no snippets and no extra context
    the block is omitted entirely.
    """
    lines = [
        f"Pattern: {pattern.name}",
        f"Description: {pattern.description}",
        f"Rule: {pattern.rule}",
    ]
    if pattern.examples:
        example = pattern.examples[0]
        lines.append(f'Example: "{example.query}" -> "{example.reformulation}"')
    passages = list(extra_context or []) + [e.snippet for e in context.entries]
    if passages:
        lines.append("")
        lines.append("Top retrieved passages:")
        lines.extend(f"- {p}" for p in passages)
    lines.append("")
    lines.append(f"Query: {query}")
    lines.append("Reformulated query:")
    return ChatRequest(
        model=model,
        messages=(
            ChatMessage("system", GENERATION_SYSTEM),
            ChatMessage("user", "\n".join(lines)),
        ),
        max_tokens=max_tokens,
        temperature=temperature,
    )


def clean_generation(text: str) -> str:
    """Collapse to one line and strip surrounding quotes/markdown markup."""
    out = text.strip()
    if out.startswith("```"):
        out = out.strip("`")
        # drop a leading language hint left by a fence
        first, _, rest = out.partition("\n")
        if rest and " " not in first.strip():
            out = rest
    out = _WS_RE.sub(" ", out).strip()
    changed = True
    while changed and len(out) >= 2:
        changed = False
        for opener, closer in _QUOTE_PAIRS:
            if out.startswith(opener) and out.endswith(closer):
                out = out[len(opener) : -len(closer)].strip()
                changed = True
    return out


def generate_reformulation(
    gateway: Gateway,
    query: str,
    context: RetrievalContext,
    pattern: ReformulationPattern,
    query_id: str = "",
    extra_context: list[str] | None = None,
) -> Reformulation:
    """Generate the pattern-guided rewrite; empty output re-asks once then
    falls back to the identity reformulation (flagged)."""
    request = build_generation_prompt(
        query, context, pattern, model=gateway.model, extra_context=extra_context
    )
    fp = fingerprint(request)
    text = clean_generation(gateway.complete(request).content)
    if not text:
        text = clean_generation(gateway.complete(request).content)
    if not text:
        return Reformulation(
            text=query,
            pattern_id=pattern.pattern_id,
            query_id=query_id,
            prompt_fingerprint=fp,
            fallback=True,
        )
    return Reformulation(
        text=text, pattern_id=pattern.pattern_id, query_id=query_id, prompt_fingerprint=fp
    )


def compose_hybrid(query: str, reformulation: str, repetition: int = 1) -> HybridQuery:
    """Hybrid query: the original phrasing repeated `repetition` times, then the rewrite."""
    if repetition < 1:
        raise DataError(f"repetition must be >= 1, got {repetition}")
    segments = [query] * repetition + [reformulation]
    return HybridQuery(text=" ".join(segments), repetition=repetition)


@dataclass(frozen=True)
class ReformulationRecord:
    """One reformulation-log line."""

    query_id: str
    pattern_id: int
    pattern_name: str
    reformulation: str
    hybrid_query: str
    fallback: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "query_id": self.query_id,
                "pattern_id": self.pattern_id,
                "pattern_name": self.pattern_name,
                "reformulation": self.reformulation,
                "hybrid_query": self.hybrid_query,
                "fallback": self.fallback,
            }
        )


def write_reformulation_log(
    records: list[ReformulationRecord], path: str | Path, config_hash: str = ""
) -> None:
    """JSON-lines log; the first line is a header carrying the config hash."""
    lines = [json.dumps({"config_hash": config_hash})]
    lines += [r.to_json() for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_reformulation_log(path: str | Path) -> list[ReformulationRecord]:
    records = []
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for line_no, line in enumerate(raw.splitlines(), start=1):
        if not line:
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{line_no}: bad JSON: {exc}") from exc
        if "query_id" not in payload:
            continue  # header line
        records.append(
            ReformulationRecord(
                query_id=payload["query_id"],
                pattern_id=int(payload["pattern_id"]),
                pattern_name=payload["pattern_name"],
                reformulation=payload["reformulation"],
                hybrid_query=payload["hybrid_query"],
                fallback=bool(payload["fallback"]),
            )
        )
    return records
