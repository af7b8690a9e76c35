"""Pattern library induction from (query, stronger-reformulation) pairs.

Batches of pairs go through an LLM consolidation prompt that carries the
current library forward; the returned ``{"Consolidated Patterns": [...]}``
payload replaces the working library after each batch. A second pass labels
each pair with the library pattern that explains its rewrite.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import DataError, GatewayError
from .gateway import ChatMessage, ChatRequest, ChatResponse, Gateway, request_to_wire

DEFAULT_BATCH_SIZE = 50
DEFAULT_MAX_PATTERNS = 16
LIBRARY_FORMAT = "patternqr-library-v1"

CONSOLIDATION_SYSTEM = (
    "You are QueryReformulationLLM, an intelligent assistant that identifies and "
    "updates abstract patterns that describe how queries are reformulated to "
    "improve retrieval effectiveness."
)

CONSOLIDATION_USER_TEMPLATE = """\
Given a set of query reformulation pairs below and optional prior list of consolidated patterns, your objectives are:
1. Identify the transformation pattern(s) underlying each reformulation.
2. Consolidate the global pattern set by merging semantically similar strategies and refining their names and descriptions.

Query Reformulation Pairs: {query_pairs}

Consolidated Patterns: {existing_patterns}

Each extracted pattern should include a pattern name, an informative description, a generalized transformation rule, and representative examples.
Return the results of consolidated patterns:

{{"Consolidated Patterns": [...]}}"""

FORMAT_REMINDER = (
    '\n\nReturn only a single JSON object of the form '
    '{"Consolidated Patterns": [{"name": ..., "description": ..., "rule": ..., '
    '"examples": [{"query": ..., "reformulation": ...}]}]} with no other text.'
)

LABEL_SYSTEM = (
    "You classify how a search query was rewritten. Given a query, its "
    "reformulation, and a list of named reformulation patterns, answer with "
    "exactly one pattern name from the list and nothing else."
)


@dataclass(frozen=True)
class TrainingPair:
    pair_id: str
    query: str
    reformulation: str

    def __post_init__(self):
        if not self.pair_id:
            raise DataError("pair_id must be non-empty")
        if not self.query or not self.reformulation:
            raise DataError(f"pair {self.pair_id}: query and reformulation must be non-empty")
        if self.query == self.reformulation:
            raise DataError(f"pair {self.pair_id}: reformulation equals the query")


@dataclass(frozen=True)
class PatternExample:
    query: str
    reformulation: str


@dataclass(frozen=True)
class ReformulationPattern:
    pattern_id: int
    name: str
    description: str
    rule: str
    examples: tuple[PatternExample, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise DataError("pattern name must be non-empty")


@dataclass(frozen=True)
class LibraryProvenance:
    source_dataset: str = ""
    num_pairs: int = 0
    induction_model: str = ""


@dataclass(frozen=True)
class PatternLibrary:
    patterns: tuple[ReformulationPattern, ...]
    version: str = "0"
    provenance: LibraryProvenance = field(default_factory=LibraryProvenance)
    config_hash: str = ""

    def __post_init__(self):
        if not self.patterns:
            raise DataError("a pattern library must hold at least one pattern")
        for i, pattern in enumerate(self.patterns):
            if pattern.pattern_id != i:
                raise DataError(
                    f"pattern ids must be dense 0..M-1; got {pattern.pattern_id} at position {i}"
                )
        lowered = [p.name.lower() for p in self.patterns]
        if len(set(lowered)) != len(lowered):
            dupes = sorted({n for n in lowered if lowered.count(n) > 1})
            raise DataError(f"duplicate pattern names: {dupes}")

    def __len__(self) -> int:
        return len(self.patterns)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.patterns]

    def resolve_name(self, name: str) -> int:
        """Case-insensitive name lookup; raises DataError listing valid names."""
        wanted = name.strip().lower()
        for pattern in self.patterns:
            if pattern.name.lower() == wanted:
                return pattern.pattern_id
        raise DataError(f"unknown pattern name {name!r}; valid names: {self.names}")


@dataclass(frozen=True)
class PatternLabel:
    pair_id: str
    pattern_id: int


def ingest_pairs(path: str | Path) -> list[TrainingPair]:
    """Read `pair_id<TAB>query<TAB>reformulation` lines; strict per-line validation."""
    pairs: list[TrainingPair] = []
    seen: set[str] = set()
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for line_no, line in enumerate(raw.splitlines(), start=1):
        if line == "":
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise DataError(f"{path}:{line_no}: expected pair_id<TAB>query<TAB>reformulation")
        pair_id, query, reformulation = fields
        if pair_id in seen:
            raise DataError(f"{path}:{line_no}: duplicate pair_id {pair_id!r}")
        seen.add(pair_id)
        try:
            pairs.append(TrainingPair(pair_id, query, reformulation))
        except DataError as exc:
            raise DataError(f"{path}:{line_no}: {exc}") from exc
    return pairs


def sample_pairs(pairs: list[TrainingPair], n: int, seed: int) -> list[TrainingPair]:
    """Seeded shuffle then prefix-take; same seed always yields the same subset."""
    shuffled = list(pairs)
    random.Random(seed).shuffle(shuffled)
    return shuffled[:n]


def _pattern_to_payload(pattern: ReformulationPattern) -> dict:
    return {
        "name": pattern.name,
        "description": pattern.description,
        "rule": pattern.rule,
        "examples": [
            {"query": e.query, "reformulation": e.reformulation} for e in pattern.examples
        ],
    }


def render_consolidation_prompt(
    batch: list[TrainingPair], existing: PatternLibrary | None, model: str
) -> ChatRequest:
    pairs_json = json.dumps(
        [{"query": p.query, "reformulation": p.reformulation} for p in batch]
    )
    existing_json = json.dumps(
        [_pattern_to_payload(p) for p in existing.patterns] if existing else []
    )
    user = CONSOLIDATION_USER_TEMPLATE.format(
        query_pairs=pairs_json, existing_patterns=existing_json
    )
    return ChatRequest(
        model=model,
        messages=(ChatMessage("system", CONSOLIDATION_SYSTEM), ChatMessage("user", user)),
    )


def extract_payload(text: str) -> list[dict]:
    """First balanced JSON object containing "Consolidated Patterns", prose tolerated."""
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
            continue
        if isinstance(obj, dict) and "Consolidated Patterns" in obj:
            payload = obj["Consolidated Patterns"]
            if not isinstance(payload, list):
                raise DataError('"Consolidated Patterns" is not a list')
            return payload
        start = text.find("{", start + 1)
    raise DataError('no JSON object with a "Consolidated Patterns" key found')


def _parse_pattern(entry: dict, pattern_id: int) -> ReformulationPattern:
    if not isinstance(entry, dict):
        raise DataError(f"pattern entry {pattern_id} is not an object")
    name = entry.get("name") or entry.get("pattern_name") or ""
    rule = entry.get("rule") or entry.get("transformation_rule") or ""
    examples = tuple(
        PatternExample(query=e.get("query", ""), reformulation=e.get("reformulation", ""))
        for e in entry.get("examples", [])
        if isinstance(e, dict)
    )
    return ReformulationPattern(
        pattern_id=pattern_id,
        name=str(name),
        description=str(entry.get("description", "")),
        rule=str(rule),
        examples=examples,
    )


def _parse_library_payload(payload: list[dict], base: PatternLibrary | None) -> PatternLibrary:
    patterns = tuple(_parse_pattern(entry, i) for i, entry in enumerate(payload))
    prov = base.provenance if base else LibraryProvenance()
    version = base.version if base else "0"
    return PatternLibrary(patterns=patterns, version=version, provenance=prov)


class Transcript:
    """Append-only JSONL log of every induction request/response."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.write_text("", encoding="utf-8")

    def record(self, request: ChatRequest, response: ChatResponse) -> None:
        if not self.path:
            return
        line = json.dumps(
            {"request": request_to_wire(request), "response": response.content}
        )
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def induce_patterns(
    pairs: list[TrainingPair],
    gateway: Gateway,
    batch_size: int = DEFAULT_BATCH_SIZE,
    existing: PatternLibrary | None = None,
    max_patterns: int = DEFAULT_MAX_PATTERNS,
    transcript_path: str | Path | None = None,
) -> PatternLibrary:
    """Iteratively consolidate the pattern library over batches of pairs.

    Each batch renders the consolidation prompt with the current library and
    replaces it with the parsed payload. An unparseable payload earns one
    re-ask carrying a format reminder, then a hard error with the raw text.
    """
    if not pairs:
        raise DataError("cannot induce patterns from an empty pair list")
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    transcript = Transcript(transcript_path)
    library = existing
    for offset in range(0, len(pairs), batch_size):
        batch = pairs[offset : offset + batch_size]
        request = render_consolidation_prompt(batch, library, model=gateway.model)
        library = _consolidate_once(request, gateway, library, transcript)
        if len(library) > max_patterns:
            raise DataError(
                f"consolidation produced {len(library)} patterns, above the cap of "
                f"{max_patterns}; lower the batch size or raise the cap"
            )
    assert library is not None
    return replace(
        library,
        provenance=replace(
            library.provenance,
            num_pairs=(existing.provenance.num_pairs if existing else 0) + len(pairs),
            induction_model=gateway.model,
        ),
    )


def _consolidate_once(
    request: ChatRequest,
    gateway: Gateway,
    library: PatternLibrary | None,
    transcript: Transcript,
) -> PatternLibrary:
    response = gateway.complete(request)
    transcript.record(request, response)
    try:
        return _parse_library_payload(extract_payload(response.content), library)
    except DataError:
        pass
    retry = ChatRequest(
        model=request.model,
        messages=request.messages[:-1]
        + (ChatMessage("user", request.messages[-1].content + FORMAT_REMINDER),),
        max_tokens=request.max_tokens,
        temperature=request.temperature,
        seed=request.seed,
    )
    response = gateway.complete(retry)
    transcript.record(retry, response)
    try:
        return _parse_library_payload(extract_payload(response.content), library)
    except DataError as exc:
        raise DataError(
            f"consolidation payload unusable after re-ask: {exc}\n"
            f"raw response:\n{response.content}"
        ) from exc


def render_label_prompt(pair: TrainingPair, library: PatternLibrary, model: str) -> ChatRequest:
    menu = "\n".join(f"- {p.name}: {p.description}" for p in library.patterns)
    user = (
        f"Patterns:\n{menu}\n\n"
        f"Query: {pair.query}\n"
        f"Reformulation: {pair.reformulation}\n\n"
        "Which single pattern best explains this reformulation? "
        "Answer with the pattern name only."
    )
    return ChatRequest(
        model=model,
        messages=(ChatMessage("system", LABEL_SYSTEM), ChatMessage("user", user)),
    )


def label_pair(pair: TrainingPair, library: PatternLibrary, gateway: Gateway) -> PatternLabel:
    """Assign the pair to one library pattern via the LLM; one re-ask on a bad name."""
    if len(library) == 1:
        return PatternLabel(pair_id=pair.pair_id, pattern_id=0)
    request = render_label_prompt(pair, library, model=gateway.model)
    answer = gateway.complete(request).content
    try:
        return PatternLabel(pair.pair_id, library.resolve_name(_clean_name(answer)))
    except DataError:
        pass
    retry = ChatRequest(
        model=request.model,
        messages=request.messages[:-1]
        + (
            ChatMessage(
                "user",
                request.messages[-1].content
                + f"\n\nAnswer with exactly one of: {', '.join(library.names)}.",
            ),
        ),
    )
    answer = gateway.complete(retry).content
    try:
        return PatternLabel(pair.pair_id, library.resolve_name(_clean_name(answer)))
    except DataError as exc:
        raise DataError(f"pair {pair.pair_id}: {exc}") from exc


def _clean_name(text: str) -> str:
    return text.strip().strip('"').strip("'").strip(".").strip()


def label_pairs(
    pairs: list[TrainingPair], library: PatternLibrary, gateway: Gateway
) -> list[PatternLabel]:
    """Label every pair; aborts with a per-pair error report if any pair fails."""
    labels: list[PatternLabel] = []
    failures: list[str] = []
    for pair in pairs:
        try:
            labels.append(label_pair(pair, library, gateway))
        except GatewayError as exc:
            raise GatewayError(f"labeling pair {pair.pair_id} failed: {exc}") from exc
        except DataError as exc:
            failures.append(str(exc))
    if failures:
        raise DataError("labeling failed for some pairs:\n" + "\n".join(failures))
    return labels


def save_library(library: PatternLibrary, path: str | Path) -> None:
    payload = {
        "format": LIBRARY_FORMAT,
        "version": library.version,
        "config_hash": library.config_hash,
        "provenance": {
            "source_dataset": library.provenance.source_dataset,
            "num_pairs": library.provenance.num_pairs,
            "induction_model": library.provenance.induction_model,
        },
        "patterns": [
            {"pattern_id": p.pattern_id, **_pattern_to_payload(p)} for p in library.patterns
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_library(path: str | Path) -> PatternLibrary:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load pattern library {path}: {exc}") from exc
    if payload.get("format") != LIBRARY_FORMAT:
        raise DataError(f"{path} is not a patternqr pattern library")
    prov = payload.get("provenance", {})
    patterns = tuple(
        ReformulationPattern(
            pattern_id=int(entry["pattern_id"]),
            name=entry["name"],
            description=entry.get("description", ""),
            rule=entry.get("rule", ""),
            examples=tuple(
                PatternExample(e["query"], e["reformulation"])
                for e in entry.get("examples", [])
            ),
        )
        for entry in payload["patterns"]
    )
    return PatternLibrary(
        patterns=patterns,
        version=payload.get("version", "0"),
        provenance=LibraryProvenance(
            source_dataset=prov.get("source_dataset", ""),
            num_pairs=int(prov.get("num_pairs", 0)),
            induction_model=prov.get("induction_model", ""),
        ),
        config_hash=payload.get("config_hash", ""),
    )


def default_library() -> PatternLibrary:
    """The packaged seed library (ten consolidated patterns)."""
    return load_library(Path(__file__).parent / "data" / "default_patterns.json")


def save_labels(labels: list[PatternLabel], path: str | Path) -> None:
    lines = [f"{lb.pair_id}\t{lb.pattern_id}" for lb in labels]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_labels(path: str | Path) -> list[PatternLabel]:
    labels = []
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for line_no, line in enumerate(raw.splitlines(), start=1):
        if line == "":
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise DataError(f"{path}:{line_no}: expected pair_id<TAB>pattern_id")
        try:
            labels.append(PatternLabel(pair_id=fields[0], pattern_id=int(fields[1])))
        except ValueError as exc:
            raise DataError(f"{path}:{line_no}: bad pattern_id {fields[1]!r}") from exc
    return labels
