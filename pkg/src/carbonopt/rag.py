"""Retrieval-augmented problem-formulation pipeline.

Deterministic, fully offline machinery: fixed-stride character chunking of a
plain-text knowledge base, a tf-idf vector index with cosine retrieval, a
token-budgeted prompt assembler, and an append-only memory of prior
request/response pairs that can be recalled by similarity.

The built-in embedder is tf-idf so retrieval is reproducible and checkable
against a brute-force sort; a neural embedding endpoint can be swapped in by
replacing the embedder callable where one is accepted.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_CHUNK_SIZE = 1000
DEFAULT_CHUNK_OVERLAP = 200
DEFAULT_TOP_K = 4
DEFAULT_TOKEN_BUDGET = 4000

_TOKEN_RE = re.compile(r"[a-z0-9]{2,}")

DEFAULT_SYSTEM_PREAMBLE = (
    "You are an assistant to a network designer. Using the supplied reference "
    "excerpts and any prior strategies, formulate a precise carbon-emission "
    "optimization problem for the described scenario: list the decision "
    "variables, the objective in grams of CO2, and every constraint."
)


class ChunkingConfigError(ValueError):
    """Invalid chunk size/overlap combination."""


class TokenBudgetError(ValueError):
    """The fixed prompt parts alone exceed the token budget."""


def token_count(text: str) -> int:
    """Deterministic proxy tokenizer: ceil(characters / 4)."""
    return (len(text) + 3) // 4


def chunk_id_for(doc_id: str, start: int) -> str:
    return hashlib.sha256(f"{doc_id}:{start}".encode()).hexdigest()[:16]


@dataclass(frozen=True)
class KnowledgeChunk:
    chunk_id: str
    doc_id: str
    text: str
    start: int
    end: int


def chunk_document(
    doc_id: str,
    text: str,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    chunk_overlap: int = DEFAULT_CHUNK_OVERLAP,
) -> list[KnowledgeChunk]:
    """Fixed-stride character chunks: starts at k*(size-overlap), each span
    [start, min(start+size, len)); a chunk past the first is only emitted
    while start + overlap < len(text)."""
    if chunk_overlap >= chunk_size:
        raise ChunkingConfigError(
            f"chunk_overlap ({chunk_overlap}) must be smaller than chunk_size ({chunk_size})"
        )
    if chunk_overlap < 0:
        raise ChunkingConfigError("chunk_overlap must be >= 0")
    if not text:
        raise ValueError("text must be nonempty")
    stride = chunk_size - chunk_overlap
    chunks = []
    k = 0
    while True:
        start = k * stride
        if k > 0 and start + chunk_overlap >= len(text):
            break
        end = min(start + chunk_size, len(text))
        chunks.append(KnowledgeChunk(chunk_id_for(doc_id, start), doc_id, text[start:end], start, end))
        k += 1
    return chunks


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop tokens under 2 chars."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class ChunkIndex:
    """tf-idf index over knowledge chunks with L2-normalized sparse vectors."""

    chunks: list[KnowledgeChunk]
    vocabulary: dict[str, int]
    idf: list[float]
    vectors: list[dict[int, float]]

    def chunk_by_id(self, chunk_id: str) -> KnowledgeChunk:
        for c in self.chunks:
            if c.chunk_id == chunk_id:
                return c
        raise KeyError(chunk_id)

    def embed(self, text: str) -> dict[int, float]:
        """tf-idf vector of arbitrary text under this index's vocabulary;
        empty dict when nothing is in-vocabulary."""
        counts: dict[int, int] = {}
        for tok in tokenize(text):
            idx = self.vocabulary.get(tok)
            if idx is not None:
                counts[idx] = counts.get(idx, 0) + 1
        vec = {i: c * self.idf[i] for i, c in counts.items()}
        return _normalized(vec)

    def embed_terms(self, text: str) -> dict[str, float]:
        """Same embedding keyed by term instead of vocabulary index, for
        storage that must survive reindexing."""
        inv = {i: t for t, i in self.vocabulary.items()}
        return {inv[i]: w for i, w in self.embed(text).items()}


def _normalized(vec: dict[int, float]) -> dict[int, float]:
    norm = math.sqrt(sum(w * w for w in vec.values()))
    if norm == 0.0:
        return {}
    return {i: w / norm for i, w in vec.items()}


def build_index(chunks: list[KnowledgeChunk]) -> ChunkIndex:
    """Count terms per chunk, weight by idf = ln((1+N)/(1+df)) + 1, normalize."""
    if not chunks:
        raise ValueError("need at least one chunk")
    token_lists = [tokenize(c.text) for c in chunks]
    if all(not toks for toks in token_lists):
        raise ValueError("every chunk is empty after tokenization")
    vocabulary = {t: i for i, t in enumerate(sorted({t for toks in token_lists for t in toks}))}
    df = [0] * len(vocabulary)
    for toks in token_lists:
        for t in set(toks):
            df[vocabulary[t]] += 1
    n = len(chunks)
    idf = [math.log((1 + n) / (1 + d)) + 1.0 for d in df]
    vectors = []
    for toks in token_lists:
        counts: dict[int, int] = {}
        for t in toks:
            idx = vocabulary[t]
            counts[idx] = counts.get(idx, 0) + 1
        vectors.append(_normalized({i: c * idf[i] for i, c in counts.items()}))
    return ChunkIndex(list(chunks), vocabulary, idf, vectors)


@dataclass(frozen=True)
class RetrievalResult:
    chunk_id: str
    score: float


def _cosine(query_vec: dict[int, float], chunk_vec: dict[int, float]) -> float:
    # always accumulate in query-term order so scores are bit-reproducible
    return sum(w * chunk_vec.get(i, 0.0) for i, w in query_vec.items())


def retrieve(index: ChunkIndex, query: str, k: int = DEFAULT_TOP_K) -> list[RetrievalResult]:
    """Top-k chunks by cosine similarity, ties broken by ascending chunk id;
    a query with no in-vocabulary terms retrieves nothing."""
    if k < 1:
        raise ValueError("k must be >= 1")
    qv = index.embed(query)
    if not qv:
        return []
    scored = [
        RetrievalResult(c.chunk_id, _cosine(qv, v))
        for c, v in zip(index.chunks, index.vectors)
    ]
    scored.sort(key=lambda r: (-r.score, r.chunk_id))
    return scored[:k]


INDEX_FORMAT_VERSION = 1


def save_index(index: ChunkIndex, path: str | Path, corpus_hash: str = "") -> None:
    payload = {
        "format_version": INDEX_FORMAT_VERSION,
        "corpus_hash": corpus_hash,
        "chunks": [
            {"chunk_id": c.chunk_id, "doc_id": c.doc_id, "text": c.text,
             "start": c.start, "end": c.end}
            for c in index.chunks
        ],
        "vocabulary": index.vocabulary,
        "idf": index.idf,
        "vectors": [{str(i): w for i, w in v.items()} for v in index.vectors],
    }
    Path(path).write_text(json.dumps(payload))


def load_index(path: str | Path) -> tuple[ChunkIndex, str]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format_version") != INDEX_FORMAT_VERSION:
        raise ValueError(f"unsupported index format: {payload.get('format_version')}")
    chunks = [KnowledgeChunk(**c) for c in payload["chunks"]]
    vectors = [{int(i): w for i, w in v.items()} for v in payload["vectors"]]
    return (
        ChunkIndex(chunks, payload["vocabulary"], payload["idf"], vectors),
        payload.get("corpus_hash", ""),
    )


@dataclass(frozen=True)
class MemoryRecord:
    request: str
    response: str
    timestamp: float
    vector: dict[str, float]


class MemoryRepository:
    """Append-only store of (request, response) pairs with request vectors.

    Backed by a JSON-lines file when a path is given; recall never mutates
    records. Appends must be serialized by the caller; recall over committed
    records is safe concurrently.
    """

    def __init__(self, path: str | Path | None, embed_terms):
        self.path = Path(path) if path is not None else None
        self._embed_terms = embed_terms
        self.records: list[MemoryRecord] = []
        if self.path is not None and self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    self.records.append(MemoryRecord(**json.loads(line)))

    def __len__(self) -> int:
        return len(self.records)

    def record(self, request: str, response: str, timestamp: float | None = None) -> MemoryRecord:
        rec = MemoryRecord(
            request=request,
            response=response,
            timestamp=time.time() if timestamp is None else timestamp,
            vector=self._embed_terms(request),
        )
        self.records.append(rec)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec.__dict__) + "\n")
        return rec

    def recall(self, request: str, m: int) -> list[MemoryRecord]:
        """The m most similar prior requests by cosine, newest first on ties."""
        if m <= 0 or not self.records:
            return []
        qv = self._embed_terms(request)
        scored = []
        for pos, rec in enumerate(self.records):
            score = sum(w * rec.vector.get(t, 0.0) for t, w in qv.items())
            scored.append((-score, -pos, rec))
        scored.sort(key=lambda item: (item[0], item[1]))
        return [rec for _, _, rec in scored[:m]]


@dataclass
class PromptContext:
    """Assembled prompt parts, each already within the token budget."""

    system_preamble: str
    retrieved: list[KnowledgeChunk]
    memory_entries: list[MemoryRecord]
    designer_request: str
    token_budget: int
    total_tokens: int
    blocks: list[str] = field(default_factory=list)

    def render(self) -> str:
        return "".join(self.blocks)

    def user_content(self) -> str:
        """Everything after the system preamble, for the user chat message."""
        return "".join(self.blocks[1:])


def _chunk_block(chunk: KnowledgeChunk) -> str:
    return f"\n\n[source: {chunk.doc_id} chars {chunk.start}-{chunk.end}]\n{chunk.text}"


def _memory_block(rec: MemoryRecord) -> str:
    return f"\n\n[prior request]\n{rec.request}\n[prior response]\n{rec.response}"


def _request_block(request: str) -> str:
    return f"\n\n[request]\n{request}"


def assemble_prompt(
    request: str,
    results: list[KnowledgeChunk],
    memory: list[MemoryRecord],
    budget: int = DEFAULT_TOKEN_BUDGET,
    system_preamble: str = DEFAULT_SYSTEM_PREAMBLE,
) -> PromptContext:
    """Fit retrieved chunks (rank order), then memory entries (most recent
    first), into whatever budget remains after the preamble and request.

    Every block is charged ceil(len/4) tokens including its separators, so
    the rendered prompt never exceeds the budget.
    """
    request_block = _request_block(request)
    fixed = token_count(system_preamble) + token_count(request_block)
    if fixed >= budget:
        raise TokenBudgetError(
            f"preamble + request need {fixed} tokens, budget is {budget}"
        )
    remaining = budget - fixed
    blocks = [system_preamble]
    kept_chunks = []
    for chunk in results:
        block = _chunk_block(chunk)
        cost = token_count(block)
        if cost <= remaining:
            blocks.append(block)
            kept_chunks.append(chunk)
            remaining -= cost
    kept_memory = []
    for rec in sorted(memory, key=lambda r: -r.timestamp):
        block = _memory_block(rec)
        cost = token_count(block)
        if cost <= remaining:
            blocks.append(block)
            kept_memory.append(rec)
            remaining -= cost
    blocks.append(request_block)
    return PromptContext(
        system_preamble=system_preamble,
        retrieved=kept_chunks,
        memory_entries=kept_memory,
        designer_request=request,
        token_budget=budget,
        total_tokens=budget - remaining,
        blocks=blocks,
    )
