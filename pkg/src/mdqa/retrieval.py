"""Page-level vector index and top-k cosine retrieval.

Scoring is an exact cosine full scan; at benchmark scale (a few thousand
pages) approximate search buys nothing and costs determinism. Page vectors
are stored as little-endian float32 records in the cache directory keyed by
the sha256 of the embedded text, alongside a manifest pinning the backend
fingerprint and dimension.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import Document, DocumentCollection

EMBED_INPUT_MAX_CHARS = 6000


class RetrievalError(Exception):
    pass


class UnindexedPageError(RetrievalError):
    pass


class CacheMismatchError(RetrievalError):
    """Cache manifest disagrees with the embedding backend in use."""


@dataclass(frozen=True)
class ScoredPage:
    page_ref: tuple[str, int]
    score: float


class PageIndex:
    """One embedding per page of a collection, plus the text digests that key
    the cache. Immutable after build; scoring shares it read-only."""

    def __init__(
        self,
        refs: list[tuple[str, int]],
        vectors: np.ndarray,
        digests: list[str],
        backend_fingerprint: str,
    ):
        if len(refs) != vectors.shape[0] or len(refs) != len(digests):
            raise RetrievalError("index arrays disagree in length")
        if not np.all(np.isfinite(vectors)):
            raise RetrievalError("index contains non-finite vectors")
        self.refs = list(refs)
        self.digests = list(digests)
        self.backend_fingerprint = backend_fingerprint
        self.embedding_dim = int(vectors.shape[1])
        # Normalized float64 copies; cosine becomes a dot product.
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        self._unit = vectors.astype(np.float64) / safe[:, None]
        self._row: dict[tuple[str, int], int] = {ref: i for i, ref in enumerate(refs)}

    def __len__(self) -> int:
        return len(self.refs)

    def row(self, page_ref: tuple[str, int]) -> int:
        try:
            return self._row[page_ref]
        except KeyError:
            raise UnindexedPageError(f"page {page_ref!r} is not in the index") from None

    def unit_vector(self, page_ref: tuple[str, int]) -> np.ndarray:
        return self._unit[self.row(page_ref)]

    def scores_for(self, query_vec: np.ndarray, rows: np.ndarray) -> np.ndarray:
        q = query_vec.astype(np.float64)
        norm = np.linalg.norm(q)
        if norm > 0:
            q = q / norm
        return self._unit[rows] @ q


def page_embed_text(doc: Document, page_number: int, max_chars: int = EMBED_INPUT_MAX_CHARS) -> str:
    page = next(p for p in doc.pages if p.page_number == page_number)
    return f"{page.title}\n{page.content}"[:max_chars]


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _read_cached_vector(cache_dir: Path, digest: str, dim: int) -> Optional[np.ndarray]:
    path = cache_dir / f"{digest}.vec"
    if not path.exists():
        return None
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.shape[0] != dim:
        raise CacheMismatchError(
            f"cached vector {digest} has dim {raw.shape[0]}, expected {dim}"
        )
    return raw.astype(np.float32)


def _write_cached_vector(cache_dir: Path, digest: str, vec: np.ndarray) -> None:
    path = cache_dir / f"{digest}.vec"
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(vec.astype("<f4").tobytes())
    tmp.rename(path)


def build_index(
    collection: DocumentCollection,
    embed_backend,
    cache_dir: Optional[str | Path] = None,
    max_chars: int = EMBED_INPUT_MAX_CHARS,
) -> PageIndex:
    """Embed every page (title + newline + content, truncated) into an index.

    With a cache directory, vectors are persisted per text digest and rebuilds
    only embed pages whose text changed. The manifest pins the backend
    fingerprint; reusing a cache with a different backend is an error rather
    than a silent mix of vector spaces.
    """
    texts: list[str] = []
    refs: list[tuple[str, int]] = []
    for doc in collection.documents:
        for page in doc.pages:
            refs.append((doc.doc_id, page.page_number))
            texts.append(f"{page.title}\n{page.content}"[:max_chars])
    digests = [_digest(t) for t in texts]

    cache = Path(cache_dir) if cache_dir else None
    manifest_dim: Optional[int] = None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)
        manifest_path = cache / "manifest.json"
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            if manifest.get("backend_fingerprint") != embed_backend.fingerprint:
                raise CacheMismatchError(
                    f"cache built with {manifest.get('backend_fingerprint')!r}, "
                    f"backend is {embed_backend.fingerprint!r}"
                )
            manifest_dim = int(manifest["dim"])

    vectors: list[Optional[np.ndarray]] = [None] * len(texts)
    if cache and manifest_dim is not None:
        for i, digest in enumerate(digests):
            vectors[i] = _read_cached_vector(cache, digest, manifest_dim)

    # Distinct uncached texts, embedded once each.
    pending: dict[str, list[int]] = {}
    for i, digest in enumerate(digests):
        if vectors[i] is None:
            pending.setdefault(digest, []).append(i)
    if pending:
        ordered_digests = sorted(pending)
        by_digest = {d: texts[pending[d][0]] for d in ordered_digests}
        embedded = embed_backend.embed([by_digest[d] for d in ordered_digests])
        for d, vec in zip(ordered_digests, embedded):
            for slot in pending[d]:
                vectors[slot] = np.asarray(vec, dtype=np.float32)

    matrix = np.stack([v for v in vectors])
    dim = int(matrix.shape[1])
    if manifest_dim is not None and manifest_dim != dim:
        raise CacheMismatchError(f"backend dim {dim} != cached dim {manifest_dim}")
    if cache:
        for digest, slots in pending.items():
            _write_cached_vector(cache, digest, vectors[slots[0]])
        manifest_path = cache / "manifest.json"
        if not manifest_path.exists():
            manifest_path.write_text(
                json.dumps(
                    {"backend_fingerprint": embed_backend.fingerprint, "dim": dim},
                    sort_keys=True,
                ),
                encoding="utf-8",
            )
    return PageIndex(refs, matrix, digests, embed_backend.fingerprint)


def retrieve_relevant_pages(
    query: str,
    docs: Sequence[Document],
    k: int,
    index: PageIndex,
    embed_backend,
) -> list[ScoredPage]:
    """Top-k pages among ``docs`` by cosine to the query embedding.

    Sorted by (score desc, doc_id asc, page_number asc); returns the whole
    pool when it holds fewer than k pages. An empty docs list yields an empty
    result.
    """
    if k < 1:
        raise RetrievalError(f"k must be >= 1, got {k}")
    if not docs:
        return []
    rows = []
    refs = []
    for doc in docs:
        for page in doc.pages:
            ref = (doc.doc_id, page.page_number)
            rows.append(index.row(ref))
            refs.append(ref)
    query_vec = np.asarray(embed_backend.embed([query])[0])
    scores = index.scores_for(query_vec, np.asarray(rows))
    scores = np.clip(scores, -1.0, 1.0)
    order = sorted(range(len(refs)), key=lambda i: (-scores[i], refs[i][0], refs[i][1]))
    return [ScoredPage(page_ref=refs[i], score=float(scores[i])) for i in order[:k]]


def expand_queries(question: str, chat_backend, n: int, prompt_pack=None) -> list[str]:
    """Reformulate a question into up to ``n`` retrieval queries.

    The original question always comes first. The backend is asked once for
    alternatives; duplicates are dropped and the list is truncated to ``n``
    (never padded with invented queries).
    """
    if n < 1:
        raise RetrievalError(f"n must be >= 1, got {n}")
    from .prompts import load_pack

    pack = prompt_pack or load_pack("multi_query_rag")
    messages = [
        {"role": "system", "content": pack.render("expand_system")},
        {"role": "user", "content": pack.render("expand_user", question=question, n=max(n - 1, 1))},
    ]
    reply = chat_backend.chat(messages)
    queries = [question]
    for line in reply.splitlines():
        line = line.strip().lstrip("-*0123456789. ").strip()
        if line and line not in queries:
            queries.append(line)
    return queries[:n]


def merge_multiquery(results: list[list[ScoredPage]], k: int) -> list[ScoredPage]:
    """Union per-query rankings, keeping each page's maximum score, re-sorted
    by the standard order and truncated to k."""
    best: dict[tuple[str, int], float] = {}
    for ranking in results:
        for scored in ranking:
            prev = best.get(scored.page_ref)
            if prev is None or scored.score > prev:
                best[scored.page_ref] = scored.score
    merged = sorted(best.items(), key=lambda item: (-item[1], item[0][0], item[0][1]))
    return [ScoredPage(page_ref=ref, score=score) for ref, score in merged[:k]]
