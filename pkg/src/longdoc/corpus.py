"""Page corpus manifest: loading, validation, canonical serialization, and
hard-negative neighbor queries.

The manifest is line-delimited JSON so multi-million-page corpora can stream:
one ``{"kind": "doc", ...}`` header per document followed by its
``{"kind": "page", ...}`` records. A corpus is immutable after load and safe
for concurrent readers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

CONTENT_KINDS = ("normal", "table_of_contents", "bibliography")

#: Neighbor lists are capped at this many entries per page.
MAX_NEIGHBORS = 128
#: Rank boundary between the "within" and "outside" hard-negative bands.
NEIGHBOR_BAND_SPLIT = 32

#: Pages qualify for question generation above this word count.
QUESTION_MIN_WORDS = 100


class ManifestError(ValueError):
    """Raised for malformed or invariant-violating manifest content."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Page:
    page_id: str
    doc_id: str
    index: int
    image_ref: str
    width_px: int
    height_px: int
    word_count: int
    content_kind: str
    parsed_text: str | None = None

    def validate(self) -> None:
        if not self.image_ref:
            raise ManifestError(f"page {self.page_id}: empty image_ref")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ManifestError(f"page {self.page_id}: non-positive dimensions")
        if self.index < 0:
            raise ManifestError(f"page {self.page_id}: negative index")
        if self.word_count < 0:
            raise ManifestError(f"page {self.page_id}: negative word_count")
        if self.content_kind not in CONTENT_KINDS:
            raise ManifestError(
                f"page {self.page_id}: unknown content_kind {self.content_kind!r}"
            )


@dataclass(frozen=True)
class Document:
    doc_id: str
    source_url: str
    category: str
    language: str
    pages: tuple[Page, ...]

    @property
    def page_count(self) -> int:
        return len(self.pages)

    def validate(self) -> None:
        if self.page_count < 1:
            raise ManifestError(f"doc {self.doc_id}: has no pages")
        indices = sorted(p.index for p in self.pages)
        if indices != list(range(self.page_count)):
            raise ManifestError(
                f"doc {self.doc_id}: page indices {indices} are not contiguous 0..{self.page_count - 1}"
            )
        for page in self.pages:
            page.validate()


@dataclass(frozen=True)
class Neighbor:
    page_id: str
    similarity: float


class NeighborIndex:
    """page_id -> neighbors sorted by similarity descending.

    Ties are broken by ascending neighbor page_id at load time so every query
    sees one total order.
    """

    def __init__(self, entries: dict[str, list[Neighbor]]):
        self._entries = entries

    def __contains__(self, page_id: str) -> bool:
        return page_id in self._entries

    def neighbors(self, page_id: str) -> list[Neighbor]:
        if page_id not in self._entries:
            raise KeyError(f"unknown page_id {page_id!r} in neighbor index")
        return list(self._entries[page_id])

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, list[tuple[str, float]]]]) -> "NeighborIndex":
        entries: dict[str, list[Neighbor]] = {}
        for page_id, pairs in records:
            if len(pairs) > MAX_NEIGHBORS:
                raise ManifestError(
                    f"page {page_id}: {len(pairs)} neighbors exceeds cap of {MAX_NEIGHBORS}"
                )
            neighbors = []
            for nid, sim in pairs:
                if nid == page_id:
                    raise ManifestError(f"page {page_id}: lists itself as a neighbor")
                if not -1.0 <= sim <= 1.0:
                    raise ManifestError(
                        f"page {page_id}: similarity {sim} outside [-1, 1]"
                    )
                neighbors.append(Neighbor(nid, float(sim)))
            neighbors.sort(key=lambda n: (-n.similarity, n.page_id))
            entries[page_id] = neighbors
        return cls(entries)


@dataclass
class Corpus:
    documents: dict[str, Document] = field(default_factory=dict)
    neighbors: NeighborIndex | None = None

    @property
    def page_count(self) -> int:
        return sum(d.page_count for d in self.documents.values())

    def document(self, doc_id: str) -> Document:
        if doc_id not in self.documents:
            raise KeyError(f"unknown doc_id {doc_id!r}")
        return self.documents[doc_id]

    def page(self, page_id: str) -> Page:
        page = self._pages_by_id().get(page_id)
        if page is None:
            raise KeyError(f"unknown page_id {page_id!r}")
        return page

    def iter_pages(self) -> Iterator[Page]:
        for doc in self.documents.values():
            yield from doc.pages

    def _pages_by_id(self) -> dict[str, Page]:
        if not hasattr(self, "_page_index"):
            self._page_index = {p.page_id: p for p in self.iter_pages()}
        return self._page_index


_DOC_KEYS = {"kind", "doc_id", "source_url", "category", "language", "page_count"}
_PAGE_REQUIRED = {
    "kind", "page_id", "doc_id", "index", "image_ref",
    "width_px", "height_px", "word_count", "content_kind",
}


def _parse_line(raw: str, line_no: int) -> dict:
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid JSON ({exc.msg})", line=line_no) from exc
    if not isinstance(record, dict):
        raise ManifestError("record is not an object", line=line_no)
    return record


def load_manifest(path: str | Path, neighbors_path: str | Path | None = None) -> Corpus:
    """Load and validate a corpus manifest, optionally with a neighbor file.

    Rejects duplicate doc_ids/page_ids, pages without a preceding document
    header, page-count mismatches, and non-contiguous page indices. Errors
    report the offending line where one exists.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")

    headers: dict[str, dict] = {}
    pages: dict[str, list[Page]] = {}
    seen_page_ids: set[str] = set()
    order: list[str] = []

    with path.open(encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            record = _parse_line(raw, line_no)
            kind = record.get("kind")
            if kind == "doc":
                missing = _DOC_KEYS - record.keys()
                if missing:
                    raise ManifestError(
                        f"doc record missing keys {sorted(missing)}", line=line_no
                    )
                doc_id = record["doc_id"]
                if doc_id in headers:
                    raise ManifestError(f"duplicate doc_id {doc_id!r}", line=line_no)
                headers[doc_id] = record
                pages[doc_id] = []
                order.append(doc_id)
            elif kind == "page":
                missing = _PAGE_REQUIRED - record.keys()
                if missing:
                    raise ManifestError(
                        f"page record missing keys {sorted(missing)}", line=line_no
                    )
                doc_id = record["doc_id"]
                if doc_id not in headers:
                    raise ManifestError(
                        f"page {record['page_id']!r} precedes doc header {doc_id!r}",
                        line=line_no,
                    )
                if record["page_id"] in seen_page_ids:
                    raise ManifestError(
                        f"duplicate page_id {record['page_id']!r}", line=line_no
                    )
                seen_page_ids.add(record["page_id"])
                try:
                    page = Page(
                        page_id=record["page_id"],
                        doc_id=doc_id,
                        index=int(record["index"]),
                        image_ref=record["image_ref"],
                        width_px=int(record["width_px"]),
                        height_px=int(record["height_px"]),
                        word_count=int(record["word_count"]),
                        content_kind=record["content_kind"],
                        parsed_text=record.get("parsed_text"),
                    )
                    page.validate()
                except ManifestError as exc:
                    raise ManifestError(str(exc), line=line_no) from exc
                pages[doc_id].append(page)
            else:
                raise ManifestError(f"unknown record kind {kind!r}", line=line_no)

    documents: dict[str, Document] = {}
    for doc_id in order:
        header = headers[doc_id]
        doc_pages = tuple(sorted(pages[doc_id], key=lambda p: p.index))
        if len(doc_pages) != header["page_count"]:
            raise ManifestError(
                f"doc {doc_id}: header claims {header['page_count']} pages, found {len(doc_pages)}"
            )
        doc = Document(
            doc_id=doc_id,
            source_url=header["source_url"],
            category=header["category"],
            language=header["language"],
            pages=doc_pages,
        )
        doc.validate()
        documents[doc_id] = doc

    index = load_neighbors(neighbors_path) if neighbors_path else None
    return Corpus(documents=documents, neighbors=index)


def load_neighbors(path: str | Path) -> NeighborIndex:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"neighbor file not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            record = _parse_line(raw, line_no)
            if "page_id" not in record or "neighbors" not in record:
                raise ManifestError("neighbor record needs page_id and neighbors", line=line_no)
            records.append((record["page_id"], [(n[0], n[1]) for n in record["neighbors"]]))
    return NeighborIndex.from_records(records)


def _canonical(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def manifest_lines(corpus: Corpus) -> Iterator[str]:
    """Canonical serialization: documents sorted by doc_id, header first, then
    pages by index, JSON keys sorted. Loading then re-serializing a canonical
    manifest is byte-identical."""
    for doc_id in sorted(corpus.documents):
        doc = corpus.documents[doc_id]
        yield _canonical({
            "kind": "doc",
            "doc_id": doc.doc_id,
            "source_url": doc.source_url,
            "category": doc.category,
            "language": doc.language,
            "page_count": doc.page_count,
        })
        for page in doc.pages:
            record = {
                "kind": "page",
                "page_id": page.page_id,
                "doc_id": page.doc_id,
                "index": page.index,
                "image_ref": page.image_ref,
                "width_px": page.width_px,
                "height_px": page.height_px,
                "word_count": page.word_count,
                "content_kind": page.content_kind,
            }
            if page.parsed_text is not None:
                record["parsed_text"] = page.parsed_text
            yield _canonical(record)


def save_manifest(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text("".join(line + "\n" for line in manifest_lines(corpus)), encoding="utf-8")


def filter_question_pages(corpus: Corpus) -> set[str]:
    """Pages suitable for question generation: more than QUESTION_MIN_WORDS
    words and ordinary content (no tables of contents, no bibliographies)."""
    return {
        page.page_id
        for page in corpus.iter_pages()
        if page.word_count > QUESTION_MIN_WORDS and page.content_kind == "normal"
    }


def neighbor_topk(
    index: NeighborIndex,
    page_id: str,
    k: int,
    band: str = "any",
) -> list[Neighbor]:
    """Top-k stored neighbors of a page, restricted to a rank band.

    Bands: ``within_first_32`` (ranks 1..32), ``outside_first_32``
    (ranks 33..128), ``any``. Returns min(k, available) entries in similarity
    order; the load-time tie canonicalization makes prefixes stable.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    ranked = index.neighbors(page_id)
    if band == "any":
        pool = ranked
    elif band == "within_first_32":
        pool = ranked[:NEIGHBOR_BAND_SPLIT]
    elif band == "outside_first_32":
        pool = ranked[NEIGHBOR_BAND_SPLIT:]
    else:
        raise ValueError(f"unknown band {band!r}")
    return pool[:k]
