"""Shared fixtures: tiny synthetic corpora and mock-client builders."""

from __future__ import annotations

import json

import pytest

from longdoc.corpus import Corpus, Document, NeighborIndex, Page


def make_page(
    doc_id: str,
    index: int,
    word_count: int = 200,
    content_kind: str = "normal",
    parsed_text: str | None = None,
    side: int = 840,
) -> Page:
    return Page(
        page_id=f"{doc_id}_p{index:03d}",
        doc_id=doc_id,
        index=index,
        image_ref=f"images/{doc_id}/{index:03d}.png",
        width_px=side,
        height_px=side,
        word_count=word_count,
        content_kind=content_kind,
        parsed_text=parsed_text,
    )


def make_doc(doc_id: str, n_pages: int, text: str | None = "lorem ipsum " * 40, **page_kw) -> Document:
    pages = tuple(
        make_page(doc_id, i, parsed_text=None if text is None else f"{text}(p{i})", **page_kw)
        for i in range(n_pages)
    )
    return Document(
        doc_id=doc_id,
        source_url=f"https://example.org/{doc_id}.pdf",
        category="energy",
        language="en",
        pages=pages,
    )


def corpus_of(*docs: Document, neighbors: NeighborIndex | None = None) -> Corpus:
    return Corpus(documents={d.doc_id: d for d in docs}, neighbors=neighbors)


@pytest.fixture
def two_doc_corpus() -> Corpus:
    return corpus_of(make_doc("docA", 3), make_doc("docB", 5))


@pytest.fixture
def ten_page_doc() -> Document:
    return make_doc("docT", 10)


def write_manifest_lines(path, records: list[dict]) -> None:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def doc_record(doc_id: str, page_count: int) -> dict:
    return {
        "kind": "doc", "doc_id": doc_id, "source_url": f"https://example.org/{doc_id}.pdf",
        "category": "energy", "language": "en", "page_count": page_count,
    }


def page_record(doc_id: str, index: int, **overrides) -> dict:
    record = {
        "kind": "page", "page_id": f"{doc_id}_p{index:03d}", "doc_id": doc_id,
        "index": index, "image_ref": f"images/{doc_id}/{index:03d}.png",
        "width_px": 840, "height_px": 840, "word_count": 200,
        "content_kind": "normal", "parsed_text": "lorem ipsum " * 40,
    }
    record.update(overrides)
    return record
