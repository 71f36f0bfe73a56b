"""Corpus manifests and hard-negative neighbors.

Writes a tiny JSONL manifest to a temp dir, loads it with validation, filters
the pages worth asking questions about, and queries the neighbor index in the
two hard-negative bands (ranks 1..32 and 33..128).
"""

import json
import random
import tempfile
from pathlib import Path

from longdoc.corpus import filter_question_pages, load_manifest, neighbor_topk, save_manifest

workdir = Path(tempfile.mkdtemp(prefix="longdoc-demo-"))

records = []
for d, n_pages in enumerate([4, 6]):
    doc_id = f"doc{d}"
    records.append({
        "kind": "doc", "doc_id": doc_id, "source_url": f"https://example.org/{doc_id}.pdf",
        "category": "finance", "language": "en", "page_count": n_pages,
    })
    for i in range(n_pages):
        records.append({
            "kind": "page", "page_id": f"{doc_id}_p{i}", "doc_id": doc_id, "index": i,
            "image_ref": f"images/{doc_id}/{i}.png", "width_px": 840, "height_px": 1188,
            # Page 0 of each doc is a table of contents with few words.
            "word_count": 40 if i == 0 else 180,
            "content_kind": "table_of_contents" if i == 0 else "normal",
            "parsed_text": f"parsed text of {doc_id} page {i} " * 30,
        })

manifest = workdir / "corpus.jsonl"
manifest.write_text("".join(json.dumps(r) + "\n" for r in records))

# Neighbor file: every doc0 page lists all doc1 pages plus extras, similarity
# descending. Real pipelines get these from page-embedding mining.
rng = random.Random(0)
neighbor_lines = []
for i in range(4):
    neighbors = sorted(
        ([f"doc1_p{j}", round(rng.uniform(0.2, 0.99), 4)] for j in range(6)),
        key=lambda pair: -pair[1],
    )
    neighbor_lines.append(json.dumps({"page_id": f"doc0_p{i}", "neighbors": neighbors}))
neighbor_file = workdir / "neighbors.jsonl"
neighbor_file.write_text("\n".join(neighbor_lines) + "\n")

corpus = load_manifest(manifest, neighbor_file)
print(f"loaded {len(corpus.documents)} documents, {corpus.page_count} pages")

question_pages = sorted(filter_question_pages(corpus))
print(f"question-worthy pages (>100 words, normal content): {question_pages}")

top = neighbor_topk(corpus.neighbors, "doc0_p1", k=3, band="any")
print("top-3 neighbors of doc0_p1:")
for n in top:
    print(f"  {n.page_id}  similarity={n.similarity}")

outside = neighbor_topk(corpus.neighbors, "doc0_p1", k=3, band="outside_first_32")
print(f"neighbors outside the first 32 ranks: {[n.page_id for n in outside]} "
      "(empty here: only 6 stored)")

canonical = workdir / "canonical.jsonl"
save_manifest(corpus, canonical)
print(f"canonical manifest written to {canonical}")
