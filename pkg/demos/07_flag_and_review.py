"""Benchmark flagging and the human review loop, end to end in-process.

The evidence pipeline audits items against their documents and classifies
inconsistencies; flags land in a review store whose decisions append to a
replayable log; the HTTP service exposes the triage workflow the UI drives.
"""

import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from longdoc.client import MockClient, MockRule
from longdoc.corpus import Document, Page
from longdoc.flagging import BenchmarkItem, FlagReport, ReviewStore, flag_item
from longdoc.review_service import create_app

pages = tuple(
    Page(page_id=f"p{i}", doc_id="d", index=i, image_ref=f"img/{i}.png",
         width_px=840, height_px=840, word_count=150, content_kind="normal")
    for i in range(3)
)
doc = Document(doc_id="d", source_url="u", category="c", language="en", pages=pages)

item = BenchmarkItem(
    item_id="amzn-lease", question="How do Amazon recognize least cost?",
    gold_answer="On a straight-line basis", doc_id="d",
)
mock = MockClient([
    MockRule(response_text='{"evidence": "the lease cost table", "relevance": 8}',
             substring="flag-extract:"),
    MockRule(response_text='{"issue": "typo", "rationale": "question means lease cost"}',
             substring="flag-verdict:"),
])
flag = flag_item(item, doc, mock, mock, run_id="demo-run")
print(f"flagged {flag.item_id}: {flag.issue_kind} — {flag.rationale}")

store_dir = Path(tempfile.mkdtemp(prefix="longdoc-review-"))
store = ReviewStore.initialize(
    store_dir / "store",
    items=[item, BenchmarkItem(item_id="other", question="Q?", gold_answer="A", doc_id="d")],
    flags=[flag],
)
client = TestClient(create_app(store))

print("\npending flags:", [f["flag_id"] for f in client.get("/api/flags", params={"status": "pending"}).json()["flags"]])
resp = client.post(f"/api/flags/{flag.flag_id}/decision", json={
    "action": "modify", "reviewer": "demo",
    "new_question": "How do Amazon recognize lease cost?",
})
print("stats after the typo fix:", resp.json()["stats"])

export_lines = [json.loads(l) for l in client.get("/api/export").text.strip().splitlines()]
for line in export_lines:
    if line.get("item_id") == "amzn-lease":
        print("exported question:", line["question"])
        print("trail retains the original:", line["trail"][-1]["prev_question"])

replayed = ReviewStore(store_dir / "store")
print("replay reproduces the export byte-for-byte:",
      replayed.export_jsonl() == store.export_jsonl())
