"""The four continued-pretraining tasks.

Builds one example of each task from a synthetic document and shows the
token accounting: an 840x840 page at patch 28 costs (840/28)^2 = 900 tokens,
and documents that would blow the sequence budget get their render side
scaled down rather than truncated.
"""

from longdoc.corpus import Document, Page
from longdoc.cpt import build_counting, build_fim, build_retrieval, build_unshuffle
from longdoc.tokens import TokenBudget, cpt_budget, estimate_image_tokens, fit_resolution

pages = tuple(
    Page(
        page_id=f"doc_p{i}", doc_id="doc", index=i, image_ref=f"images/{i}.png",
        width_px=840, height_px=840, word_count=220, content_kind="normal",
        parsed_text=" ".join(f"w{i}_{k}" for k in range(120)),
    )
    for i in range(6)
)
doc = Document(doc_id="doc", source_url="u", category="arxiv", language="en", pages=pages)

print("token accounting:")
print(f"  840x840 @ patch 28 -> {estimate_image_tokens(840, 840, 28)} tokens")
print(f"  616x616 @ patch 28 -> {estimate_image_tokens(616, 616, 28)} tokens")
side = fit_resolution(page_count=200, text_token_estimate=0,
                      budget=TokenBudget(120_000, 28, 616, 840))
print(f"  200 pages under a 120K budget fit at side {side}px")

fim = build_fim(doc, removed_index=2)
print(f"\nFIM: context has {sum(1 for i in fim.context if i['type'] == 'image')} pages, "
      f"target = first 40 chars of removed page: {fim.target[:40]!r}")

unshuffle = build_unshuffle(doc, seed=7)
print(f"unshuffle: presented order {unshuffle.page_indices}, target {unshuffle.target!r}")

key = build_retrieval(doc, "key", seed=3)
print(f"key retrieval: prompt asks for text after an anchor; target {key.target[:40]!r}")

position = build_retrieval(doc, "position", seed=3)
print(f"position retrieval: target {position.target[:40]!r}")

counting = build_counting(doc, [2, 0, 1, 3, 0, 1], "tables")
print("counting target (chain of thought):")
for line in counting.target.splitlines():
    print(f"  {line}")

budget = cpt_budget()
for ex in (fim, unshuffle, key, position, counting):
    assert ex.token_estimate <= budget.max_sequence_tokens
print(f"\nall examples within the {budget.max_sequence_tokens}-token stage budget")
