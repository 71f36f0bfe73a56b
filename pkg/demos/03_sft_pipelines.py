"""Synthetic SFT pipelines with a deterministic mock in place of real models.

Shows single-page question sampling (varying candidate count + archetypes),
the multi-page answerability filter (reject anything a single page answers),
recursive answer generation with per-page relevance ranking, and the
assertion-level quality check.
"""

from longdoc.client import MockClient, MockRule
from longdoc.corpus import Document, Page
from longdoc.sft import (
    AssembledContext,
    Question,
    answer_recursive,
    filter_multipage,
    generate_sp_questions,
    quality_check,
)

pages = tuple(
    Page(
        page_id=f"doc_p{i}", doc_id="doc", index=i, image_ref=f"images/{i}.png",
        width_px=840, height_px=840, word_count=200, content_kind="normal",
        parsed_text=f"text {i}",
    )
    for i in range(4)
)
doc = Document(doc_id="doc", source_url="u", category="gov", language="en", pages=pages)
context = AssembledContext(
    strategy="whole_document", pages=list(pages), origin=[False, True, False, False])

# --- single-page question sampling -----------------------------------------
sp_mock = MockClient([MockRule(
    response_text="1. What is the total budget?\n2. Which year saw the peak?\n"
                  "3. Who signed the report?\n4. How many sites?\n5. What changed?",
    substring="spq:",
)])
for seed in (0, 1, 2):
    q = generate_sp_questions(pages[1], sp_mock, seed=seed)
    print(f"seed {seed}: picked {q.text!r} (archetype: {q.archetype[:40]}...)")

# --- multi-page answerability filter ----------------------------------------
answerer = MockClient([MockRule(response_text="partial answer", substring="filter-answer:")])
strict_judge = MockClient([MockRule(response_text="NO — needs more pages", substring="filter-judge:")])
lenient_judge = MockClient([
    MockRule(response_text="YES", substring="filter-judge:doc_p2"),
    MockRule(response_text="NO", substring="filter-judge:"),
])
mp_question = Question(
    text="How did totals change across sections?", pipeline="multi_page",
    source_page_ids=[p.page_id for p in pages], kept=False,
)
print("\nmulti-page filter:")
print(f"  no single page answers -> keep={filter_multipage(mp_question, list(pages), answerer, strict_judge)}")
print(f"  page doc_p2 alone suffices -> keep={filter_multipage(mp_question, list(pages), answerer, lenient_judge)}")

# --- recursive answer generation ---------------------------------------------
relevances = {"doc_p0": 1.0, "doc_p1": 9.0, "doc_p2": 6.5, "doc_p3": 0.0}
recursive_mock = MockClient(
    [
        MockRule(response_text=f'{{"evidence": "evidence from {pid}", "relevance": {r}}}',
                 substring=f"extract:{pid}")
        for pid, r in relevances.items()
    ]
    + [MockRule(response_text="The total budget is 4.2M.", substring="recursive-answer:")]
)
question = Question(text="What is the total budget?", pipeline="single_page",
                    source_page_ids=["doc_p1"])
trace = answer_recursive(context, question, recursive_mock, recursive_mock, k=2)
print("\nrecursive pipeline:")
print(f"  ranking (relevance desc, position asc): {trace.ranked}")
print(f"  selected top-2: {trace.selected}")
print(f"  final answer: {trace.final_answer!r}")

# --- quality check -------------------------------------------------------------
checker = MockClient([
    MockRule(response_text="1. The budget is 4.2M.\n2. It grew year over year.",
             tag="quality-decompose"),
    MockRule(response_text='{"evidence": "table of budgets", "relevance": 8}',
             substring="quality-extract:"),
    MockRule(response_text='[{"assertion": 1, "supported": true}, {"assertion": 2, "supported": false}]',
             tag="quality-check"),
])
verdict = quality_check(trace.final_answer, context, checker)
print("\nquality filter:")
print(f"  assertions: {verdict.assertions}")
print(f"  supported={verdict.supported}, failing assertion numbers: {verdict.failing}")
