"""Stage splitting, curricula, no-truncation packing, page indices.

Examples up to 104 pages train in the short stage, 105..336 in the long
stage, and longer ones are dropped. Curricula order examples by length
buckets (and task difficulty), packing is greedy and order-preserving so the
curriculum survives, and page-index markers are injected as the literal
"Page i:" before each image.
"""

import random

from longdoc.records import TrainingExample
from longdoc.schedule import (
    ScheduleItem,
    inject_page_indices,
    order_curriculum,
    pack_sequences,
    split_stages,
)

rng = random.Random(0)
items = []
for i in range(30):
    task = rng.choice(["fim", "unshuffle", "retrieval_key", "counting", "lc_text"])
    pages = 0 if task == "lc_text" else rng.randint(1, 400)
    tokens = rng.randint(800, 4000) if task == "lc_text" else pages * 900 + 200
    items.append(ScheduleItem(
        example_id=f"ex{i:02d}", page_count=pages, token_estimate=tokens,
        assistant_tokens=rng.randint(10, 80), task_kind=task,
    ))

split = split_stages(items)
print(f"stage split: short={len(split.short)} long={len(split.long)} dropped={len(split.dropped)}")

ordered = order_curriculum(split.short, "length_difficulty", mix_fraction=0.1, seed=4)
print("\nlength-difficulty curriculum over the short stage "
      "(task, pages) in schedule order:")
print("  " + " ".join(f"{x.task_kind[:4]}/{x.page_count}" for x in ordered))

budget = 128 * 1024
packs = pack_sequences(ordered, budget, stage="short")
print(f"\npacked into {len(packs)} sequences under {budget} tokens:")
for p in packs[:4]:
    print(f"  pack {p.pack_id}: {len(p.example_ids)} examples, "
          f"{p.total_tokens} tokens, {p.assistant_tokens} assistant tokens")
total_assistant = sum(p.assistant_tokens for p in packs)
print(f"assistant tokens across packs: {total_assistant} "
      f"(equals the per-example sum: {sum(x.assistant_tokens for x in ordered)})")

example = TrainingExample(
    example_id="demo", pipeline="single_page",
    messages=[{
        "role": "user",
        "content": [
            {"type": "image", "image_ref": "img/0.png"},
            {"type": "image", "image_ref": "img/1.png"},
            {"type": "text", "text": "What changed between these pages?"},
        ],
    }],
    page_refs=["p0", "p1"],
)
injected = inject_page_indices(example)
print("\npage-index injection:")
for item in injected.messages[0]["content"]:
    label = item["text"].rstrip("\n") if item["type"] == "text" else f"<{item['image_ref']}>"
    print(f"  {item['type']:5s} {label}")
print(f"idempotent: {inject_page_indices(injected).messages == injected.messages}")
