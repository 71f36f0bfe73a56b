"""Token accounting for page images and dynamic resolution fitting.

A page rendered at side s with patch size p costs ceil(s/p)^2 tokens, e.g.
an 840x840 page at patch 28 is (840/28)^2 = 900 tokens. When a document will
not fit the sequence budget at full resolution, the side length is scaled
down within a per-phase range; an example that cannot fit even at the
minimum is rejected outright, never truncated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

#: Packed-sequence budgets per training stage (tokens).
SHORT_STAGE_TOKENS = 128 * 1024
LONG_STAGE_TOKENS_MISTRAL = 336 * 1024
LONG_STAGE_TOKENS_QWEN = 256 * 1024

#: Maximum-side resolution ranges per phase (px).
CPT_SIDE_RANGE = (616, 840)
SFT_SIDE_RANGE = (728, 1400)

#: Effective patch sizes per model family (px).
PATCH_MISTRAL = 28
PATCH_QWEN = 32


class DoesNotFitError(ValueError):
    """The example exceeds the sequence budget even at minimum resolution."""


@dataclass(frozen=True)
class TokenBudget:
    max_sequence_tokens: int
    patch_size: int = PATCH_MISTRAL
    min_side: int = CPT_SIDE_RANGE[0]
    max_side: int = CPT_SIDE_RANGE[1]

    def __post_init__(self):
        if self.patch_size <= 0 or self.min_side <= 0 or self.max_side <= 0:
            raise ValueError("patch_size and sides must be positive")
        if self.min_side > self.max_side:
            raise ValueError("min_side must be <= max_side")
        if self.max_sequence_tokens <= 0:
            raise ValueError("max_sequence_tokens must be positive")


def cpt_budget(stage_tokens: int = SHORT_STAGE_TOKENS, patch_size: int = PATCH_MISTRAL) -> TokenBudget:
    return TokenBudget(stage_tokens, patch_size, *CPT_SIDE_RANGE)


def sft_budget(stage_tokens: int = SHORT_STAGE_TOKENS, patch_size: int = PATCH_MISTRAL) -> TokenBudget:
    return TokenBudget(stage_tokens, patch_size, *SFT_SIDE_RANGE)


def estimate_image_tokens(width_px: int, height_px: int, patch_size: int) -> int:
    """ceil(width/patch) * ceil(height/patch)."""
    if width_px <= 0 or height_px <= 0 or patch_size <= 0:
        raise ValueError("width, height and patch_size must be positive")
    return math.ceil(width_px / patch_size) * math.ceil(height_px / patch_size)


def estimate_text_tokens(text: str) -> int:
    """Crude ~4 chars/token estimate; deterministic, tokenizer-free."""
    if not text:
        return 0
    return max(1, (len(text) + 3) // 4)


def fit_resolution(page_count: int, text_token_estimate: int, budget: TokenBudget) -> int:
    """Largest patch-multiple side s in the budget's range such that
    page_count * (s/patch)^2 + text tokens fits the sequence budget.

    Pages are budgeted as squares at side s (worst case). Candidates run over
    multiples of patch_size from floor(max_side) down to floor(min_side);
    if even the smallest candidate does not fit the example is rejected —
    the caller must drop it or move it to a larger stage, never truncate.
    """
    if page_count < 1:
        raise ValueError("page_count must be >= 1")
    if text_token_estimate < 0:
        raise ValueError("text_token_estimate must be >= 0")

    patch = budget.patch_size
    hi = (budget.max_side // patch) * patch
    lo = (budget.min_side // patch) * patch
    if hi < patch:
        raise ValueError("max_side smaller than one patch")
    lo = max(lo, patch)

    for side in range(hi, lo - patch, -patch):
        per_page = (side // patch) ** 2
        if page_count * per_page + text_token_estimate <= budget.max_sequence_tokens:
            return side
    raise DoesNotFitError(
        f"example does not fit: {page_count} pages + {text_token_estimate} text tokens "
        f"exceed {budget.max_sequence_tokens} even at side {lo}"
    )
