"""Desk-scale data machinery for long-document VQA training.

Subpackages cover the full pipeline: corpus manifests and hard-negative
neighbors (corpus), generation clients (client), token budgets (tokens), CPT
task construction (cpt), synthetic SFT pipelines (sft), preference-pair math
(longpo), stage/curriculum/packing (schedule), task-arithmetic merging
(merging), normalized evaluation aggregation (evalagg), and the benchmark
flag-and-review workflow (flagging, review_service). The `longdoc` CLI
dispatches every stage.
"""

from .corpus import (
    Corpus,
    Document,
    NeighborIndex,
    Page,
    filter_question_pages,
    load_manifest,
    neighbor_topk,
    save_manifest,
)
from .client import ChatRequest, GenerationResult, HttpClient, MockClient
from .tokens import TokenBudget, estimate_image_tokens, fit_resolution
from .cpt import build_counting, build_fim, build_retrieval, build_unshuffle
from .sft import (
    AssembledContext,
    Question,
    answer_plain,
    answer_recursive,
    assemble_context,
    filter_multipage,
    generate_mp_questions,
    generate_sp_questions,
    magpie_question,
    quality_check,
)
from .longpo import LongPOConfig, PreferencePair, build_preference_pair, longpo_grads, longpo_loss
from .schedule import inject_page_indices, order_curriculum, pack_sequences, split_stages
from .merging import apply_task_vector, load_weight_map, save_weight_map, task_vector
from .evalagg import aggregate, anls, export_leaderboard, normalize_scores, run_variance
from .flagging import BenchmarkItem, Decision, FlagReport, ReviewStore, apply_decision, expand_accepted_answers, flag_item

__version__ = "0.1.0"
