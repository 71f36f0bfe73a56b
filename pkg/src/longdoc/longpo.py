"""Preference-pair construction and the short-to-long preference objective.

A pair holds a chosen response generated from the short context that produced
the instruction and a rejected response generated from the full long context.
Reference-model log-probabilities are taken on the short context — that is the
short-to-long constraint — while policy log-probabilities are taken on the
long context. The loss over a batch of pairs is

    loss = mean_i[ lambda * softplus(-m_i) ] + mean_i[ -sum(logp_policy_chosen_i) / len_i ]

with per-pair margin

    m_i = beta * [ (sum th_w - sum ref_w) - (sum th_l - sum ref_l) ]

computed in log space via softplus so |m| in the hundreds stays finite. This
module never runs a model: log-probabilities arrive from files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .client import BaseClient, ChatRequest, DEFAULT_SYSTEM_PROMPT, GenerationError, message, text_item
from .records import canonical_json, read_jsonl, stable_id
from .sft import AssembledContext, Question, _page_message

#: Dataset size the full-scale recipe trains on; desk scale uses hundreds.
FULL_SCALE_PAIR_TARGET = 36_000


@dataclass
class LongPOConfig:
    beta: float = 0.1
    lam: float = 0.01

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "LongPOConfig":
        return cls(beta=data.get("beta", 0.1), lam=data.get("lambda", data.get("lam", 0.01)))


@dataclass
class PreferencePair:
    question: str
    short_page_ids: list[str]
    long_page_ids: list[str]
    chosen: str
    rejected: str
    logp_theta_w_given_L: list[float] | None = None
    logp_theta_l_given_L: list[float] | None = None
    logp_ref_w_given_S: list[float] | None = None
    logp_ref_l_given_S: list[float] | None = None
    pair_id: str = ""

    def __post_init__(self):
        if not set(self.short_page_ids) <= set(self.long_page_ids):
            raise ValueError("short-context pages must be a subset of long-context pages")
        if not self.pair_id:
            self.pair_id = stable_id(self.question, self.short_page_ids, self.long_page_ids, prefix="pair-")

    def validate_logprobs(self) -> None:
        arrays = {
            "logp_theta_w_given_L": self.logp_theta_w_given_L,
            "logp_theta_l_given_L": self.logp_theta_l_given_L,
            "logp_ref_w_given_S": self.logp_ref_w_given_S,
            "logp_ref_l_given_S": self.logp_ref_l_given_S,
        }
        for name, arr in arrays.items():
            if arr is None or len(arr) == 0:
                raise ValueError(f"pair {self.pair_id}: {name} missing or empty")
            for v in arr:
                if not math.isfinite(v):
                    raise ValueError(f"pair {self.pair_id}: {name} contains non-finite value")
                if v > 0:
                    raise ValueError(f"pair {self.pair_id}: {name} contains positive log-probability")
        if len(self.logp_theta_w_given_L) != len(self.logp_ref_w_given_S):
            raise ValueError(
                f"pair {self.pair_id}: chosen-token length mismatch "
                f"{len(self.logp_theta_w_given_L)} vs {len(self.logp_ref_w_given_S)}"
            )
        if len(self.logp_theta_l_given_L) != len(self.logp_ref_l_given_S):
            raise ValueError(
                f"pair {self.pair_id}: rejected-token length mismatch "
                f"{len(self.logp_theta_l_given_L)} vs {len(self.logp_ref_l_given_S)}"
            )

    def to_record(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "question": self.question,
            "short_page_ids": self.short_page_ids,
            "long_page_ids": self.long_page_ids,
            "chosen": self.chosen,
            "rejected": self.rejected,
            "logp_theta_w_given_L": self.logp_theta_w_given_L,
            "logp_theta_l_given_L": self.logp_theta_l_given_L,
            "logp_ref_w_given_S": self.logp_ref_w_given_S,
            "logp_ref_l_given_S": self.logp_ref_l_given_S,
        }

    @classmethod
    def from_record(cls, record: dict) -> "PreferencePair":
        return cls(
            question=record["question"],
            short_page_ids=record["short_page_ids"],
            long_page_ids=record["long_page_ids"],
            chosen=record["chosen"],
            rejected=record["rejected"],
            logp_theta_w_given_L=record.get("logp_theta_w_given_L"),
            logp_theta_l_given_L=record.get("logp_theta_l_given_L"),
            logp_ref_w_given_S=record.get("logp_ref_w_given_S"),
            logp_ref_l_given_S=record.get("logp_ref_l_given_S"),
            pair_id=record.get("pair_id", ""),
        )


def build_preference_pair(
    question: Question,
    context: AssembledContext,
    policy_client: BaseClient,
    model: str = "policy",
) -> PreferencePair:
    """chosen from the origin pages alone (the pages that generated the
    instruction), rejected from the full context. Log-probabilities stay
    unfilled for the offline scoring step."""
    # x_S keeps document order even when the context presentation is shuffled.
    origin_pages = sorted(
        (p for p, o in zip(context.pages, context.origin) if o),
        key=lambda p: (p.doc_id, p.index),
    )
    if not origin_pages:
        raise ValueError("context has no origin pages to form the short context")

    def completion(pages, tag):
        result = policy_client.complete(ChatRequest(
            model=model,
            messages=[
                message("system", [text_item(DEFAULT_SYSTEM_PROMPT)]),
                _page_message(pages, question.text),
            ],
            request_tag=tag,
        ))
        if not result.text.strip():
            raise GenerationError(f"empty completion for {tag}")
        return result.text

    short_ids = [p.page_id for p in origin_pages]
    chosen = completion(origin_pages, f"pair-short:{'+'.join(short_ids)}")
    rejected = completion(context.pages, f"pair-long:{'+'.join(context.page_ids)}")
    return PreferencePair(
        question=question.text,
        short_page_ids=short_ids,
        long_page_ids=context.page_ids,
        chosen=chosen,
        rejected=rejected,
    )


def _softplus(x: float) -> float:
    """log(1 + e^x), overflow-safe for large |x|."""
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def pair_margin(pair: PreferencePair, config: LongPOConfig) -> float:
    chosen_gap = sum(pair.logp_theta_w_given_L) - sum(pair.logp_ref_w_given_S)
    rejected_gap = sum(pair.logp_theta_l_given_L) - sum(pair.logp_ref_l_given_S)
    return config.beta * (chosen_gap - rejected_gap)


@dataclass
class LossReport:
    loss: float
    pref_term: float
    nll_term: float
    per_pair_margins: list[float] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "loss": self.loss,
            "pref_term": self.pref_term,
            "nll_term": self.nll_term,
            "per_pair_margins": self.per_pair_margins,
        }


def longpo_loss(pairs: list[PreferencePair], config: LongPOConfig | None = None) -> LossReport:
    """Batch loss: preference term lambda * mean softplus(-margin) plus the
    token-mean NLL of the chosen response under the policy on the long
    context. Reduction is in index order for bit-reproducibility."""
    config = config or LongPOConfig()
    if not pairs:
        raise ValueError("need at least one pair")
    margins = []
    pref_sum = 0.0
    nll_sum = 0.0
    for pair in pairs:
        pair.validate_logprobs()
        m = pair_margin(pair, config)
        margins.append(m)
        pref_sum += config.lam * _softplus(-m)
        nll_sum += -sum(pair.logp_theta_w_given_L) / len(pair.logp_theta_w_given_L)
    n = len(pairs)
    pref_term = pref_sum / n
    nll_term = nll_sum / n
    return LossReport(
        loss=pref_term + nll_term,
        pref_term=pref_term,
        nll_term=nll_term,
        per_pair_margins=margins,
    )


@dataclass
class PairGradients:
    """d loss / d logp for each per-token entry, same shapes as the inputs."""
    theta_w: list[float]
    theta_l: list[float]
    ref_w: list[float]
    ref_l: list[float]


def longpo_grads(pairs: list[PreferencePair], config: LongPOConfig | None = None) -> list[PairGradients]:
    """Analytic gradients of longpo_loss w.r.t. every per-token
    log-probability. With s_i = sigmoid(-m_i) and N pairs:

        d/d theta_w = (-lam*beta*s_i - 1/|y_w|) / N      (each chosen token)
        d/d theta_l = (+lam*beta*s_i) / N
        d/d ref_w   = (+lam*beta*s_i) / N
        d/d ref_l   = (-lam*beta*s_i) / N
    """
    config = config or LongPOConfig()
    n = len(pairs)
    if n == 0:
        raise ValueError("need at least one pair")
    grads = []
    for pair in pairs:
        pair.validate_logprobs()
        s = _sigmoid(-pair_margin(pair, config))
        g = config.lam * config.beta * s
        len_w = len(pair.logp_theta_w_given_L)
        grads.append(PairGradients(
            theta_w=[(-g - 1.0 / len_w) / n] * len_w,
            theta_l=[g / n] * len(pair.logp_theta_l_given_L),
            ref_w=[g / n] * len(pair.logp_ref_w_given_S),
            ref_l=[-g / n] * len(pair.logp_ref_l_given_S),
        ))
    return grads


def read_pairs(path) -> list[PreferencePair]:
    return [PreferencePair.from_record(r) for r in read_jsonl(path)]


def loss_report_json(report: LossReport) -> str:
    return canonical_json(report.to_record())
