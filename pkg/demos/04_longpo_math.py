"""Preference-pair construction and the short-to-long objective.

The chosen response comes from the short context that generated the question;
the rejected one from the full long context. Reference log-probabilities are
scored on the short context. The loss is

    mean_i[ lambda * softplus(-m_i) ]  +  mean_i[ token-mean NLL of chosen ]

with margin m = beta * [(sum th_w - sum ref_w) - (sum th_l - sum ref_l)].
"""

import math

from longdoc.client import MockClient, MockRule
from longdoc.corpus import Document, Page
from longdoc.longpo import LongPOConfig, PreferencePair, build_preference_pair, longpo_grads, longpo_loss
from longdoc.sft import AssembledContext, Question

pages = tuple(
    Page(page_id=f"p{i}", doc_id="d", index=i, image_ref=f"img/{i}.png",
         width_px=840, height_px=840, word_count=150, content_kind="normal")
    for i in range(8)
)
doc = Document(doc_id="d", source_url="u", category="c", language="en", pages=pages)
context = AssembledContext(
    strategy="whole_document", pages=list(pages),
    origin=[i == 3 for i in range(8)],
)
policy = MockClient([
    MockRule(response_text="focused answer from the origin page", substring="pair-short:"),
    MockRule(response_text="drifting answer from the whole document", substring="pair-long:"),
])
question = Question(text="What does section 3 conclude?", pipeline="single_page",
                    source_page_ids=["p3"])
pair = build_preference_pair(question, context, policy)
print(f"short context: {pair.short_page_ids}")
print(f"long context has {len(pair.long_page_ids)} pages")
print(f"chosen:   {pair.chosen!r}")
print(f"rejected: {pair.rejected!r}")

# Log-probabilities arrive from offline scoring; plant the worked example:
# sums -10 / -12 / -20 / -15 at beta 0.1 give margin 0.7.
pair.logp_theta_w_given_L = [-2.5] * 4
pair.logp_ref_w_given_S = [-3.0] * 4
pair.logp_theta_l_given_L = [-5.0] * 4
pair.logp_ref_l_given_S = [-3.75] * 4

config = LongPOConfig()  # beta 0.1, lambda 0.01
report = longpo_loss([pair], config)
print(f"\nmargin: {report.per_pair_margins[0]:.4f}")
print(f"pref_term: {report.pref_term:.7f}  (= 0.01 * softplus(-0.7) = "
      f"{0.01 * math.log1p(math.exp(-0.7)):.7f})")
print(f"nll_term:  {report.nll_term:.4f}   (chosen sums to -10 over 4 tokens)")
print(f"loss:      {report.loss:.7f}")

grads = longpo_grads([pair], config)[0]
print(f"\nd loss / d chosen-policy logp (per token): {grads.theta_w[0]:+.6f}")
print(f"d loss / d rejected-policy logp (per token): {grads.theta_l[0]:+.6f}")
print("(chosen tokens pull up through both terms; rejected tokens push down)")

zero_lambda = longpo_loss([pair], LongPOConfig(beta=0.1, lam=0.0))
print(f"\nwith lambda=0 the loss reduces to the NLL term exactly: "
      f"{zero_lambda.loss == zero_lambda.nll_term}")
