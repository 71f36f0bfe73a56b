import math
import random

import pytest

from longdoc.client import GenerationError, MockClient, MockRule
from longdoc.longpo import (
    LongPOConfig,
    PairGradients,
    PreferencePair,
    build_preference_pair,
    longpo_grads,
    longpo_loss,
    pair_margin,
    read_pairs,
)
from longdoc.records import write_jsonl
from longdoc.sft import AssembledContext, Question

from conftest import make_doc


def pair_with(
    theta_w, theta_l, ref_w, ref_l, question="Q?",
) -> PreferencePair:
    return PreferencePair(
        question=question,
        short_page_ids=["p1"],
        long_page_ids=["p1", "p2"],
        chosen="c",
        rejected="r",
        logp_theta_w_given_L=theta_w,
        logp_theta_l_given_L=theta_l,
        logp_ref_w_given_S=ref_w,
        logp_ref_l_given_S=ref_l,
    )


def random_pair(rng: random.Random) -> PreferencePair:
    def logps(n):
        return [rng.uniform(-3.0, -0.01) for _ in range(n)]

    n_w = rng.randint(1, 6)
    n_l = rng.randint(1, 6)
    return pair_with(logps(n_w), logps(n_l), logps(n_w), logps(n_l))


class TestLossValues:
    def test_zero_margin_closed_form(self):
        # Policy sums equal reference sums on both sides -> sigmoid(0) = 1/2.
        pair = pair_with([-0.5, -0.5], [-1.0], [-0.6, -0.4], [-1.0])
        report = longpo_loss([pair])
        assert report.per_pair_margins == [0.0]
        assert abs(report.pref_term - 0.01 * math.log(2)) < 1e-12
        assert abs(report.nll_term - 0.5) < 1e-12
        assert abs(report.loss - (0.5 + 0.01 * math.log(2))) < 1e-12

    def test_worked_margin_point_seven(self):
        # beta 0.1; sums: th_w=-10, ref_w=-12, th_l=-20, ref_l=-15 -> m=0.7.
        pair = pair_with(
            [-2.5, -2.5, -2.5, -2.5],
            [-5.0, -5.0, -5.0, -5.0],
            [-3.0, -3.0, -3.0, -3.0],
            [-3.75, -3.75, -3.75, -3.75],
        )
        report = longpo_loss([pair])
        assert abs(report.per_pair_margins[0] - 0.7) < 1e-12
        # Independent oracle: the sigmoid form, not the softplus identity.
        expected_pref = -0.01 * math.log(1.0 / (1.0 + math.exp(-0.7)))
        assert abs(report.pref_term - expected_pref) < 1e-9
        assert abs(report.nll_term - 2.5) < 1e-12
        assert abs(report.loss - (expected_pref + 2.5)) < 1e-9

    def test_batch_mean_over_pairs(self):
        pair_a = pair_with([-1.0], [-1.0], [-1.0], [-1.0])   # m = 0
        pair_b = pair_with([-2.0], [-2.0], [-2.0], [-2.0])   # m = 0
        report = longpo_loss([pair_a, pair_b])
        assert abs(report.nll_term - 1.5) < 1e-12
        assert abs(report.pref_term - 0.01 * math.log(2)) < 1e-12

    def test_lambda_zero_reduces_to_nll(self):
        rng = random.Random(0)
        pairs = [random_pair(rng) for _ in range(5)]
        report = longpo_loss(pairs, LongPOConfig(beta=0.1, lam=0.0))
        assert report.pref_term == 0.0
        assert report.loss == report.nll_term

    def test_extreme_margin_stays_finite(self):
        for sign in (+1, -1):
            # |m| = 700: sums differ by 7000 at beta 0.1.
            pair = pair_with([-1.0], [-7001.0 if sign > 0 else -1.0],
                             [-1.0], [-1.0 if sign > 0 else -7001.0])
            report = longpo_loss([pair])
            assert math.isfinite(report.loss)
            assert abs(abs(report.per_pair_margins[0]) - 700.0) < 1e-9

    def test_pref_term_bounded_by_absolute_margin(self):
        rng = random.Random(3)
        config = LongPOConfig()
        for _ in range(100):
            pair = random_pair(rng)
            m = pair_margin(pair, config)
            report = longpo_loss([pair], config)
            # lam * log(1 + e^{|m|}), computed stably.
            bound = config.lam * (math.log1p(math.exp(-abs(m))) + abs(m))
            assert report.pref_term <= bound + 1e-12

    def test_monotonicity_in_chosen_policy_logps(self):
        base = pair_with([-2.0, -2.0], [-3.0], [-1.5, -1.5], [-3.0])
        better = pair_with([-1.0, -1.0], [-3.0], [-1.5, -1.5], [-3.0])
        rb, rg = longpo_loss([base]), longpo_loss([better])
        assert rg.pref_term < rb.pref_term
        assert rg.nll_term < rb.nll_term


class TestValidation:
    def test_length_mismatch_rejected(self):
        pair = pair_with([-1.0, -1.0], [-1.0], [-1.0], [-1.0])
        with pytest.raises(ValueError, match="chosen-token length"):
            longpo_loss([pair])

    def test_nan_rejected(self):
        pair = pair_with([float("nan")], [-1.0], [-1.0], [-1.0])
        with pytest.raises(ValueError, match="non-finite"):
            longpo_loss([pair])

    def test_positive_logp_rejected(self):
        pair = pair_with([0.5], [-1.0], [-1.0], [-1.0])
        with pytest.raises(ValueError, match="positive"):
            longpo_loss([pair])

    def test_short_pages_must_be_subset(self):
        with pytest.raises(ValueError, match="subset"):
            PreferencePair(
                question="q", short_page_ids=["a"], long_page_ids=["b"],
                chosen="c", rejected="r",
            )

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LongPOConfig(beta=0.0)
        with pytest.raises(ValueError):
            LongPOConfig(lam=-0.1)

    def test_defaults_match_published_settings(self):
        config = LongPOConfig()
        assert config.beta == 0.1
        assert config.lam == 0.01
        assert LongPOConfig.from_dict({"beta": 0.2, "lambda": 0.05}).lam == 0.05


def finite_difference(pairs, config, mutate, h=1e-5):
    """Central difference of the batch loss along one coordinate."""
    mutate(+h)
    up = longpo_loss(pairs, config).loss
    mutate(-2 * h)
    down = longpo_loss(pairs, config).loss
    mutate(+h)  # restore
    return (up - down) / (2 * h)


class TestGradients:
    def test_gradients_match_central_differences(self):
        rng = random.Random(12345)
        pairs = [random_pair(rng) for _ in range(50)]
        config = LongPOConfig()
        grads = longpo_grads(pairs, config)
        arrays = ("logp_theta_w_given_L", "logp_theta_l_given_L",
                  "logp_ref_w_given_S", "logp_ref_l_given_S")
        fields = {"logp_theta_w_given_L": "theta_w", "logp_theta_l_given_L": "theta_l",
                  "logp_ref_w_given_S": "ref_w", "logp_ref_l_given_S": "ref_l"}
        checked = 0
        for i, pair in enumerate(pairs):
            for array_name in arrays:
                arr = getattr(pair, array_name)
                for t in range(len(arr)):
                    def mutate(delta, arr=arr, t=t):
                        arr[t] += delta

                    numeric = finite_difference(pairs, config, mutate)
                    analytic = getattr(grads[i], fields[array_name])[t]
                    rel = abs(analytic - numeric) / max(abs(numeric), 1e-12)
                    assert rel < 1e-5, (array_name, i, t, analytic, numeric)
                    checked += 1
        assert checked > 200

    def test_gradient_shapes(self):
        pair = pair_with([-1.0, -2.0, -0.5], [-1.0], [-1.0, -1.0, -1.0], [-1.0])
        g = longpo_grads([pair])[0]
        assert isinstance(g, PairGradients)
        assert len(g.theta_w) == 3 and len(g.theta_l) == 1
        assert len(g.ref_w) == 3 and len(g.ref_l) == 1


class TestBuildPair:
    def context(self, doc, origin_indices):
        origin = [p.index in origin_indices for p in doc.pages]
        return AssembledContext(strategy="whole_document", pages=list(doc.pages), origin=origin)

    def client(self):
        return MockClient([
            MockRule(response_text="short answer", substring="pair-short:"),
            MockRule(response_text="long answer", substring="pair-long:"),
        ])

    def test_single_origin_page(self):
        doc = make_doc("d", 20)
        ctx = self.context(doc, {7})
        q = Question(text="Q?", pipeline="single_page", source_page_ids=[doc.pages[7].page_id])
        pair = build_preference_pair(q, ctx, self.client())
        assert pair.short_page_ids == [doc.pages[7].page_id]
        assert len(pair.long_page_ids) == 20
        assert pair.chosen == "short answer"
        assert pair.rejected == "long answer"

    def test_multiple_origin_pages_in_document_order(self):
        doc = make_doc("d", 8)
        ctx = self.context(doc, {3, 5})
        q = Question(text="Q?", pipeline="single_page", source_page_ids=[doc.pages[3].page_id])
        pair = build_preference_pair(q, ctx, self.client())
        assert pair.short_page_ids == [doc.pages[3].page_id, doc.pages[5].page_id]

    def test_origin_order_restored_under_shuffled_presentation(self):
        doc = make_doc("d", 6)
        # Presentation reversed; the short context still reads in document order.
        pages = list(reversed(doc.pages))
        origin = [p.index in (1, 4) for p in pages]
        ctx = AssembledContext(strategy="hn_short", pages=pages[:5], origin=origin[:5])
        q = Question(text="Q?", pipeline="single_page", source_page_ids=[doc.pages[4].page_id])
        pair = build_preference_pair(q, ctx, self.client())
        assert pair.short_page_ids == [doc.pages[1].page_id, doc.pages[4].page_id]

    def test_no_origin_pages_errors(self):
        doc = make_doc("d", 4)
        ctx = self.context(doc, set())
        q = Question(text="Q?", pipeline="single_page", source_page_ids=[doc.pages[0].page_id])
        with pytest.raises(ValueError, match="origin"):
            build_preference_pair(q, ctx, self.client())

    def test_empty_completion_errors(self):
        doc = make_doc("d", 4)
        ctx = self.context(doc, {1})
        q = Question(text="Q?", pipeline="single_page", source_page_ids=[doc.pages[1].page_id])
        client = MockClient([
            MockRule(response_text="", substring="pair-short:"),
            MockRule(response_text="long", substring="pair-long:"),
        ])
        with pytest.raises(GenerationError, match="empty completion"):
            build_preference_pair(q, ctx, client)


def test_pair_file_round_trip(tmp_path):
    rng = random.Random(5)
    pairs = [random_pair(rng) for _ in range(3)]
    path = tmp_path / "pairs.jsonl"
    write_jsonl(pairs, path)
    loaded = read_pairs(path)
    assert [p.pair_id for p in loaded] == [p.pair_id for p in pairs]
    assert longpo_loss(loaded).loss == longpo_loss(pairs).loss
