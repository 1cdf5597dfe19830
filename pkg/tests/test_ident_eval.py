"""Identifiability metrics: matching correlation, parameter recovery,
edge ranking, and ablation aggregation."""
import numpy as np
import pytest
import torch

from sci.core_types import BernoulliAdj
from sci.errors import (
    DegenerateComponentError,
    DimensionError,
    ParameterError,
    UndefinedMetricError,
)
from sci.ident_eval import (
    IdentReport,
    ablation_report,
    block_r2,
    component_mcc,
    edge_auc,
    edge_auc_scores,
)


class TestComponentMCC:
    def test_perfect_recovery_identity_matching(self):
        rng = np.random.default_rng(0)
        s = rng.standard_normal((200, 4))
        report = component_mcc(s, s)
        assert report.mcc == pytest.approx(1.0, abs=1e-12)
        assert report.matching == (0, 1, 2, 3)
        assert all(c == pytest.approx(1.0) for c in report.per_component_corr)

    def test_null_distribution_low_score(self):
        # Independent estimates carry no information: the best-matched mean
        # absolute rank correlation at N = 1000 stays below 0.15.
        rng = np.random.default_rng(1)
        s_true = rng.standard_normal((1000, 4))
        s_est = rng.standard_normal((1000, 4))
        assert component_mcc(s_true, s_est).mcc < 0.15

    def test_monotone_reparameterization_invariant(self):
        rng = np.random.default_rng(2)
        s = rng.standard_normal((300, 3))
        warped = np.stack([np.exp(s[:, 0]), s[:, 1] ** 3, np.tanh(s[:, 2])], axis=1)
        report = component_mcc(s, warped)
        assert report.mcc == pytest.approx(1.0, abs=1e-12)

    def test_permutation_recovered_in_matching(self):
        rng = np.random.default_rng(3)
        s = rng.standard_normal((200, 4))
        perm = [2, 0, 3, 1]
        report = component_mcc(s, s[:, perm])
        assert report.mcc == pytest.approx(1.0, abs=1e-12)
        # column j of the estimate equals true component perm[j], so true
        # component i is matched to the estimated column where it landed
        for i in range(4):
            assert perm[report.matching[i]] == i

    def test_sign_flip_keeps_score_signed_corr_negative(self):
        rng = np.random.default_rng(4)
        s = rng.standard_normal((200, 2))
        flipped = -s
        report = component_mcc(s, flipped)
        assert report.mcc == pytest.approx(1.0, abs=1e-12)
        assert all(c == pytest.approx(-1.0) for c in report.per_component_corr)

    def test_single_component(self):
        rng = np.random.default_rng(5)
        s = rng.standard_normal((100, 1))
        report = component_mcc(s, -(s**3))
        assert report.mcc == pytest.approx(1.0, abs=1e-12)
        assert report.matching == (0,)

    def test_zero_variance_component_rejected(self):
        rng = np.random.default_rng(6)
        s_true = rng.standard_normal((100, 2))
        s_est = s_true.copy()
        s_est[:, 1] = 3.14
        with pytest.raises(DegenerateComponentError, match="estimated component 1"):
            component_mcc(s_true, s_est)

    def test_too_few_samples_rejected(self):
        rng = np.random.default_rng(7)
        s = rng.standard_normal((49, 2))
        with pytest.raises(ParameterError, match="at least 50"):
            component_mcc(s, s)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        with pytest.raises(DimensionError):
            component_mcc(rng.standard_normal((100, 2)), rng.standard_normal((100, 3)))


class TestBlockR2:
    def test_identity_recovery_near_one(self):
        rng = np.random.default_rng(0)
        B = rng.uniform(0.05, 0.95, size=(300, 6))
        score = block_r2(B, B)
        assert score == pytest.approx(1.0, abs=1e-6)

    def test_logit_bijection_recovered(self):
        # The estimate is an elementwise logit of the truth: a smooth
        # bijection the regressor must invert almost perfectly.
        rng = np.random.default_rng(1)
        B_true = rng.uniform(0.05, 0.95, size=(300, 6))
        B_hat = np.log(B_true / (1 - B_true))
        assert block_r2(B_hat, B_true) >= 0.99

    def test_independent_noise_near_zero(self):
        rng = np.random.default_rng(2)
        B_true = rng.uniform(0.1, 0.9, size=(400, 4))
        B_hat = rng.standard_normal((400, 4))
        assert block_r2(B_hat, B_true) <= 0.05

    def test_constant_true_columns_excluded(self):
        rng = np.random.default_rng(3)
        B_hat = rng.uniform(0.1, 0.9, size=(300, 3))
        B_true = np.concatenate(
            [B_hat[:, :2], np.full((300, 1), 0.4)], axis=1
        )
        score = block_r2(B_hat, B_true)
        assert score == pytest.approx(1.0, abs=1e-6)

    def test_all_constant_rejected(self):
        rng = np.random.default_rng(4)
        B_hat = rng.uniform(0.1, 0.9, size=(100, 2))
        with pytest.raises(DegenerateComponentError):
            block_r2(B_hat, np.full((100, 2), 0.25))

    def test_too_few_samples_rejected(self):
        rng = np.random.default_rng(5)
        B = rng.uniform(0.1, 0.9, size=(10, 2))
        with pytest.raises(ParameterError):
            block_r2(B, B)

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        B_true = rng.uniform(0.1, 0.9, size=(200, 3))
        B_hat = np.log(B_true) + 0.1 * rng.standard_normal((200, 3))
        assert block_r2(B_hat, B_true) == block_r2(B_hat, B_true)


class TestEdgeAUC:
    def test_true_probabilities_give_one(self):
        gen = torch.Generator().manual_seed(0)
        raw = (torch.rand(20, 5, 5, generator=gen) < 0.4).to(torch.float64)
        G = torch.triu(raw, 1) + torch.triu(raw, 1).mT
        scores = G * 0.9 + (1 - G) * 0.1
        assert edge_auc(scores, G) == pytest.approx(1.0, abs=1e-12)

    def test_pair_counting_oracle(self):
        # Brute force over label-discordant pairs: score pairs (pos, neg)
        # count 1 if pos > neg, 0.5 if tied. For scores {0.9, 0.8, 0.3} and
        # labels {1, 0, 1}: pairs (0.9 vs 0.8) -> 1, (0.3 vs 0.8) -> 0;
        # AUC = 1/2.
        scores = np.array([0.9, 0.8, 0.3])
        labels = np.array([1.0, 0.0, 1.0])
        assert edge_auc_scores(scores, labels) == pytest.approx(0.5, abs=1e-12)
        # independent recomputation by exhaustive pair counting
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        wins = sum(
            1.0 if p > q else (0.5 if p == q else 0.0) for p in pos for q in neg
        )
        assert wins / (len(pos) * len(neg)) == pytest.approx(0.5)

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError, match="single class"):
            edge_auc_scores(np.array([0.1, 0.9]), np.array([1.0, 1.0]))

    def test_nonbinary_labels_rejected(self):
        with pytest.raises(ParameterError, match="binary"):
            edge_auc_scores(np.array([0.1, 0.9]), np.array([0.0, 0.5]))

    def test_accepts_bernoulli_adj(self):
        B = BernoulliAdj(torch.full((3, 3), 0.5))
        G = torch.zeros(3, 3)
        G[0, 1] = G[1, 0] = 1.0
        assert edge_auc(B, G) == pytest.approx(0.5, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            edge_auc(torch.rand(3, 3), torch.zeros(4, 4))


def report(mcc: float, br2=None, eauc=None) -> IdentReport:
    return IdentReport(
        mcc=mcc,
        per_component_corr=(mcc,),
        matching=(0,),
        num_samples=100,
        block_r2=br2,
        edge_auc=eauc,
    )


class TestAblationReport:
    def test_identical_runs_zero_std(self):
        table = ablation_report(
            {"full": [report(0.8), report(0.8), report(0.8)]}
        )
        mean, std = table.row("full").stats["mcc"]
        assert mean == pytest.approx(0.8)
        assert std == 0.0

    def test_table_has_exactly_given_variants(self):
        table = ablation_report({"full": [report(0.9)], "no_r": [report(0.7)]})
        assert {r.variant for r in table.rows} == {"full", "no_r"}

    def test_hand_built_two_run_arithmetic(self):
        # means and population stds by scalar arithmetic:
        # mcc: (0.6 + 0.8)/2 = 0.7, std = 0.1
        # block_r2: (0.5 + 0.9)/2 = 0.7, std = 0.2
        table = ablation_report(
            {"full": [report(0.6, br2=0.5), report(0.8, br2=0.9)]},
            task_metrics={"full": [0.75, 0.85]},
        )
        row = table.row("full")
        assert row.stats["mcc"] == (pytest.approx(0.7), pytest.approx(0.1))
        assert row.stats["block_r2"] == (pytest.approx(0.7), pytest.approx(0.2))
        assert row.stats["task_metric"] == (pytest.approx(0.8), pytest.approx(0.05))
        assert row.stats["edge_auc"] is None

    def test_diffs_against_full(self):
        table = ablation_report(
            {"full": [report(0.9)], "no_r": [report(0.6)]}
        )
        assert table.row("no_r").diff_vs_full["mcc"] == pytest.approx(-0.3)
        assert table.row("full").diff_vs_full["mcc"] == pytest.approx(0.0)

    def test_absent_variants_listed(self):
        table = ablation_report({"full": [report(0.9)], "no_h": []})
        assert "no_h" in table.absent
        assert {r.variant for r in table.rows} == {"full"}

    def test_format_table_renders_all_rows(self):
        table = ablation_report(
            {"full": [report(0.9, eauc=0.8)], "no_r": [report(0.5, eauc=0.6)]}
        )
        text = table.format_table()
        assert "full" in text and "no_r" in text
        assert "0.9000" in text and "-0.4000" in text

    def test_json_round_trip_structure(self):
        table = ablation_report({"full": [report(0.9)]})
        payload = table.to_json()
        assert payload["variants"]["full"]["metrics"]["mcc"]["mean"] == pytest.approx(0.9)
        assert payload["absent"] == []

    def test_missing_variant_lookup_raises(self):
        table = ablation_report({"full": [report(0.9)]})
        with pytest.raises(KeyError):
            table.row("nope")
