"""Voting layer checks: the three variants, fallback, calibration, the
threshold decision rule, and the score dump format."""

import numpy as np
import pytest

from quorum import rng as rngmod
from quorum.council import CouncilTable
from quorum.errors import CalibrationError, DataError, ParameterError
from quorum.head import MCDropoutClassifier, MCPrediction
from quorum.novelty import (
    NoveltyDetector,
    calibrate_tau,
    load_score_dump,
    vote_score,
    write_score_dump,
)


def _table(members, k=3, credibility=0.001):
    return CouncilTable(
        credibility_threshold=credibility,
        class_labels=[f"c{i}" for i in range(k)],
        members=members,
        variance=np.zeros((k, k)),
        tp_counts=np.full(k, 5),
        flagged=set(),
    )


class TestVoteScore:
    def test_informed_averages_council(self):
        table = _table({0: [1, 2], 1: [0], 2: [0, 1]})
        u = np.array([0.05, 0.02, 0.04])
        score, size, fallback = vote_score(u, 0, table, "informed_democracy")
        assert score == pytest.approx(0.03, abs=1e-15)
        assert size == 2 and not fallback

    def test_uninformed_averages_everyone(self):
        table = _table({0: [1, 2], 1: [0], 2: [0, 1]})
        u = np.array([0.05, 0.02, 0.04])
        score, size, fallback = vote_score(u, 0, table, "uninformed_democracy")
        assert score == pytest.approx((0.05 + 0.02 + 0.04) / 3.0, abs=1e-15)
        assert size == 3 and not fallback

    def test_dictator_takes_leader_value(self):
        table = _table({0: [1, 2], 1: [0], 2: [0, 1]})
        u = np.array([0.05, 0.02, 0.04])
        score, size, fallback = vote_score(u, 0, table, "dictator")
        assert score == 0.05
        assert size == 1 and not fallback

    def test_empty_council_falls_back_to_dictator(self):
        table = _table({0: [], 1: [], 2: []})
        u = np.array([0.05, 0.02, 0.04])
        score, size, fallback = vote_score(u, 0, table, "informed_democracy")
        assert score == 0.05
        assert size == 0 and fallback

    def test_member_order_cannot_change_score(self):
        u = np.array([0.011, 0.07, 0.033, 0.0401, 0.0205])
        a = _table({0: [4, 1, 3, 2]}, k=5)
        b = _table({0: [1, 2, 3, 4]}, k=5)
        sa, _, _ = vote_score(u, 0, a, "informed_democracy")
        sb, _, _ = vote_score(u, 0, b, "informed_democracy")
        assert sa == sb  # bitwise equal

    def test_adding_member_moves_mean_toward_its_value(self):
        g = rngmod.stream(8)
        for _ in range(100):
            k = int(g.integers(3, 10))
            u = g.uniform(0.0, 0.3, size=k)
            members = sorted(g.choice(np.arange(1, k), size=int(g.integers(1, k - 1)),
                                      replace=False).tolist())
            base, _, _ = vote_score(u, 0, _table({0: members}, k=k), "informed_democracy")
            outside = [j for j in range(1, k) if j not in members]
            if not outside:
                continue
            new = outside[0]
            grown, _, _ = vote_score(u, 0, _table({0: sorted(members + [new])}, k=k),
                                     "informed_democracy")
            if u[new] > base:
                assert grown > base
            elif u[new] < base:
                assert grown < base

    def test_variant_equivalence_with_full_councils(self):
        g = rngmod.stream(12)
        for _ in range(200):
            k = int(g.integers(2, 12))
            u = g.uniform(0.0, 0.25, size=k)
            leader = int(g.integers(0, k))
            full = _table({i: [j for j in range(k) if j != i] for i in range(k)},
                          k=k, credibility=np.inf)
            informed, size, _ = vote_score(u, leader, full, "informed_democracy")
            uninformed, _, _ = vote_score(u, leader, full, "uninformed_democracy")
            dictator, _, _ = vote_score(u, leader, full, "dictator")
            assert size == k - 1
            assert abs(uninformed - (size * informed + dictator) / k) <= 1e-12

    def test_unknown_variant_rejected(self):
        with pytest.raises(ParameterError):
            vote_score(np.array([0.1, 0.2]), 0, _table({0: [1]}, k=2), "monarchy")

    def test_leader_out_of_range_rejected(self):
        with pytest.raises(ParameterError):
            vote_score(np.array([0.1, 0.2]), 5, _table({0: [1]}, k=2), "dictator")


class TestCalibration:
    def test_perfect_separation_midpoint(self):
        tau = calibrate_tau([0.1, 0.2, 0.8, 0.9], [False, False, True, True])
        assert tau == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(CalibrationError):
            calibrate_tau([0.1, 0.2], [False, False])


def _two_class_detector(variant="informed_democracy", **kwargs):
    model = MCDropoutClassifier(hidden_size=2, dropout=0.5)
    model.classes_ = np.array(["known_a", "known_b"])
    model.n_features_in_ = 2
    model.W1_ = np.eye(2)
    model.b1_ = np.zeros(2)
    model.W2_ = np.eye(2)
    table = _table({0: [1], 1: [0]}, k=2)
    table.class_labels = ["known_a", "known_b"]
    return NoveltyDetector(model, table, variant=variant, **kwargs)


class TestDetector:
    def test_decision_rule_strictly_below_means_known(self):
        det = _two_class_detector(tau=0.5)
        known = det.decide_from_prediction(
            MCPrediction(mean=np.array([0.8, 0.2]), uncertainty=np.array([0.9, 0.4]), n_passes=10))
        assert not known.is_novel
        assert known.leader == 0
        assert known.leader_label == "known_a"
        assert known.score == pytest.approx(0.4)  # council of leader 0 is {1}

    def test_score_at_threshold_is_novel(self):
        det = _two_class_detector(tau=0.4)
        verdict = det.decide_from_prediction(
            MCPrediction(mean=np.array([0.8, 0.2]), uncertainty=np.array([0.9, 0.4]), n_passes=10))
        assert verdict.score == pytest.approx(0.4)
        assert verdict.is_novel

    def test_above_threshold_is_novel(self):
        det = _two_class_detector(tau=0.1)
        verdict = det.decide_from_prediction(
            MCPrediction(mean=np.array([0.2, 0.8]), uncertainty=np.array([0.5, 0.2]), n_passes=10))
        assert verdict.leader == 1
        assert verdict.is_novel

    def test_verdict_consistency_random(self):
        g = rngmod.stream(31)
        det = _two_class_detector(tau=0.25)
        for _ in range(200):
            mean = g.dirichlet([1.0, 1.0])
            unc = g.uniform(0.0, 0.5, size=2)
            verdict = det.decide_from_prediction(
                MCPrediction(mean=mean, uncertainty=unc, n_passes=8))
            assert verdict.is_novel == (not verdict.score < verdict.threshold)

    def test_per_leader_threshold_option(self):
        det = _two_class_detector(tau=0.05, per_leader_tau={0: 10.0})
        pred = MCPrediction(mean=np.array([0.9, 0.1]), uncertainty=np.array([0.3, 0.3]), n_passes=8)
        assert not det.decide_from_prediction(pred).is_novel  # leader 0 uses 10.0
        pred_b = MCPrediction(mean=np.array([0.1, 0.9]), uncertainty=np.array([0.3, 0.3]), n_passes=8)
        assert det.decide_from_prediction(pred_b).is_novel  # leader 1 falls back to 0.05

    def test_decide_without_threshold_rejected(self):
        det = _two_class_detector()
        with pytest.raises(ParameterError):
            det.decide_from_prediction(
                MCPrediction(mean=np.array([0.5, 0.5]), uncertainty=np.zeros(2), n_passes=8))

    def test_calibrate_sets_tau(self):
        det = _two_class_detector()
        tau = det.calibrate([0.1, 0.2, 0.8, 0.9], [False, False, True, True])
        assert tau == 0.5 and det.tau == 0.5

    def test_zero_dropout_scores_zero_on_all_variants(self, four_class):
        model, X, _, _, _ = four_class
        frozen = MCDropoutClassifier(hidden_size=model.hidden_size, dropout=0.0)
        frozen.classes_ = model.classes_
        frozen.n_features_in_ = model.n_features_in_
        frozen.W1_, frozen.b1_, frozen.W2_ = model.W1_, model.b1_, model.W2_
        table = _table({i: [j for j in range(4) if j != i] for i in range(4)}, k=4)
        table.class_labels = list(model.classes_)
        for variant in ("informed_democracy", "uninformed_democracy", "dictator"):
            det = NoveltyDetector(frozen, table, variant=variant, n_passes=10)
            score, _, _ = det.novelty_score(X[0], rngmod.stream(0))
            assert score == 0.0

    def test_novelty_score_matches_prediction_path(self, four_class):
        model, _, _, X_hold, _ = four_class
        table = _table({i: [j for j in range(4) if j != i] for i in range(4)}, k=4)
        table.class_labels = list(model.classes_)
        det = NoveltyDetector(model, table, n_passes=20)
        score, leader, pred = det.novelty_score(X_hold[0], rngmod.stream(9))
        again = model.mc_predict(X_hold[0], n_passes=20, rng=rngmod.stream(9))
        s2, l2, _, _ = det.score_from_prediction(again)
        assert (score, leader) == (s2, l2)

    def test_mismatched_labels_rejected(self, four_class):
        model, _, _, _, _ = four_class
        table = _table({0: [1], 1: [0]}, k=2)
        with pytest.raises(ParameterError):
            NoveltyDetector(model, table)

    def test_bad_variant_rejected(self, four_class):
        model, _, _, X_hold, y_hold = four_class
        table = _table({i: [j for j in range(4) if j != i] for i in range(4)}, k=4)
        table.class_labels = list(model.classes_)
        with pytest.raises(ParameterError):
            NoveltyDetector(model, table, variant="oligarchy")


class TestScoreDump:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "scores.csv"
        means = np.array([[0.7, 0.3], [0.25, 0.75]])
        uncs = np.array([[0.01, 0.002], [0.125, 0.0625]])
        write_score_dump(path, ["s0", "s1"], ["a", "b"], ["a", "b"],
                         [0.015625, 0.1], means, uncs, ["a", "b"])
        back = load_score_dump(path)
        assert back["ids"] == ["s0", "s1"]
        assert back["true_labels"] == ["a", "b"]
        assert back["leader_labels"] == ["a", "b"]
        assert back["class_labels"] == ["a", "b"]
        np.testing.assert_array_equal(back["scores"], [0.015625, 0.1])
        np.testing.assert_array_equal(back["means"], means)
        np.testing.assert_array_equal(back["uncertainties"], uncs)

    def test_full_precision_round_trip(self, tmp_path):
        path = tmp_path / "scores.csv"
        score = [1.0 / 3.0]
        means = np.array([[np.pi / 4.0, 1.0 - np.pi / 4.0]])
        uncs = np.array([[1e-17, 2.5e-300]])
        write_score_dump(path, ["x"], ["a"], ["b"], score, means, uncs, ["a", "b"])
        back = load_score_dump(path)
        np.testing.assert_array_equal(back["scores"], score)
        np.testing.assert_array_equal(back["means"], means)
        np.testing.assert_array_equal(back["uncertainties"], uncs)

    def test_comma_in_label_rejected(self, tmp_path):
        with pytest.raises(DataError):
            write_score_dump(tmp_path / "x.csv", ["s0"], ["a,b"], ["a"], [0.1],
                             np.array([[1.0]]), np.array([[0.0]]), ["a"])

    def test_bad_format_line_rejected(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("id,true_label,leader,score\n")
        with pytest.raises(DataError):
            load_score_dump(path)
