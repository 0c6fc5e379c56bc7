from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cackit.cohort import SurvivalRow
from cackit.errors import (
    DegenerateMarginals,
    EmptyGroup,
    NegativeDuration,
    NoEvents,
    Separation,
    ZeroVariance,
)
from cackit.stats import (
    ThresholdMetrics,
    bland_altman,
    bootstrap_ci,
    confusion_matrix,
    correlations,
    cox_two_group,
    icc_agreement,
    km_estimate,
    subgroup_evaluate,
    threshold_metrics,
    weighted_kappa,
)

from oracles import grid_search_cox


def row(label, dur, ev, kind="all_cause_death"):
    return SurvivalRow(patient_id=f"{label}{dur}", group_label=label,
                       duration_days=dur, event=ev, outcome_kind=kind)


def rows(label, durations, events):
    return [row(label, d, bool(e)) for d, e in zip(durations, events)]


class TestKaplanMeier:
    def test_hand_case(self):
        curve = km_estimate(rows("A", [1, 2, 3], [1, 0, 1]))
        assert curve.times.tolist() == [1, 3]
        assert curve.n_at_risk.tolist() == [3, 1]
        assert curve.n_events.tolist() == [1, 1]
        assert curve.survival_at(0.5) == 1.0
        assert curve.survival_at(1) == pytest.approx(2 / 3)
        assert curve.survival_at(2.9) == pytest.approx(2 / 3)
        assert curve.survival_at(3) == 0.0

    def test_censored_at_event_time_stays_at_risk(self):
        # the subject censored at t=2 is still in the t=2 risk set
        curve = km_estimate(rows("A", [2, 2, 4], [1, 0, 1]))
        assert curve.n_at_risk.tolist() == [3, 1]

    @given(st.lists(st.integers(0, 20), min_size=1, max_size=15))
    def test_no_censoring_matches_empirical_survival(self, durations):
        curve = km_estimate(rows("A", durations, [1] * len(durations)))
        arr = np.array(durations)
        for t in list(arr) + [0, 21]:
            assert curve.survival_at(t) == pytest.approx(np.mean(arr > t))

    def test_at_risk_table_partitions_group(self):
        data = rows("A", [0, 1, 3, 3, 5, 8, 9], [1, 0, 1, 0, 0, 1, 0])
        curve = km_estimate(data)
        table = curve.at_risk_table([0, 2, 4, 6, 8, 10])
        n = len(data)
        for entry in table:
            assert entry["at_risk"] + entry["events"] + \
                entry["censored"] == n
        at_risk = [e["at_risk"] for e in table]
        assert at_risk == sorted(at_risk, reverse=True)
        assert table[0] == {"time": 0.0, "at_risk": 7, "events": 0,
                            "censored": 0}
        assert table[-1] == {"time": 10.0, "at_risk": 0, "events": 3,
                             "censored": 4}

    def test_empty_and_negative(self):
        with pytest.raises(EmptyGroup):
            km_estimate([])
        with pytest.raises(NegativeDuration):
            km_estimate(rows("A", [-1], [1]))


COX_A = ([2, 4, 6], [1, 1, 0])
COX_B = ([1, 3, 5], [1, 0, 1])
COX_TIED_A = ([2, 2, 3, 5], [1, 1, 0, 1])
COX_TIED_B = ([2, 4, 4, 6], [1, 1, 0, 0])


def _grid_fit(data_a, data_b):
    dur = np.array(data_a[0] + data_b[0], dtype=float)
    ev = np.array(data_a[1] + data_b[1], dtype=bool)
    x = np.array([0.0] * len(data_a[0]) + [1.0] * len(data_b[0]))
    return grid_search_cox(dur, ev, x)


class TestCox:
    def test_symmetric_groups_give_unit_hazard(self):
        data = rows("A", [1, 2, 3], [1, 0, 1]) + \
            rows("B", [1, 2, 3], [1, 0, 1])
        fit = cox_two_group(data, reference_label="A")
        assert fit.log_hr == pytest.approx(0.0, abs=1e-12)
        assert fit.hr == pytest.approx(1.0, abs=1e-12)
        assert fit.converged

    def test_six_subject_fit_matches_grid_search(self):
        data = rows("A", *COX_A) + rows("B", *COX_B)
        fit = cox_two_group(data, reference_label="A")
        assert fit.converged
        assert fit.log_hr == pytest.approx(_grid_fit(COX_A, COX_B), abs=1e-3)

    def test_tied_event_times_match_grid_search(self):
        data = rows("A", *COX_TIED_A) + rows("B", *COX_TIED_B)
        fit = cox_two_group(data, reference_label="A")
        assert fit.log_hr == pytest.approx(
            _grid_fit(COX_TIED_A, COX_TIED_B), abs=1e-3)

    def test_fit_summary_is_internally_consistent(self):
        fit = cox_two_group(rows("A", *COX_A) + rows("B", *COX_B), "A")
        assert fit.hr == pytest.approx(math.exp(fit.log_hr))
        assert fit.wald_z == pytest.approx(fit.log_hr / fit.se)
        assert fit.p_value == pytest.approx(
            math.erfc(abs(fit.wald_z) / math.sqrt(2)))
        assert 0 < fit.iterations <= 50

    def test_rank_invariance(self):
        base = cox_two_group(rows("A", *COX_A) + rows("B", *COX_B), "A")
        squared = cox_two_group(
            rows("A", [d * d for d in COX_A[0]], COX_A[1]) +
            rows("B", [d * d for d in COX_B[0]], COX_B[1]), "A")
        assert squared.log_hr == pytest.approx(base.log_hr, abs=1e-12)

    def test_label_swap_negates_log_hr(self):
        data = rows("A", *COX_TIED_A) + rows("B", *COX_TIED_B)
        ab = cox_two_group(data, reference_label="A")
        ba = cox_two_group(data, reference_label="B")
        assert ab.log_hr == pytest.approx(-ba.log_hr, abs=1e-9)
        assert ab.se == pytest.approx(ba.se, abs=1e-9)

    def test_no_events_raises(self):
        data = rows("A", [1, 2], [0, 0]) + rows("B", [3, 4], [0, 0])
        with pytest.raises(NoEvents):
            cox_two_group(data, "A")

    def test_one_sided_events_raise_separation(self):
        data = rows("A", [1, 2], [1, 1]) + rows("B", [3, 4], [0, 0])
        with pytest.raises(Separation) as err:
            cox_two_group(data, reference_label="A")
        assert err.value.direction == -1
        with pytest.raises(Separation) as err:
            cox_two_group(data, reference_label="B")
        assert err.value.direction == +1
        assert err.value.infinite_hr

    def test_perfectly_ordered_events_plateau(self):
        # every A event precedes every B event: the likelihood is monotone
        # but bounded, so the fit converges on an extreme, unstable estimate
        # rather than detecting separation
        data = rows("A", [1, 2], [1, 1]) + rows("B", [3, 4], [1, 1])
        fit = cox_two_group(data, reference_label="A")
        assert fit.converged
        assert fit.log_hr < -10
        assert fit.se > 100

    def test_needs_exactly_two_groups(self):
        with pytest.raises(ValueError):
            cox_two_group(rows("A", [1, 2], [1, 1]), "A")
        three = rows("A", [1], [1]) + rows("B", [2], [1]) + \
            rows("C", [3], [1])
        with pytest.raises(ValueError):
            cox_two_group(three, "A")
        with pytest.raises(ValueError):
            cox_two_group(rows("A", [1], [1]) + rows("B", [2], [1]), "X")


class TestWeightedKappa:
    def test_perfect_agreement(self):
        m = np.diag([5, 1, 7, 2])
        assert weighted_kappa(m) == 1.0

    def test_two_by_two_hand_value(self):
        assert weighted_kappa(np.array([[2, 1], [1, 2]])) == \
            pytest.approx(1 / 3, abs=1e-9)

    def test_independence_gives_zero(self):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        counts = np.outer(p, p) * 100.0
        assert weighted_kappa(counts) == pytest.approx(0.0, abs=1e-12)

    @given(st.lists(st.integers(0, 9), min_size=16, max_size=16))
    def test_transpose_and_scale_invariance(self, flat):
        m = np.array(flat, dtype=float).reshape(4, 4)
        try:
            k = weighted_kappa(m)
        except (ValueError, DegenerateMarginals):
            return
        assert weighted_kappa(m.T) == pytest.approx(k, abs=1e-12)
        assert weighted_kappa(m * 5) == pytest.approx(k, abs=1e-12)

    def test_degenerate_marginals(self):
        m = np.zeros((4, 4))
        m[2, 2] = 9
        with pytest.raises(DegenerateMarginals):
            weighted_kappa(m)

    def test_empty_matrix(self):
        with pytest.raises(ValueError):
            weighted_kappa(np.zeros((4, 4)))

    def test_accepts_confusion_matrix(self):
        pairs = [("0", "0"), ("0", "1-100"), ("1-100", "1-100"),
                 (">400", ">400")]
        cm = confusion_matrix(pairs)
        assert cm.total == 4
        assert cm.percent_agreement == 0.75
        assert 0 < weighted_kappa(cm) <= 1


class TestBootstrap:
    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(4)
        pairs = [(float(a), float(a + d)) for a, d in
                 zip(rng.integers(0, 50, 30), rng.integers(-3, 4, 30))]
        stat = lambda s: float(np.mean([b - a for a, b in s]))
        assert bootstrap_ci(pairs, stat, iterations=200, seed=9) == \
            bootstrap_ci(pairs, stat, iterations=200, seed=9)
        assert bootstrap_ci(pairs, stat, iterations=200, seed=9) != \
            bootstrap_ci(pairs, stat, iterations=200, seed=10)

    def test_constant_statistic_collapses_interval(self):
        pairs = [(i, i + 1.0) for i in range(20)]
        stat = lambda s: float(np.mean([b - a for a, b in s]))
        assert bootstrap_ci(pairs, stat, iterations=50, seed=0) == (1.0, 1.0)

    def test_degenerate_resamples_are_skipped(self):
        calls = {"skipped": 0}

        def stat(sample):
            if len({a for a, _ in sample}) == 1:
                calls["skipped"] += 1
                raise ZeroVariance("constant resample")
            return 0.5

        lo, hi = bootstrap_ci([(0, 0), (1, 1)], stat, iterations=64, seed=1)
        assert (lo, hi) == (0.5, 0.5)
        assert calls["skipped"] > 0

    def test_all_degenerate_raises(self):
        def stat(sample):
            raise ZeroVariance("never defined")
        with pytest.raises(ZeroVariance):
            bootstrap_ci([(0, 0), (1, 1)], stat, iterations=8, seed=1)

    def test_needs_two_pairs(self):
        with pytest.raises(ValueError):
            bootstrap_ci([(1, 1)], lambda s: 0.0)


class TestIccAgreement:
    def test_hand_value(self):
        # constant offset of 1 between raters over 1..4
        pairs = [(1, 2), (2, 3), (3, 4), (4, 5)]
        assert icc_agreement(pairs) == pytest.approx(10 / 13, abs=1e-9)

    def test_identity_is_one(self):
        assert icc_agreement([(1, 1), (2, 2), (3, 3)]) == pytest.approx(1.0)

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            icc_agreement([(2, 2), (2, 2), (2, 2)])

    def test_needs_three(self):
        with pytest.raises(ValueError):
            icc_agreement([(1, 2), (2, 3)])


class TestCorrelations:
    def test_linear(self):
        pearson, spearman = correlations([(1, 2), (2, 4), (3, 6), (4, 8)])
        assert pearson == pytest.approx(1.0, abs=1e-12)
        assert spearman == pytest.approx(1.0, abs=1e-12)

    def test_monotone_nonlinear(self):
        pairs = [(1, 1), (2, 4), (3, 9), (10, 100)]
        pearson, spearman = correlations(pairs)
        assert spearman == pytest.approx(1.0, abs=1e-12)
        assert pearson < 1.0

    def test_constant_input(self):
        with pytest.raises(ZeroVariance):
            correlations([(1, 5), (1, 6), (1, 7)])

    def test_needs_three(self):
        with pytest.raises(ValueError):
            correlations([(1, 2), (3, 4)])


class TestThresholdMetrics:
    def test_cell_assignment(self):
        pairs = [(0, 0), (0, 5), (5, 0), (5, 5)]
        m = threshold_metrics(pairs, threshold=1)
        assert (m.tp, m.fp, m.fn, m.tn) == (1, 1, 1, 1)
        assert m.accuracy == 0.5
        assert m.f1 == pytest.approx(0.5)

    def test_threshold_is_inclusive_on_prediction_and_reference(self):
        m = threshold_metrics([(100, 99), (100, 100)], threshold=100)
        assert (m.tp, m.fn) == (1, 1)

    def test_published_style_row(self):
        m = ThresholdMetrics.from_cells(tp=571, fp=25, fn=47, tn=106)
        assert m.percent_row() == {
            "accuracy": 90.4, "ppv": 95.8, "npv": 69.3,
            "sensitivity": 92.4, "specificity": 80.9, "f1": 94.1,
        }

    def test_zero_denominators_stay_none(self):
        m = ThresholdMetrics.from_cells(tp=3, fp=0, fn=0, tn=0)
        assert m.npv is None
        assert m.specificity is None
        assert m.percent_row()["npv"] is None
        assert m.accuracy == 1.0

    def test_empty_pairs(self):
        with pytest.raises(ValueError):
            threshold_metrics([], 1)

    @given(st.lists(st.tuples(st.integers(0, 500), st.integers(0, 500)),
                    min_size=1, max_size=40))
    def test_cells_partition_pairs(self, pairs):
        for threshold in (1, 100, 400):
            m = threshold_metrics(pairs, threshold)
            assert m.tp + m.fp + m.fn + m.tn == len(pairs)


class TestBlandAltman:
    def test_frozen_fixture(self):
        ba = bland_altman([(1, 2), (2, 2), (3, 5), (4, 5)])
        assert ba.mean_diff == pytest.approx(1.0, abs=1e-9)
        assert ba.sd_diff == pytest.approx(0.816496580927726, abs=1e-9)
        assert ba.lower == pytest.approx(-0.600333298618543, abs=1e-9)
        assert ba.upper == pytest.approx(2.600333298618543, abs=1e-9)
        assert ba.points[0] == (1.5, 1.0)
        assert ba.points[2] == (4.0, 2.0)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            bland_altman([(1, 1)])


def meta(manufacturer="Toshiba", sex="M", kvp=120):
    return SimpleNamespace(manufacturer=manufacturer, sex=sex, kvp=kvp)


class TestSubgroupEvaluate:
    def test_kvp_partitioning(self):
        items = [
            (0, 0, meta(kvp=120)),
            (150, 140, meta(kvp=120.0)),
            (500, 480, meta(kvp=135)),
            (20, 30, meta(kvp=None)),
        ]
        report = subgroup_evaluate(items, keys=("kvp",))
        assert set(report.tables["kvp"]) == {"120", "non120", "unknown"}
        assert report.tables["kvp"]["120"][1].tn == 1
        assert report.tables["kvp"]["non120"][400].tp == 1
        assert any("kvp: 1 items lack a value" in n for n in report.notes)

    def test_missing_partition_is_flagged(self):
        report = subgroup_evaluate([(0, 0, meta())], keys=("kvp",))
        assert any("no members in partition non120" in n
                   for n in report.notes)

    def test_categorical_keys(self):
        items = [
            (500, 500, meta(manufacturer="GE", sex="F")),
            (0, 0, meta(manufacturer="GE", sex="M")),
            (0, 30, meta(manufacturer=None, sex="M")),
        ]
        report = subgroup_evaluate(items, keys=("manufacturer", "sex"))
        assert set(report.tables["manufacturer"]) == {"GE", "unknown"}
        ge = report.tables["manufacturer"]["GE"]
        assert ge[1].tp == 1 and ge[1].tn == 1
        assert set(report.tables["sex"]) == {"F", "M"}
        assert report.tables["sex"]["M"][1].fp == 1
        assert report.tables["sex"]["M"][1].tn == 1

    def test_default_thresholds(self):
        report = subgroup_evaluate([(0, 0, meta())])
        assert set(report.tables["sex"]["M"]) == {1, 100, 400}
