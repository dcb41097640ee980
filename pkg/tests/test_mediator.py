import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coughscreen.classifiers import (
    BinaryClass,
    BinaryLabel,
    DiagnosisClass,
    DiagnosisLabel,
)
from coughscreen.mediator import (
    AllZeroWeights,
    AppResult,
    ClassifierOutputs,
    MediatorError,
    MediatorReport,
    OutOfRangeInput,
    TooFewSamples,
    independence_analysis,
    mediate,
    mediate_majority,
    multi_sample_vote,
    report_rows,
)


def diag(cls):
    probs = np.zeros(4)
    probs[list(DiagnosisClass).index(cls)] = 1.0
    return DiagnosisLabel(value=cls, probabilities=probs)


def binary(cls):
    return BinaryLabel(value=cls, probability=1.0)


COVID = DiagnosisClass.COVID19
PERT = DiagnosisClass.PERTUSSIS
BRON = DiagnosisClass.BRONCHITIS
NORM = DiagnosisClass.NORMAL


class TestMediate:
    def test_unanimous_covid(self):
        out = mediate(ClassifierOutputs(diag(COVID), diag(COVID), binary(BinaryClass.COVID)))
        assert out is AppResult.COVID_LIKELY

    def test_unanimous_not_covid_across_classes(self):
        out = mediate(ClassifierOutputs(diag(PERT), diag(BRON), binary(BinaryClass.NOT_COVID)))
        assert out is AppResult.COVID_NOT_LIKELY

    def test_dissent_is_inconclusive(self):
        out = mediate(ClassifierOutputs(diag(COVID), diag(NORM), binary(BinaryClass.COVID)))
        assert out is AppResult.INCONCLUSIVE

    def test_exhaustive_32_combinations(self):
        for k1, k2, k3 in itertools.product(DiagnosisClass, DiagnosisClass, BinaryClass):
            got = mediate(ClassifierOutputs(diag(k1), diag(k2), binary(k3)))
            flags = (k1 is COVID, k2 is COVID, k3 is BinaryClass.COVID)
            if all(flags):
                expected = AppResult.COVID_LIKELY
            elif not any(flags):
                expected = AppResult.COVID_NOT_LIKELY
            else:
                expected = AppResult.INCONCLUSIVE
            assert got is expected
            assert got is not AppResult.NOT_A_COUGH


class TestMajority:
    def test_two_to_one(self):
        labels = [BinaryClass.COVID, BinaryClass.COVID, BinaryClass.NOT_COVID]
        assert mediate_majority(labels, [1, 1, 1]) is AppResult.COVID_LIKELY

    def test_exact_tie_inconclusive(self):
        labels = [BinaryClass.COVID, BinaryClass.NOT_COVID]
        assert mediate_majority(labels, [1, 1]) is AppResult.INCONCLUSIVE

    def test_weighted_override(self):
        labels = [BinaryClass.COVID, BinaryClass.NOT_COVID, BinaryClass.NOT_COVID]
        assert mediate_majority(labels, [5, 1, 1]) is AppResult.COVID_LIKELY

    def test_all_zero_weights_rejected(self):
        with pytest.raises(AllZeroWeights):
            mediate_majority([BinaryClass.COVID], [0.0])

    @given(st.lists(st.floats(min_value=0.01, max_value=10.0), min_size=3, max_size=3))
    def test_agrees_with_veto_on_unanimity(self, weights):
        labels = [BinaryClass.COVID] * 3
        assert mediate_majority(labels, weights) is AppResult.COVID_LIKELY
        veto = mediate(ClassifierOutputs(diag(COVID), diag(COVID), binary(BinaryClass.COVID)))
        assert veto is AppResult.COVID_LIKELY


class TestMultiSampleVote:
    def test_majority_with_inconclusive(self):
        votes = [AppResult.COVID_LIKELY, AppResult.COVID_LIKELY, AppResult.INCONCLUSIVE]
        assert multi_sample_vote(votes) is AppResult.COVID_LIKELY

    def test_no_majority(self):
        votes = [AppResult.COVID_LIKELY, AppResult.COVID_NOT_LIKELY, AppResult.INCONCLUSIVE]
        assert multi_sample_vote(votes) is AppResult.INCONCLUSIVE

    def test_unanimous_negative(self):
        votes = [AppResult.COVID_NOT_LIKELY] * 3
        assert multi_sample_vote(votes) is AppResult.COVID_NOT_LIKELY

    def test_too_few_rejected(self):
        with pytest.raises(TooFewSamples):
            multi_sample_vote([AppResult.COVID_LIKELY, AppResult.COVID_LIKELY])

    def test_not_a_cough_must_be_excluded_upstream(self):
        votes = [AppResult.COVID_LIKELY, AppResult.NOT_A_COUGH, AppResult.COVID_LIKELY]
        with pytest.raises(MediatorError):
            multi_sample_vote(votes)

    def test_five_way_strict_majority(self):
        votes = [AppResult.COVID_LIKELY] * 3 + [AppResult.INCONCLUSIVE] * 2
        assert multi_sample_vote(votes) is AppResult.COVID_LIKELY
        votes = [AppResult.COVID_LIKELY] * 2 + [AppResult.INCONCLUSIVE] * 2 + [
            AppResult.COVID_NOT_LIKELY
        ]
        assert multi_sample_vote(votes) is AppResult.INCONCLUSIVE


# per-classifier (sensitivity, specificity) conditionals reported for the
# three classifiers; the first set is the published equation operands, the
# second the table re-readings (they differ in the third decimal)
EQUATION_OPERANDS = ((0.891, 0.917, 0.946), (0.966, 0.952, 0.911))
TABLE_READINGS = ((0.891, 0.917, 0.946), (0.967, 0.953, 0.911))


class TestIndependenceAnalysis:
    def test_reproduces_published_products(self):
        sens, spec = EQUATION_OPERANDS
        report = independence_analysis(sens, spec)
        assert abs(report.p_covid_given_covid - 0.773) < 1e-3
        assert abs(report.p_not_given_not - 0.838) < 1e-3
        assert abs(report.p_covid_given_not - 1.365e-4) < 1e-3
        assert abs(report.p_not_given_covid - 4.782e-4) < 1e-3

    def test_exact_arithmetic_on_table_readings(self):
        sens, spec = TABLE_READINGS
        report = independence_analysis(sens, spec)
        assert abs(report.p_covid_given_covid - 0.772926462) < 1e-9
        assert abs(report.p_not_given_not - 0.839532961) < 1e-9
        assert abs(report.p_covid_given_not - 0.033 * 0.047 * 0.089) < 1e-12
        assert abs(report.p_not_given_covid - 0.109 * 0.083 * 0.054) < 1e-12
        assert abs(report.conditional_sum - 0.386914) < 1e-6

    def test_perfect_classifiers(self):
        report = independence_analysis((1, 1, 1), (1, 1, 1))
        assert report.p_covid_given_covid == 1.0
        assert report.p_not_given_not == 1.0
        assert report.p_covid_given_not == 0.0
        assert report.p_not_given_covid == 0.0
        assert report.p_inconclusive_given_covid == 0.0
        assert report.p_inconclusive_given_not == 0.0

    def test_coin_flip_classifiers(self):
        report = independence_analysis((0.5, 0.5, 0.5), (0.5, 0.5, 0.5))
        assert abs(report.p_covid_given_covid - 0.125) < 1e-12
        assert abs(report.p_inconclusive_given_covid - 0.75) < 1e-12
        assert abs(report.p_inconclusive_given_not - 0.75) < 1e-12

    @given(
        st.tuples(*[st.floats(min_value=0, max_value=1)] * 3),
        st.tuples(*[st.floats(min_value=0, max_value=1)] * 3),
    )
    def test_columns_sum_to_one_at_unit_dependence(self, sens, spec):
        report = independence_analysis(sens, spec)
        covid_col = (
            report.p_covid_given_covid
            + report.p_not_given_covid
            + report.p_inconclusive_given_covid
        )
        not_col = (
            report.p_covid_given_not
            + report.p_not_given_not
            + report.p_inconclusive_given_not
        )
        assert abs(covid_col - 1.0) < 1e-12
        assert abs(not_col - 1.0) < 1e-12

    @given(
        st.floats(min_value=0.0, max_value=0.9),
        st.floats(min_value=0.001, max_value=0.1),
        st.tuples(*[st.floats(min_value=0.1, max_value=1)] * 2),
    )
    def test_sensitivity_monotonicity(self, s1, bump, rest):
        spec = (0.9, 0.8, 0.7)
        lo = independence_analysis((s1, *rest), spec)
        hi = independence_analysis((min(s1 + bump, 1.0), *rest), spec)
        assert hi.p_covid_given_covid >= lo.p_covid_given_covid - 1e-15
        assert hi.p_not_given_covid <= lo.p_not_given_covid + 1e-15

    def test_dependence_coefficients_scale_rows(self):
        sens, spec = EQUATION_OPERANDS
        base = independence_analysis(sens, spec)
        dressed = independence_analysis(sens, spec, d=(0.9, 1.1, 0.8, 1.2, 0.5, 2.0))
        assert abs(dressed.p_covid_given_covid - 0.9 * base.p_covid_given_covid) < 1e-12
        assert abs(dressed.p_not_given_not - 0.8 * base.p_not_given_not) < 1e-12
        assert abs(
            dressed.p_inconclusive_given_covid - 0.5 * base.p_inconclusive_given_covid
        ) < 1e-12

    def test_out_of_range_rejected(self):
        with pytest.raises(OutOfRangeInput):
            independence_analysis((1.2, 0.5, 0.5), (0.5, 0.5, 0.5))
        with pytest.raises(OutOfRangeInput):
            independence_analysis((0.5, 0.5), (0.5, 0.5, 0.5))
        with pytest.raises(OutOfRangeInput):
            independence_analysis((0.5,) * 3, (0.5,) * 3, d=(1.0,) * 5)

    def test_report_rows_order(self):
        report = independence_analysis(*EQUATION_OPERANDS)
        rows = report_rows(report)
        assert len(rows) == 6
        assert rows[0][1] == report.p_covid_given_covid
        assert rows[5][1] == report.p_inconclusive_given_not
