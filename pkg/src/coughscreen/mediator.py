"""Risk-averse fusion of the three classifier outputs.

A definitive result needs unanimity after collapsing the multi-class
labels to covid / not-covid; any dissent yields "inconclusive".  The
closed-form outcome analysis turns per-classifier sensitivities and
specificities into the six conditional outcome probabilities, each dressed
with a dependence coefficient (1.0 = full independence assumption).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .classifiers import (
    BinaryClass,
    BinaryLabel,
    DiagnosisClass,
    DiagnosisLabel,
)


class MediatorError(Exception):
    pass


class AllZeroWeights(MediatorError):
    pass


class TooFewSamples(MediatorError):
    pass


class OutOfRangeInput(MediatorError):
    pass


class AppResult(Enum):
    COVID_LIKELY = "covid_likely"
    COVID_NOT_LIKELY = "covid_not_likely"
    INCONCLUSIVE = "inconclusive"
    NOT_A_COUGH = "not_a_cough"


@dataclass(frozen=True)
class ClassifierOutputs:
    k1: DiagnosisLabel  # four-class transfer CNN
    k2: DiagnosisLabel  # feature-vector SVM
    k3: BinaryLabel  # binary transfer CNN


@dataclass(frozen=True)
class MediatorReport:
    """Conditional outcome probabilities of the fused decision.

    Columns condition on the subject truly having covid (C) or not (C').
    conditional_sum is p_inconclusive_given_covid + p_inconclusive_given_not,
    the headline inconclusive rate under the two conditionals.
    """

    p_covid_given_covid: float
    p_covid_given_not: float
    p_not_given_not: float
    p_not_given_covid: float
    p_inconclusive_given_covid: float
    p_inconclusive_given_not: float
    d: tuple
    conditional_sum: float


def _collapse(label) -> bool:
    """True when the label points at covid."""
    if isinstance(label, DiagnosisLabel):
        return label.value is DiagnosisClass.COVID19
    if isinstance(label, BinaryLabel):
        return label.value is BinaryClass.COVID
    if isinstance(label, (DiagnosisClass, BinaryClass)):
        return label in (DiagnosisClass.COVID19, BinaryClass.COVID)
    raise MediatorError(f"cannot collapse {label!r}")


def mediate(outputs: ClassifierOutputs) -> AppResult:
    """Unanimity-after-collapse veto rule; never returns NOT_A_COUGH."""
    says_covid = (_collapse(outputs.k1), _collapse(outputs.k2), _collapse(outputs.k3))
    if all(says_covid):
        return AppResult.COVID_LIKELY
    if not any(says_covid):
        return AppResult.COVID_NOT_LIKELY
    return AppResult.INCONCLUSIVE


def mediate_majority(labels, weights) -> AppResult:
    """Weighted covid / not-covid vote; an exact tie is inconclusive."""
    if len(labels) != len(weights) or len(labels) == 0:
        raise MediatorError("labels and weights must be same nonzero length")
    if any(w < 0 for w in weights):
        raise MediatorError("weights must be nonnegative")
    if all(w == 0 for w in weights):
        raise AllZeroWeights("at least one weight must be positive")
    covid_mass = sum(w for label, w in zip(labels, weights) if _collapse(label))
    other_mass = sum(w for label, w in zip(labels, weights) if not _collapse(label))
    if covid_mass > other_mass:
        return AppResult.COVID_LIKELY
    if other_mass > covid_mass:
        return AppResult.COVID_NOT_LIKELY
    return AppResult.INCONCLUSIVE


def multi_sample_vote(results) -> AppResult:
    """Strict majority over per-clip outcomes from one subject."""
    results = list(results)
    if len(results) < 3:
        raise TooFewSamples(f"need >= 3 results, got {len(results)}")
    if any(r is AppResult.NOT_A_COUGH for r in results):
        raise MediatorError("not-a-cough entries must be excluded upstream")
    counts = {
        kind: sum(1 for r in results if r is kind)
        for kind in (AppResult.COVID_LIKELY, AppResult.COVID_NOT_LIKELY, AppResult.INCONCLUSIVE)
    }
    best = max(counts.values())
    winners = [kind for kind, c in counts.items() if c == best]
    if len(winners) == 1 and best * 2 > len(results):
        return winners[0]
    return AppResult.INCONCLUSIVE


def independence_analysis(
    sensitivities, specificities, d=(1.0,) * 6
) -> MediatorReport:
    """Closed-form outcome probabilities for three veto-fused classifiers.

    With dependence coefficients d1..d6 all 1, the definitive outcomes are
    plain products of the per-classifier conditionals and each conditional
    column sums to one.
    """
    sens = tuple(float(s) for s in sensitivities)
    spec = tuple(float(s) for s in specificities)
    d = tuple(float(x) for x in d)
    if len(sens) != 3 or len(spec) != 3:
        raise OutOfRangeInput("need exactly three sensitivity/specificity pairs")
    if len(d) != 6:
        raise OutOfRangeInput("need exactly six dependence coefficients")
    for value in sens + spec:
        if not 0.0 <= value <= 1.0:
            raise OutOfRangeInput(f"probability {value} outside [0, 1]")

    prod_sens = sens[0] * sens[1] * sens[2]
    prod_false_pos = (1 - spec[0]) * (1 - spec[1]) * (1 - spec[2])
    prod_spec = spec[0] * spec[1] * spec[2]
    prod_false_neg = (1 - sens[0]) * (1 - sens[1]) * (1 - sens[2])

    p_c_c = prod_sens * d[0]
    p_c_cp = prod_false_pos * d[1]
    p_cp_cp = prod_spec * d[2]
    p_cp_c = prod_false_neg * d[3]
    # inconclusive mass recomputed from the undressed products so the d=1
    # columns stay exact complements
    p_i_c = (1.0 - prod_sens - prod_false_neg) * d[4]
    p_i_cp = (1.0 - prod_false_pos - prod_spec) * d[5]

    return MediatorReport(
        p_covid_given_covid=p_c_c,
        p_covid_given_not=p_c_cp,
        p_not_given_not=p_cp_cp,
        p_not_given_covid=p_cp_c,
        p_inconclusive_given_covid=p_i_c,
        p_inconclusive_given_not=p_i_cp,
        d=d,
        conditional_sum=p_i_c + p_i_cp,
    )


def report_rows(report: MediatorReport) -> list[tuple[str, float]]:
    """Six (event description, probability) rows in presentation order."""
    return [
        ("reports 'COVID-19 likely' and the subject has COVID-19", report.p_covid_given_covid),
        ("reports 'COVID-19 likely' and the subject does not have COVID-19", report.p_covid_given_not),
        ("reports 'COVID-19 not likely' and the subject does not have COVID-19", report.p_not_given_not),
        ("reports 'COVID-19 not likely' and the subject has COVID-19", report.p_not_given_covid),
        ("reports 'test inconclusive' and the subject has COVID-19", report.p_inconclusive_given_covid),
        ("reports 'test inconclusive' and the subject does not have COVID-19", report.p_inconclusive_given_not),
    ]
