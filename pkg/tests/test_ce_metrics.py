import pytest
from hypothesis import given
from hypothesis import strategies as st

from radjudge.ce_metrics import ce_scores, per_case_ce_scores
from radjudge.errors import CaseMismatch, UnknownObservation
from radjudge.models import CHEXPERT_OBSERVATIONS, ObservationLabels


def labels(cid, *names):
    return ObservationLabels(cid, frozenset(names))


def test_identity():
    s = ce_scores([labels("c", "Edema")], [labels("c", "Edema")])
    assert (s.accuracy, s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0, 1.0)


def test_hand_example():
    s = ce_scores([labels("c", "Edema")], [labels("c", "Edema", "Pneumonia")])
    assert s.accuracy == pytest.approx(13 / 14, abs=1e-12)
    assert s.precision == 1.0
    assert s.recall == 0.5
    assert s.f1 == pytest.approx(2 / 3, abs=1e-12)


def test_empty_predictions():
    s = ce_scores([labels("a"), labels("b")], [labels("a", "Edema"), labels("b", "Pneumonia", "Fracture")])
    assert (s.precision, s.recall, s.f1) == (0.0, 0.0, 0.0)
    assert s.accuracy == pytest.approx(25 / 28, abs=1e-12)


def test_micro_average_pools_cells():
    pred = [labels("a", "Edema"), labels("b", "Edema", "Fracture")]
    ref = [labels("a", "Edema"), labels("b", "Pneumonia")]
    s = ce_scores(pred, ref)
    assert s.precision == pytest.approx(1 / 3)
    assert s.recall == pytest.approx(1 / 2)


def test_case_mismatch():
    with pytest.raises(CaseMismatch):
        ce_scores([labels("a")], [labels("b")])


def test_unknown_observation():
    with pytest.raises(UnknownObservation):
        ce_scores([labels("a", "Broken Heart")], [labels("a")])


def test_per_case():
    out = per_case_ce_scores([labels("a", "Edema"), labels("b")], [labels("a", "Edema"), labels("b", "Edema")])
    assert out["a"].f1 == 1.0 and out["b"].recall == 0.0


label_sets = st.lists(st.frozensets(st.sampled_from(CHEXPERT_OBSERVATIONS)), min_size=1, max_size=6)


@given(label_sets, label_sets)
def test_swap_symmetry_and_range(p, r):
    n = min(len(p), len(r))
    pred = [ObservationLabels(str(i), p[i]) for i in range(n)]
    ref = [ObservationLabels(str(i), r[i]) for i in range(n)]
    a, b = ce_scores(pred, ref), ce_scores(ref, pred)
    assert a.accuracy == pytest.approx(b.accuracy)
    assert a.precision == pytest.approx(b.recall) and a.recall == pytest.approx(b.precision)
    for v in a.as_dict().values():
        assert 0.0 <= v <= 1.0
    if a.precision + a.recall:
        assert a.f1 == pytest.approx(2 * a.precision * a.recall / (a.precision + a.recall))
