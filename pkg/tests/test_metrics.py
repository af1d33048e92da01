import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import f1_score

from tcmatch.exceptions import ShapeError
from tcmatch.metrics import accuracy, confusion_matrix, macro_f1, micro_f1, per_class_f1

from metric_oracle import brute_force_metrics, expand


def test_perfect_diagonal():
    assert macro_f1(np.diag([3, 4, 5])) == 1.0


def test_two_class_half_confusion():
    assert macro_f1([[1, 1], [1, 1]]) == 0.5


def test_single_class_predictor_on_balanced_four_classes():
    cm = np.zeros((4, 4), dtype=int)
    cm[:, 0] = 5
    assert accuracy(cm) == 0.25
    np.testing.assert_allclose(per_class_f1(cm), [0.4, 0, 0, 0])
    assert macro_f1(cm) == pytest.approx(0.1, abs=1e-15)


def test_absent_class_scores_zero():
    cm = np.array([[2, 0], [0, 0]])
    np.testing.assert_array_equal(per_class_f1(cm), [1.0, 0.0])


def test_non_square_rejected():
    with pytest.raises(ShapeError):
        macro_f1(np.zeros((2, 3)))


def test_confusion_matrix_orientation():
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 0], 3)
    np.testing.assert_array_equal(cm, [[1, 1, 0], [0, 1, 0], [1, 0, 0]])


def test_hundred_random_matrices_match_brute_force_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        cm = rng.integers(0, 6, size=(n, n))
        cm[rng.random(size=(n, n)) < 0.3] = 0
        if cm.sum() == 0:
            cm[0, 0] = 1
        ref = brute_force_metrics(cm.tolist())
        assert abs(macro_f1(cm) - ref["macro_f1"]) <= 1e-12
        assert abs(micro_f1(cm) - ref["micro_f1"]) <= 1e-12
        assert abs(accuracy(cm) - ref["accuracy"]) <= 1e-12
        truth, pred = expand(cm.tolist())
        sk = f1_score(truth, pred, labels=list(range(n)), average="macro", zero_division=0)
        assert abs(macro_f1(cm) - sk) <= 1e-12


@given(arrays(np.int64, st.tuples(st.integers(1, 6)).map(lambda t: (t[0], t[0])), elements=st.integers(0, 20)))
def test_metrics_bounded(cm):
    for metric in (macro_f1, micro_f1, accuracy):
        assert 0.0 <= metric(cm) <= 1.0
    assert micro_f1(cm) == pytest.approx(accuracy(cm), abs=1e-15)
