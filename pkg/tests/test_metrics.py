import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualkm.metrics import accuracy, evaluate, relative_error, rmse, roc_auc


def test_perfect_predictions():
    y = np.array([1.0, -2.0, 3.0])
    assert rmse(y, y) == 0 and relative_error(y, y) == 0 and accuracy(y, y) == 1


def test_formulas():
    assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))
    assert relative_error([3, 4], [0, 0]) == 1.0
    assert accuracy([1, -1, 1, 1], [1, 1, 1, -1]) == 0.5


def test_auc_examples():
    assert roc_auc([-1, -1, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75
    assert roc_auc([0, 0, 1], [0.1, 0.2, 0.9]) == 1.0
    assert roc_auc([-1, 1], [0.5, 0.5]) == 0.5


def test_metric_errors():
    with pytest.raises(ValueError):
        rmse([], [])
    with pytest.raises(ValueError):
        rmse([1, 2], [1])
    with pytest.raises(ValueError):
        roc_auc([1, 1, 1], [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        relative_error([0, 0], [1, 1])
    with pytest.raises(ValueError):
        evaluate([1], [1], ["f1"])


@given(st.lists(st.tuples(st.booleans(), st.integers(-5, 5)), min_size=2, max_size=30))
def test_auc_matches_pair_enumeration(pairs):
    labels = np.array([1.0 if b else -1.0 for b, _ in pairs])
    scores = np.array([float(s) for _, s in pairs])
    if len(np.unique(labels)) < 2:
        return
    pos, neg = scores[labels > 0], scores[labels < 0]
    ref = np.mean([(p > q) + 0.5 * (p == q) for p in pos for q in neg])
    assert roc_auc(labels, scores) == pytest.approx(ref, abs=1e-12)
