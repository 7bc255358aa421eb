import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualkm.data import (
    DataFormatError,
    Dataset,
    encode_binary_labels,
    load_csv,
    load_dataset,
    load_libsvm,
    save_libsvm,
    synth_make,
    train_test_split,
    zscore_apply,
    zscore_fit,
)


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


# -- libsvm ----------------------------------------------------------------------


def test_libsvm_line(tmp_path):
    ds = load_libsvm(_write(tmp_path, "a.svm", "1 1:0.5 3:-2\n"))
    assert ds.y.tolist() == [1.0]
    assert ds.dense().tolist() == [[0.5, 0.0, -2.0]]


def test_libsvm_empty_feature_list(tmp_path):
    ds = load_libsvm(_write(tmp_path, "a.svm", "1 2:1\n-1\n"), n_features=3)
    assert ds.dense()[1].tolist() == [0.0, 0.0, 0.0]


def test_libsvm_comments_and_blank_lines(tmp_path):
    ds = load_libsvm(_write(tmp_path, "a.svm", "# header\n\n2.5 1:1 # trailing\n"))
    assert ds.n_samples == 1 and ds.y[0] == 2.5


@pytest.mark.parametrize(
    "text, line",
    [("1 1:0.5\n1 3:1 2:1\n", 2), ("1 1:x\n", 1), ("a 1:1\n", 1), ("1 0:1\n", 1), ("1 2\n", 1), ("1 2:1 2:3\n", 1)],
)
def test_libsvm_errors_carry_line_number(tmp_path, text, line):
    with pytest.raises(DataFormatError, match=f":{line}:"):
        load_libsvm(_write(tmp_path, "bad.svm", text))


def test_libsvm_index_beyond_dimension(tmp_path):
    with pytest.raises(DataFormatError):
        load_libsvm(_write(tmp_path, "a.svm", "1 5:1\n"), n_features=3)


@given(arrays(np.float64, (4, 3), elements=st.floats(-1e6, 1e6, allow_subnormal=False)), st.integers(0, 5))
def test_libsvm_round_trip_bit_exact(X, seed):
    import os
    import tempfile

    X = X.copy()
    X[np.random.default_rng(seed).random(X.shape) < 0.4] = 0.0
    y = np.random.default_rng(seed).standard_normal(4)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "r.svm")
        save_libsvm(path, Dataset(sp.csr_matrix(X), y))
        back = load_libsvm(path, n_features=3)
    assert back.dense().tobytes() == (X + 0.0).tobytes()
    assert back.y.tobytes() == y.tobytes()


# -- csv -------------------------------------------------------------------------


def test_csv_basic_and_header(tmp_path):
    ds = load_csv(_write(tmp_path, "a.csv", "1,2,3\n4,5,6\n"))
    assert ds.X.tolist() == [[1, 2], [4, 5]] and ds.y.tolist() == [3, 6]
    ds = load_csv(_write(tmp_path, "b.csv", "a,b,label\n1,2,3\n"))
    assert ds.feature_names == ("a", "b") and ds.X.tolist() == [[1, 2]]
    ds = load_csv(_write(tmp_path, "c.csv", "1e-3,7\n"))
    assert ds.X[0, 0] == 0.001


def test_csv_label_column_first(tmp_path):
    ds = load_csv(_write(tmp_path, "a.csv", "9,1,2\n8,3,4\n"), label_column=0)
    assert ds.y.tolist() == [9, 8] and ds.X.tolist() == [[1, 2], [3, 4]]


def test_csv_errors(tmp_path):
    with pytest.raises(DataFormatError, match=":2:"):
        load_csv(_write(tmp_path, "a.csv", "1,2,3\n4,5\n"))
    with pytest.raises(DataFormatError, match="non-numeric"):
        load_csv(_write(tmp_path, "b.csv", "1,2,3\n4,x,6\n"))


def test_csv_and_libsvm_agree(tmp_path):
    a = load_dataset(_write(tmp_path, "a.csv", "0.5,0,-2,1\n0,1.5,0,-1\n"))
    b = load_dataset(_write(tmp_path, "a.svm", "1 1:0.5 3:-2\n-1 2:1.5\n"), n_features=3)
    assert a.dense().tobytes() == b.dense().tobytes() and a.y.tobytes() == b.y.tobytes()


def test_csv_header_only(tmp_path):
    ds = load_dataset(_write(tmp_path, "h.csv", "a,b,y\n"), n_features=2)
    assert ds.n_samples == 0 and ds.n_features == 2


# -- z-score ---------------------------------------------------------------------


def test_zscore_examples():
    stats = zscore_fit(np.array([[1.0, 5.0], [3.0, 5.0]]))
    assert stats.mean.tolist() == [2.0, 5.0] and stats.std.tolist() == [1.0, 0.0]
    Z = zscore_apply(stats, np.array([[1.0, 5.0], [3.0, 5.0]]))
    assert Z.tolist() == [[-1.0, 0.0], [1.0, 0.0]]


def test_zscore_dimension_check():
    with pytest.raises(ValueError):
        zscore_apply(zscore_fit(np.ones((2, 2))), np.ones((2, 3)))


def test_zscore_sparse_input():
    X = sp.csr_matrix(np.array([[0.0, 2.0], [4.0, 0.0]]))
    Z = zscore_apply(zscore_fit(X), X)
    assert Z.tolist() == [[-1.0, 1.0], [1.0, -1.0]]


@given(arrays(np.float64, (7, 3), elements=st.floats(-1e3, 1e3)))
def test_zscore_standardizes(X):
    Z = zscore_apply(zscore_fit(X), X)
    assert np.all(np.abs(Z.mean(axis=0)) <= 1e-10)
    varying = X.std(axis=0) > 1e-6 * (1 + np.abs(X).max(axis=0))
    assert np.allclose(Z.var(axis=0)[varying], 1.0, atol=1e-6)
    assert np.all(Z[:, X.std(axis=0) == 0] == 0)


# -- splitting and labels --------------------------------------------------------


def test_split_sizes_and_determinism():
    ds = synth_make("sinusoid", 10, 2, seed=0)
    tr, te = train_test_split(ds, 0.9, seed=3)
    assert (tr.n_samples, te.n_samples) == (9, 1)
    tr2, te2 = train_test_split(ds, 0.9, seed=3)
    assert tr.X.tobytes() == tr2.X.tobytes() and te.y.tobytes() == te2.y.tobytes()
    assert sorted(np.concatenate([tr.y, te.y]).tolist()) == sorted(ds.y.tolist())


def test_split_errors():
    ds = synth_make("sinusoid", 3, 1)
    with pytest.raises(ValueError):
        train_test_split(ds, 0.0)
    with pytest.raises(ValueError):
        train_test_split(ds, 0.1)


def test_binary_label_encoding():
    with pytest.warns(UserWarning):
        y, classes = encode_binary_labels([0, 1, 1])
    assert y.tolist() == [-1, 1, 1] and classes == (0.0, 1.0)
    with pytest.raises(ValueError):
        encode_binary_labels([1, 2, 3])


# -- synthetic -------------------------------------------------------------------


def test_synthetic_generators():
    a = synth_make("two_gaussians", 200, 3, seed=1)
    b = synth_make("two_gaussians", 200, 3, seed=1)
    assert a.X.tobytes() == b.X.tobytes()
    # means 6 apart with unit variance: the midpoint rule is nearly perfect
    assert np.mean(np.sign(a.X[:, 0]) == a.y) > 0.99
    lin = synth_make("linear_regression_noise", 30, 4, seed=2, noise=0.0)
    coef, *_ = np.linalg.lstsq(lin.X, lin.y, rcond=None)
    np.testing.assert_allclose(lin.X @ coef, lin.y, atol=1e-12)
    s = synth_make("sinusoid", 20, 1, seed=0, noise=0.0)
    np.testing.assert_allclose(s.y, np.sin(2 * s.X[:, 0]))
    with pytest.raises(ValueError):
        synth_make("spiral", 10, 2)
    with pytest.raises(ValueError):
        synth_make("sinusoid", 0, 2)
