import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsva.core import (Dataset, ExpressionMatrix, OutcomeLabels, ParseError, align_features,
                       encode_design, read_labels, read_matrix, write_matrix)


def test_encode_design_two_class():
    d = encode_design(OutcomeLabels((1, 1, 0, 0), (0, 1)))
    np.testing.assert_array_equal(d.values, [[1, 1, 1, 1], [1, 1, 0, 0]])
    assert d.includes_intercept and d.p1 == 2


def test_encode_design_three_class():
    d = encode_design(OutcomeLabels(("a", "b", "c", "a")))
    assert d.values.shape == (3, 4)
    assert np.linalg.matrix_rank(d.values) == 3
    np.testing.assert_array_equal(d.values[0], 1.0)


def test_encode_design_single_class_rejected():
    with pytest.raises(ValueError, match="degenerate design"):
        encode_design(OutcomeLabels((0, 0, 0)))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5).flatmap(
    lambda k: st.lists(st.integers(0, k - 1), min_size=k, max_size=30)))
def test_encode_design_full_rank(labels):
    if len(set(labels)) < 2:
        return
    d = encode_design(OutcomeLabels(tuple(labels)))
    assert np.linalg.matrix_rank(d.values) == d.p1 == len(set(labels))


def test_expression_matrix_invariants():
    with pytest.raises(ValueError, match="non-finite"):
        ExpressionMatrix.from_array([[1.0, np.nan]])
    with pytest.raises(ValueError, match="duplicate feature"):
        ExpressionMatrix(np.zeros((2, 1)), ("a", "a"), ("s",))
    with pytest.raises(ValueError, match="do not match"):
        ExpressionMatrix(np.zeros((2, 1)), ("a",), ("s",))
    e = ExpressionMatrix.from_array(np.ones((2, 3)))
    with pytest.raises(ValueError):
        e.values[0, 0] = 5.0


def test_labels_invariants():
    with pytest.raises(ValueError, match="not in class_set"):
        OutcomeLabels((0, 2), (0, 1))
    with pytest.raises(ValueError, match="no samples"):
        OutcomeLabels((0, 0), (0, 1))
    with pytest.raises(ValueError, match="outcome labels"):
        Dataset(ExpressionMatrix.from_array(np.ones((2, 3))), OutcomeLabels((0, 1)))


def _write(tmp_path, text, name="m.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_read_matrix_well_formed(tmp_path):
    p = _write(tmp_path, "feature_id\ts1\ts2\ng1\t1\t2\ng2\t3.5\t-4\ng3\t0\t1e-3\n")
    e = read_matrix(p)
    assert e.shape == (3, 2)
    assert e.sample_ids == ("s1", "s2")
    np.testing.assert_array_equal(e.values, [[1, 2], [3.5, -4], [0, 1e-3]])


def test_read_matrix_comma_autodetect(tmp_path):
    p = _write(tmp_path, "feature_id,a,b\nx,1,2\n", "m.csv")
    assert read_matrix(p).sample_ids == ("a", "b")


def test_read_matrix_duplicate_feature(tmp_path):
    p = _write(tmp_path, "feature_id\ts1\ng1\t1\ng1\t2\n")
    with pytest.raises(ParseError, match="duplicate feature id 'g1'"):
        read_matrix(p)


def test_read_matrix_na_cell_names_location(tmp_path):
    p = _write(tmp_path, "feature_id\ts1\ts2\ng1\t1\t2\ng2\tNA\t4\n")
    with pytest.raises(ParseError, match=r"line 3, column 2 .*'s1'.*'NA'"):
        read_matrix(p)


def test_read_matrix_ragged(tmp_path):
    p = _write(tmp_path, "feature_id\ts1\ts2\ng1\t1\n")
    with pytest.raises(ParseError, match="line 2"):
        read_matrix(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_matrix_round_trip(tmp_path_factory, m, n, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(scale=10.0 ** rng.integers(-8, 8), size=(m, n))
    e = ExpressionMatrix.from_array(vals)
    p = tmp_path_factory.mktemp("rt") / "m.tsv"
    write_matrix(e, p)
    back = read_matrix(p)
    assert back == e
    write_matrix(back, p)
    assert read_matrix(p) == e


def test_read_labels_joined_by_id(tmp_path):
    p = _write(tmp_path, "sample_id\tlabel\ns2\tb\ns1\ta\n", "l.tsv")
    assert read_labels(p, ("s1", "s2")).labels == ("a", "b")
    with pytest.raises(ParseError, match="no label"):
        read_labels(p, ("s1", "s3"))


def test_align_features():
    train = ("a", "b", "c")
    shuffled = ExpressionMatrix(np.array([[3.0], [1.0], [2.0]]), ("c", "a", "b"), ("s",))
    out = align_features(train, shuffled)
    assert out.feature_ids == train
    np.testing.assert_array_equal(out.values[:, 0], [1, 2, 3])

    sup = ExpressionMatrix(np.array([[9.0], [3.0], [1.0], [2.0]]), ("z", "c", "a", "b"), ("s",))
    np.testing.assert_array_equal(align_features(train, sup).values[:, 0], [1, 2, 3])

    with pytest.raises(ValueError, match="missing"):
        align_features(train, ExpressionMatrix(np.ones((2, 1)), ("a", "b"), ("s",)))


@settings(max_examples=40, deadline=None)
@given(st.permutations(list("abcdefg")), st.integers(0, 3))
def test_align_idempotent(order, extra):
    train = tuple("abcdef")
    ids = [f for f in order if f in train or extra > 0]
    e = ExpressionMatrix.from_array(np.arange(len(ids), dtype=float)[:, None], feature_ids=ids)
    once = align_features(train, e)
    assert align_features(train, once) == once
