import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmfkit.core import MaskedMatrix
from bmfkit.dataio import (
    load_array,
    load_dense,
    load_matrix,
    load_triplets,
    load_vector,
    save_array,
    save_dense,
    save_triplets,
)
from bmfkit.errors import EmptyMaskError, ParseError, ShapeError

DATA = Path(__file__).parent / "data"


def write(tmp_path, text, name="m.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_triplets_zero_based_example(tmp_path):
    A = load_triplets(write(tmp_path, "0,0,5\n1,2,3\n"))
    assert A.shape == (2, 3)
    assert A.n_observed == 2
    assert A.values[0, 0] == 5.0 and A.values[1, 2] == 3.0
    assert not A.mask[0, 1]


def test_triplets_one_based_detection(tmp_path):
    A = load_triplets(write(tmp_path, "1,1,5\n2,3,3\n"))
    assert A.shape == (2, 3)
    assert A.mask[0, 0] and A.mask[1, 2]


def test_triplets_comments_and_blank_lines(tmp_path):
    A = load_triplets(write(tmp_path, "# header\n\n0,1,2.5\n"))
    assert A.shape == (1, 2) and A.n_observed == 1


def test_triplets_errors(tmp_path):
    with pytest.raises(EmptyMaskError):
        load_triplets(write(tmp_path, ""))
    with pytest.raises(ParseError, match=":2:"):
        load_triplets(write(tmp_path, "0,0,1\n0,1\n"))
    with pytest.raises(ParseError, match=":1:"):
        load_triplets(write(tmp_path, "0,x,1\n"))
    with pytest.raises(ParseError):
        load_triplets(write(tmp_path, "-1,0,1\n"))


def test_triplets_duplicate_keeps_last(tmp_path):
    p = write(tmp_path, "0,0,1\n1,1,2\n0,0,7\n")
    with pytest.warns(UserWarning, match="duplicate"):
        A = load_triplets(p)
    assert A.values[0, 0] == 7.0
    assert A.n_observed == 2


@pytest.mark.parametrize("one_based", [False, True])
def test_triplets_round_trip(tmp_path, one_based):
    rng = np.random.default_rng(3)
    mask = np.zeros((20, 15), dtype=bool)
    mask.flat[rng.choice(mask.size, 100, replace=False)] = True
    mask[0, 0] = mask[-1, -1] = True
    A = MaskedMatrix(rng.standard_normal(mask.shape), mask)
    p = tmp_path / "t.csv"
    save_triplets(p, A, one_based=one_based)
    assert len(p.read_text().splitlines()) == mask.sum()
    B = load_triplets(p)
    np.testing.assert_array_equal(B.mask, A.mask)
    np.testing.assert_array_equal(B.values[B.mask], A.values[A.mask])


def test_dense_na_example(tmp_path):
    A = load_dense(write(tmp_path, "1 2\n3 NA\n"))
    assert A.shape == (2, 2) and A.n_observed == 3
    assert not A.mask[1, 1]


def test_dense_errors(tmp_path):
    with pytest.raises(ShapeError, match=":2:"):
        load_dense(write(tmp_path, "1 2 3\n4 5\n"))
    with pytest.raises(ParseError):
        load_dense(write(tmp_path, "1 abc\n"))
    with pytest.raises(EmptyMaskError):
        load_dense(write(tmp_path, "\n"))
    with pytest.raises(EmptyMaskError):
        load_dense(write(tmp_path, "NA NA\n"))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_dense_round_trip_is_exact(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((4, 5)) * 10.0 ** rng.integers(-8, 8, (4, 5))
    mask = rng.random((4, 5)) < 0.7
    mask[0, 0] = True
    A = MaskedMatrix(vals, mask)
    p = tmp_path_factory.mktemp("d") / "m.txt"
    save_dense(p, A)
    B = load_dense(p)
    np.testing.assert_array_equal(B.mask, A.mask)
    np.testing.assert_array_equal(B.values[B.mask], A.values[A.mask])


def test_array_round_trip_is_exact(tmp_path):
    X = np.random.default_rng(0).standard_normal((6, 3)) * 1e-7
    save_array(tmp_path / "x.txt", X)
    np.testing.assert_array_equal(load_array(tmp_path / "x.txt"), X)
    save_array(tmp_path / "r.txt", X[0])
    assert load_array(tmp_path / "r.txt").shape == (1, 3)


def test_load_vector(tmp_path):
    np.testing.assert_array_equal(load_vector(write(tmp_path, "1 2\n3.5\n")), [1.0, 2.0, 3.5])
    with pytest.raises(ParseError):
        load_vector(write(tmp_path, "1 b\n"))


def test_load_matrix_dispatch(tmp_path):
    with pytest.raises(ParseError):
        load_matrix(DATA / "synthetic_10x8.txt", "xml")


def test_bundled_fixtures_agree():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        D = load_matrix(DATA / "synthetic_10x8.txt", "dense")
        T = load_matrix(DATA / "synthetic_10x8_triplets.csv", "triplets")
    assert D.shape == (10, 8)
    np.testing.assert_array_equal(D.mask[: T.M, : T.N], T.mask)
    np.testing.assert_array_equal(D.values[D.mask], T.values[T.mask])
