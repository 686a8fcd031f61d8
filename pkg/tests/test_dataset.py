import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from atbagging.dataset import (
    CATEGORICAL,
    NUMERIC,
    ColumnSchema,
    DatasetError,
    TabularDataset,
    holdout_split,
    load_csv,
    make_synthetic_transfer,
    split_domain,
    standardize_fit_transform,
    write_csv,
)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _numeric(cols):
    cols = np.asarray(cols, float)
    if cols.ndim == 1:
        cols = cols[:, None]
    schema = [ColumnSchema(f"c{j}") for j in range(cols.shape[1])]
    return TabularDataset(schema, cols)


def test_load_mixed_columns(tmp_path):
    p = _write(tmp_path, "a,b,y\n1.5,red,0.1\n2,blue,0.2\n-3e2,red,0.3\n")
    d = load_csv(p, target_column="y")
    assert len(d) == 3
    assert [c.kind for c in d.schema] == [NUMERIC, CATEGORICAL]
    assert d.schema[1].categories == ("red", "blue")
    np.testing.assert_array_equal(d.values[:, 1], [0, 1, 0])
    np.testing.assert_allclose(d.target, [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(d.row_ids, [0, 1, 2])


def test_header_only_is_empty(tmp_path):
    with pytest.raises(DatasetError, match="empty dataset"):
        load_csv(_write(tmp_path, "a,b,y\n"), target_column="y")


def test_mixed_cells_make_a_categorical(tmp_path):
    d = load_csv(_write(tmp_path, "c,y\n1.0,1\n2.0,2\nx,3\n"), target_column="y")
    assert d.schema[0].kind == CATEGORICAL
    assert len(d.schema[0].categories) == 3


@pytest.mark.parametrize(
    "text, match",
    [
        ("a,y\n1,2\n3\n", "row 1"),
        ("a,y\n1,2\n", "target column 'z'"),
        ("a,y\n1,2\nnan,3\n", "row 1: non-finite"),
        ("a,y\n1,2\ninf,3\n", "row 1: non-finite"),
        ("a,y\n1,2\n,3\n", "row 1: missing value"),
        ("a,y\n1,x\n", "non-numeric"),
    ],
)
def test_load_errors(tmp_path, text, match):
    target = "z" if "'z'" in match else "y"
    with pytest.raises(DatasetError, match=match):
        load_csv(_write(tmp_path, text), target_column=target)


def test_missing_file(tmp_path):
    with pytest.raises(DatasetError, match="no such file"):
        load_csv(tmp_path / "nope.csv")


def test_schema_hint_forces_categorical(tmp_path):
    p = _write(tmp_path, "zip,y\n100,1\n200,2\n100,3\n")
    d = load_csv(p, target_column="y", schema_hint=[ColumnSchema("zip", CATEGORICAL, ("200", "100"))])
    np.testing.assert_array_equal(d.values[:, 0], [1, 0, 1])


def test_csv_round_trip(tmp_path):
    p = _write(tmp_path, "a,b,y\n1.25,u,0.5\n-2,v,1e-3\n")
    d = load_csv(p, target_column="y")
    q = tmp_path / "out.csv"
    write_csv(d, q)
    e = load_csv(q, target_column="y")
    np.testing.assert_array_equal(d.values, e.values)
    np.testing.assert_array_equal(d.target, e.target)
    assert d.schema == e.schema


def test_standardize_two_values():
    z, s = standardize_fit_transform(_numeric([2.0, 4.0]))
    np.testing.assert_allclose(z.values[:, 0], [-1.0, 1.0])
    assert s.mean[0] == 3.0 and s.std[0] == 1.0


def test_standardize_constant_column():
    z, _ = standardize_fit_transform(_numeric([5.0, 5.0, 5.0]))
    np.testing.assert_array_equal(z.values[:, 0], [0.0, 0.0, 0.0])


def test_standardize_leaves_categoricals():
    schema = [ColumnSchema("x"), ColumnSchema("c", CATEGORICAL, ("p", "q", "r"))]
    d = TabularDataset(schema, [[1.0, 2], [3.0, 0], [8.0, 1]])
    z, _ = standardize_fit_transform(d)
    np.testing.assert_array_equal(z.values[:, 1], [2, 0, 1])


def test_standardize_fixed_point():
    x = np.random.default_rng(0).standard_normal(50)
    x = (x - x.mean()) / x.std()
    z, _ = standardize_fit_transform(_numeric(x))
    np.testing.assert_allclose(z.values[:, 0], x, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_standardize_round_trip(X):
    d = _numeric(X)
    z, s = standardize_fit_transform(d)
    back = s.inverse_transform(z).values
    scale = np.maximum(np.abs(X), 1.0)
    assert np.all(np.abs(back - X) / scale < 1e-10)
    Z = z.values
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-9)
    varying = s.std > 0
    np.testing.assert_allclose(Z[:, varying].std(axis=0), 1.0, atol=1e-9)


def test_split_domain_counts():
    d = _numeric(np.arange(10.0))
    a, b = split_domain(d, lambda r: r["c0"] <= 3)
    assert (len(a), len(b)) == (4, 6)
    assert set(a.row_ids) | set(b.row_ids) == set(range(10))
    assert not set(a.row_ids) & set(b.row_ids)


def test_split_domain_all_false():
    d = _numeric(np.arange(10.0))
    a, b = split_domain(d, lambda r: False)
    assert len(a) == 0 and len(b) == 10


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_holdout_partitions(n, frac, seed):
    d = _numeric(np.arange(float(n)))
    keep, hold = holdout_split(d, frac, seed)
    assert len(hold) == round(frac * n)
    assert sorted(set(keep.row_ids) | set(hold.row_ids)) == list(range(n))
    assert not set(keep.row_ids) & set(hold.row_ids)


def test_row_ids_survive_selection():
    d = TabularDataset([ColumnSchema("x")], [[1.0], [2.0], [3.0]], [0.0, 1.0, 2.0], row_ids=[7, 3, 9])
    s = d.select_ids([9, 7])
    np.testing.assert_array_equal(s.row_ids, [9, 7])
    np.testing.assert_array_equal(s.target, [2.0, 0.0])
    with pytest.raises(KeyError):
        d.select_ids([4])


def test_invalid_dataset_rejected():
    with pytest.raises(DatasetError):
        TabularDataset([ColumnSchema("x")], [[1.0], [2.0]], row_ids=[1, 1])
    with pytest.raises(DatasetError):
        TabularDataset([ColumnSchema("c", CATEGORICAL, ("a",))], [[1.0]])
    with pytest.raises(DatasetError):
        TabularDataset([ColumnSchema("x")], [[1.0]], target=[1.0, 2.0])


def test_one_hot_expansion():
    schema = [ColumnSchema("x"), ColumnSchema("c", CATEGORICAL, ("a", "b", "c"))]
    d = TabularDataset(schema, [[0.5, 2], [1.5, 0]])
    np.testing.assert_array_equal(d.one_hot(), [[0.5, 0, 0, 1], [1.5, 1, 0, 0]])


def _same_x_targets(rho, n=10_000):
    src, tr = make_synthetic_transfer(n, n, 2, rho, 0.0, seed=11)
    np.testing.assert_array_equal(src.values, tr.values)
    return src.target, tr.target


def test_synthetic_full_correlation():
    y, yt = _same_x_targets(1.0)
    assert np.corrcoef(y, yt)[0, 1] > 0.95


def test_synthetic_zero_correlation():
    y, yt = _same_x_targets(0.0)
    assert abs(np.corrcoef(y, yt)[0, 1]) < 0.05


def test_synthetic_deterministic():
    a = make_synthetic_transfer(100, 80, 3, 0.5, 1.0, seed=4)
    b = make_synthetic_transfer(100, 80, 3, 0.5, 1.0, seed=4)
    for u, v in zip(a, b):
        assert u.values.tobytes() == v.values.tobytes()
        assert u.target.tobytes() == v.target.tobytes()
        np.testing.assert_array_equal(u.row_ids, v.row_ids)


def test_synthetic_shift_moves_the_pool():
    src, tr = make_synthetic_transfer(2000, 2000, 2, 0.9, 3.0, seed=1)
    assert abs(src.values.mean() - 0.0) < 0.1
    assert abs(tr.values.mean() - 3.0) < 0.1
    assert not set(src.row_ids) & set(tr.row_ids)
