import numpy as np
import pytest

from kd2m import data
from kd2m.errors import InputError, ParseError


def linear_probe_accuracy(train, test):
    """Least-squares linear classifier on one-hot targets."""
    A = np.column_stack([train.X, np.ones(len(train))])
    W, *_ = np.linalg.lstsq(A, np.eye(train.n_classes)[train.y], rcond=None)
    pred = np.argmax(np.column_stack([test.X, np.ones(len(test))]) @ W, axis=1)
    return float(np.mean(pred == test.y))


def test_blobs_zero_spread_sits_on_centres():
    ds = data.gen_blobs(30, n_classes=3, dim=3, spread=0.0, seed=1, scale=4.0)
    np.testing.assert_array_equal(ds.X, 4.0 * np.eye(3)[ds.y])


def test_blobs_circle_layout_when_classes_exceed_dim():
    ds = data.gen_blobs(40, n_classes=4, dim=2, spread=0.0)
    np.testing.assert_allclose(np.linalg.norm(ds.X, axis=1), 4.0, rtol=1e-15)
    assert len(np.unique(ds.X.round(12), axis=0)) == 4


def test_generators_are_seeded():
    for make in (lambda s: data.gen_blobs(50, seed=s), lambda s: data.gen_moons(50, seed=s),
                 lambda s: data.gen_spirals(50, seed=s)):
        a, b, c = make(3), make(3), make(4)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)
        assert not np.array_equal(a.X, c.X)


def test_blobs_linearly_separable():
    ds = data.gen_blobs(600, n_classes=3, dim=2, spread=0.1, seed=0)
    assert linear_probe_accuracy(ds, ds) > 0.99


def test_noiseless_moons_on_arcs():
    ds = data.gen_moons(301, noise=0.0, seed=0)
    outer = ds.X[ds.y == 0]
    inner = ds.X[ds.y == 1]
    np.testing.assert_allclose(np.linalg.norm(outer, axis=1), 1.0, rtol=1e-14)
    np.testing.assert_allclose(np.linalg.norm(inner - [1.0, 0.5], axis=1), 1.0, rtol=1e-14)
    assert abs(int(np.sum(ds.y == 0)) - int(np.sum(ds.y == 1))) <= 1


def test_noisy_moons_not_linearly_separable():
    train, test = data.split(data.gen_moons(2000, 0.05, seed=0), 0.3, seed=0)
    assert linear_probe_accuracy(train, test) < 0.95


def test_spirals_two_balanced_arms():
    ds = data.gen_spirals(200, noise=0.0)
    np.testing.assert_array_equal(ds.class_counts(), [100, 100])
    r = np.linalg.norm(ds.X, axis=1)
    assert r.min() >= 0.25 - 1e-12 and r.max() <= 1.0 + 1e-12


def test_dataset_validation():
    with pytest.raises(InputError):
        data.Dataset(np.zeros((2, 2)), [0, 2], n_classes=2)
    with pytest.raises(InputError):
        data.Dataset(np.array([[np.nan, 0.0]]), [0], n_classes=1)
    with pytest.raises(InputError):
        data.Dataset(np.zeros((2, 2)), [0], n_classes=1)
    with pytest.raises(InputError):
        data.gen_moons(0)


def test_csv_round_trip(tmp_path, rng):
    ds = data.Dataset(rng.standard_normal((25, 3)) * 1e3, rng.integers(0, 4, 25), 4, "r")
    path = tmp_path / "d.csv"
    data.save_csv(ds, path)
    back = data.load_csv(path, n_classes=4)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)


def test_csv_hand_written(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("f0,f1,label\n1.5,-2,0\n0,0.25,1\n3e2,7,1\n")
    ds = data.load_csv(path)
    np.testing.assert_array_equal(ds.X, [[1.5, -2.0], [0.0, 0.25], [300.0, 7.0]])
    np.testing.assert_array_equal(ds.y, [0, 1, 1])
    assert ds.n_classes == 2


@pytest.mark.parametrize("body, line", [
    ("f0,label\n1,0\nnan,1\n", 3),
    ("f0,label\n1,0\n2\n", 3),
    ("f0,label\nx,0\n", 2),
    ("f0,label\n1,-1\n", 2),
    ("a,b\n1,0\n", 1),
    ("", 1),
    ("f0,label\n", 2),
])
def test_csv_errors_carry_line_numbers(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ParseError) as exc:
        data.load_csv(path)
    assert exc.value.line == line and str(exc.value).startswith(f"line {line}:")


def test_split_is_stratified_and_disjoint():
    ds = data.gen_moons(400, seed=0)
    train, test = data.split(ds, 0.5, seed=3)
    np.testing.assert_array_equal(train.class_counts(), [100, 100])
    np.testing.assert_array_equal(test.class_counts(), [100, 100])
    rows = {tuple(r) for r in train.X} | {tuple(r) for r in test.X}
    assert len(rows) == 400


def test_split_rejects_tiny_classes():
    with pytest.raises(InputError):
        data.split(data.Dataset(np.zeros((3, 1)), [0, 0, 1], 2), 0.5)


def test_epoch_batches_form_a_permutation():
    ds = data.gen_moons(103, seed=0)
    batches = list(data.minibatches(ds, 10, seed=1, epoch=2))
    assert len(batches) == 11 and len(batches[-1][0]) == 3
    X = np.vstack([b[0] for b in batches])
    assert sorted(map(tuple, X)) == sorted(map(tuple, ds.X))


def test_batch_order_depends_on_seed_and_epoch():
    ds = data.gen_moons(50, seed=0)
    order = lambda s, e: data.BatchIterator(ds, 8, s, e).order
    np.testing.assert_array_equal(order(1, 0), order(1, 0))
    assert not np.array_equal(order(1, 0), order(1, 1))
    assert not np.array_equal(order(1, 0), order(2, 0))
