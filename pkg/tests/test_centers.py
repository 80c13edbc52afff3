import numpy as np
import pytest

from carseg import tensor as T
from carseg.centers import LabelField, batch_centers, distribute_centers, flatten_pair
from carseg.tensor import IGNORE, ShapeError, Tensor

from oracles import centers_by_loops


def make_flats(x, labels, n_class):
    return flatten_pair(Tensor(x), LabelField(labels, n_class))


class TestFlattenPair:
    def test_one_hot_and_sigma(self):
        x = np.zeros((1, 2, 3))
        xf, yf, sig = make_flats(x, np.array([[0, IGNORE]]), 2)
        assert np.array_equal(yf.data, [[1, 0], [0, 0]])
        assert np.array_equal(sig.data, [0, 1])

    def test_all_ignored(self):
        x = np.zeros((2, 2, 1))
        _, yf, sig = make_flats(x, np.full((2, 2), IGNORE), 3)
        assert np.array_equal(sig.data, np.ones(4))
        assert not yf.data.any()

    def test_row_sums_equal_one_minus_sigma(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 4, size=(8, 8))
        labels[rng.random(size=(8, 8)) < 0.2] = IGNORE
        _, yf, sig = make_flats(rng.normal(size=(8, 8, 3)), labels, 4)
        assert np.array_equal(yf.data.sum(axis=1), 1.0 - sig.data)

    def test_resolution_mismatch(self):
        with pytest.raises(ShapeError):
            flatten_pair(Tensor(np.zeros((4, 4, 2))), LabelField(np.zeros((2, 2), int), 2))


class TestBatchCenters:
    def test_simple_averaging(self):
        x = np.array([1.0, 0.0, 3.0, 0.0, 0.0, 5.0]).reshape(1, 6, 1)
        labels = np.array([[0, IGNORE, 0, IGNORE, IGNORE, 1]])
        xf, yf, _ = make_flats(x, labels, 2)
        centers = batch_centers([(xf, yf)])
        assert np.array_equal(centers.mu.data, [[2.0], [5.0]])
        assert np.array_equal(centers.counts, [2, 1])

    def test_absent_class_zero_row(self):
        x = np.ones((2, 2, 3))
        xf, yf, _ = make_flats(x, np.zeros((2, 2), int), 3)
        centers = batch_centers([(xf, yf)])
        assert list(centers.present) == [True, False, False]
        assert not centers.mu.data[1:].any()

    def test_matches_concatenate_then_average_oracle(self):
        rng = np.random.default_rng(9)
        images, label_maps, flats = [], [], []
        for _ in range(3):
            x = rng.normal(size=(6, 6, 4))
            labels = rng.integers(0, 5, size=(6, 6))
            labels[rng.random(size=(6, 6)) < 0.15] = IGNORE
            images.append(x)
            label_maps.append(labels)
            xf, yf, _ = make_flats(x, labels, 5)
            flats.append((xf, yf))
        centers = batch_centers(flats)
        mu, counts = centers_by_loops(images, label_maps, 5)
        assert np.max(np.abs(centers.mu.data - mu)) < 1e-12
        assert np.array_equal(centers.counts, counts)

    def test_linearity_in_features(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 4, 2))
        labels = rng.integers(0, 3, size=(4, 4))
        xf1, yf, _ = make_flats(x, labels, 3)
        xf2, _, _ = make_flats(2.5 * x, labels, 3)
        mu1 = batch_centers([(xf1, yf)]).mu.data
        mu2 = batch_centers([(xf2, yf)]).mu.data
        assert np.max(np.abs(mu2 - 2.5 * mu1)) < 1e-12

    def test_gradient_flows_unless_stopped(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(3, 3, 2)), requires_grad=True)
        field = LabelField(rng.integers(0, 2, size=(3, 3)), 2)
        xf, yf, _ = flatten_pair(x, field)
        batch_centers([(xf, yf)]).mu.sum().backward()
        assert np.abs(x.grad).sum() > 0

        x.zero_grad()
        xf, yf, _ = flatten_pair(x, field)
        centers = batch_centers([(xf, yf)], grad_through=False)
        (centers.mu.sum() + xf.sum()).backward()
        assert np.array_equal(x.grad, np.ones_like(x.grad))  # only the direct path


class TestDistributeCenters:
    def test_gather(self):
        x = np.zeros((1, 3, 1))
        xf, yf, _ = make_flats(x, np.array([[0, 1, 0]]), 2)
        centers = batch_centers([(xf, yf)])
        centers.mu.data = np.array([[2.0], [5.0]])
        out = distribute_centers(yf, centers)
        assert np.array_equal(out.data, [[2.0], [5.0], [2.0]])

    def test_ignored_rows_zero(self):
        x = np.ones((1, 2, 2))
        xf, yf, _ = make_flats(x, np.array([[0, IGNORE]]), 2)
        centers = batch_centers([(xf, yf)])
        out = distribute_centers(yf, centers)
        assert not out.data[1].any()

    def test_random_matches_gather_oracle(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(5, 5, 3))
        labels = rng.integers(0, 4, size=(5, 5))
        labels[0, 0] = IGNORE
        xf, yf, _ = make_flats(x, labels, 4)
        centers = batch_centers([(xf, yf)])
        out = distribute_centers(yf, centers).data
        for i, k in enumerate(labels.reshape(-1)):
            want = np.zeros(3) if k == IGNORE else centers.mu.data[k]
            assert np.array_equal(out[i], want)


def test_label_field_rejects_bad_labels():
    with pytest.raises(ShapeError):
        LabelField(np.array([[7]]), 3)
