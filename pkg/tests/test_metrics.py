import numpy as np
import pytest

from carseg.data import BiasSpec, generate_split
from carseg.metrics import (class_dependency_map, confusion_matrix, dependency_from_centers,
                            eval_miou, iou_from_confusion, pixel_relation_map)
from carseg.model import ModelConfig, SegModel
from carseg.tensor import IGNORE, ShapeError

from oracles import miou_by_confusion_loops, softmax_row


def tiny_model(seed=0, n_class=5):
    cfg = ModelConfig(stage_channels=(4, 8, 16, 16), decoder_width=4,
                      decoder_channels=16, heads=2, n_class=n_class)
    return SegModel(cfg, np.random.default_rng(seed))


class TestIou:
    def test_perfect_prediction(self):
        gt = np.random.default_rng(0).integers(0, 3, size=(6, 6))
        cm = confusion_matrix(gt, gt, 3)
        assert iou_from_confusion(cm).mean == 1.0

    def test_complement_prediction_is_zero(self):
        gt = np.random.default_rng(1).integers(0, 2, size=(6, 6))
        cm = confusion_matrix(1 - gt, gt, 2)
        assert iou_from_confusion(cm).mean == 0.0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(2)
        gts = [rng.integers(0, 4, size=(7, 5)) for _ in range(3)]
        preds = [rng.integers(0, 4, size=(7, 5)) for _ in range(3)]
        gts[0][0, 0] = IGNORE
        cm = sum(confusion_matrix(p, g, 4) for p, g in zip(preds, gts))
        want_mean, want_cm = miou_by_confusion_loops(preds, gts, 4)
        assert np.array_equal(cm, want_cm)
        assert abs(iou_from_confusion(cm).mean - want_mean) < 1e-12

    def test_absent_class_excluded_from_mean(self):
        gt = np.zeros((4, 4), int)
        cm = confusion_matrix(gt, gt, 3)
        rep = iou_from_confusion(cm)
        assert np.isnan(rep.per_class[1]) and np.isnan(rep.per_class[2])
        assert rep.mean == 1.0

    def test_empty_split_rejected(self):
        with pytest.raises(ShapeError):
            eval_miou(tiny_model(), [])


class TestClassDependency:
    def test_identical_centers_uniform_rows(self):
        mu = np.tile([[1.0, 2.0, 3.0]], (4, 1))
        matrix, _, mean_off = dependency_from_centers(mu, np.ones(4, bool))
        assert np.allclose(matrix, 0.25, atol=1e-15)
        assert abs(mean_off - 0.25) < 1e-15

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        mu = rng.normal(size=(5, 8))
        matrix, _, _ = dependency_from_centers(mu, np.ones(5, bool))
        assert np.allclose(matrix.sum(axis=1), 1.0, atol=1e-12)

    def test_matches_direct_similarity_evaluation(self):
        rng = np.random.default_rng(4)
        mu = rng.normal(size=(4, 6))
        matrix, _, _ = dependency_from_centers(mu, np.ones(4, bool))
        for i in range(4):
            logits = [np.dot(mu[i], mu[j]) / np.sqrt(6) for j in range(4)]
            assert np.max(np.abs(matrix[i] - softmax_row(logits))) < 1e-12

    def test_absent_classes_zero_rows(self):
        mu = np.zeros((3, 2))
        mu[0] = [1, 0]
        mu[2] = [0, 1]
        matrix, present, _ = dependency_from_centers(mu, np.array([True, False, True]))
        assert not matrix[1].any() and not matrix[:, 1].any()
        assert list(present) == [True, False, True]

    def test_end_to_end_over_split(self):
        spec = BiasSpec(train_count=2, test_count=4)
        samples = generate_split(spec, seed=0, split="test")
        matrix, present, mean_off = class_dependency_map(tiny_model(), samples)
        idx = np.nonzero(present)[0]
        assert np.allclose(matrix[idx].sum(axis=1), 1.0, atol=1e-12)
        assert 0.0 < mean_off < 1.0


class TestPixelRelation:
    def test_marked_pixel_maximal_for_unit_norm_features(self):
        model = tiny_model(seed=5)
        spec = BiasSpec(train_count=1, test_count=1)
        img = generate_split(spec, 1, "test")[0].image_float()
        raw, norm = pixel_relation_map(model, img, (3, 3))

        # the guarantee is exact when every feature has the same norm; check
        # against a unit-normalized double loop on the same feature map
        from carseg.tensor import Tensor
        feat = model.features(Tensor(img)).data
        unit = feat / np.linalg.norm(feat, axis=-1, keepdims=True)
        dots = np.einsum("hwc,c->hw", unit, unit[3, 3])
        assert dots.max() <= dots[3, 3] + 1e-12

    def test_constant_features_give_constant_field(self):
        model = tiny_model(seed=6)
        img = np.full((32, 32, 3), 0.5)
        raw, norm = pixel_relation_map(model, img, (1, 2))
        assert np.max(np.abs(raw - raw[0, 0])) < 1e-9
        assert not norm.any()  # degenerate range collapses to zeros

    def test_matches_double_loop(self):
        model = tiny_model(seed=7)
        spec = BiasSpec(train_count=1, test_count=1)
        img = generate_split(spec, 2, "test")[0].image_float()
        raw, norm = pixel_relation_map(model, img, (2, 1))
        from carseg.tensor import Tensor
        feat = model.features(Tensor(img)).data
        h, w, _ = feat.shape
        want = np.zeros((h, w))
        for r in range(h):
            for c in range(w):
                want[r, c] = float(np.dot(feat[r, c], feat[2, 1]))
        assert np.max(np.abs(raw - want)) < 1e-12
        assert norm.min() == 0.0 and norm.max() == 1.0

    def test_out_of_bounds_rejected(self):
        model = tiny_model(seed=8)
        with pytest.raises(ShapeError):
            pixel_relation_map(model, np.zeros((32, 32, 3)), (99, 0))
