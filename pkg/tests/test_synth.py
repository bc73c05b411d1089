import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lafite.metrics import label_regions
from lafite.synth import (
    MaskSpec,
    MaskSpecError,
    build_pseudo_validation,
    make_masks,
    mask_union,
    synthesize,
)


def _tensors(n, seed=0, shape=(8, 8, 3)):
    g = np.random.default_rng(seed)
    return [g.normal(size=shape).astype(np.float32) + i for i in range(n)], [f"s{i:03d}" for i in range(n)]


class TestMasks:
    @pytest.mark.parametrize("hw", [(10, 10), (16, 12), (32, 32)])
    def test_fixed_size_rectangle(self, hw):
        h, w = hw
        spec = MaskSpec(h, w, ("rectangle",), (0.1, 0.1), (0.0, 0.0), (1, 1))
        for seed in range(10):
            (m,) = make_masks(spec, np.random.default_rng(seed))
            row = max(m.sum(axis=0).max(), m.sum(axis=1).max())
            assert abs(m.sum() - np.floor(0.1 * h * w)) <= row

    @pytest.mark.parametrize("shape", ["rectangle", "ellipse"])
    def test_single_connected_shape(self, shape):
        spec = MaskSpec(16, 16, (shape,), (0.05, 0.2), (0.0, 180.0), (1, 1))
        for seed in range(10):
            (m,) = make_masks(spec, np.random.default_rng(seed))
            assert label_regions(m)[1] == 1

    def test_polygon_area_in_range(self):
        spec = MaskSpec(24, 24, ("polygon",), (0.05, 0.2), (0.0, 180.0), (1, 1))
        for seed in range(20):
            (m,) = make_masks(spec, np.random.default_rng(seed))
            row = max(m.sum(axis=0).max(), m.sum(axis=1).max())
            assert 0.05 * 576 - row <= m.sum() <= 0.2 * 576 + row

    def test_deterministic(self):
        spec = MaskSpec(12, 12)
        a = make_masks(spec, np.random.default_rng(4))
        b = make_masks(spec, np.random.default_rng(4))
        assert len(a) == len(b)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_count_range(self):
        spec = MaskSpec(12, 12, count_range=(2, 2))
        assert len(make_masks(spec, np.random.default_rng(0))) == 2

    def test_invalid_specs(self):
        for bad in (
            MaskSpec(8, 8, size_range=(0.3, 0.2)),
            MaskSpec(8, 8, shapes=("star",)),
            MaskSpec(8, 8, count_range=(3, 1)),
            MaskSpec(2, 2, size_range=(0.01, 0.05)),
        ):
            with pytest.raises(MaskSpecError):
                bad.validate()


class TestSynthesize:
    def test_empty_mask(self):
        (t, d), _ = _tensors(2)
        s = synthesize(t, d, [np.zeros((8, 8))])
        np.testing.assert_array_equal(s.tensor, t)
        assert not s.gt_mask.any()

    def test_full_mask(self):
        (t, d), _ = _tensors(2)
        np.testing.assert_array_equal(synthesize(t, d, [np.ones((8, 8))]).tensor, d)

    def test_checkerboard(self):
        (t, d), _ = _tensors(2)
        cb = (np.indices((8, 8)).sum(0) % 2).astype(np.float32)
        out = synthesize(t, d, [cb]).tensor
        for i in range(8):
            for j in range(8):
                np.testing.assert_array_equal(out[i, j], d[i, j] if cb[i, j] else t[i, j])

    @settings(max_examples=30)
    @given(st.integers(0, 10_000))
    def test_pointwise_selection_and_area(self, seed):
        g = np.random.default_rng(seed)
        (t, d), _ = _tensors(2, seed)
        masks = make_masks(MaskSpec(8, 8, size_range=(0.1, 0.3)), g)
        s = synthesize(t, d, masks)
        u = mask_union(masks, 8, 8) > 0
        assert ((s.tensor == t) | (s.tensor == d)).all()
        np.testing.assert_array_equal((s.tensor != t).any(-1) | ((t == d).all(-1) & u), u)
        assert s.gt_mask.sum() == u.sum()


class TestPseudoValidation:
    SPEC = MaskSpec(8, 8, size_range=(0.1, 0.3), count_range=(1, 2))

    def test_conservation_and_balance(self):
        xs, ids = _tensors(40)
        pv = build_pseudo_validation(xs, ids, self.SPEC, batch=16, seed=0)
        assert len(pv) == 40
        labels = np.array([p.label for p in pv])
        assert labels.sum() + (labels == 0).sum() == 40
        assert 15 <= labels.sum() <= 25
        assert sorted(p.id for p in pv) == sorted(f"pseudo_{i}" for i in ids)

    def test_empty_masks_give_all_normal(self):
        xs, ids = _tensors(20)
        spec = MaskSpec(8, 8, count_range=(0, 0))
        pv = build_pseudo_validation(xs, ids, spec, batch=16, seed=0)
        assert all(p.label == 0 and not p.gt_mask.any() for p in pv)
        for p in pv:
            np.testing.assert_array_equal(p.tensor, xs[ids.index(p.id[len("pseudo_"):])])

    def test_donor_is_another_member(self):
        xs, ids = _tensors(32)
        for p in build_pseudo_validation(xs, ids, self.SPEC, batch=16, seed=3):
            if p.label:
                own = p.id[len("pseudo_"):]
                assert p.source_id != own
                d = xs[ids.index(p.source_id)]
                t = xs[ids.index(own)]
                sel = p.gt_mask > 0
                np.testing.assert_array_equal(p.tensor[sel], d[sel])
                np.testing.assert_array_equal(p.tensor[~sel], t[~sel])

    def test_deterministic(self):
        xs, ids = _tensors(24)
        a = build_pseudo_validation(xs, ids, self.SPEC, seed=5)
        b = build_pseudo_validation(xs, ids, self.SPEC, seed=5)
        for p, q in zip(a, b):
            assert p.id == q.id and p.label == q.label and p.source_id == q.source_id
            assert p.tensor.tobytes() == q.tensor.tobytes()

    def test_default_batch(self):
        import inspect

        assert inspect.signature(build_pseudo_validation).parameters["batch"].default == 16

    def test_batch_of_one_rejected(self):
        xs, ids = _tensors(4)
        with pytest.raises(ValueError):
            build_pseudo_validation(xs, ids, self.SPEC, batch=1)
