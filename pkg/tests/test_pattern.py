"""Frame operations: crop, bin, masked sums, mask bookkeeping."""

import numpy as np
import pytest

import fxi_sort as fx
from fxi_sort.errors import ContractError, DimensionError
from fxi_sort.pattern import bin_mask

from conftest import checker_pattern


class TestCropCenter:
    def test_known_center_block(self):
        # 8x8 frame of 0..63; the centred 4x4 block spans rows/cols 2..5.
        p = checker_pattern(8, 8)
        out = fx.crop_center(p, 4)
        expected = np.array(
            [
                [18, 19, 20, 21],
                [26, 27, 28, 29],
                [34, 35, 36, 37],
                [42, 43, 44, 45],
            ],
            dtype=np.float64,
        )
        np.testing.assert_array_equal(out.data, expected)
        assert out.mask.all()

    def test_full_side_is_identity(self):
        p = checker_pattern(6, 6)
        out = fx.crop_center(p, 6)
        np.testing.assert_array_equal(out.data, p.data)

    def test_crop_preserves_meta_and_mask(self):
        p = checker_pattern(8, 8, masked=[(3, 3)])
        out = fx.crop_center(p, 4)
        assert not out.mask[1, 1]
        assert out.data[1, 1] == 0
        assert out.meta == p.meta

    def test_oversized_side_rejected(self):
        with pytest.raises(DimensionError):
            fx.crop_center(checker_pattern(8, 8), 10)

    def test_odd_side_rejected(self):
        with pytest.raises(DimensionError):
            fx.crop_center(checker_pattern(8, 8), 3)

    def test_crop_composition(self):
        p = checker_pattern(16, 16)
        once = fx.crop_center(p, 6)
        twice = fx.crop_center(fx.crop_center(p, 12), 6)
        np.testing.assert_array_equal(once.data, twice.data)
        np.testing.assert_array_equal(once.mask, twice.mask)


class TestBinFrame:
    def test_shapes(self):
        data = np.ones((480, 480))
        p = fx.Pattern(data=data, mask=np.ones_like(data, dtype=bool))
        out = fx.bin_frame(p, 4)
        assert out.shape == (120, 120)

    def test_identity_at_one(self):
        p = checker_pattern(8, 8)
        assert fx.bin_frame(p, 1) is p

    def test_partial_block_averages_unmasked_members(self):
        # 4x4 block of ones with 8 masked pixels: mean over the 8 valid ones.
        mask = np.ones((4, 4), dtype=bool)
        mask[:2, :] = False
        p = fx.Pattern(data=np.ones((4, 4)), mask=mask)
        out = fx.bin_frame(p, 4)
        assert out.data[0, 0] == 1.0
        assert out.mask[0, 0]

    def test_fully_masked_block_is_masked_zero(self):
        p = fx.Pattern(data=np.ones((4, 4)), mask=np.zeros((4, 4), dtype=bool))
        out = fx.bin_frame(p, 4)
        assert out.data[0, 0] == 0.0
        assert not out.mask[0, 0]

    def test_indivisible_factor_rejected(self):
        with pytest.raises(DimensionError):
            fx.bin_frame(checker_pattern(6, 6), 4)

    def test_linearity_on_unmasked_frames(self, rng):
        x = rng.uniform(0, 10, (12, 12))
        y = rng.uniform(0, 10, (12, 12))
        mask = np.ones((12, 12), dtype=bool)
        a, b = 2.5, 0.75
        combo = fx.bin_frame(fx.Pattern(data=a * x + b * y, mask=mask), 3)
        separate = a * fx.bin_frame(fx.Pattern(data=x, mask=mask), 3).data + b * fx.bin_frame(
            fx.Pattern(data=y, mask=mask), 3
        ).data
        np.testing.assert_allclose(combo.data, separate, rtol=1e-13)

    def test_bin_mask_counts(self):
        mask = np.ones((8, 8), dtype=bool)
        mask[0, :4] = False
        binned, counts = bin_mask(mask, 4)
        assert counts[0, 0] == 12
        assert counts[0, 1] == 16
        assert binned.all()


class TestMaskedSum:
    def test_zero_frame(self):
        p = fx.Pattern(data=np.zeros((5, 5)), mask=np.ones((5, 5), dtype=bool))
        assert fx.masked_sum(p) == 0.0

    def test_uniform_frame_counts_valid_pixels(self):
        mask = np.ones((6, 6), dtype=bool)
        mask[0, 0] = False
        p = fx.Pattern(data=np.where(mask, 1.0, 0.0), mask=mask)
        assert fx.masked_sum(p) == 35.0

    def test_matches_elementwise_loop(self, rng):
        data = rng.uniform(0, 4, (9, 7))
        mask = rng.uniform(size=(9, 7)) > 0.3
        data = np.where(mask, data, 0.0)
        p = fx.Pattern(data=data, mask=mask)
        acc = 0.0
        for i in range(9):
            for j in range(7):
                if mask[i, j]:
                    acc += data[i, j]
        assert fx.masked_sum(p) == pytest.approx(acc, rel=1e-13)


class TestPatternInvariants:
    def test_masked_pixels_forced_to_zero(self):
        mask = np.ones((4, 4), dtype=bool)
        mask[1, 1] = False
        data = np.ones((4, 4))
        p = fx.Pattern(data=data, mask=mask)
        assert p.data[1, 1] == 0.0

    def test_negative_data_rejected(self):
        with pytest.raises(ContractError):
            fx.Pattern(data=-np.ones((3, 3)), mask=np.ones((3, 3), dtype=bool))

    def test_nonfinite_data_rejected(self):
        data = np.ones((3, 3))
        data[0, 0] = np.nan
        with pytest.raises(ContractError):
            fx.Pattern(data=data, mask=np.ones((3, 3), dtype=bool))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            fx.Pattern(data=np.ones((3, 3)), mask=np.ones((3, 4), dtype=bool))

    def test_data_is_immutable(self):
        p = checker_pattern(4, 4)
        with pytest.raises(ValueError):
            p.data[0, 0] = 99.0


class TestDefaultGeometryMask:
    def test_crop_bin_leaves_20_pixel_disc(self):
        # 80 full-res missing pixels shrink to a 20-pixel-diameter disc
        # after the standard 480-crop and 4-fold binning.
        geom = fx.DetectorGeometry()
        mask = geom.make_mask()
        p = fx.Pattern(data=np.zeros(geom.shape), mask=mask)
        binned = fx.bin_frame(fx.crop_center(p, 480), 4)
        holes = ~binned.mask
        assert holes.sum(axis=0).max() == 20
        assert holes.sum(axis=1).max() == 20

    def test_mask_center_symmetry(self):
        geom = fx.DetectorGeometry()
        mask = geom.make_mask()
        np.testing.assert_array_equal(mask, mask[::-1, ::-1])

    def test_user_bad_pixels_join_the_mask(self):
        geom = fx.DetectorGeometry(bad_pixels=((0, 0), (100, 200)))
        mask = geom.make_mask()
        assert not mask[0, 0]
        assert not mask[100, 200]


class TestDataset:
    def test_requires_shared_mask(self):
        a = checker_pattern(4, 4)
        b = checker_pattern(4, 4, masked=[(0, 0)])
        with pytest.raises(ContractError):
            fx.Dataset.from_patterns([a, b], fx.DetectorGeometry())

    def test_iteration_yields_patterns(self):
        pats = [checker_pattern(4, 4) for _ in range(3)]
        ds = fx.Dataset.from_patterns(pats, fx.DetectorGeometry())
        assert len(ds) == 3
        for p in ds:
            assert isinstance(p, fx.Pattern)
