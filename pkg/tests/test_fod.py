import numpy as np
import pytest

import ccpl
from ccpl.fod import FodParams, channel_fod, compute_fod, gray_to_od, to_grayscale
from ccpl.separation import isolate_channel


class TestGrayscale:
    def test_white(self):
        gray = to_grayscale(np.full((2, 2, 3), 255, np.uint8))
        assert gray == pytest.approx(np.full((2, 2), 255.0), abs=1e-9)

    def test_pure_red(self):
        gray = to_grayscale(np.array([[[255, 0, 0]]], dtype=np.uint8))
        assert gray == pytest.approx(76.245, abs=1e-9)

    def test_pure_green(self):
        gray = to_grayscale(np.array([[[0, 255, 0]]], dtype=np.uint8))
        assert gray == pytest.approx(149.685, abs=1e-9)

    def test_stays_real_valued(self):
        gray = to_grayscale(np.array([[[1, 2, 3]]], dtype=np.uint8))
        assert gray.dtype == np.float64


class TestGrayToOd:
    def test_full_intensity(self):
        assert gray_to_od(np.array([[255.0]])) == pytest.approx(0.0, abs=1e-12)

    def test_tenth_intensity(self):
        assert gray_to_od(np.array([[25.5]])) == pytest.approx(1.0, abs=1e-12)

    def test_half_intensity(self):
        assert gray_to_od(np.array([[127.5]])) == pytest.approx(0.3010299956639812, abs=1e-12)

    def test_zero_hits_floor(self):
        assert gray_to_od(np.array([[0.0]])) == pytest.approx(2.7075701760979364, abs=1e-12)


class TestComputeFod:
    def params(self, **kw):
        base = dict(channel="D", threshold=0.15, exponent=1.8)
        base.update(kw)
        return FodParams(**base)

    def test_zero_od(self):
        assert compute_fod(np.array([0.0]), self.params()) == 0.0

    def test_above_threshold(self):
        # 0.5**1.8, frozen from a high-precision oracle
        out = compute_fod(np.array([0.5]), self.params())
        assert out == pytest.approx(0.28717458874925875, abs=1e-12)

    def test_below_threshold(self):
        # 0.3**1.8 = 0.11450... <= 0.15
        assert compute_fod(np.array([0.3]), self.params()) == 0.0

    def test_boundary_maps_to_zero(self):
        # threshold set exactly to od**exponent: strict inequality keeps 0
        od = 0.5
        t = od**1.8
        out = compute_fod(np.array([od]), self.params(threshold=t))
        assert out == 0.0

    def test_identity_configuration(self):
        od = np.linspace(0, 2, 21)
        out = compute_fod(od, self.params(threshold=0.0, exponent=1.0))
        assert np.array_equal(out, od)

    def test_power_scaling_without_threshold(self):
        rng = np.random.default_rng(0)
        od = rng.uniform(0.01, 2.0, 64)
        p = self.params(threshold=0.0)
        k = 1.7
        lhs = compute_fod(k * od, p)
        rhs = k**1.8 * compute_fod(od, p)
        assert np.allclose(lhs, rhs, rtol=1e-12)

    def test_monotone_nondecreasing(self):
        od = np.sort(np.random.default_rng(1).uniform(0, 2, 200))
        out = compute_fod(od, self.params())
        assert np.all(np.diff(out) >= 0)

    def test_nonzero_outputs_exceed_threshold(self):
        od = np.random.default_rng(2).uniform(0, 2, 500)
        p = self.params()
        out = compute_fod(od, p)
        nz = out[out > 0]
        assert np.all(nz > p.threshold)

    def test_negative_od_rejected(self):
        with pytest.raises(ValueError):
            compute_fod(np.array([-0.1]), self.params())

    def test_param_validation(self):
        with pytest.raises(ValueError):
            FodParams(channel="E")
        with pytest.raises(ValueError):
            FodParams(threshold=-1.0)
        with pytest.raises(ValueError):
            FodParams(exponent=0.0)


class TestChannelFod:
    def test_white_image_all_zero(self):
        white = np.full((6, 6, 3), 255, np.uint8)
        for ch in "HD":
            fod = channel_fod(white, FodParams(channel=ch))
            assert np.all(fod == 0.0)

    def test_pure_d_lights_up_only_d(self):
        conc = np.zeros((8, 8, 3))
        conc[2:6, 2:6, 2] = 1.0
        img = ccpl.compose(conc)
        fod_h = channel_fod(img, FodParams(channel="H"))
        fod_d = channel_fod(img, FodParams(channel="D"))
        assert np.all(fod_h == 0.0)
        assert np.all(fod_d[2:6, 2:6] > 0.0)

    def test_equals_step_by_step_composition(self):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, size=(12, 10, 3), dtype=np.uint8)
        p = FodParams(channel="D")
        direct = channel_fod(img, p)
        chained = compute_fod(gray_to_od(to_grayscale(isolate_channel(img, "D"))), p)
        assert np.array_equal(direct, chained)
