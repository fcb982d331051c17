import numpy as np
import pytest

from ssnqi.estimators import sigma_per_frame
from ssnqi.frames import FramePair, FrameStack, Geometry
from ssnqi.optics import (
    DetectionChain,
    DetectorModel,
    ObjectMask,
    UnbalancedLossWarning,
    add_background,
    apply_loss,
    apply_object,
    bin_pixels,
    pi_glyph,
    run_chain,
)
from ssnqi.pgm import write_pgm
from ssnqi.statgen import SourceModel, gen_coherent, gen_twin_pairs


def const_stack(value, n=20, h=32, w=32):
    return FrameStack(np.full((n, h, w), value, dtype=np.int64))


@pytest.fixture(scope="module")
def twins():
    return gen_twin_pairs(SourceModel("twin", 1000.0, 1e4), Geometry(64, 64, 300), seed=21)


class TestObject:
    def test_transparent_is_identity(self):
        s = gen_coherent(50.0, Geometry(8, 8, 4), 1)
        out = apply_object(s, ObjectMask.uniform(8, 8, 0.0), 2)
        assert np.array_equal(out.counts, s.counts)

    def test_opaque_blocks_everything(self):
        s = gen_coherent(50.0, Geometry(8, 8, 4), 1)
        assert not apply_object(s, ObjectMask.uniform(8, 8, 1.0), 2).counts.any()

    def test_weak_absorber_mean(self):
        out = apply_object(const_stack(10000), ObjectMask.uniform(32, 32, 0.05), 3)
        assert out.counts.mean() == pytest.approx(9500, rel=0.005)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            apply_object(const_stack(1), ObjectMask.uniform(4, 4, 0.1), 0)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            ObjectMask(np.full((2, 2), 1.2))

    def test_mask_from_pgm(self, tmp_path):
        img = np.array([[0, 255], [51, 102]], dtype=np.uint8)
        write_pgm(tmp_path / "m.pgm", img, 255)
        m = ObjectMask.from_pgm(tmp_path / "m.pgm")
        assert np.allclose(m.alpha, img / 255)
        img16 = np.array([[0, 65535], [6554, 0]])
        write_pgm(tmp_path / "m16.pgm", img16, 65535)
        assert np.allclose(ObjectMask.from_pgm(tmp_path / "m16.pgm").alpha, img16 / 65535)

    def test_pi_glyph(self):
        m = pi_glyph(64, 64, 0.05)
        assert set(np.unique(m.alpha)) == {0.0, 0.05}
        assert 0.1 < (m.alpha > 0).mean() < 0.5
        # two legs below the bar
        row = m.alpha[45] > 0
        assert np.count_nonzero(np.diff(row.astype(int)) == 1) == 2


class TestLoss:
    def test_identity_and_zero(self):
        s = gen_coherent(30.0, Geometry(8, 8, 3), 1)
        assert np.array_equal(apply_loss(s, 1.0, 0).counts, s.counts)
        assert not apply_loss(s, 0.0, 0).counts.any()

    def test_range(self):
        with pytest.raises(ValueError):
            apply_loss(const_stack(1), 1.1, 0)

    def test_twin_sigma_after_loss(self, twins):
        s, i = twins
        sig, *_ = sigma_per_frame(apply_loss(s, 0.7, 1).counts, apply_loss(i, 0.7, 2).counts)
        # conditional-variance oracle: 2 eta (1-eta) n / (2 eta n)
        assert sig.mean() == pytest.approx(0.30, abs=0.02)

    @pytest.mark.parametrize("eta", [0.5, 0.7, 0.9])
    def test_sigma_law_within_4se(self, twins, eta):
        s, i = twins
        sig, *_ = sigma_per_frame(apply_loss(s, eta, 1).counts, apply_loss(i, eta, 2).counts)
        se = sig.std(ddof=1) / np.sqrt(sig.size)
        assert abs(sig.mean() - (1 - eta)) < 4 * se

    def test_thinning_composition_matches_single_thinning(self):
        g = Geometry(64, 64, 250)
        base = gen_coherent(40.0, g, 7)
        two = apply_loss(apply_object(base, ObjectMask.uniform(64, 64, 0.2), 1), 0.6, 2).counts.ravel()
        one = apply_loss(base, 0.6 * 0.8, 3).counts.ravel()
        n = one.size
        assert n >= 10**6
        lam = 40.0 * 0.48  # both are Poisson(lam) in law
        se_mean = np.sqrt(2 * lam / n)
        se_var = np.sqrt(2 * (lam * (1 + 3 * lam) - lam**2) / n)
        assert abs(two.mean() - one.mean()) < 4 * se_mean
        assert abs(two.var() - one.var()) < 4 * se_var


class TestBackground:
    def test_noiseless_identity(self):
        s = const_stack(5)
        assert np.array_equal(add_background(s, DetectorModel(), 0).counts, s.counts)

    def test_dark_mean(self):
        out = add_background(const_stack(0), DetectorModel(dark_mean=50.0), 1)
        assert out.counts.mean() == pytest.approx(50, rel=0.02)

    def test_read_noise_variance(self):
        out = add_background(const_stack(10000), DetectorModel(read_noise_rms=10.0), 2)
        assert out.counts.astype(float).var() == pytest.approx(100, rel=0.05)
        assert out.counts.dtype.kind == "i"

    def test_clamped_nonnegative(self):
        out = add_background(const_stack(0), DetectorModel(read_noise_rms=5.0), 3)
        assert out.counts.min() == 0

    def test_background_raises_sigma_monotonically(self, twins):
        s, i = twins
        means = []
        for dark in (0.0, 100.0, 400.0):
            pair = run_chain(s, i, None, DetectorModel.balanced(0.7, dark_mean=dark), seed=5)
            sig, *_ = sigma_per_frame(pair.signal.counts, pair.idler.counts)
            means.append(sig.mean())
        assert means[0] < means[1] < means[2]


class TestBinning:
    def test_identity(self):
        s = gen_coherent(3.0, Geometry(4, 4, 2), 0)
        assert np.array_equal(bin_pixels(s, 1).counts, s.counts)

    def test_two_by_two(self):
        s = FrameStack(np.array([[[1, 2], [3, 4]]]))
        assert bin_pixels(s, 2).counts.tolist() == [[[10]]]

    @pytest.mark.parametrize("factor", [1, 2, 4, 8])
    def test_totals_conserved(self, factor):
        s = gen_coherent(13.0, Geometry(16, 8, 3), 1)
        b = bin_pixels(s, factor)
        assert np.array_equal(b.counts.sum(axis=(1, 2)), s.counts.sum(axis=(1, 2)))

    def test_non_divisible(self):
        with pytest.raises(ValueError):
            bin_pixels(const_stack(1, h=6, w=6), 4)


class TestChain:
    def test_neutral_chain_is_identity(self, twins):
        s, i = twins
        pair = run_chain(s, i, ObjectMask.uniform(64, 64, 0.0), DetectorModel(), 0)
        assert np.array_equal(pair.signal.counts, s.counts)
        assert np.array_equal(pair.idler.counts, i.counts)

    def test_sigma_after_chain(self, twins):
        pair = run_chain(*twins, None, DetectorModel.balanced(0.7), 1)
        sig, *_ = sigma_per_frame(pair.signal.counts, pair.idler.counts)
        assert sig.mean() == pytest.approx(0.30, abs=0.02)

    def test_object_only_on_signal(self, twins):
        pair = run_chain(*twins, ObjectMask.uniform(64, 64, 0.05), DetectorModel.balanced(0.7), 2)
        ratio = pair.signal.counts.mean() / pair.idler.counts.mean()
        assert ratio == pytest.approx(0.95, rel=0.005)

    def test_unbalanced_warns(self, twins):
        with pytest.warns(UnbalancedLossWarning):
            run_chain(*twins, None, DetectorModel(0.7, 0.6), 0)

    def test_estimator_wrapper_matches_function(self, twins):
        s, i = twins
        chain = DetectionChain(eta_signal=0.8, eta_idler=0.8, bin_factor=2, random_state=4).fit()
        out = chain.transform(FramePair(s, i))
        ref = run_chain(s, i, None, DetectorModel.balanced(0.8, bin_factor=2), 4)
        assert np.array_equal(out.signal.counts, ref.signal.counts)
        assert chain.get_params()["eta_signal"] == 0.8

    def test_detector_validation(self):
        with pytest.raises(ValueError):
            DetectorModel(eta_signal=-0.1)
        with pytest.raises(ValueError):
            DetectorModel(bin_factor=0)
        with pytest.raises(ValueError):
            DetectorModel(dark_mean=-1)
