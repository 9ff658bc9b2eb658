import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from handsynth.evaluation import (
    FeatureStats,
    cer,
    collect_stats,
    edit_distance,
    frechet_distance,
    make_trunk_extractor,
    per_writer_fid,
    wer,
)

identity_extractor = lambda images: np.asarray(images, dtype=np.float64)


def stats_1d(mu, var):
    return FeatureStats(np.array([mu]), np.array([[var]]), 2)


def frechet_1d_closed_form(mu1, var1, mu2, var2):
    return (mu1 - mu2) ** 2 + var1 + var2 - 2 * np.sqrt(var1 * var2)


class TestFeatureStats:
    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            FeatureStats(np.zeros(2), np.array([[1.0, 2.0], [0.0, 1.0]]), 5)

    def test_fewer_than_two_samples_rejected(self):
        with pytest.raises(ValueError):
            FeatureStats(np.zeros(2), np.eye(2), 1)


class TestFrechetDistance:
    def test_identical_stats_zero(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(20, 4))
        s = FeatureStats(x.mean(0), np.cov(x, rowvar=False, ddof=1), 20)
        assert frechet_distance(s, s) <= 1e-8

    def test_one_dimensional_unit_case(self):
        a = stats_1d(0.0, 1.0)
        b = stats_1d(1.0, 1.0)
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-8)

    def test_one_dimensional_closed_form(self):
        a = stats_1d(0.5, 2.0)
        b = stats_1d(-1.5, 0.5)
        expected = frechet_1d_closed_form(0.5, 2.0, -1.5, 0.5)
        assert frechet_distance(a, b) == pytest.approx(expected, rel=1e-10)

    def test_diagonal_case_sums_per_dimension(self):
        a = FeatureStats(np.array([0.0, 1.0]), np.diag([1.0, 4.0]), 5)
        b = FeatureStats(np.array([2.0, 3.0]), np.diag([9.0, 16.0]), 5)
        expected = (frechet_1d_closed_form(0, 1, 2, 9)
                    + frechet_1d_closed_form(1, 4, 3, 16))
        assert frechet_distance(a, b) == pytest.approx(expected, rel=1e-10)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(30, 5))
        y = rng.normal(loc=0.5, size=(25, 5))
        a = FeatureStats(x.mean(0), np.cov(x, rowvar=False, ddof=1), 30)
        b = FeatureStats(y.mean(0), np.cov(y, rowvar=False, ddof=1), 25)
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)

    def test_dimension_mismatch_rejected(self):
        a = stats_1d(0.0, 1.0)
        b = FeatureStats(np.zeros(2), np.eye(2), 3)
        with pytest.raises(ValueError, match="dimension"):
            frechet_distance(a, b)

    def test_non_psd_rejected(self):
        bad = FeatureStats(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]), 3)
        good = FeatureStats(np.zeros(2), np.eye(2), 3)
        with pytest.raises(ValueError, match="positive semi-definite"):
            frechet_distance(bad, good)

    def test_nonnegative_on_random_valid_stats(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            x = rng.normal(size=(12, 3))
            y = rng.normal(size=(12, 3))
            a = FeatureStats(x.mean(0), np.cov(x, rowvar=False, ddof=1), 12)
            b = FeatureStats(y.mean(0), np.cov(y, rowvar=False, ddof=1), 12)
            assert frechet_distance(a, b) >= 0.0


class TestCollectStats:
    def test_identical_images_zero_covariance(self):
        v = np.array([1.0, 2.0, 3.0])
        stats = collect_stats([v, v], identity_extractor)
        assert np.allclose(stats.sigma, 0.0)

    def test_permutation_invariant(self):
        vecs = [np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0, 6.0])]
        a = collect_stats(vecs, identity_extractor)
        b = collect_stats(vecs[::-1], identity_extractor)
        assert np.array_equal(a.mu, b.mu)
        assert np.array_equal(a.sigma, b.sigma)

    def test_hand_computed_mean_and_covariance(self):
        # deviations (-2,-4), (0,-2), (2,6); unbiased divisor 2
        vecs = [np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0, 12.0])]
        stats = collect_stats(vecs, identity_extractor)
        assert np.allclose(stats.mu, [3.0, 6.0], atol=1e-10)
        assert np.allclose(stats.sigma, [[4.0, 10.0], [10.0, 28.0]], atol=1e-10)

    def test_single_image_rejected(self):
        with pytest.raises(ValueError):
            collect_stats([np.zeros(2)], identity_extractor)

    def test_trunk_extractor_feature_width(self, toy_checkpoint_path):
        from handsynth.training import load_checkpoint
        ckpt = load_checkpoint(toy_checkpoint_path)
        extractor = make_trunk_extractor(ckpt.discriminator, width=48)
        imgs = [np.random.default_rng(i).uniform(-1, 1, (3, 64, 48)).astype(np.float32)
                for i in range(3)]
        feats = extractor(imgs)
        assert feats.shape == (3, ckpt.model_config.trunk_channels[-1])


class TestPerWriterFid:
    def _sets(self, shift):
        rng = np.random.default_rng(3)
        real = {w: [rng.normal(size=4) for _ in range(6)] for w in ("w0", "w1")}
        fake = {w: [v + shift for v in vecs] for w, vecs in real.items()}
        return real, fake

    def test_identical_sets_zero(self):
        real, fake = self._sets(0.0)
        assert per_writer_fid(real, fake, identity_extractor) <= 1e-8

    def test_mean_of_per_writer_distances(self):
        real, fake = self._sets(1.0)
        expected = np.mean([
            frechet_distance(collect_stats(real[w], identity_extractor),
                             collect_stats(fake[w], identity_extractor))
            for w in ("w0", "w1")])
        assert per_writer_fid(real, fake, identity_extractor) == pytest.approx(expected)

    def test_writer_set_mismatch_rejected(self):
        real, fake = self._sets(0.0)
        del fake["w1"]
        with pytest.raises(ValueError, match="writer"):
            per_writer_fid(real, fake, identity_extractor)

    def test_single_image_writer_rejected(self):
        real, fake = self._sets(0.0)
        real["w0"] = real["w0"][:1]
        with pytest.raises(ValueError):
            per_writer_fid(real, fake, identity_extractor)


class TestErrorRates:
    def test_equal_strings_zero(self):
        assert cer("abc", "abc") == 0.0
        assert wer("a b", "a b") == 0.0

    def test_kitten_sitting(self):
        assert edit_distance("kitten", "sitting") == 3
        assert cer("kitten", "sitting") == pytest.approx(0.5)

    def test_wer_one_substitution_in_three(self):
        assert wer("a b c", "a x c") == pytest.approx(1 / 3)

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError):
            cer("", "abc")
        with pytest.raises(ValueError):
            wer("   ", "abc")

    def test_empty_hypothesis_is_full_deletion(self):
        assert cer("abcd", "") == 1.0

    @given(st.text(alphabet="ab", min_size=1, max_size=8),
           st.text(alphabet="ab", max_size=8),
           st.text(alphabet="ab", min_size=1, max_size=8))
    @settings(max_examples=60, deadline=None)
    def test_rescaled_triangle_inequality(self, a, b, c):
        lhs = cer(a, b)
        rhs = cer(a, c) + (len(c) / len(a)) * cer(c, b)
        assert lhs <= rhs + 1e-12
