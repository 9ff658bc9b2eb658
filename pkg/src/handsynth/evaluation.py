"""Quantitative evaluation: Fréchet feature distance and WER/CER.

The default feature extractor is the trained discriminator trunk followed
by global average pooling. Absolute Fréchet values from it are not
comparable to numbers computed with other extractors; only relative
comparisons under one extractor are meaningful.
"""

import numpy as np
import torch

from .render import normalize_size

EPS_REG = 1e-6


class FeatureStats:
    """Gaussian summary of a feature sample: mean, covariance, count."""

    def __init__(self, mu, sigma, count):
        mu = np.asarray(mu, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        if mu.ndim != 1 or sigma.shape != (mu.shape[0], mu.shape[0]):
            raise ValueError(f"inconsistent stats shapes: {mu.shape} vs {sigma.shape}")
        if count < 2:
            raise ValueError("need at least 2 samples")
        if not np.allclose(sigma, sigma.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")
        self.mu = mu
        self.sigma = (sigma + sigma.T) / 2.0
        self.count = int(count)

    @property
    def dim(self):
        return self.mu.shape[0]


def make_trunk_extractor(discriminator, width=400):
    """Feature function: images -> pooled trunk activations (N, C)."""

    def extract(images):
        batch = torch.stack([
            torch.from_numpy(normalize_size(np.asarray(img, dtype=np.float32), width))
            for img in images
        ])
        discriminator.eval()
        with torch.no_grad():
            feats = discriminator.trunk_features(batch)
        return feats.mean(dim=(2, 3)).numpy()

    return extract


def collect_stats(images, feature_extractor):
    """Mean and unbiased covariance of extractor features over the images."""
    images = list(images)
    if len(images) < 2:
        raise ValueError("need at least 2 images to estimate covariance")
    feats = np.asarray(feature_extractor(images), dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != len(images):
        raise ValueError(f"extractor must return one feature row per image, got {feats.shape}")
    mu = feats.mean(axis=0)
    sigma = np.cov(feats, rowvar=False, ddof=1)
    sigma = np.atleast_2d(sigma)
    return FeatureStats(mu, sigma, len(images))


def _psd_sqrt(matrix):
    vals, vecs = np.linalg.eigh(matrix)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(stats_a, stats_b):
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The matrix square root uses the symmetrized eigendecomposition with
    negative eigenvalues clipped; a small diagonal regularizer is added
    when the decomposition fails outright.
    """
    if stats_a.dim != stats_b.dim:
        raise ValueError(f"dimension mismatch: {stats_a.dim} vs {stats_b.dim}")
    for s in (stats_a, stats_b):
        min_eig = float(np.linalg.eigvalsh(s.sigma).min())
        if min_eig < -1e-6 * max(1.0, float(np.abs(s.sigma).max())):
            raise ValueError(f"covariance is not positive semi-definite (min eigenvalue {min_eig:g})")

    def trace_term(s1, s2):
        a = _psd_sqrt(s1)
        m = a @ s2 @ a
        m = (m + m.T) / 2.0
        vals = np.clip(np.linalg.eigvalsh(m), 0.0, None)
        return float(np.trace(s1) + np.trace(s2) - 2.0 * np.sqrt(vals).sum())

    try:
        cross = trace_term(stats_a.sigma, stats_b.sigma)
    except np.linalg.LinAlgError:
        eye = np.eye(stats_a.dim) * EPS_REG
        cross = trace_term(stats_a.sigma + eye, stats_b.sigma + eye)

    diff = stats_a.mu - stats_b.mu
    return max(float(diff @ diff) + cross, 0.0)


def per_writer_fid(real_by_writer, fake_by_writer, feature_extractor):
    """Unweighted mean of per-writer Fréchet distances.

    Both mappings must cover exactly the same writers, each with at least
    two images on both sides.
    """
    if set(real_by_writer) != set(fake_by_writer):
        only_real = sorted(set(real_by_writer) - set(fake_by_writer))
        only_fake = sorted(set(fake_by_writer) - set(real_by_writer))
        raise ValueError(f"writer sets differ (real-only {only_real}, fake-only {only_fake})")
    if not real_by_writer:
        raise ValueError("no writers to evaluate")
    scores = []
    for writer in sorted(real_by_writer):
        real = collect_stats(real_by_writer[writer], feature_extractor)
        fake = collect_stats(fake_by_writer[writer], feature_extractor)
        scores.append(frechet_distance(real, fake))
    return float(np.mean(scores))


def edit_distance(ref, hyp):
    """Levenshtein distance between two sequences."""
    n, m = len(ref), len(hyp)
    prev = np.arange(m + 1)
    for i in range(1, n + 1):
        cur = np.empty(m + 1, dtype=np.int64)
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return int(prev[m])


def cer(reference, hypothesis):
    """Character error rate: edit distance over reference length."""
    if not reference:
        raise ValueError("reference must be nonempty")
    return edit_distance(reference, hypothesis) / len(reference)


def wer(reference, hypothesis):
    """Word error rate over whitespace tokens."""
    ref_words = reference.split()
    if not ref_words:
        raise ValueError("reference must contain at least one word")
    return edit_distance(ref_words, hypothesis.split()) / len(ref_words)
