"""Per-writer latent style vectors, trainable jointly with the generator.

The bank is an n-row embedding table (one row per writer, d columns).
Lookups go through the embedding forward so gradients reach the table
during the generator step. Gradients are sparse: rows of writers absent
from a batch receive exactly zero update when paired with SparseAdam.
"""

import numpy as np
import torch
import torch.nn as nn

STYLE_DIM = 256


class StyleBank(nn.Module):
    def __init__(self, num_writers, dim=STYLE_DIM):
        super().__init__()
        if num_writers < 1:
            raise ValueError("style bank needs at least one writer")
        self.embedding = nn.Embedding(num_writers, dim, sparse=True)
        nn.init.normal_(self.embedding.weight, mean=0.0, std=0.02)

    @property
    def num_writers(self):
        return self.embedding.num_embeddings

    @property
    def dim(self):
        return self.embedding.embedding_dim

    @property
    def table(self):
        """The d x n matrix view; column j is writer j's vector."""
        return self.embedding.weight.t()

    def _check_index(self, writer_index):
        if not 0 <= writer_index < self.num_writers:
            raise ValueError(
                f"writer index {writer_index} out of range 0..{self.num_writers - 1}"
            )

    def lookup(self, writer_index):
        """Style vector of one writer, shape (d,). Participates in autograd."""
        self._check_index(int(writer_index))
        idx = torch.tensor([int(writer_index)], device=self.embedding.weight.device)
        return self.embedding(idx)[0]

    def lookup_batch(self, writer_indices):
        """Style vectors for a batch of writer indices, shape (B, d)."""
        idx = torch.as_tensor(writer_indices, dtype=torch.long,
                              device=self.embedding.weight.device)
        if idx.numel() and (idx.min() < 0 or idx.max() >= self.num_writers):
            raise ValueError("writer index out of range")
        return self.embedding(idx)

    @torch.no_grad()
    def bounds(self):
        """Per-dimension (lo, hi) over all writers, recomputed from the table."""
        w = self.embedding.weight
        return w.min(dim=0).values.clone(), w.max(dim=0).values.clone()

    def sample_style(self, rng=None):
        """Draw each element uniformly and independently from [lo_k, hi_k].

        With a single writer the bounds collapse and the draw returns the
        stored column exactly.
        """
        if rng is None:
            rng = np.random.default_rng()
        lo, hi = self.bounds()
        lo = lo.cpu().numpy().astype(np.float64)
        hi = hi.cpu().numpy().astype(np.float64)
        values = rng.uniform(lo, hi)
        return torch.as_tensor(values, dtype=torch.float32,
                               device=self.embedding.weight.device)

    def set_element(self, z, k, v):
        """Copy of z with element k set to v clamped into the bank's bounds.

        The bank itself is never mutated.
        """
        if not 0 <= k < self.dim:
            raise ValueError(f"dimension index {k} out of range 0..{self.dim - 1}")
        lo, hi = self.bounds()
        out = z.detach().clone()
        out[k] = min(max(float(v), float(lo[k])), float(hi[k]))
        return out


def interpolate(z_a, z_b, t):
    """Linear blend (1-t)*z_a + t*z_b; endpoints return exact copies."""
    if z_a.shape != z_b.shape:
        raise ValueError(f"style vectors differ in shape: {z_a.shape} vs {z_b.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    if t == 0.0:
        return z_a.detach().clone()
    if t == 1.0:
        return z_b.detach().clone()
    return (1.0 - t) * z_a + t * z_b
