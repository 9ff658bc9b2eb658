"""Inference: styled handwriting images for arbitrary text and styles.

Styles resolve three ways: a writer index (bank lookup), an explicit vector
(clamped per-dimension into the bank's bounds), or a random sample from the
bank's bounding box. The conditioning image is rendered at whatever width
the layout needs; there is no fixed-width crop at inference.
"""

import json
import os

import cv2
import numpy as np
import torch

from .render import layout_curved, layout_linear, render
from .stylebank import interpolate

RANDOM_STYLE = "random"


def resolve_style(bank, style, rng=None):
    """Turn a style request into a concrete vector.

    Accepts a writer index, the string "random", or an explicit vector
    (anything array-like of length d, clamped into the bank's bounds).
    """
    if isinstance(style, str):
        if style != RANDOM_STYLE:
            raise ValueError(f"unknown style policy {style!r}")
        return bank.sample_style(rng)
    if isinstance(style, (int, np.integer)):
        with torch.no_grad():
            return bank.lookup(int(style)).detach().clone()
    vec = torch.as_tensor(np.asarray(style, dtype=np.float32))
    if vec.dim() != 1 or vec.shape[0] != bank.dim:
        raise ValueError(f"style vector must have length {bank.dim}, got {tuple(vec.shape)}")
    lo, hi = bank.bounds()
    return torch.clamp(vec, lo, hi)


def _check_text(text, charset, atlas):
    bad = sorted({c for c in text if c not in charset})
    if bad:
        raise ValueError(f"characters not in the checkpoint charset: {bad!r}")
    bad = sorted({c for c in text if c not in atlas})
    if bad:
        raise ValueError(f"characters missing from the glyph atlas: {bad!r}")


def make_layout(text, atlas, interval_px=0, curve_radius=None, curve_span=None):
    if curve_radius is not None or curve_span is not None:
        if curve_radius is None or curve_span is None:
            raise ValueError("curved layout needs both curve_radius and curve_span")
        return layout_curved(text, curve_radius, curve_span, atlas)
    return layout_linear(text, interval_px, atlas)


def generate(checkpoint, text, style=RANDOM_STYLE, atlas=None, interval_px=0,
             curve_radius=None, curve_span=None, rng=None):
    """Render the conditioning image and run the generator over it.

    Returns a (3, 64, W) float32 array in [-1, 1] where W is the layout's
    own multiple-of-16 width. Same request with a fixed style vector gives
    bit-identical output.
    """
    if atlas is None:
        from .render import GlyphAtlas
        atlas = GlyphAtlas.builtin()
    _check_text(text, checkpoint.charset, atlas)
    z = resolve_style(checkpoint.bank, style, rng)
    i_print = render(make_layout(text, atlas, interval_px, curve_radius, curve_span), atlas)
    gen = checkpoint.generator
    gen.eval()
    with torch.no_grad():
        out = gen(torch.from_numpy(i_print).unsqueeze(0), z.unsqueeze(0))
    return out[0].numpy()


def style_sweep(checkpoint, text, z_a, z_b, steps, **kwargs):
    """Images along the line from z_a to z_b, endpoints exact."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    z_a = torch.as_tensor(np.asarray(z_a, dtype=np.float32))
    z_b = torch.as_tensor(np.asarray(z_b, dtype=np.float32))
    frames = []
    for i in range(steps):
        z = interpolate(z_a, z_b, i / (steps - 1))
        frames.append(generate(checkpoint, text, style=z, **kwargs))
    return frames


def to_uint8(image):
    """[-1, 1] float image (3, H, W) to (H, W, 3) uint8 for export."""
    arr = np.clip((np.asarray(image) + 1.0) * 127.5, 0, 255)
    return np.round(arr).astype(np.uint8).transpose(1, 2, 0)


def save_image(image, path):
    if not cv2.imwrite(str(path), to_uint8(image)):
        raise OSError(f"cannot write image file: {path}")


def synthesize_dataset(checkpoint, lexicon, count, out_dir, style_policy=RANDOM_STYLE,
                       seed=0, atlas=None, interval_px=0):
    """Write `count` labeled synthetic images plus a manifest and metadata.

    Transcripts are drawn uniformly from the lexicon. Style provenance for
    every record (sampled vector or writer index) goes to meta.json next to
    the manifest. Each item derives its own seed from (seed, index), so
    output is deterministic for a fixed seed.
    """
    if not lexicon:
        raise ValueError("lexicon is empty")
    if count <= 0:
        raise ValueError("count must be positive")
    if style_policy not in (RANDOM_STYLE, "writers"):
        raise ValueError(f"unknown style policy {style_policy!r}")
    if atlas is None:
        from .render import GlyphAtlas
        atlas = GlyphAtlas.builtin()

    bad = [w for w in lexicon if any(c not in checkpoint.charset for c in w)]
    if bad:
        raise ValueError(f"lexicon words with out-of-charset characters: {bad!r}")
    bad = [w for w in lexicon if any(c not in atlas for c in w)]
    if bad:
        raise ValueError(f"lexicon words missing atlas glyphs: {bad!r}")

    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)

    rows, meta = [], []
    for i in range(count):
        rng = np.random.default_rng((seed, i))
        word = lexicon[int(rng.integers(0, len(lexicon)))]
        if style_policy == "writers":
            widx = int(rng.integers(0, checkpoint.bank.num_writers))
            z = resolve_style(checkpoint.bank, widx)
            writer_tag = checkpoint.writer_ids[widx]
            provenance = {"writer_index": widx, "writer_id": writer_tag}
        else:
            z = resolve_style(checkpoint.bank, RANDOM_STYLE, rng)
            writer_tag = f"sampled-{i:05d}"
            provenance = {"sampled_vector": [float(v) for v in z]}
        img = generate(checkpoint, word, style=z, atlas=atlas, interval_px=interval_px)
        rel = os.path.join("images", f"sample_{i:05d}.png")
        save_image(img, os.path.join(out_dir, rel))
        rows.append(f"{rel}\t{word}\t{writer_tag}")
        meta.append({"file": rel, "transcript": word, "style": provenance})

    manifest_path = os.path.join(out_dir, "manifest.tsv")
    with open(manifest_path, "w", encoding="utf-8") as f:
        f.write("# image_path\ttranscript\twriter_id\n")
        f.write("\n".join(rows) + "\n")
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1)
    return manifest_path
