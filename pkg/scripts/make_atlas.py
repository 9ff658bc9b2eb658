#!/usr/bin/env python3
"""Regenerate the built-in glyph atlas shipped under src/handsynth/assets/.

Renders printable ASCII with DejaVuSans into 64-pixel-tall tiles, binarizes
the ink, and writes the sheet PNG plus the metrics sidecar. The output files
are committed as repository assets so rendering never depends on the fonts
installed on the machine running the package.
"""

import math
import os

import numpy as np
from PIL import Image, ImageDraw, ImageFont

FONT_PATH = "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf"
FONT_SIZE = 42
TILE_H = 64
BASELINE = 46
CHARS = [chr(c) for c in range(32, 127)]

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "handsynth", "assets")


def main():
    font = ImageFont.truetype(FONT_PATH, FONT_SIZE)
    tiles = []
    for ch in CHARS:
        advance = max(1, int(math.ceil(font.getlength(ch))))
        img = Image.new("L", (advance, TILE_H), 0)
        draw = ImageDraw.Draw(img)
        draw.text((0, BASELINE), ch, fill=255, font=font, anchor="ls")
        mask = (np.asarray(img) >= 128).astype(np.uint8) * 255
        tiles.append((ch, mask, advance))

    sheet_w = sum(t[2] for t in tiles)
    sheet = np.zeros((TILE_H, sheet_w), dtype=np.uint8)
    lines = []
    x = 0
    for ch, mask, advance in tiles:
        sheet[:, x:x + advance] = mask
        lines.append(f"{ch}\t{x}\t0\t{advance}\t{TILE_H}\t{advance}")
        x += advance

    os.makedirs(OUT_DIR, exist_ok=True)
    Image.fromarray(sheet).save(os.path.join(OUT_DIR, "atlas.png"))
    with open(os.path.join(OUT_DIR, "atlas_metrics.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    print(f"wrote {len(tiles)} glyphs, sheet {sheet.shape[1]}x{sheet.shape[0]}")


if __name__ == "__main__":
    main()
