"""Deterministic rendering of printed-style conditioning images.

A glyph atlas (raster sheet + metrics sidecar) supplies monochrome glyph
masks and advance widths. Layout functions place glyphs on a 64-tall canvas
and `render` stamps them in black on a white background. All functions are
pure; identical inputs give bit-identical rasters.
"""

import math
from dataclasses import dataclass
from importlib import resources

import cv2
import numpy as np

from .core import IMAGE_HEIGHT

NATIVE_EM = 64
MAX_CANVAS_WIDTH = 4096
WIDTH_MULTIPLE = 16


class LayoutError(Exception):
    """Raised when text cannot be placed under the requested constraints."""


@dataclass(frozen=True)
class Placement:
    char: str
    x: int  # top-left corner of the unrotated glyph box
    y: int
    rotation: float  # radians, applied about the glyph box center


@dataclass(frozen=True)
class LayoutSpec:
    glyph_placements: tuple
    nominal_em: int
    canvas_width: int


@dataclass(frozen=True)
class Glyph:
    mask: np.ndarray  # (h, w) bool, True = ink
    advance: int


class GlyphAtlas:
    """Monochrome glyph bitmaps plus per-character advance widths.

    The sheet is a single raster with ink at >= 128; the metrics sidecar has
    one line per glyph: character, x, y, w, h, advance (tab separated).
    """

    def __init__(self, glyphs, em=NATIVE_EM):
        self.glyphs = glyphs
        self.em = em

    @classmethod
    def from_arrays(cls, sheet, metrics_text, em=NATIVE_EM):
        glyphs = {}
        for lineno, line in enumerate(metrics_text.splitlines(), start=1):
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise ValueError(f"metrics line {lineno}: expected 6 fields, got {len(fields)}")
            ch = fields[0]
            x, y, w, h, advance = (int(v) for v in fields[1:])
            glyphs[ch] = Glyph(mask=sheet[y : y + h, x : x + w] >= 128, advance=advance)
        return cls(glyphs, em=em)

    @classmethod
    def load(cls, sheet_path, metrics_path):
        sheet = cv2.imread(str(sheet_path), cv2.IMREAD_GRAYSCALE)
        if sheet is None:
            raise ValueError(f"cannot read atlas sheet: {sheet_path}")
        with open(metrics_path, encoding="utf-8") as f:
            metrics_text = f.read()
        return cls.from_arrays(sheet, metrics_text)

    @classmethod
    def builtin(cls):
        """The atlas shipped with the package (ASCII 32-126)."""
        pkg = resources.files("handsynth") / "assets"
        raw = np.frombuffer((pkg / "atlas.png").read_bytes(), dtype=np.uint8)
        sheet = cv2.imdecode(raw, cv2.IMREAD_GRAYSCALE)
        metrics_text = (pkg / "atlas_metrics.txt").read_text(encoding="utf-8")
        return cls.from_arrays(sheet, metrics_text)

    def __contains__(self, char):
        return char in self.glyphs

    def glyph(self, char):
        try:
            return self.glyphs[char]
        except KeyError:
            raise LayoutError(f"atlas has no glyph for character {char!r}") from None

    def covers(self, charset):
        return all(c in self.glyphs for c in charset.symbols)

    def scaled(self, em):
        """Derived atlas with glyph bodies `em` pixels tall.

        Advances are rounded to integers; masks are resized with nearest
        neighbor so scaling stays deterministic.
        """
        if em == self.em:
            return self
        if not 0 < em <= IMAGE_HEIGHT:
            raise ValueError(f"em must be in 1..{IMAGE_HEIGHT}, got {em}")
        factor = em / self.em
        glyphs = {}
        for ch, g in self.glyphs.items():
            h, w = g.mask.shape
            nh = max(1, int(round(h * factor)))
            nw = max(1, int(round(w * factor)))
            mask = cv2.resize(
                g.mask.astype(np.uint8), (nw, nh), interpolation=cv2.INTER_NEAREST
            ).astype(bool)
            glyphs[ch] = Glyph(mask=mask, advance=max(1, int(round(g.advance * factor))))
        return GlyphAtlas(glyphs, em=em)


def _round_up_width(width):
    rounded = max(WIDTH_MULTIPLE, math.ceil(width / WIDTH_MULTIPLE) * WIDTH_MULTIPLE)
    if rounded > MAX_CANVAS_WIDTH:
        raise LayoutError(f"layout is {rounded} px wide, maximum canvas is {MAX_CANVAS_WIDTH}")
    return rounded


def _centered_y(glyph_h):
    # glyph boxes are vertically centered on row 32
    return IMAGE_HEIGHT // 2 - glyph_h // 2


def layout_linear(text, interval_px, atlas):
    """Place characters left to right with a fixed gap between glyph boxes.

    The gap between consecutive glyph boxes is exactly interval_px, so
    x(next) - x(prev) = advance(prev) + interval_px. Canvas width is the
    total occupied width rounded up to a multiple of 16.
    """
    if not text:
        raise LayoutError("cannot lay out empty text")
    if interval_px < 0:
        raise LayoutError("interval_px must be >= 0")
    placements = []
    x = 0
    for i, ch in enumerate(text):
        g = atlas.glyph(ch)
        if i > 0:
            x += interval_px
        placements.append(Placement(char=ch, x=x, y=_centered_y(g.mask.shape[0]), rotation=0.0))
        x += g.advance
    return LayoutSpec(
        glyph_placements=tuple(placements),
        nominal_em=atlas.em,
        canvas_width=_round_up_width(x),
    )


def _rotated_extent(w, h, angle):
    c, s = abs(math.cos(angle)), abs(math.sin(angle))
    return w * c + h * s, w * s + h * c


def layout_curved(text, radius_px, arc_span_rad, atlas):
    """Place glyph centers at equal arc-length spacing along a circular arc.

    Each glyph is rotated to the local tangent. The radius must be large
    enough that consecutive glyph boxes do not overlap along the arc;
    otherwise the layout is rejected and the error reports the minimum
    feasible radius.
    """
    if not text:
        raise LayoutError("cannot lay out empty text")
    if arc_span_rad < 0:
        raise LayoutError("arc_span_rad must be >= 0")
    if len(text) == 1 or arc_span_rad == 0:
        # degenerate arc: identical to a linear layout with zero interval
        return layout_linear(text, 0, atlas)
    if radius_px <= 0:
        raise LayoutError("radius_px must be positive")

    glyphs = [atlas.glyph(ch) for ch in text]
    n = len(text)
    # consecutive glyphs each claim half their advance along the arc
    need = max(
        (glyphs[i].advance + glyphs[i + 1].advance) / 2.0 for i in range(n - 1)
    )
    min_radius = need * (n - 1) / arc_span_rad
    if radius_px < min_radius:
        raise LayoutError(
            f"glyphs overlap at radius {radius_px:g}; "
            f"minimum feasible radius is {math.ceil(min_radius)} px"
        )

    # glyph i sits at angle phi measured from the top of the circle,
    # y grows downward so the text bows upward in the middle
    centers = []
    for i, g in enumerate(glyphs):
        phi = -arc_span_rad / 2 + i * arc_span_rad / (n - 1)
        cx = radius_px * math.sin(phi)
        cy = -radius_px * math.cos(phi)
        centers.append((cx, cy, phi, g))

    # shift so every rotated glyph box starts at x >= 0 and the ink band
    # is vertically centered on row 32
    lefts, rights, tops, bottoms = [], [], [], []
    for cx, cy, phi, g in centers:
        h, w = g.mask.shape
        ew, eh = _rotated_extent(w, h, phi)
        lefts.append(cx - ew / 2)
        rights.append(cx + ew / 2)
        tops.append(cy - eh / 2)
        bottoms.append(cy + eh / 2)
    x_shift = -min(lefts)
    y_shift = IMAGE_HEIGHT / 2 - (min(tops) + max(bottoms)) / 2
    if max(bottoms) - min(tops) > IMAGE_HEIGHT:
        raise LayoutError(
            "curved layout exceeds the 64-pixel canvas height; "
            "increase the radius or reduce the arc span"
        )

    placements = []
    for cx, cy, phi, g in centers:
        h, w = g.mask.shape
        placements.append(
            Placement(
                char=text[len(placements)],
                x=int(round(cx + x_shift - w / 2)),
                y=int(round(cy + y_shift - h / 2)),
                rotation=phi,
            )
        )
    return LayoutSpec(
        glyph_placements=tuple(placements),
        nominal_em=atlas.em,
        canvas_width=_round_up_width(max(rights) + x_shift),
    )


def _stamp(canvas, mask, x, y):
    h, w = mask.shape
    ch, cw = canvas.shape
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, cw), min(y + h, ch)
    if x0 >= x1 or y0 >= y1:
        return
    sub = mask[y0 - y : y1 - y, x0 - x : x1 - x]
    region = canvas[y0:y1, x0:x1]
    region[sub] = -1.0


def render(layout, atlas):
    """Rasterize a layout to a (3, 64, W) float32 image, white = +1."""
    canvas = np.ones((IMAGE_HEIGHT, layout.canvas_width), dtype=np.float32)
    for p in layout.glyph_placements:
        mask = atlas.glyph(p.char).mask
        if p.rotation != 0.0:
            h, w = mask.shape
            ew, eh = _rotated_extent(w, h, p.rotation)
            pw, ph = int(math.ceil(ew)) + 2, int(math.ceil(eh)) + 2
            padded = np.zeros((ph, pw), dtype=np.uint8)
            ox, oy = (pw - w) // 2, (ph - h) // 2
            padded[oy : oy + h, ox : ox + w] = mask
            rot = cv2.getRotationMatrix2D((pw / 2.0, ph / 2.0), -math.degrees(p.rotation), 1.0)
            turned = cv2.warpAffine(
                padded, rot, (pw, ph), flags=cv2.INTER_NEAREST, borderValue=0
            ).astype(bool)
            # p.x/p.y anchor the unrotated box; convert to the padded box corner
            cx, cy = p.x + w / 2.0, p.y + h / 2.0
            _stamp(canvas, turned, int(round(cx - pw / 2.0)), int(round(cy - ph / 2.0)))
        else:
            _stamp(canvas, mask.astype(bool), p.x, p.y)
    return np.repeat(canvas[None, :, :], 3, axis=0)


def render_text(text, atlas, interval_px=0):
    """Convenience wrapper: linear layout then render."""
    return render(layout_linear(text, interval_px, atlas), atlas)


def normalize_size(image, width=400):
    """Fit a (3, 64, W) image to the target width.

    Narrower images are right-padded with white, wider ones are resampled
    down, exact-width images pass through unchanged.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] != 3 or img.shape[1] != IMAGE_HEIGHT:
        raise ValueError(f"expected a (3, {IMAGE_HEIGHT}, W) image, got shape {img.shape}")
    w = img.shape[2]
    if w == width:
        return img
    if w < width:
        out = np.ones((3, IMAGE_HEIGHT, width), dtype=np.float32)
        out[:, :, :w] = img
        return out
    hwc = img.transpose(1, 2, 0)
    resized = cv2.resize(hwc, (width, IMAGE_HEIGHT), interpolation=cv2.INTER_AREA)
    return np.ascontiguousarray(resized.transpose(2, 0, 1))
