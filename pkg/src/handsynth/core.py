"""Charset handling, transcript encoding, and dataset ingestion.

Images are handled as float32 arrays of shape (3, 64, W) with values in
[-1, 1] and white mapped to +1. Loaded samples keep their native width;
width normalization happens later in the pipeline.
"""

import os
from dataclasses import dataclass, field

import cv2
import numpy as np

IMAGE_HEIGHT = 64


class DatasetError(Exception):
    """Raised for malformed manifests, missing images, or bad transcripts."""


class UnknownCharacterError(DatasetError):
    """Raised when a transcript contains a character outside the charset."""

    def __init__(self, char):
        self.char = char
        super().__init__(f"character {char!r} is not in the charset")


@dataclass(frozen=True)
class Charset:
    """Ordered set of symbols plus a trailing end-of-sequence class.

    The EOS class index is always len(symbols): class indices 0..len-1 are
    the symbols themselves, index len(symbols) marks end of sequence.
    """

    symbols: tuple
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("charset symbols must be unique")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.symbols)})

    @classmethod
    def from_text(cls, text):
        """Build a charset from all characters in `text`, sorted by code point."""
        return cls(tuple(sorted(set(text))))

    @property
    def eos_index(self):
        return len(self.symbols)

    @property
    def num_classes(self):
        """Symbol classes plus EOS."""
        return len(self.symbols) + 1

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, char):
        return char in self._index

    def index(self, char):
        try:
            return self._index[char]
        except KeyError:
            raise UnknownCharacterError(char) from None

    def symbol(self, index):
        return self.symbols[index]


def encode_transcript(text, charset):
    """Map a string to per-character class indices with EOS appended.

    Result length is len(text) + 1. Unknown characters raise
    UnknownCharacterError naming the offender.
    """
    return [charset.index(c) for c in text] + [charset.eos_index]


def decode_prediction(step_logits, charset):
    """Greedy-decode per-step class scores into a string.

    Takes the argmax of each row and truncates at the first EOS; rows after
    the EOS are ignored. Each row must have charset.num_classes entries.
    """
    rows = np.asarray(step_logits)
    if rows.ndim != 2 or rows.shape[1] != charset.num_classes:
        raise ValueError(
            f"expected rows of {charset.num_classes} class scores, got shape {rows.shape}"
        )
    out = []
    for row in rows:
        idx = int(np.argmax(row))
        if idx == charset.eos_index:
            break
        out.append(charset.symbol(idx))
    return "".join(out)


@dataclass
class LabeledSample:
    image: np.ndarray  # (3, 64, W) float32 in [-1, 1]
    transcript: str
    writer_id: str


@dataclass
class Dataset:
    samples: list
    writer_index: dict  # writer_id -> dense index, first-appearance order
    charset: Charset

    @property
    def num_writers(self):
        return len(self.writer_index)

    def __len__(self):
        return len(self.samples)


def load_image(path):
    """Load an image file as (3, 64, W) float32 in [-1, 1], white = +1.

    Grayscale inputs are replicated to 3 channels; any input is resized to
    height 64 preserving aspect ratio.
    """
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DatasetError(f"cannot read image file: {path}")
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    elif raw.shape[2] == 4:
        raw = raw[:, :, :3]
    h, w = raw.shape[:2]
    if h != IMAGE_HEIGHT:
        new_w = max(1, int(round(w * IMAGE_HEIGHT / h)))
        raw = cv2.resize(raw, (new_w, IMAGE_HEIGHT), interpolation=cv2.INTER_AREA)
    img = raw.astype(np.float32) / 127.5 - 1.0
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def _parse_manifest(manifest_path):
    rows = []
    with open(manifest_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DatasetError(
                    f"row {lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            rows.append((lineno, fields[0], fields[1], fields[2]))
    return rows


def load_dataset(manifest_path, charset=None):
    """Load a tab-separated manifest of (image path, transcript, writer id).

    Paths are resolved relative to the manifest location. Writer ids are
    assigned dense indices 0..n-1 in first-appearance order. When `charset`
    is None it is derived as the sorted union of all transcript characters;
    otherwise every transcript is validated against the given charset.
    """
    rows = _parse_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))

    if charset is None:
        charset = Charset.from_text("".join(r[2] for r in rows))

    samples = []
    writer_index = {}
    for lineno, rel_path, transcript, writer_id in rows:
        for c in transcript:
            if c not in charset:
                raise DatasetError(
                    f"row {lineno}: transcript character {c!r} is not in the charset"
                )
        path = os.path.join(base, rel_path)
        if not os.path.isfile(path):
            raise DatasetError(f"row {lineno}: image file not found: {rel_path}")
        try:
            image = load_image(path)
        except DatasetError as e:
            raise DatasetError(f"row {lineno}: {e}") from None
        if writer_id not in writer_index:
            writer_index[writer_id] = len(writer_index)
        samples.append(LabeledSample(image=image, transcript=transcript, writer_id=writer_id))

    return Dataset(samples=samples, writer_index=writer_index, charset=charset)
