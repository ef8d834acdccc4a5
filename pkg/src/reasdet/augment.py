"""Box-aware dataset augmentation: horizontal flip, grayscale, additive
gaussian noise, contrast, brightness, and the deterministic 7-fold expansion.

All pixel math is 8-bit in/out with round-half-up; image dimensions and box
counts never change; only the flip touches box coordinates. Per-record
randomness derives from (global seed, image id, recipe tag), so output is
independent of processing order and worker count.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from .metrics import GroundTruthBox


@dataclass(frozen=True)
class HFlip:
    tag: str = "hflip"


@dataclass(frozen=True)
class Grayscale:
    tag: str = "gray"


@dataclass(frozen=True)
class Noise:
    std: float

    def __post_init__(self):
        if not 0.0 < self.std <= 50.0:
            raise ValueError(f"noise std {self.std} outside (0, 50]")

    @property
    def tag(self) -> str:
        return f"noise{self.std:g}"


@dataclass(frozen=True)
class Contrast:
    factor: float

    def __post_init__(self):
        if not 0.5 <= self.factor <= 2.0:
            raise ValueError(f"contrast factor {self.factor} outside [0.5, 2]")

    @property
    def tag(self) -> str:
        return f"contrast{self.factor:g}"


@dataclass(frozen=True)
class Brightness:
    delta: float

    def __post_init__(self):
        if not -80.0 <= self.delta <= 80.0:
            raise ValueError(f"brightness delta {self.delta} outside [-80, 80]")

    @property
    def tag(self) -> str:
        return f"bright{self.delta:+g}"


AugmentOp = Union[HFlip, Grayscale, Noise, Contrast, Brightness]

# The 7-transform recipe behind the 7-fold expansion.
DEFAULT_RECIPE: tuple[AugmentOp, ...] = (
    HFlip(),
    Grayscale(),
    Noise(10.0),
    Contrast(1.3),
    Contrast(0.7),
    Brightness(40.0),
    Brightness(-40.0),
)


@dataclass(frozen=True)
class ImageRecord:
    """8-bit RGB image plus its annotations; the unit of augmentation."""

    image_id: str
    pixels: np.ndarray            # (H, W, 3) uint8
    annotations: tuple[GroundTruthBox, ...] = ()

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {self.pixels.dtype}")
        h, w = self.pixels.shape[:2]
        if h < 1 or w < 1:
            raise ValueError("image must be at least 1x1")
        object.__setattr__(self, "annotations", tuple(self.annotations))
        for g in self.annotations:
            x1, y1, x2, y2 = g.box
            if x1 < 0 or y1 < 0 or x2 > w or y2 > h:
                raise ValueError(f"annotation {g.box} outside image bounds {w}x{h}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _round_clip(values: np.ndarray) -> np.ndarray:
    # round-half-up, then clamp to the 8-bit range
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def _record_seed(seed: int, image_id: str, tag: str) -> int:
    digest = hashlib.sha256(f"{seed}:{image_id}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def apply(op: AugmentOp, rec: ImageRecord, seed: int = 0) -> ImageRecord:
    """One transform applied to one record; annotations change only under flip."""
    pixels = rec.pixels
    boxes = rec.annotations
    if isinstance(op, HFlip):
        pixels = np.ascontiguousarray(pixels[:, ::-1, :])
        w = rec.width
        boxes = tuple(
            replace(g, box=(w - g.box[2], g.box[1], w - g.box[0], g.box[3])) for g in boxes
        )
    elif isinstance(op, Grayscale):
        rgb = pixels.astype(np.float64)
        luma = _round_clip(0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2])
        pixels = np.repeat(luma[..., None], 3, axis=2)
    elif isinstance(op, Noise):
        rng = np.random.default_rng(_record_seed(seed, rec.image_id, op.tag))
        noise = rng.normal(0.0, op.std, size=pixels.shape)
        pixels = _round_clip(pixels.astype(np.float64) + noise)
    elif isinstance(op, Contrast):
        pixels = _round_clip(127.5 + op.factor * (pixels.astype(np.float64) - 127.5))
    elif isinstance(op, Brightness):
        pixels = _round_clip(pixels.astype(np.float64) + op.delta)
    else:
        raise TypeError(f"unknown augmentation op {op!r}")
    return ImageRecord(image_id=rec.image_id, pixels=pixels, annotations=boxes)


def expand_dataset(
    records: list[ImageRecord], seed: int = 0, include_originals: bool = False
) -> list[ImageRecord]:
    """Emit the 7 fixed recipe variants per record (id + "_" + tag); with
    ``include_originals`` the sources are kept too. Deterministic per seed."""
    if not records:
        raise ValueError("expand_dataset needs at least one record")
    out: list[ImageRecord] = []
    for rec in records:
        if include_originals:
            out.append(rec)
        for op in DEFAULT_RECIPE:
            augmented = apply(op, rec, seed)
            out.append(replace(augmented, image_id=f"{rec.image_id}_{op.tag}"))
    return out


# ---------------------------------------------------------------------------
# Image file I/O: PNG via Pillow, binary PPM (P6) as the dependency-free path
# ---------------------------------------------------------------------------


def read_image(path: Union[str, Path]) -> np.ndarray:
    """Load an 8-bit RGB array from a .png or binary .ppm file."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return _read_ppm(path.read_bytes(), str(path))
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def write_image(path: Union[str, Path], pixels: np.ndarray) -> None:
    path = Path(path)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) uint8 pixels, got {pixels.shape} {pixels.dtype}")
    if path.suffix.lower() == ".ppm":
        h, w = pixels.shape[:2]
        path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes())
        return
    buffer = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buffer, format="PNG")
    path.write_bytes(buffer.getvalue())


def _read_ppm(blob: bytes, name: str) -> np.ndarray:
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4 and pos < len(blob):
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":  # comment runs to end of line
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if len(fields) != 4 or fields[0] != b"P6":
        raise ValueError(f"{name}: not a binary P6 PPM file")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{name}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    body = blob[pos : pos + width * height * 3]
    if len(body) != width * height * 3:
        raise ValueError(f"{name}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).copy()
