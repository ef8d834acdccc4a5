"""Annotation and prediction file I/O.

Three text formats: normalized "class cx cy w h" label lines, VOC-style XML
annotations, and the prediction interchange format
``image_id class score x1 y1 x2 y2``. Every parse error carries a location
(line number or element path); canonical output uses 6-decimal fixed-point
floats so write-then-read round trips are byte-stable.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .metrics import GroundTruthBox


class ParseError(ValueError):
    """Malformed input; the message names the offending line or element."""


@dataclass(frozen=True)
class PredictionRecord:
    """One scored box tied to an image id (the evaluator's input unit)."""

    image_id: str
    class_id: int
    score: float
    box: tuple[float, float, float, float]

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if self.class_id < 0:
            raise ValueError(f"negative class id {self.class_id}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        x1, y1, x2, y2 = self.box
        if x1 > x2 or y1 > y2:
            raise ValueError(f"box corners out of order: {self.box}")


def _fmt(value: float) -> str:
    return f"{value:.6f}"


# ---------------------------------------------------------------------------
# Normalized label lines: "class cx cy w h"
# ---------------------------------------------------------------------------


def parse_yolo_labels(
    text: str,
    image_width: int,
    image_height: int,
    image_id: str = "image",
) -> tuple[list[GroundTruthBox], list[str]]:
    """Parse normalized center-format label lines into pixel boxes.

    Returns (boxes, diagnostics). Pixel boxes are clamped to the image;
    zero-area boxes are skipped, each noted in the diagnostics with its line
    number. Malformed lines raise ParseError.
    """
    if image_width < 1 or image_height < 1:
        raise ValueError(f"bad image dimensions {image_width}x{image_height}")
    boxes: list[GroundTruthBox] = []
    diagnostics: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ParseError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            class_id = int(parts[0])
            cx, cy, w, h = (float(p) for p in parts[1:])
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric field in {line!r}") from None
        if class_id < 0:
            raise ParseError(f"line {lineno}: negative class id {class_id}")
        for name, v in (("cx", cx), ("cy", cy), ("w", w), ("h", h)):
            if not 0.0 <= v <= 1.0:
                raise ParseError(f"line {lineno}: {name}={v:g} outside [0, 1]")
        x1 = max((cx - w / 2.0) * image_width, 0.0)
        y1 = max((cy - h / 2.0) * image_height, 0.0)
        x2 = min((cx + w / 2.0) * image_width, float(image_width))
        y2 = min((cy + h / 2.0) * image_height, float(image_height))
        if x2 - x1 <= 0.0 or y2 - y1 <= 0.0:
            diagnostics.append(f"line {lineno}: zero-area box rejected")
            continue
        boxes.append(GroundTruthBox(image_id=image_id, box=(x1, y1, x2, y2), class_id=class_id))
    return boxes, diagnostics


def write_yolo_labels(
    boxes: Sequence[GroundTruthBox], image_width: int, image_height: int
) -> str:
    """Render pixel boxes back to normalized label lines (canonical 6-decimal form)."""
    lines = []
    for g in boxes:
        x1, y1, x2, y2 = g.box
        cx = (x1 + x2) / 2.0 / image_width
        cy = (y1 + y2) / 2.0 / image_height
        w = (x2 - x1) / image_width
        h = (y2 - y1) / image_height
        lines.append(f"{g.class_id} {_fmt(cx)} {_fmt(cy)} {_fmt(w)} {_fmt(h)}")
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------------------
# VOC-style XML annotations
# ---------------------------------------------------------------------------


def parse_voc_xml(
    text: str,
    class_names: Mapping[str, int],
    image_id: Optional[str] = None,
) -> tuple[list[GroundTruthBox], dict]:
    """Parse an annotation document with object/bndbox/xmin..ymax elements.

    ``class_names`` maps object names to class ids; an unknown name is an
    error (never silently dropped). Returns (boxes, metadata) where metadata
    carries filename/width/height when present.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as err:
        raise ParseError(f"not well-formed XML: {err}") from None
    metadata: dict = {}
    filename = root.findtext("filename")
    if filename:
        metadata["filename"] = filename
    size = root.find("size")
    if size is not None:
        for key in ("width", "height"):
            value = size.findtext(key)
            if value is not None:
                try:
                    metadata[key] = int(value)
                except ValueError:
                    raise ParseError(f"size/{key}: non-numeric value {value!r}") from None
    if image_id is None:
        stem = (filename or "").rsplit(".", 1)[0]
        if not stem:
            raise ParseError("no image_id supplied and no <filename> element present")
        image_id = stem

    boxes: list[GroundTruthBox] = []
    for index, obj in enumerate(root.iter("object")):
        where = f"object[{index}]"
        name = obj.findtext("name")
        if name is None:
            raise ParseError(f"{where}: missing <name>")
        if name not in class_names:
            raise ParseError(f"{where}: unknown class name {name!r}")
        bndbox = obj.find("bndbox")
        if bndbox is None:
            raise ParseError(f"{where}: missing <bndbox>")
        coords = {}
        for key in ("xmin", "ymin", "xmax", "ymax"):
            value = bndbox.findtext(key)
            if value is None:
                raise ParseError(f"{where}/bndbox: missing <{key}>")
            try:
                coords[key] = float(value)
            except ValueError:
                raise ParseError(f"{where}/bndbox/{key}: non-numeric value {value!r}") from None
        if coords["xmin"] > coords["xmax"] or coords["ymin"] > coords["ymax"]:
            raise ParseError(f"{where} ({name}): box corners out of order")
        boxes.append(
            GroundTruthBox(
                image_id=image_id,
                box=(coords["xmin"], coords["ymin"], coords["xmax"], coords["ymax"]),
                class_id=class_names[name],
            )
        )
    return boxes, metadata


# ---------------------------------------------------------------------------
# Prediction interchange: "image_id class score x1 y1 x2 y2"
# ---------------------------------------------------------------------------


def read_predictions(text: str) -> list[PredictionRecord]:
    records: list[PredictionRecord] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ParseError(f"line {lineno}: expected 7 fields, got {len(parts)}")
        try:
            class_id = int(parts[1])
            score = float(parts[2])
            box = tuple(float(p) for p in parts[3:])
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric field in {line!r}") from None
        try:
            records.append(
                PredictionRecord(image_id=parts[0], class_id=class_id, score=score, box=box)
            )
        except ValueError as err:
            raise ParseError(f"line {lineno}: {err}") from None
    return records


def write_predictions(records: Sequence[PredictionRecord]) -> str:
    """Canonical rendering: sorted by image_id then descending score (stable),
    floats at 6 decimals."""
    indexed = sorted(enumerate(records), key=lambda t: (t[1].image_id, -t[1].score, t[0]))
    lines = []
    for _, r in indexed:
        x1, y1, x2, y2 = r.box
        lines.append(
            f"{r.image_id} {r.class_id} {_fmt(r.score)} "
            f"{_fmt(x1)} {_fmt(y1)} {_fmt(x2)} {_fmt(y2)}"
        )
    return "".join(line + "\n" for line in lines)
