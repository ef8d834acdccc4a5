"""File-format tests: label parsing arithmetic, diagnostics with locations,
and byte-stable round trips on fuzz corpora."""

import numpy as np
import pytest

from reasdet.dataio import (
    ParseError,
    PredictionRecord,
    parse_voc_xml,
    parse_yolo_labels,
    read_predictions,
    write_predictions,
    write_yolo_labels,
)


class TestYoloLabels:
    def test_arithmetic(self):
        boxes, diagnostics = parse_yolo_labels("0 0.5 0.5 0.2 0.3", 100, 200)
        assert diagnostics == []
        assert boxes[0].box == (40.0, 70.0, 60.0, 130.0)
        assert boxes[0].class_id == 0

    def test_empty_file(self):
        assert parse_yolo_labels("", 100, 100) == ([], [])

    def test_blank_lines_skipped(self):
        boxes, _ = parse_yolo_labels("\n0 0.5 0.5 0.2 0.2\n\n", 10, 10)
        assert len(boxes) == 1

    def test_zero_area_rejected_with_line_number(self):
        text = "0 0.5 0.5 0.2 0.2\n0 0.5 0.5 0.0 0.1\n"
        boxes, diagnostics = parse_yolo_labels(text, 100, 100)
        assert len(boxes) == 1
        assert diagnostics == ["line 2: zero-area box rejected"]

    def test_malformed_line_raises_with_line_number(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_yolo_labels("0 0.5 0.5 0.2 0.2\n0 0.5 0.5\n", 100, 100)
        with pytest.raises(ParseError, match="line 1"):
            parse_yolo_labels("0 x 0.5 0.2 0.2", 100, 100)

    def test_out_of_range_values_raise(self):
        with pytest.raises(ParseError, match="outside"):
            parse_yolo_labels("0 1.5 0.5 0.2 0.2", 100, 100)

    def test_clamped_to_image(self):
        boxes, _ = parse_yolo_labels("0 0.95 0.5 0.2 0.2", 100, 100)
        assert boxes[0].box[2] == 100.0

    def test_write_parse_roundtrip_fuzz_corpus(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            lines = []
            for _ in range(int(rng.integers(1, 8))):
                w, h = rng.uniform(0.05, 0.4, 2)
                cx = rng.uniform(w / 2, 1 - w / 2)
                cy = rng.uniform(h / 2, 1 - h / 2)
                lines.append(
                    f"{int(rng.integers(0, 3))} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}"
                )
            text = "".join(line + "\n" for line in lines)
            boxes, diagnostics = parse_yolo_labels(text, 640, 480)
            assert diagnostics == []
            assert write_yolo_labels(boxes, 640, 480) == text


VOC_SAMPLE = """<annotation>
  <filename>orchard_001.png</filename>
  <size><width>640</width><height>480</height></size>
  <object>
    <name>pomelo</name>
    <bndbox><xmin>10</xmin><ymin>20</ymin><xmax>110</xmax><ymax>140</ymax></bndbox>
  </object>
  <object>
    <name>pomelo</name>
    <bndbox><xmin>300.5</xmin><ymin>50</ymin><xmax>420</xmax><ymax>200</ymax></bndbox>
  </object>
</annotation>
"""


class TestVocXml:
    def test_hand_read_fixture(self):
        boxes, metadata = parse_voc_xml(VOC_SAMPLE, {"pomelo": 0})
        assert metadata == {"filename": "orchard_001.png", "width": 640, "height": 480}
        assert [b.box for b in boxes] == [(10, 20, 110, 140), (300.5, 50, 420, 200)]
        assert all(b.image_id == "orchard_001" for b in boxes)

    def test_corner_order_violation_names_object(self):
        bad = VOC_SAMPLE.replace("<xmin>300.5</xmin>", "<xmin>500</xmin>")
        with pytest.raises(ParseError, match=r"object\[1\]"):
            parse_voc_xml(bad, {"pomelo": 0})

    def test_empty_object_list(self):
        text = "<annotation><filename>a.png</filename></annotation>"
        boxes, metadata = parse_voc_xml(text, {})
        assert boxes == [] and metadata["filename"] == "a.png"

    def test_missing_element_raises(self):
        text = "<annotation><filename>a.png</filename><object><name>pomelo</name></object></annotation>"
        with pytest.raises(ParseError, match="bndbox"):
            parse_voc_xml(text, {"pomelo": 0})

    def test_unknown_class_name_raises(self):
        with pytest.raises(ParseError, match="unknown class"):
            parse_voc_xml(VOC_SAMPLE, {"apple": 0})

    def test_non_numeric_coordinate(self):
        bad = VOC_SAMPLE.replace("<xmin>10</xmin>", "<xmin>ten</xmin>")
        with pytest.raises(ParseError, match="non-numeric"):
            parse_voc_xml(bad, {"pomelo": 0})

    def test_not_xml(self):
        with pytest.raises(ParseError, match="well-formed"):
            parse_voc_xml("0 0.5 0.5 0.1 0.1", {})


class TestPredictions:
    def test_empty(self):
        assert read_predictions("") == []
        assert write_predictions([]) == ""

    def test_roundtrip_fuzz_corpus(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            records = []
            for i in range(int(rng.integers(1, 10))):
                x1, y1 = rng.uniform(0, 500, 2)
                w, h = rng.uniform(1, 100, 2)
                records.append(
                    PredictionRecord(
                        image_id=f"im{int(rng.integers(0, 4))}",
                        class_id=int(rng.integers(0, 3)),
                        score=round(float(rng.uniform(0, 1)), 6),
                        box=(
                            round(float(x1), 6), round(float(y1), 6),
                            round(float(x1 + w), 6), round(float(y1 + h), 6),
                        ),
                    )
                )
            text = write_predictions(records)
            assert write_predictions(read_predictions(text)) == text

    def test_output_ordering(self):
        records = [
            PredictionRecord("b", 0, 0.5, (0, 0, 1, 1)),
            PredictionRecord("a", 0, 0.2, (0, 0, 1, 1)),
            PredictionRecord("a", 0, 0.9, (0, 0, 1, 1)),
        ]
        lines = write_predictions(records).splitlines()
        assert [l.split()[0] for l in lines] == ["a", "a", "b"]
        assert [l.split()[2] for l in lines] == ["0.900000", "0.200000", "0.500000"]

    def test_score_out_of_range_rejected_with_line(self):
        with pytest.raises(ParseError, match="line 1"):
            read_predictions("im0 0 1.5 0 0 1 1")

    def test_malformed_field_count(self):
        with pytest.raises(ParseError, match="7 fields"):
            read_predictions("im0 0 0.5 0 0 1")

    def test_disordered_box_rejected(self):
        with pytest.raises(ParseError, match="line 1"):
            read_predictions("im0 0 0.5 5 0 1 1")
