"""Command-line surface: augment, nms, eval, blockcheck, net-shapes.

Exit codes: 0 success, 1 validation or diagnostic failure, 2 usage error.
Every subcommand is deterministic given its inputs, flags, and --seed (the
REASDET_SEED environment variable supplies the default seed).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import augment as aug
from . import blocks as B
from .dataio import (
    ParseError,
    PredictionRecord,
    parse_voc_xml,
    parse_yolo_labels,
    read_predictions,
    write_predictions,
    write_yolo_labels,
)
from .metrics import DEFAULT_SCORE_THRESHOLD, GroundTruthBox, evaluate
from .postprocess import Detection, SuppressionConfig, soft_nms
from .tensor import Tensor, grad_check, reference_precision

_IMAGE_SUFFIXES = (".png", ".ppm")


def _env_seed() -> int:
    try:
        return int(os.environ.get("REASDET_SEED", "0"))
    except ValueError:
        return 0


def _parse_thresholds(text: str) -> tuple[float, ...]:
    """Either "start:step:stop" (inclusive) or a comma-separated list."""
    if ":" in text:
        start, step, stop = (float(p) for p in text.split(":"))
        if step <= 0 or stop < start:
            raise ValueError(f"bad threshold range {text!r}")
        count = int(round((stop - start) / step)) + 1
        return tuple(round(start + i * step, 10) for i in range(count))
    return tuple(float(p) for p in text.split(","))


def _parse_size(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"bad size spec {text!r}; expected e.g. 1x4x8x8") from None
    if len(dims) != 4 or any(d < 1 for d in dims):
        raise ValueError(f"bad size spec {text!r}; expected 4 positive extents")
    return dims


def _parse_class_names(text: str) -> dict[str, int]:
    table: dict[str, int] = {}
    if not text:
        return table
    for pair in text.split(","):
        name, _, value = pair.partition("=")
        if not name or not value:
            raise ValueError(f"bad class-name entry {pair!r}; expected name=id")
        table[name.strip()] = int(value)
    return table


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------


def _load_record(image_path: Path, class_names: dict[str, int]) -> tuple[aug.ImageRecord, list[str]]:
    pixels = aug.read_image(image_path)
    stem = image_path.stem
    diagnostics: list[str] = []
    boxes: list[GroundTruthBox] = []
    txt = image_path.with_suffix(".txt")
    xml = image_path.with_suffix(".xml")
    if txt.exists():
        boxes, diagnostics = parse_yolo_labels(
            txt.read_text(), pixels.shape[1], pixels.shape[0], image_id=stem
        )
        diagnostics = [f"{txt.name}: {d}" for d in diagnostics]
    elif xml.exists():
        if not class_names:
            raise ParseError(f"{xml.name}: --class-names required for XML labels")
        boxes, _ = parse_voc_xml(xml.read_text(), class_names, image_id=stem)
    return aug.ImageRecord(image_id=stem, pixels=pixels, annotations=tuple(boxes)), diagnostics


def cmd_augment(args: argparse.Namespace) -> int:
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    class_names = _parse_class_names(args.class_names)
    images = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not images:
        print(f"error: no images found in {in_dir}", file=sys.stderr)
        return 1
    out_dir.mkdir(parents=True, exist_ok=True)

    def process(path: Path):
        try:
            rec, diagnostics = _load_record(path, class_names)
        except (ParseError, ValueError, OSError) as err:
            return f"{path.name}: {err}", [], []
        rows = []
        variants = [("original", rec)] if args.include_originals else []
        variants += [
            (op.tag, aug.apply(op, rec, args.seed)) for op in aug.DEFAULT_RECIPE
        ]
        for tag, variant in variants:
            name = rec.image_id if tag == "original" else f"{rec.image_id}_{tag}"
            image_name = name + path.suffix.lower()
            aug.write_image(out_dir / image_name, variant.pixels)
            labels = write_yolo_labels(
                variant.annotations, variant.pixels.shape[1], variant.pixels.shape[0]
            )
            (out_dir / (name + ".txt")).write_text(labels)
            rows.append((rec.image_id, tag, image_name))
        return None, rows, diagnostics

    manifest: list[tuple[str, str, str]] = []
    failures: list[str] = []
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(process, images))
    for error, rows, diagnostics in results:
        for d in diagnostics:
            print(f"warning: {d}", file=sys.stderr)
        if error is not None:
            failures.append(error)
            print(f"error: {error}", file=sys.stderr)
            continue
        manifest.extend(rows)
    manifest.sort()
    lines = [f"{orig}\t{tag}\t{name}" for orig, tag, name in manifest]
    (out_dir / "manifest.tsv").write_text("".join(line + "\n" for line in lines))
    produced = sum(1 for _, tag, _ in manifest if tag != "original")
    print(f"augmented {len(images) - len(failures)} images -> {produced} variants "
          f"({len(manifest)} outputs)")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# nms
# ---------------------------------------------------------------------------


def cmd_nms(args: argparse.Namespace) -> int:
    cfg = SuppressionConfig(
        eta0=args.eta0, sigma=args.sigma, mode=args.mode, score_floor=args.score_floor
    )
    records = read_predictions(Path(args.pred_file).read_text())
    by_image: dict[str, list[tuple[int, PredictionRecord]]] = {}
    for idx, r in enumerate(records):
        by_image.setdefault(r.image_id, []).append((idx, r))

    out_records: list[PredictionRecord] = []
    decayed = 0
    for image_id in sorted(by_image):
        entries = by_image[image_id]
        dets = [Detection(box=r.box, score=r.score, class_id=r.class_id) for _, r in entries]
        kept = soft_nms(dets, cfg)
        originals: dict = {}
        for d in dets:
            key = (d.box, d.class_id)
            originals[key] = max(originals.get(key, 0.0), d.score)
        for d in kept:
            if d.score < originals[(d.box, d.class_id)]:
                decayed += 1
            out_records.append(
                PredictionRecord(image_id=image_id, class_id=d.class_id, score=d.score, box=d.box)
            )
    Path(args.out_file).write_text(write_predictions(out_records))
    discarded = len(records) - len(out_records)
    print(f"kept {len(out_records)} decayed {decayed} discarded {discarded}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _gt_image_size(stem: str, gt_dir: Path, image_dir: Path | None, fallback) -> tuple[int, int]:
    for directory in filter(None, (image_dir, gt_dir)):
        for suffix in _IMAGE_SUFFIXES:
            candidate = directory / (stem + suffix)
            if candidate.exists():
                pixels = aug.read_image(candidate)
                return pixels.shape[1], pixels.shape[0]
    return fallback


def cmd_eval(args: argparse.Namespace) -> int:
    gt_dir = Path(args.gt_dir)
    image_dir = Path(args.image_dir) if args.image_dir else None
    class_names = _parse_class_names(args.class_names)
    preds = read_predictions(Path(args.pred_file).read_text())

    gts: list[GroundTruthBox] = []
    stems: set[str] = set()
    for path in sorted(gt_dir.iterdir()):
        if path.suffix == ".txt":
            width, height = _gt_image_size(path.stem, gt_dir, image_dir, tuple(args.image_size))
            boxes, diagnostics = parse_yolo_labels(
                path.read_text(), width, height, image_id=path.stem
            )
            for d in diagnostics:
                print(f"warning: {path.name}: {d}", file=sys.stderr)
        elif path.suffix == ".xml":
            if not class_names:
                print(f"error: {path.name}: --class-names required for XML labels", file=sys.stderr)
                return 1
            boxes, _ = parse_voc_xml(path.read_text(), class_names, image_id=path.stem)
        else:
            continue
        stems.add(path.stem)
        gts.extend(boxes)

    missing = sorted({p.image_id for p in preds} - stems)
    if missing:
        for image_id in missing:
            print(f"{'warning' if args.allow_missing else 'error'}: "
                  f"prediction image_id {image_id!r} has no ground-truth file", file=sys.stderr)
        if not args.allow_missing:
            return 1
        preds = [p for p in preds if p.image_id in stems]

    report = evaluate(
        preds, gts, thresholds=_parse_thresholds(args.thresholds),
        score_threshold=args.score_threshold,
    )
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return 0


# ---------------------------------------------------------------------------
# blockcheck / net-shapes
# ---------------------------------------------------------------------------


def _blockcheck_build(kind: str, channels: int, seed: int, reduction: int, extent: int):
    if kind == "rfaconv":
        return B.RfaParams.init(channels, 3, 1, seed), B.rfaconv_forward
    if kind == "rfe":
        return B.RfeParams.init(channels, seed), B.rfe_forward
    if kind == "c3rfem":
        return B.C3RfemParams.init(channels, channels, 1, extent >= B.RfeParams.MIN_EXTENT, seed), \
            B.c3rfem_forward
    if kind == "multiseam":
        scales = tuple(p for p in (1, 2, 4) if p <= extent and extent % p == 0)
        return (
            B.SeamParams.init(channels, 3, reduction, scales, seed),
            lambda p, x: B.multiseam_forward(p, x)[0],
        )
    if kind == "sppf":
        return B.SppfParams.init(channels, channels, 5, seed), B.sppf_forward
    raise ValueError(f"unknown block kind {kind!r}")


def cmd_blockcheck(args: argparse.Namespace) -> int:
    n, c, h, w = _parse_size(args.size)
    failures: list[str] = []

    if args.kind == "toynet":
        if h != w or h % 32:
            print("error: toynet needs a square extent divisible by 32", file=sys.stderr)
            return 1
        config = B.ToyNetConfig(input_size=h)
        params = B.build_toy_net(config, seed=args.seed)
        x = Tensor(np.random.default_rng(args.seed).standard_normal((n, 3, h, w)))
        heads = B.toy_net_forward(config, params, x)
        print(f"input ({n}, 3, {h}, {w})")
        for stride, head in zip(config.HEAD_STRIDES, heads):
            print(f"head stride {stride}: {tuple(head.shape)}")
        count = B.parameter_count(params)
        again = B.parameter_count(B.build_toy_net(config, seed=args.seed))
        print(f"parameters {count} (rebuild: {again})")
        if count != again:
            failures.append("parameter count is not deterministic")
        print("gradient coverage: via the constituent blocks "
              "(run blockcheck on rfaconv/rfe/c3rfem/multiseam/sppf)")
        for msg in failures:
            print(f"FAIL {msg}", file=sys.stderr)
        return 1 if failures else 0

    params, forward = _blockcheck_build(args.kind, c, args.seed, args.reduction, min(h, w))
    rng = np.random.default_rng(args.seed)
    x = Tensor(rng.standard_normal((n, c, h, w)))
    out = forward(params, x)
    print(f"input ({n}, {c}, {h}, {w}) -> output {tuple(out.shape)}")

    if args.kind == "rfaconv":
        attn = B.rfaconv_attention(params, x)
        sums = attn.data.sum(axis=1)
        worst = float(np.abs(sums - 1.0).max())
        ok = worst <= 1e-6
        print(f"attention sums to 1: worst |sum-1| = {worst:.2e} [{'pass' if ok else 'FAIL'}]")
        if not ok:
            failures.append("attention normalization")
    if args.kind == "multiseam":
        _, attn = B.multiseam_forward(params, x)
        a = attn.data
        ok = bool((a > 1.0).all() and (a < np.e).all())
        print(f"attention in (1, e): min {a.min():.6f} max {a.max():.6f} "
              f"[{'pass' if ok else 'FAIL'}]")
        if not ok:
            failures.append("attention bounds")
        zero_params, fwd0 = _blockcheck_build(args.kind, c, args.seed, args.reduction, min(h, w))
        for name, t in zero_params.named_tensors().items():
            if name.endswith("bias"):
                t.data = np.zeros_like(t.data)
        _, attn0 = B.multiseam_forward(zero_params, Tensor(np.zeros((n, c, h, w))))
        expected = float(np.exp(0.5))
        worst = float(np.abs(attn0.data - expected).max())
        ok = worst <= 1e-5
        print(f"zero input/bias attention = {attn0.data.reshape(-1)[0]:.6f} "
              f"(expected {expected:.6f}) [{'pass' if ok else 'FAIL'}]")
        if not ok:
            failures.append("zero-case attention value")

    with reference_precision():
        params64, forward64 = _blockcheck_build(
            args.kind, c, args.seed, args.reduction, min(h, w)
        )
        x64 = Tensor(np.random.default_rng(args.seed).standard_normal((n, c, h, w)),
                     requires_grad=True)
        leaves = {"input": x64}
        leaves.update(
            (k, v) for k, v in params64.named_tensors().items() if v.requires_grad
        )
        report = grad_check(lambda: forward64(params64, x64), leaves,
                            tolerance=args.tolerance, step=1e-5)
    print(report)
    if not report.passed:
        failures.append("gradient check")
    for msg in failures:
        print(f"FAIL {msg}", file=sys.stderr)
    return 1 if failures else 0


def cmd_net_shapes(args: argparse.Namespace) -> int:
    config = B.ToyNetConfig(input_size=args.input_size)
    print(f"input {args.input_size}x{args.input_size}")
    for stride, extent, width in zip(
        config.HEAD_STRIDES, config.head_extents(),
        (config.widths[2], config.widths[3], config.widths[4]),
    ):
        print(f"head stride {stride}: {extent}x{extent} ({width} channels)")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reasdet",
        description="Receptive-field attention detection toolkit "
        "(augmentation, suppression, evaluation, block verification).",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("augment", help="expand an image+label directory 7-fold",
                       formatter_class=fmt)
    p.add_argument("in_dir", help="directory of .png/.ppm images with sibling .txt/.xml labels")
    p.add_argument("out_dir", help="output directory (created if missing)")
    p.add_argument("--seed", type=int, default=_env_seed(),
                   help="random seed (default from REASDET_SEED)")
    p.add_argument("--workers", type=int, default=1, help="worker threads")
    p.add_argument("--include-originals", action="store_true",
                   help="copy the source records into the output as well")
    p.add_argument("--class-names", default="",
                   help="name=id pairs for XML labels, e.g. 'pomelo=0'")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("nms", help="suppress duplicate boxes in a prediction file",
                       formatter_class=fmt)
    p.add_argument("pred_file", help="input predictions (image_id class score x1 y1 x2 y2)")
    p.add_argument("out_file", help="output predictions")
    p.add_argument("--mode", choices=SuppressionConfig.MODES, default="gaussian",
                   help="decay mode")
    p.add_argument("--eta0", type=float, default=0.5, help="overlap threshold")
    p.add_argument("--sigma", type=float, default=0.5, help="gaussian decay width")
    p.add_argument("--score-floor", type=float, default=0.001,
                   help="drop detections decayed below this score")
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("eval", help="score predictions against ground-truth labels",
                       formatter_class=fmt)
    p.add_argument("pred_file", help="predictions file")
    p.add_argument("gt_dir", help="directory of per-image .txt/.xml label files")
    p.add_argument("--thresholds", default="0.50:0.05:0.95",
                   help="IoU thresholds: start:step:stop or comma list")
    p.add_argument("--score-threshold", type=float, default=DEFAULT_SCORE_THRESHOLD,
                   help="confidence operating point for reported precision/recall (a convention)")
    p.add_argument("--image-size", type=int, nargs=2, default=(640, 640),
                   metavar=("W", "H"),
                   help="image dimensions for normalized labels without a sibling image")
    p.add_argument("--image-dir", default="",
                   help="directory searched for sibling images to size normalized labels")
    p.add_argument("--class-names", default="",
                   help="name=id pairs for XML labels, e.g. 'pomelo=0'")
    p.add_argument("--allow-missing", action="store_true",
                   help="warn (instead of fail) on predictions without ground truth")
    p.add_argument("--out", default="", help="also write the text report to this file")
    p.add_argument("--json", default="", help="write the machine-readable report to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("blockcheck", help="verify a block: shapes, invariants, gradients",
                       formatter_class=fmt)
    p.add_argument("kind", choices=list(B.BLOCK_KINDS) + ["toynet"], help="block kind")
    p.add_argument("--size", default="1x4x8x8", help="input extents NxCxHxW")
    p.add_argument("--seed", type=int, default=_env_seed(),
                   help="random seed (default from REASDET_SEED)")
    p.add_argument("--reduction", type=int, default=16,
                   help="channel-attention bottleneck reduction ratio")
    p.add_argument("--tolerance", type=float, default=1e-4,
                   help="gradient-check relative tolerance")
    p.set_defaults(func=cmd_blockcheck)

    p = sub.add_parser("net-shapes", help="print toy-net head shapes for an input extent",
                       formatter_class=fmt)
    p.add_argument("--input-size", type=int, default=640, help="square input extent")
    p.set_defaults(func=cmd_net_shapes)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
