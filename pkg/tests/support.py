"""Shared random-instance generators for the kernel and suppression suites."""

import numpy as np


def random_conv_instance(rng, stride, dilation, groups, max_ch=8, max_hw=16):
    """A random conv2d problem with valid geometry for the given knobs."""
    n = int(rng.integers(1, 3))
    c_in = int(rng.integers(1, max_ch // groups + 1)) * groups
    c_out = int(rng.integers(1, max_ch // groups + 1)) * groups
    k = int(rng.choice([1, 3, 3, 5]))
    # keep the dilated footprint inside the padded input
    low = max(4, dilation * (k - 1) + 1)
    h = int(rng.integers(low, max_hw + 1))
    w = int(rng.integers(low, max_hw + 1))
    padding = int(rng.integers(0, dilation * (k - 1) // 2 + 2))
    # scale of 0.5 keeps float32 accumulation error well under the 1e-5 bound
    x = (0.5 * rng.standard_normal((n, c_in, h, w))).astype(np.float32)
    weight = (0.5 * rng.standard_normal((c_out, c_in // groups, k, k))).astype(np.float32)
    bias = rng.standard_normal(c_out).astype(np.float32) if rng.integers(0, 2) else None
    return x, weight, bias, k, padding


def random_boxes(rng, count, classes=3, extent=100.0):
    """Random detections as parallel (boxes, scores, class_ids) lists."""
    boxes, scores, class_ids = [], [], []
    for _ in range(count):
        x1, y1 = rng.uniform(0, extent * 0.8, size=2)
        w, h = rng.uniform(1.0, extent * 0.4, size=2)
        boxes.append((float(x1), float(y1), float(x1 + w), float(y1 + h)))
        scores.append(float(rng.uniform(0.05, 1.0)))
        class_ids.append(int(rng.integers(0, classes)))
    return boxes, scores, class_ids


def random_eval_instance(rng, max_images=5, max_boxes=8, classes=2, extent=64.0):
    """Small pools of predictions and ground truths spread over a few images.

    Returns (preds, gts) as plain tuples: (image_id, class_id, score, box)
    and (image_id, class_id, box).
    """
    image_ids = [f"im{i}" for i in range(int(rng.integers(1, max_images + 1)))]
    gts, preds = [], []
    for image_id in image_ids:
        for _ in range(int(rng.integers(0, max_boxes + 1))):
            x1, y1 = rng.uniform(0, extent * 0.7, size=2)
            w, h = rng.uniform(2.0, extent * 0.3, size=2)
            box = (float(x1), float(y1), float(x1 + w), float(y1 + h))
            gts.append((image_id, int(rng.integers(0, classes)), box))
        for _ in range(int(rng.integers(0, max_boxes + 1))):
            if gts and rng.uniform() < 0.6:
                # jittered copy of some ground truth: plausible near-hits
                base = gts[int(rng.integers(0, len(gts)))]
                bx = base[2]
                jitter = rng.uniform(-4, 4, size=4)
                box = (
                    float(min(bx[0] + jitter[0], bx[2] + jitter[2]) - 0.5),
                    float(min(bx[1] + jitter[1], bx[3] + jitter[3]) - 0.5),
                    float(max(bx[0] + jitter[0], bx[2] + jitter[2]) + 0.5),
                    float(max(bx[1] + jitter[1], bx[3] + jitter[3]) + 0.5),
                )
                class_id = base[1]
            else:
                x1, y1 = rng.uniform(0, extent * 0.7, size=2)
                w, h = rng.uniform(2.0, extent * 0.3, size=2)
                box = (float(x1), float(y1), float(x1 + w), float(y1 + h))
                class_id = int(rng.integers(0, classes))
            preds.append((image_id, class_id, float(rng.uniform(0.05, 1.0)), box))
    return preds, gts
