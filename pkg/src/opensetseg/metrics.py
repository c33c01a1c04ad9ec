"""IoU bookkeeping, common mIoU, private IoU and the H-Score."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import ClassSpace


def confusion(pred: np.ndarray, gt: np.ndarray, cs: ClassSpace) -> np.ndarray:
    """(C+1) x (C+1) counts, rows = ground truth, ignoring gt == ignore_id."""
    pred = np.asarray(pred).astype(np.int64)
    gt = np.asarray(gt).astype(np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    k = cs.num_heads
    keep = gt != cs.ignore_id
    p, g = pred[keep], gt[keep]
    if ((p < 0) | (p >= k)).any() or ((g < 0) | (g >= k)).any():
        raise ValueError("labels outside [0, C] in prediction or ground truth")
    return np.bincount(g * k + p, minlength=k * k).reshape(k, k)


def iou_from_confusion(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    inter = np.diag(cm).astype(np.int64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), np.nan)
    return inter, union, iou


def per_class_iou(pred: np.ndarray, gt: np.ndarray, cs: ClassSpace):
    """(intersection, union, iou) per class 0..C; iou is NaN where union is 0."""
    return iou_from_confusion(confusion(pred, gt, cs))


def h_score(common: float, private: float) -> float:
    """Harmonic mean of common mIoU and private IoU (0 when both are 0)."""
    if common < 0 or private < 0:
        raise ValueError("IoU scores must be nonnegative")
    s = common + private
    return 0.0 if s == 0 else 2.0 * common * private / s


@dataclass
class MetricsReport:
    class_names: list[str]
    per_class_iou: list[float | None]
    intersection: list[int]
    union: list[int]
    common_miou: float
    private_iou: float
    h_score: float
    num_images: int

    @classmethod
    def from_confusion(cls, cm: np.ndarray, class_names, num_images: int) -> "MetricsReport":
        inter, union, iou = iou_from_confusion(cm)
        known = iou[:-1]
        known = known[~np.isnan(known)]
        common = float(known.mean()) if known.size else 0.0
        private = 0.0 if np.isnan(iou[-1]) else float(iou[-1])
        return cls(
            class_names=list(class_names),
            per_class_iou=[None if np.isnan(v) else float(v) for v in iou[:-1]],
            intersection=[int(v) for v in inter],
            union=[int(v) for v in union],
            common_miou=common,
            private_iou=private,
            h_score=h_score(common, private),
            num_images=int(num_images),
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def csv_header(self) -> list[str]:
        return ["common_miou", "private_iou", "h_score", "num_images"] + [f"iou_{n}" for n in self.class_names]

    def csv_row(self) -> list[str]:
        cells = [self.common_miou, self.private_iou, self.h_score]
        out = [repr(float(v)) for v in cells] + [str(self.num_images)]
        out += ["" if v is None else repr(v) for v in self.per_class_iou]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        w.writerow(self.csv_row())
        return buf.getvalue()

    def summary_line(self) -> str:
        return f"{100 * self.common_miou:.2f} {100 * self.private_iou:.2f} {100 * self.h_score:.2f}"


def evaluate_predictions(preds, gts, cs: ClassSpace, class_names) -> MetricsReport:
    """Pool confusion counts over the whole split, then divide."""
    if len(preds) == 0:
        raise ValueError("cannot evaluate an empty split")
    if len(preds) != len(gts):
        raise ValueError("prediction and ground-truth counts differ")
    cm = np.zeros((cs.num_heads, cs.num_heads), dtype=np.int64)
    for p, g in zip(preds, gts):
        cm += confusion(p, g, cs)
    return MetricsReport.from_confusion(cm, class_names, len(preds))


# fixed palette for exported predictions; unknown is white, ignore is black
PALETTE = np.array([
    (128, 64, 128), (70, 130, 70), (220, 20, 60), (0, 0, 142), (250, 170, 30),
    (102, 102, 156), (190, 153, 153), (107, 142, 35), (70, 130, 180), (220, 220, 0),
], dtype=np.uint8)
UNKNOWN_COLOR = (255, 255, 255)
IGNORE_COLOR = (0, 0, 0)


def colorize(labels: np.ndarray, cs: ClassSpace) -> np.ndarray:
    lut = np.zeros((256, 3), dtype=np.uint8)
    for c in range(cs.num_known):
        lut[c] = PALETTE[c % len(PALETTE)]
    lut[cs.unknown_id] = UNKNOWN_COLOR
    lut[cs.ignore_id] = IGNORE_COLOR
    return lut[np.asarray(labels).astype(np.uint8)]


def mean_std(values) -> tuple[float, float]:
    v = [float(x) for x in values]
    m = sum(v) / len(v)
    sd = math.sqrt(sum((x - m) ** 2 for x in v) / (len(v) - 1)) if len(v) > 1 else 0.0
    return m, sd
