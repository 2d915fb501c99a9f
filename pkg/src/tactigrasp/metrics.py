"""Detection and classification metrics: IoU, AP, accuracy, confusion, CSR."""

from __future__ import annotations

import csv
import os
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import pnm

ENVIRONMENTS = ("tiled", "stone_soil", "grass")
FAILURE_STAGES = ("none", "rgbd_reconstruction", "contact_detection", "grasp_points", "detection")
REPORT_THRESHOLDS = (0.5, 0.75, 0.9)


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box needs positive size, got {self.w}x{self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True, eq=False)
class Mask:
    pixels: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.pixels).astype(bool)
        if not m.any():
            raise ValueError("mask is empty")
        object.__setattr__(self, "pixels", m)

    @property
    def area(self) -> int:
        return int(self.pixels.sum())


def iou(a: Box | Mask, b: Box | Mask) -> float:
    if isinstance(a, Box) and isinstance(b, Box):
        ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
        iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
        inter = ix * iy
        return inter / (a.area + b.area - inter)
    if isinstance(a, Mask) and isinstance(b, Mask):
        if a.pixels.shape != b.pixels.shape:
            raise ValueError("masks differ in size")
        inter = int(np.logical_and(a.pixels, b.pixels).sum())
        union = int(np.logical_or(a.pixels, b.pixels).sum())
        return inter / union
    raise TypeError(f"cannot compare {type(a).__name__} with {type(b).__name__}")


@dataclass(frozen=True)
class Detection:
    """A ground-truth region or a ranked prediction (confidence ignored for ground truth)."""

    image_id: str
    cls: str
    region: Box | Mask
    confidence: float = 1.0


def match_detections(dets: Sequence[Detection], gts: Sequence[Detection],
                     iou_threshold: float) -> list[bool]:
    """Greedy one-to-one matching in descending confidence order (stable on ties).

    Each detection takes the unmatched ground truth of the same image and class
    with the highest IoU, provided it reaches the threshold. Returns TP flags in
    ranked order.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    by_key = defaultdict(list)
    for g in gts:
        by_key[(g.image_id, g.cls)].append(g)
    used: dict[tuple, set] = defaultdict(set)
    flags = []
    for i in order:
        d = dets[i]
        key = (d.image_id, d.cls)
        best, best_iou = None, -1.0
        for j, g in enumerate(by_key.get(key, ())):
            if j in used[key]:
                continue
            v = iou(d.region, g.region)
            if v >= iou_threshold and v > best_iou:
                best, best_iou = j, v
        if best is not None:
            used[key].add(best)
        flags.append(best is not None)
    return flags


def ap_from_flags(flags: Sequence[bool], n_gt: int) -> Fraction:
    """Interpolated AP from ranked TP flags, summed over recall increments:
    sum_i (r_{i+1} - r_i) * max_{r' >= r_{i+1}} p(r')."""
    if n_gt <= 0:
        raise UndefinedMetricError("AP is undefined without ground truth")
    tp = 0
    recalls, precisions = [], []
    for k, hit in enumerate(flags, start=1):
        tp += bool(hit)
        recalls.append(Fraction(tp, n_gt))
        precisions.append(Fraction(tp, k))
    # right-to-left running max gives the precision envelope
    envelope = precisions[:]
    for k in range(len(envelope) - 2, -1, -1):
        envelope[k] = max(envelope[k], envelope[k + 1])
    ap = Fraction(0)
    prev = Fraction(0)
    for r, p in zip(recalls, envelope):
        if r > prev:
            ap += (r - prev) * p
            prev = r
    return ap


def average_precision_exact(dets: Sequence[Detection], gts: Sequence[Detection],
                            iou_threshold: float = 0.5) -> Fraction:
    return ap_from_flags(match_detections(dets, gts, iou_threshold), len(gts))


def average_precision(dets: Sequence[Detection], gts: Sequence[Detection],
                      iou_threshold: float = 0.5) -> float:
    return float(average_precision_exact(dets, gts, iou_threshold))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, truth: Iterable[int], predicted: Iterable[int]) -> "ConfusionCounts":
        tp = tn = fp = fn = 0
        for t, p in zip(truth, predicted):
            if t and p:
                tp += 1
            elif t:
                fn += 1
            elif p:
                fp += 1
            else:
                tn += 1
        return cls(tp, tn, fp, fn)


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise UndefinedMetricError("accuracy is undefined for zero samples")
    return (c.tp + c.tn) / c.total


def confusion_matrix(pairs: Iterable[tuple[str, str]], classes: Sequence[str]) -> np.ndarray:
    """Rows are true labels, columns predicted labels."""
    index = {c: i for i, c in enumerate(classes)}
    m = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for true, pred in pairs:
        if true not in index or pred not in index:
            raise ValueError(f"unknown label in pair ({true!r}, {pred!r})")
        m[index[true], index[pred]] += 1
    return m


@dataclass(frozen=True)
class EpisodeOutcome:
    environment: str
    cls: str
    attempt: int = 1
    success: bool = True
    failure_stage: str = "none"

    def __post_init__(self):
        if self.failure_stage not in FAILURE_STAGES:
            raise ValueError(f"unknown failure stage {self.failure_stage!r}")
        if (self.failure_stage == "none") != self.success:
            raise ValueError("failure_stage must be 'none' exactly when the episode succeeded")


def csr(outcomes: Iterable[EpisodeOutcome], group_by: str = "environment",
        first_attempt_only: bool = False) -> dict[str, float]:
    """Collection success rate per group.

    group_by is 'environment', 'class', 'module' or 'overall'. For 'module' the
    rate of a stage is the fraction of attempts that did not fail at it.
    Groups without episodes are omitted.
    """
    eps = [o for o in outcomes if not first_attempt_only or o.attempt == 1]
    if group_by == "overall":
        return {"overall": sum(o.success for o in eps) / len(eps)} if eps else {}
    if group_by == "module":
        if not eps:
            return {}
        return {stage: 1.0 - sum(o.failure_stage == stage for o in eps) / len(eps)
                for stage in FAILURE_STAGES[1:]}
    attr = {"environment": "environment", "class": "cls"}.get(group_by)
    if attr is None:
        raise ValueError(f"unknown grouping {group_by!r}")
    tally: dict[str, list[int]] = {}
    for o in eps:
        t = tally.setdefault(getattr(o, attr), [0, 0])
        t[0] += o.success
        t[1] += 1
    return {k: s / n for k, (s, n) in sorted(tally.items())}


def first_attempt_rate(outcomes: Iterable[EpisodeOutcome]) -> float:
    return csr(outcomes, "overall", first_attempt_only=True)["overall"]


def failure_distribution(outcomes: Iterable[EpisodeOutcome]) -> dict[str, float]:
    failed = [o.failure_stage for o in outcomes if not o.success]
    if not failed:
        return {}
    return {s: failed.count(s) / len(failed) for s in FAILURE_STAGES[1:]}


# ---- file formats -------------------------------------------------------

DETECTION_HEADER = ["image_id", "class", "confidence", "x", "y", "w", "h"]
EPISODE_HEADER = ["environment", "class", "attempt", "success", "failure_stage"]


def read_detections(path: str | os.PathLike, mode: str = "box") -> list[Detection]:
    """Read `image_id,class,confidence,x,y,w,h[,mask_path]` rows.

    In mask mode the mask path is resolved relative to the CSV file.
    """
    path = Path(path)
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:7] != DETECTION_HEADER:
            raise ValueError(f"{path}: header must start with {','.join(DETECTION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                conf = float(row[2]) if row[2].strip() else 1.0
                x, y, w, h = (float(v) for v in row[3:7])
                if mode == "mask":
                    if len(row) < 8 or not row[7].strip():
                        raise ValueError("mask mode needs a mask_path column")
                    region: Box | Mask = Mask(pnm.read(path.parent / row[7].strip()) > 0)
                else:
                    region = Box(x, y, w, h)
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            out.append(Detection(row[0].strip(), row[1].strip(), region, conf))
    return out


def evaluate_detections(dets: Sequence[Detection], gts: Sequence[Detection],
                        thresholds: Sequence[float] = REPORT_THRESHOLDS) -> list[dict]:
    """AP per (class, threshold) plus an 'all' row per threshold (class mean)."""
    classes = sorted({g.cls for g in gts})
    rows = []
    for t in thresholds:
        per_class = []
        for c in classes:
            ap = average_precision_exact([d for d in dets if d.cls == c],
                                         [g for g in gts if g.cls == c], t)
            per_class.append(ap)
            rows.append({"class": c, "iou_threshold": t, "ap": ap})
        if per_class:
            rows.append({"class": "all", "iou_threshold": t, "ap": sum(per_class) / len(per_class)})
    return rows


def write_ap_report(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "iou_threshold", "metric", "ap", "ap_exact"])
        for r in rows:
            w.writerow([r["class"], r["iou_threshold"], f"AP{round(r['iou_threshold'] * 100)}",
                        repr(float(r["ap"])), str(r["ap"])])


def read_episodes(path: str | os.PathLike) -> list[EpisodeOutcome]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames)[:5] != EPISODE_HEADER:
            raise ValueError(f"episode file header must be {','.join(EPISODE_HEADER)}")
        for row in reader:
            out.append(EpisodeOutcome(row["environment"], row["class"], int(row["attempt"]),
                                      row["success"].strip().lower() in ("1", "true", "yes"),
                                      row["failure_stage"]))
    return out


def write_episodes(path, outcomes: Iterable[EpisodeOutcome]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_HEADER)
        for o in outcomes:
            w.writerow([o.environment, o.cls, o.attempt, int(o.success), o.failure_stage])
