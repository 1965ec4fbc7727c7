"""Bounding-box objectness ground truth and the foreground-fraction filter.

Boxes are 0-based and half-open: ``[x0, x1) x [y0, y1)`` in pixel units.
Annotations that use 1-based inclusive corners (VOC style) can be converted
with :meth:`BoundingBox.from_one_based_inclusive`.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

ALPHA_THRESHOLD = 0.8
# kept images per source in the published merge of the two detection corpora
PUBLISHED_MERGE_COUNTS = {"VOC": 4217, "ImageNet": 301184}
PUBLISHED_MERGE_TOTAL = 305401
MANIFEST_KEYS = {"image", "width", "height", "boxes", "gt", "source"}


@dataclass(frozen=True)
class BoundingBox:
    x0: int
    y0: int
    x1: int
    y1: int

    @classmethod
    def from_one_based_inclusive(cls, xmin, ymin, xmax, ymax):
        return cls(int(xmin) - 1, int(ymin) - 1, int(xmax), int(ymax))

    def clamp(self, width, height):
        """Clip to the image; ``None`` when nothing of the box remains."""
        x0, x1 = max(0, self.x0), min(width, self.x1)
        y0, y1 = max(0, self.y0), min(height, self.y1)
        if x0 >= x1 or y0 >= y1:
            return None
        return BoundingBox(x0, y0, x1, y1)

    def contains(self, x, y):
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    def as_list(self):
        return [self.x0, self.y0, self.x1, self.y1]


def clamp_boxes(boxes, width, height):
    """Clamp every box; returns ``(kept, dropped_count)``."""
    kept, dropped = [], 0
    for b in boxes:
        b = b if isinstance(b, BoundingBox) else BoundingBox(*(int(v) for v in b))
        c = b.clamp(width, height)
        if c is None:
            dropped += 1
        else:
            kept.append(c)
    return kept, dropped


def bbox_to_saliency(width, height, boxes):
    """Binary ``(height, width)`` uint8 map: 1 inside any box, 0 elsewhere."""
    if width < 1 or height < 1:
        raise ValueError(f"image extents must be positive, got {width}x{height}")
    kept, dropped = clamp_boxes(boxes, width, height)
    if dropped:
        log.warning("dropped %d degenerate box(es) on a %dx%d image", dropped, width, height)
    out = np.zeros((height, width), dtype=np.uint8)
    for b in kept:
        out[b.y0:b.y1, b.x0:b.x1] = 1
    return out


def alpha(saliency):
    """Fraction of foreground pixels in a binary map."""
    saliency = np.asarray(saliency)
    if saliency.size == 0:
        raise ValueError("alpha of an empty map is undefined")
    return float(saliency.astype(np.float64).mean())


@dataclass
class ObjectnessRecord:
    image_path: str
    width: int
    height: int
    boxes: list = field(default_factory=list)
    source: str = "other"
    gt_path: str | None = None
    alpha: float | None = None
    kept: bool | None = None

    @classmethod
    def from_json(cls, obj):
        unknown = sorted(set(obj) - MANIFEST_KEYS)
        if unknown:
            raise ValueError(f"unknown manifest keys: {', '.join(unknown)}")
        if "image" not in obj:
            raise ValueError("manifest record lacks 'image'")
        return cls(image_path=obj["image"], width=int(obj.get("width", 0)), height=int(obj.get("height", 0)),
                   boxes=[BoundingBox(*(int(v) for v in b)) for b in obj.get("boxes", [])],
                   source=obj.get("source", "other"), gt_path=obj.get("gt"))

    def to_json(self):
        obj = {"image": self.image_path, "width": self.width, "height": self.height,
               "boxes": [b.as_list() for b in self.boxes], "source": self.source}
        if self.gt_path is not None:
            obj["gt"] = self.gt_path
        return obj

    def saliency(self):
        return bbox_to_saliency(self.width, self.height, self.boxes)

    def compute_alpha(self):
        self.alpha = alpha(self.saliency())
        return self.alpha


def read_manifest(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(ObjectnessRecord.from_json(json.loads(line)))
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return records


def manifest_text(records):
    return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in records)


@dataclass
class FilterResult:
    kept: list
    rejected: list
    log: list  # (image_path, alpha, reason)


def filter_manifest(records, threshold=ALPHA_THRESHOLD):
    """Keep records whose foreground fraction is strictly below ``threshold``."""
    kept, rejected, entries = [], [], []
    for r in records:
        a = r.alpha if r.alpha is not None else r.compute_alpha()
        r.kept = a < threshold
        if r.kept:
            kept.append(r)
        else:
            rejected.append(r)
            entries.append((r.image_path, a, f"alpha {a:.6f} >= {threshold}"))
    return FilterResult(kept, rejected, entries)


def merge_manifests(*groups):
    """Concatenate record lists in order; returns the merged list and per-source counts."""
    merged = [r for g in groups for r in g]
    counts = {}
    for r in merged:
        counts[r.source] = counts.get(r.source, 0) + 1
    return merged, counts


def alpha_histogram(alphas, bins=10):
    counts, edges = np.histogram(np.asarray(alphas, dtype=float), bins=bins, range=(0.0, 1.0))
    return counts, edges


def pascal_sod_relabel(gt):
    """Keep only the highest non-zero level of a multi-level mask, as a 0/1 map."""
    gt = np.asarray(gt)
    top = gt.max() if gt.size else 0
    if top == 0:
        return np.zeros(gt.shape, dtype=np.uint8)
    return (gt == top).astype(np.uint8)
