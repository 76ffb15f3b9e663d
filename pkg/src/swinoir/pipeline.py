"""Detect-then-enhance: super-resolve the objects an external detector found.

Detections are read from JSON, either a bare list or ``{"detections": [...]}``
of records::

    {"label": "person", "confidence": 0.91, "box": [x, y, width, height]}

Coordinates are source-image pixels with the origin at the top-left corner.
Fractional boxes are widened to whole pixels.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .data import read_image, write_image
from .errors import DetectionParseError, ShapeError
from .model import SwinOIR, load_checkpoint, read_checkpoint_meta, upscale

logger = logging.getLogger(__name__)

DEFAULT_CONFIDENCE = 0.25


@dataclass(frozen=True)
class DetectionBox:
    label: str
    confidence: float
    x: int
    y: int
    width: int
    height: int
    clipped: bool = False

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise DetectionParseError(f"confidence {self.confidence} outside [0, 1]")
        if self.width <= 0 or self.height <= 0:
            raise DetectionParseError(f"box size {self.width}x{self.height} must be positive")

    @property
    def rect(self) -> tuple[int, int, int, int]:
        return self.x, self.y, self.width, self.height

    def expanded(self, margin: int) -> "DetectionBox":
        if margin <= 0:
            return self
        return replace(self, x=self.x - margin, y=self.y - margin, width=self.width + 2 * margin,
                       height=self.height + 2 * margin)

    def clip(self, height: int, width: int) -> "DetectionBox":
        """Intersect with a ``height x width`` image; flags the box if anything was cut."""
        x0, y0 = max(self.x, 0), max(self.y, 0)
        x1, y1 = min(self.x + self.width, width), min(self.y + self.height, height)
        if x1 <= x0 or y1 <= y0:
            raise DetectionParseError(f"box {self.rect} lies outside the {width}x{height} image")
        if (x0, y0, x1 - x0, y1 - y0) == self.rect:
            return self
        return replace(self, x=x0, y=y0, width=x1 - x0, height=y1 - y0, clipped=True)


def parse_detection(record, index: int = 0) -> DetectionBox:
    where = f"detection record {index}"
    if not isinstance(record, dict):
        raise DetectionParseError(f"{where}: expected an object, got {type(record).__name__}")
    try:
        label = record["label"]
        confidence = record["confidence"]
        box = record["box"]
    except KeyError as exc:
        raise DetectionParseError(f"{where}: missing field {exc.args[0]!r}") from None
    if not isinstance(label, str):
        raise DetectionParseError(f"{where}: label must be a string")
    numbers = [confidence, *box] if isinstance(box, (list, tuple)) else None
    if numbers is None or len(box) != 4 or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in numbers
    ):
        raise DetectionParseError(f"{where}: box must be four finite numbers [x, y, width, height]")
    x, y, w, h = box
    x0, y0 = math.floor(x), math.floor(y)
    x1, y1 = math.ceil(x + w), math.ceil(y + h)
    try:
        return DetectionBox(label, float(confidence), x0, y0, x1 - x0, y1 - y0)
    except DetectionParseError as exc:
        raise DetectionParseError(f"{where}: {exc}") from None


def load_detections(
    path,
    image_size: Optional[tuple[int, int]] = None,
    min_confidence: float = DEFAULT_CONFIDENCE,
    margin: int = 0,
) -> list[DetectionBox]:
    """Parse, validate, confidence-filter, expand by ``margin`` and clip detections.

    ``image_size`` is ``(height, width)``; clipping is skipped without it.
    """
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DetectionParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    records = payload.get("detections") if isinstance(payload, dict) else payload
    if not isinstance(records, list):
        raise DetectionParseError(f"{path}: expected a list of detection records")
    boxes = [parse_detection(r, i) for i, r in enumerate(records)]
    boxes = [b.expanded(margin) for b in boxes if b.confidence >= min_confidence]
    if image_size is not None:
        boxes = [b.clip(*image_size) for b in boxes]
    if not boxes:
        logger.warning("no detections left in %s after filtering at confidence %.2f", path, min_confidence)
    return boxes


def crop(image: np.ndarray, box: DetectionBox) -> np.ndarray:
    h, w = image.shape[:2]
    if box.x < 0 or box.y < 0 or box.x + box.width > w or box.y + box.height > h:
        raise ShapeError(f"box {box.rect} is not inside the {w}x{h} image; clip it first")
    return image[box.y : box.y + box.height, box.x : box.x + box.width].copy()


def paste(image: np.ndarray, patch: np.ndarray, box: DetectionBox) -> np.ndarray:
    out = image.copy()
    out[box.y : box.y + box.height, box.x : box.x + box.width] = patch
    return out


# ---------------------------------------------------------------------------
# enhancement


@dataclass
class CropRecord:
    index: int
    label: str
    confidence: float
    rect: tuple
    clipped: bool
    crop_file: Optional[str] = None
    enhanced_file: Optional[str] = None
    crop_size: Optional[tuple] = None  # (width, height)
    output_size: Optional[tuple] = None
    error: Optional[str] = None


@dataclass
class PipelineReport:
    records: list[CropRecord] = field(default_factory=list)
    checkpoint: dict = field(default_factory=dict)
    scale: int = 0
    timings: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(r.error is None for r in self.records)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_-]+", "-", label).strip("-") or "object"


def checkpoint_identity(path) -> dict:
    path = Path(path)
    meta = read_checkpoint_meta(path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    return {"path": str(path), "sha256": digest, "version": meta["version"], "config": meta["config"]}


def enhance_crops(
    image: np.ndarray,
    boxes: Sequence[DetectionBox],
    checkpoint: Union[str, Path, SwinOIR],
    out_dir,
    workers: int = 1,
) -> PipelineReport:
    """Crop every box, super-resolve each crop on its own, and write both as PNG.

    A failing crop is recorded in the report and does not stop the others.
    Records keep input box order whatever ``workers`` is.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if isinstance(checkpoint, SwinOIR):
        model, identity = checkpoint, {"path": None, "config": asdict(checkpoint.config)}
    else:
        identity = checkpoint_identity(checkpoint)
        model = load_checkpoint(checkpoint)
    s = model.config.upscale
    timings = {"load_model": time.perf_counter() - t0, "crop": 0.0, "enhance": 0.0, "write": 0.0}

    def run(item):
        i, box = item
        rec = CropRecord(i, box.label, box.confidence, box.rect, box.clipped)
        try:
            t = time.perf_counter()
            patch = crop(image, box)
            t1 = time.perf_counter()
            enhanced = upscale(model, patch)
            t2 = time.perf_counter()
            stem = f"{i:03d}_{_slug(box.label)}"
            rec.crop_file = write_image(patch, out_dir / f"{stem}_crop.png").name
            rec.enhanced_file = write_image(enhanced, out_dir / f"{stem}_x{s}.png").name
            rec.crop_size = (patch.shape[1], patch.shape[0])
            rec.output_size = (enhanced.shape[1], enhanced.shape[0])
            return rec, (t1 - t, t2 - t1, time.perf_counter() - t2)
        except Exception as exc:  # one bad crop must not abort the rest
            logger.error("crop %d (%s) failed: %s", i, box.label, exc)
            rec.error = f"{type(exc).__name__}: {exc}"
            return rec, (0.0, 0.0, 0.0)

    items = list(enumerate(boxes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]

    report = PipelineReport(checkpoint=identity, scale=s, timings=timings)
    for rec, (tc, te, tw) in results:
        report.records.append(rec)
        timings["crop"] += tc
        timings["enhance"] += te
        timings["write"] += tw
    report.write(out_dir / "report.json")
    return report


def run_pipeline(
    image_path,
    detections_path,
    checkpoint_path,
    out_dir,
    min_confidence: float = DEFAULT_CONFIDENCE,
    margin: int = 0,
    workers: int = 1,
) -> PipelineReport:
    image = read_image(image_path)
    boxes = load_detections(detections_path, image.shape[:2], min_confidence, margin)
    return enhance_crops(image, boxes, checkpoint_path, out_dir, workers)
