"""Data model for per-frame detection streams and their JSONL interchange files.

A stream is an ordered list of frames, each holding scored detections with an
optional polygon mask. Ground truth uses the same geometry without scores.
All types are immutable after construction and validate their invariants
eagerly, so a loaded stream is safe to share across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from shapely.geometry import Polygon as _ShapelyPolygon

PolygonPoints = tuple[tuple[float, float], ...]


class DataError(Exception):
    """Base class for data-level failures in input files and records."""


class ParseError(DataError):
    """A line of an input file could not be decoded."""

    def __init__(self, message: str, *, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(DataError):
    """A record violates a type invariant."""


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def _as_finite_float(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{name} must be a number, got {value!r}")
    value = float(value)
    _require(math.isfinite(value), f"{name} must be finite, got {value!r}")
    return value


class Provenance(str, Enum):
    """Whether a detection came straight from the detector or was recovered."""

    DETECTOR = "detector"
    RECOVERED = "recovered"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous pixel coordinates, corners exclusive of order swaps."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, _as_finite_float(getattr(self, name), f"bbox {name}"))
        _require(self.x_min < self.x_max, f"bbox x_min must be < x_max, got [{self.x_min}, {self.x_max}]")
        _require(self.y_min < self.y_max, f"bbox y_min must be < y_max, got [{self.y_min}, {self.y_max}]")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_polygon(self) -> PolygonPoints:
        """Corner ring of the box, usable wherever a mask polygon is expected."""
        return (
            (self.x_min, self.y_min),
            (self.x_max, self.y_min),
            (self.x_max, self.y_max),
            (self.x_min, self.y_max),
        )

    def to_json(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def validate_polygon(points: Iterable[Iterable[float]], where: str = "mask") -> PolygonPoints:
    """Normalize a vertex list to a tuple of float pairs, rejecting non-simple rings."""
    normalized: list[tuple[float, float]] = []
    for idx, pt in enumerate(points):
        pt = tuple(pt)
        _require(len(pt) == 2, f"{where} vertex {idx} must be an (x, y) pair, got {pt!r}")
        normalized.append(
            (_as_finite_float(pt[0], f"{where} vertex {idx} x"), _as_finite_float(pt[1], f"{where} vertex {idx} y"))
        )
    _require(len(normalized) >= 3, f"{where} must have at least 3 vertices, got {len(normalized)}")
    if not _ShapelyPolygon(normalized).is_valid:
        raise ValidationError(f"{where} must be a simple (non-self-intersecting) polygon")
    return tuple(normalized)


@dataclass(frozen=True)
class Detection:
    """One scored, located object in a frame."""

    class_id: str
    score: float
    bbox: BBox
    mask: PolygonPoints | None = None
    provenance: Provenance = Provenance.DETECTOR

    def __post_init__(self) -> None:
        _require(isinstance(self.class_id, str) and self.class_id != "", "class_id must be a non-empty string")
        object.__setattr__(self, "score", _as_finite_float(self.score, "score"))
        _require(0.0 <= self.score <= 1.0, f"score must be within [0, 1], got {self.score}")
        if self.mask is not None:
            object.__setattr__(self, "mask", validate_polygon(self.mask))
        if not isinstance(self.provenance, Provenance):
            object.__setattr__(self, "provenance", Provenance(self.provenance))

    def center(self) -> tuple[float, float]:
        """Bounding-box midpoint; masks never define the center."""
        return self.bbox.center


@dataclass(frozen=True)
class FrameRecord:
    """Detections observed at one position on the timeline."""

    frame_index: int
    detections: tuple[Detection, ...] = ()
    image_ref: str | None = None

    def __post_init__(self) -> None:
        _require(
            isinstance(self.frame_index, int) and not isinstance(self.frame_index, bool) and self.frame_index >= 0,
            f"frame_index must be an integer >= 0, got {self.frame_index!r}",
        )
        object.__setattr__(self, "detections", tuple(self.detections))


@dataclass(frozen=True)
class DetectionStream:
    """Frames in strictly ascending timeline order.

    Capture rate and resolution are carried in memory only: the JSONL format
    holds frames, and stream-level metadata travels with the run configuration.
    """

    frames: tuple[FrameRecord, ...] = ()
    capture_rate: float | None = None
    resolution: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        frames = tuple(sorted(self.frames, key=lambda fr: fr.frame_index))
        for prev, cur in zip(frames, frames[1:]):
            _require(
                prev.frame_index != cur.frame_index,
                f"duplicate frame_index {cur.frame_index} in stream",
            )
        object.__setattr__(self, "frames", frames)
        if self.capture_rate is not None:
            rate = _as_finite_float(self.capture_rate, "capture_rate")
            _require(rate > 0, f"capture_rate must be > 0, got {rate}")
            object.__setattr__(self, "capture_rate", rate)
        if self.resolution is not None:
            w, h = self.resolution
            _require(int(w) > 0 and int(h) > 0, f"resolution must be positive, got {self.resolution!r}")
            object.__setattr__(self, "resolution", (int(w), int(h)))

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def by_index(self) -> dict[int, FrameRecord]:
        return {fr.frame_index: fr for fr in self.frames}


@dataclass(frozen=True)
class GroundTruthObject:
    """An annotated object: class, box, and optional polygon outline."""

    class_id: str
    bbox: BBox
    polygon: PolygonPoints | None = None

    def __post_init__(self) -> None:
        _require(isinstance(self.class_id, str) and self.class_id != "", "class_id must be a non-empty string")
        if self.polygon is not None:
            object.__setattr__(self, "polygon", validate_polygon(self.polygon, "polygon"))


@dataclass
class GroundTruth:
    """Per-frame annotated objects keyed by frame index."""

    objects: dict[int, tuple[GroundTruthObject, ...]] = field(default_factory=dict)

    def frames(self) -> list[int]:
        return sorted(self.objects)

    def get(self, frame_index: int) -> tuple[GroundTruthObject, ...]:
        return self.objects.get(frame_index, ())

    def total_objects(self) -> int:
        return sum(len(v) for v in self.objects.values())

    def classes(self) -> list[str]:
        return sorted({obj.class_id for objs in self.objects.values() for obj in objs})


# --- JSONL encoding -------------------------------------------------------

def detection_to_json(det: Detection) -> dict[str, Any]:
    record: dict[str, Any] = {
        "class": det.class_id,
        "score": det.score,
        "bbox": det.bbox.to_json(),
        "mask": [list(pt) for pt in det.mask] if det.mask is not None else None,
    }
    if det.provenance is not Provenance.DETECTOR:
        record["provenance"] = det.provenance.value
    return record


def detection_from_json(record: Mapping[str, Any], where: str) -> Detection:
    _require(isinstance(record, Mapping), f"{where}: detection must be an object, got {record!r}")
    for key in ("class", "score", "bbox"):
        _require(key in record, f"{where}: detection missing required key {key!r}")
    bbox = record["bbox"]
    _require(isinstance(bbox, Sequence) and len(bbox) == 4, f"{where}: bbox must be a 4-element list")
    try:
        return Detection(
            class_id=record["class"],
            score=record["score"],
            bbox=BBox(*bbox),
            mask=None if record.get("mask") is None else tuple(tuple(p) for p in record["mask"]),
            provenance=record.get("provenance", Provenance.DETECTOR),
        )
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def frame_to_json(fr: FrameRecord) -> dict[str, Any]:
    record: dict[str, Any] = {
        "frame": fr.frame_index,
        "detections": [detection_to_json(d) for d in fr.detections],
    }
    if fr.image_ref is not None:
        record["image"] = fr.image_ref
    return record


def _frame_from_json(record: Any, line: int) -> FrameRecord:
    if not isinstance(record, Mapping):
        raise ParseError(f"expected an object per line, got {type(record).__name__}", line=line)
    _require("frame" in record, f"line {line}: missing required key 'frame'")
    frame_index = record["frame"]
    _require(
        isinstance(frame_index, int) and not isinstance(frame_index, bool),
        f"line {line}: frame must be an integer, got {frame_index!r}",
    )
    detections = record.get("detections", [])
    _require(isinstance(detections, Sequence), f"line {line}: detections must be a list")
    where = f"frame {frame_index}"
    return FrameRecord(
        frame_index=frame_index,
        detections=tuple(detection_from_json(d, where) for d in detections),
        image_ref=record.get("image"),
    )


def _iter_jsonl(path: Path) -> Iterable[tuple[int, Any]]:
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", line=line_no) from exc


def load_stream(
    path: str | Path,
    *,
    capture_rate: float | None = None,
    resolution: tuple[int, int] | None = None,
) -> DetectionStream:
    """Read a detection stream from a JSONL file, validating every record.

    Raises ParseError with the offending line number for malformed lines and
    ValidationError naming the field and frame for invariant violations.
    """
    frames = [_frame_from_json(record, line_no) for line_no, record in _iter_jsonl(Path(path))]
    return DetectionStream(frames=tuple(frames), capture_rate=capture_rate, resolution=resolution)


def save_stream(stream: DetectionStream, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for fr in stream.frames:
            handle.write(json.dumps(frame_to_json(fr)) + "\n")


def ground_truth_object_to_json(obj: GroundTruthObject) -> dict[str, Any]:
    return {
        "class": obj.class_id,
        "bbox": obj.bbox.to_json(),
        "mask": [list(pt) for pt in obj.polygon] if obj.polygon is not None else None,
    }


def ground_truth_object_from_json(record: Mapping[str, Any], where: str) -> GroundTruthObject:
    for key in ("class", "bbox"):
        _require(key in record, f"{where}: object missing required key {key!r}")
    bbox = record["bbox"]
    _require(isinstance(bbox, Sequence) and len(bbox) == 4, f"{where}: bbox must be a 4-element list")
    try:
        return GroundTruthObject(
            class_id=record["class"],
            bbox=BBox(*bbox),
            polygon=None if record.get("mask") is None else tuple(tuple(p) for p in record["mask"]),
        )
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def load_ground_truth(path: str | Path) -> GroundTruth:
    """Read annotations from the stream schema without scores."""
    objects: dict[int, tuple[GroundTruthObject, ...]] = {}
    for line_no, record in _iter_jsonl(Path(path)):
        if not isinstance(record, Mapping) or "frame" not in record:
            raise ParseError("expected an object with a 'frame' key", line=line_no)
        frame_index = record["frame"]
        _require(
            isinstance(frame_index, int) and not isinstance(frame_index, bool) and frame_index >= 0,
            f"line {line_no}: frame must be an integer >= 0, got {frame_index!r}",
        )
        _require(frame_index not in objects, f"line {line_no}: duplicate frame_index {frame_index}")
        where = f"frame {frame_index}"
        objects[frame_index] = tuple(
            ground_truth_object_from_json(d, where) for d in record.get("detections", [])
        )
    return GroundTruth(objects=objects)


def save_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for frame_index in truth.frames():
            record = {
                "frame": frame_index,
                "detections": [ground_truth_object_to_json(o) for o in truth.get(frame_index)],
            }
            handle.write(json.dumps(record) + "\n")


def filter_by_score(stream: DetectionStream, min_score: float) -> DetectionStream:
    """Keep only detections at or above a score; the no-recovery baseline filter."""
    frames = tuple(
        replace(fr, detections=tuple(d for d in fr.detections if d.score >= min_score))
        for fr in stream.frames
    )
    return replace(stream, frames=frames)
