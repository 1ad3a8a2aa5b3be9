from __future__ import annotations

import numpy as np
import pytest

from detloop import BBox, Detection, DetectionStream, FrameRecord


def make_detection(
    class_id: str = "A",
    score: float = 0.95,
    cx: float = 100.0,
    cy: float = 100.0,
    w: float = 40.0,
    h: float = 40.0,
    with_mask: bool = False,
) -> Detection:
    bbox = BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
    return Detection(class_id, score, bbox, bbox.as_polygon() if with_mask else None)


def make_stream(rows, **kwargs) -> DetectionStream:
    """rows: list of detection lists, one per consecutive frame starting at 0."""
    frames = tuple(FrameRecord(i, tuple(dets)) for i, dets in enumerate(rows))
    return DetectionStream(frames=frames, **kwargs)


@pytest.fixture
def track_stream() -> DetectionStream:
    # Confident pair at frames 0-1, weak continuation at frame 2.
    return make_stream([
        [make_detection(score=0.95, cx=100)],
        [make_detection(score=0.95, cx=130)],
        [make_detection(score=0.60, cx=170)],
    ])


def random_stream(seed: int) -> DetectionStream:
    """Small random stream with enough spatial structure to trigger recoveries."""
    rng = np.random.default_rng(seed)
    n_frames = int(rng.integers(0, 51))
    rows = []
    anchors = rng.uniform(60, 440, size=(4, 2))  # loose cluster centers per class
    classes = ["a", "b", "c", "d"]
    for _ in range(n_frames):
        dets = []
        for _ in range(int(rng.integers(0, 11))):
            cls = int(rng.integers(0, 4))
            cx, cy = anchors[cls] + rng.uniform(-90, 90, 2)
            w, h = rng.uniform(10, 60, 2)
            dets.append(make_detection(
                class_id=classes[cls],
                score=float(rng.uniform(0.0, 1.0)),
                cx=float(cx), cy=float(cy), w=float(w), h=float(h),
            ))
        rows.append(dets)
    return make_stream(rows)
