"""External-process detector adapter.

The detector behind the loop is an external program pair: a train command fed
a manifest and annotations file, and an infer command fed a frame list that
must write a detection stream. Commands are shell templates with the
placeholders {train_manifest}, {annotations}, {frames_in}, {detections_out}.
The command pair owns its own model storage between calls; the handle
returned by train() is an opaque token.
"""

from __future__ import annotations

import json
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .loop import AdapterError, DatasetManifest
from .streams import DetectionStream, GroundTruthObject, ground_truth_object_to_json, load_stream

__all__ = ["ExternalProcessAdapter", "write_manifest", "write_annotations"]


def write_manifest(manifest: DatasetManifest, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for entry in manifest.entries:
            handle.write(json.dumps({
                "frame_id": entry.frame_id,
                "source": entry.source.value,
                "iteration_added": entry.iteration_added,
            }) + "\n")


def write_annotations(annotations: Mapping[str, Sequence[GroundTruthObject]], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for frame_id in sorted(annotations):
            handle.write(json.dumps({
                "frame_id": frame_id,
                "objects": [ground_truth_object_to_json(o) for o in annotations[frame_id]],
            }) + "\n")


@dataclass
class ExternalProcessAdapter:
    train_command: str
    infer_command: str
    workdir: Path
    timeout_s: float = 3600.0
    _trained: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        self.workdir = Path(self.workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)

    def _run(self, template: str, substitutions: Mapping[str, str]) -> None:
        argv = [part.format_map(dict(substitutions)) for part in shlex.split(template)]
        try:
            proc = subprocess.run(
                argv, capture_output=True, text=True, timeout=self.timeout_s, check=False
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AdapterError(f"command {argv[0]!r} failed to run: {exc}") from exc
        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-3:]
            raise AdapterError(
                f"command {argv[0]!r} exited with {proc.returncode}: {' | '.join(tail)}"
            )

    def train(self, manifest: DatasetManifest, annotations: Mapping[str, Sequence[GroundTruthObject]]) -> str:
        manifest_path = self.workdir / "train_manifest.jsonl"
        annotations_path = self.workdir / "train_annotations.jsonl"
        write_manifest(manifest, manifest_path)
        write_annotations(annotations, annotations_path)
        self._run(self.train_command, {
            "train_manifest": str(manifest_path),
            "annotations": str(annotations_path),
        })
        self._trained += 1
        return f"external-{self._trained}"

    def infer(self, model: str, frames: Sequence[int]) -> DetectionStream:
        frames_path = self.workdir / "frames_in.txt"
        detections_path = self.workdir / "detections_out.jsonl"
        frames_path.write_text("".join(f"{f}\n" for f in sorted(frames)), encoding="utf-8")
        if detections_path.exists():
            detections_path.unlink()
        self._run(self.infer_command, {
            "frames_in": str(frames_path),
            "detections_out": str(detections_path),
        })
        if not detections_path.exists():
            raise AdapterError(f"infer command produced no output at {detections_path}")
        return load_stream(detections_path)
