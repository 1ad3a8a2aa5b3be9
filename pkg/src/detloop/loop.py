"""Self-training loop orchestration: dataset ledgers, stepping, review intake.

One iteration trains the detector on the current training set, evaluates it
on the held-out test set, and stops when the termination criteria are met.
Otherwise it infers on the remaining unlabeled pool, recovers weak detections
through temporal coherence, skip-samples the recovered frames, removes the
sample from the pool, and splits it into a model-annotated part and a part
staged for human review. Reviewed corrections join the training set and the
iteration index advances.

State is a plain JSON document persisted after every transition, so a crashed
or blocked run (e.g. waiting on reviews) resumes exactly where it stopped.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

from .coherence import CoherenceParams, recover, recovered_indicator
from .metrics import MatchPolicy, MetricsReport, evaluate
from .sampling import SkipSampler, SplitSpec, alpha_split, select_frames, skip_indicator, support
from .streams import (
    BBox,
    Detection,
    DetectionStream,
    GroundTruth,
    GroundTruthObject,
    ValidationError,
    _require,
    detection_from_json,
    detection_to_json,
    ground_truth_object_from_json,
    ground_truth_object_to_json,
)

STATE_SCHEMA_VERSION = 1

# Loop workspace layout, shared by the CLI and the review service.
STATE_FILENAME = "state.json"
CONFIG_FILENAME = "config.json"
LOCK_FILENAME = "state.lock"

__all__ = [
    "AnnotationSource",
    "ManifestEntry",
    "DatasetManifest",
    "TerminationCriteria",
    "DetectorAdapter",
    "AdapterError",
    "ReviewAction",
    "ReviewDecision",
    "ReviewSubmission",
    "LoopPhase",
    "PendingReview",
    "HistoryRow",
    "LoopState",
    "LoopEnv",
    "PendingReviewsError",
    "update_training_set",
    "check_termination",
    "run_iteration",
    "store_reviews",
    "finalize_pending",
    "ingest_reviews",
    "apply_decisions",
    "save_state",
    "load_state",
]


class AnnotationSource(str, Enum):
    HUMAN = "human"
    MODEL = "model"


@dataclass(frozen=True)
class ManifestEntry:
    frame_id: str
    source: AnnotationSource
    iteration_added: int

    def __post_init__(self) -> None:
        _require(isinstance(self.frame_id, str) and self.frame_id != "", "frame_id must be a non-empty string")
        if not isinstance(self.source, AnnotationSource):
            object.__setattr__(self, "source", AnnotationSource(self.source))


@dataclass(frozen=True)
class DatasetManifest:
    """Frame ledger with per-entry annotation provenance."""

    entries: tuple[ManifestEntry, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        seen: set[str] = set()
        dupes = sorted({e.frame_id for e in self.entries if e.frame_id in seen or seen.add(e.frame_id)})
        _require(not dupes, f"duplicate frame_ids in manifest: {dupes}")

    def ids(self) -> frozenset[str]:
        return frozenset(e.frame_id for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def update_training_set(
    training: DatasetManifest,
    human: DatasetManifest,
    auto: DatasetManifest,
) -> DatasetManifest:
    """Union the training set with this iteration's human and model additions.

    The three manifests must be pairwise disjoint, human entries must carry
    the human source and auto entries the model source; the result size is
    exactly the sum of the input sizes.
    """
    for entry in human.entries:
        _require(entry.source is AnnotationSource.HUMAN,
                 f"human manifest entry {entry.frame_id} has source {entry.source.value}")
    for entry in auto.entries:
        _require(entry.source is AnnotationSource.MODEL,
                 f"auto manifest entry {entry.frame_id} has source {entry.source.value}")
    overlap = sorted((training.ids() & human.ids()) | (training.ids() & auto.ids()) | (human.ids() & auto.ids()))
    _require(not overlap, f"manifests must be disjoint; duplicate frame_ids: {overlap}")
    return DatasetManifest(training.entries + human.entries + auto.entries)


@dataclass(frozen=True)
class TerminationCriteria:
    """Inclusive lower bounds on precision, recall, and f1 at one IoU threshold."""

    min_precision: float = 0.90
    min_recall: float = 0.90
    min_f1: float = 0.92
    iou: float = 0.5

    def __post_init__(self) -> None:
        for name in ("min_precision", "min_recall", "min_f1"):
            value = getattr(self, name)
            _require(0.0 < value <= 1.0, f"{name} must be within (0, 1], got {value}")


def check_termination(report: MetricsReport, criteria: TerminationCriteria) -> bool:
    row = report.at(criteria.iou)
    return (
        row.precision >= criteria.min_precision
        and row.recall >= criteria.min_recall
        and row.f1 >= criteria.min_f1
    )


class DetectorAdapter(Protocol):
    """Boundary to the actual detector; training internals are out of scope here."""

    def train(self, manifest: DatasetManifest, annotations: Mapping[str, Sequence[GroundTruthObject]]) -> str: ...

    def infer(self, model: str, frames: Sequence[int]) -> DetectionStream: ...


class AdapterError(Exception):
    """A detector adapter failed; message carries the iteration context."""


class PendingReviewsError(ValidationError):
    """Finalization attempted while frames are still unreviewed."""

    def __init__(self, missing: Sequence[str]):
        super().__init__(f"unreviewed frames: {list(missing)}")
        self.missing = list(missing)


# --- Review schema ----------------------------------------------------------

class ReviewAction(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    RELABEL = "relabel"
    ADJUST_BOX = "adjust_box"


@dataclass(frozen=True)
class ReviewDecision:
    detection_index: int
    action: ReviewAction
    class_id: str | None = None
    bbox: BBox | None = None

    def __post_init__(self) -> None:
        _require(isinstance(self.detection_index, int) and self.detection_index >= 0,
                 f"detection_index must be an integer >= 0, got {self.detection_index!r}")
        if not isinstance(self.action, ReviewAction):
            try:
                object.__setattr__(self, "action", ReviewAction(self.action))
            except ValueError:
                raise ValidationError(
                    f"unknown action {self.action!r}; expected one of "
                    f"{[a.value for a in ReviewAction]}"
                ) from None
        if self.action is ReviewAction.RELABEL:
            _require(bool(self.class_id), "relabel decisions require a class")
            _require(self.bbox is None, "relabel decisions must not carry a bbox")
        elif self.action is ReviewAction.ADJUST_BOX:
            _require(self.bbox is not None, "adjust_box decisions require a bbox")
            _require(self.class_id is None, "adjust_box decisions must not carry a class")
        else:
            _require(self.class_id is None and self.bbox is None,
                     f"{self.action.value} decisions must not carry a class or bbox")


@dataclass(frozen=True)
class ReviewSubmission:
    request_id: str
    decisions: tuple[ReviewDecision, ...]

    def __post_init__(self) -> None:
        _require(isinstance(self.request_id, str) and self.request_id != "",
                 "request_id must be a non-empty string")
        object.__setattr__(self, "decisions", tuple(self.decisions))


def apply_decisions(
    detections: Sequence[Detection],
    decisions: Sequence[ReviewDecision],
) -> tuple[GroundTruthObject, ...]:
    """Turn model detections plus review decisions into annotations.

    Every detection index must be decided exactly once; rejections drop the
    object, relabels replace the class, box adjustments replace the box (the
    mask is dropped since it no longer outlines the adjusted region).
    """
    by_index: dict[int, ReviewDecision] = {}
    for decision in decisions:
        _require(decision.detection_index < len(detections),
                 f"decision references detection {decision.detection_index}, "
                 f"but the frame has {len(detections)} detections")
        _require(decision.detection_index not in by_index,
                 f"duplicate decision for detection {decision.detection_index}")
        by_index[decision.detection_index] = decision
    missing = sorted(set(range(len(detections))) - set(by_index))
    _require(not missing, f"missing decisions for detections: {missing}")

    objects: list[GroundTruthObject] = []
    for idx, det in enumerate(detections):
        decision = by_index[idx]
        if decision.action is ReviewAction.REJECT:
            continue
        if decision.action is ReviewAction.RELABEL:
            objects.append(GroundTruthObject(decision.class_id, det.bbox, det.mask))
        elif decision.action is ReviewAction.ADJUST_BOX:
            objects.append(GroundTruthObject(det.class_id, decision.bbox, None))
        else:
            objects.append(GroundTruthObject(det.class_id, det.bbox, det.mask))
    return tuple(objects)


# --- Loop state -------------------------------------------------------------

class LoopPhase(str, Enum):
    READY = "ready"
    AWAITING_REVIEW = "awaiting-review"
    DONE = "done"
    EXHAUSTED = "exhausted"


@dataclass
class PendingReview:
    """Sampled frames staged at the end of an iteration, until reviews land."""

    iteration: int
    auto_entries: tuple[ManifestEntry, ...]
    human_frames: tuple[str, ...]
    payload: dict[str, tuple[Detection, ...]]
    reviews: dict[str, ReviewSubmission] = field(default_factory=dict)
    images: dict[str, str | None] = field(default_factory=dict)

    def unreviewed(self) -> list[str]:
        return [f for f in self.human_frames if f not in self.reviews]


@dataclass
class HistoryRow:
    """One line of the per-iteration ledger."""

    iteration: int
    train_size: int
    precision: float
    recall: float
    f1: float
    recovered: int | None = None
    sampled: int | None = None
    auto: int | None = None
    human: int | None = None
    terminated: bool = False


@dataclass
class LoopState:
    seed: int
    iteration: int
    phase: LoopPhase
    training: DatasetManifest
    unlabeled: tuple[int, ...]
    timeline_length: int
    alpha_schedule: tuple[float, ...]
    history: list[HistoryRow] = field(default_factory=list)
    annotations: dict[str, tuple[GroundTruthObject, ...]] = field(default_factory=dict)
    pending: PendingReview | None = None
    model_handle: str | None = None

    def alpha_for(self, iteration: int) -> float:
        # Past the end of the schedule the last value keeps applying.
        if not self.alpha_schedule:
            return 0.0
        return self.alpha_schedule[min(iteration, len(self.alpha_schedule) - 1)]


@dataclass
class LoopEnv:
    """Everything an iteration needs besides the state itself."""

    adapter: DetectorAdapter
    test_frames: tuple[int, ...]
    test_truth: GroundTruth
    coherence: CoherenceParams
    sampler: SkipSampler
    criteria: TerminationCriteria = TerminationCriteria()
    policy: MatchPolicy = MatchPolicy()
    initial_frames: tuple[int, ...] | None = None
    initial_skip: int | None = None
    max_iterations: int = 10


def _split_seed(state: LoopState) -> int:
    # Stable per-iteration seed so reruns reproduce the ledger exactly.
    return state.seed * 1_000_003 + state.iteration


def _initial_sample(state: LoopState, env: LoopEnv) -> list[int]:
    pool = set(state.unlabeled)
    if env.initial_frames is not None:
        outside = sorted(set(env.initial_frames) - pool)
        _require(not outside, f"initial sample frames not in the unlabeled pool: {outside}")
        return sorted(env.initial_frames)
    skip = env.initial_skip if env.initial_skip is not None else env.sampler.skip
    positions = support(skip_indicator(SkipSampler(skip), state.timeline_length))
    return [p for p in positions if p in pool]


def run_iteration(state: LoopState, env: LoopEnv) -> LoopState:
    """Execute one loop pass; returns the new state (input state untouched).

    In the awaiting-review phase this is a no-op: reviews arrive through
    ingest_reviews (or the review service), which advances the iteration.
    """
    if state.phase is not LoopPhase.READY:
        return state
    if state.iteration >= env.max_iterations:
        return replace(state, phase=LoopPhase.EXHAUSTED)

    l = state.iteration
    try:
        handle = env.adapter.train(state.training, state.annotations)
        test_stream = env.adapter.infer(handle, env.test_frames)
    except Exception as exc:  # adapter failures carry iteration context
        raise AdapterError(f"iteration {l}: detector adapter failed: {exc}") from exc

    report = evaluate(test_stream, env.test_truth, env.policy)
    row = HistoryRow(
        iteration=l,
        train_size=len(state.training),
        precision=report.at(env.criteria.iou).precision,
        recall=report.at(env.criteria.iou).recall,
        f1=report.at(env.criteria.iou).f1,
    )
    state = replace(state, model_handle=handle, history=state.history + [row])

    if check_termination(report, env.criteria):
        row.terminated = True
        return replace(state, phase=LoopPhase.DONE)
    if not state.unlabeled:
        return replace(state, phase=LoopPhase.EXHAUSTED)

    try:
        pool_stream = env.adapter.infer(handle, state.unlabeled)
    except Exception as exc:
        raise AdapterError(f"iteration {l}: detector adapter failed: {exc}") from exc
    recovery = recover(pool_stream, env.coherence)
    indicator = recovered_indicator(recovery, state.timeline_length)

    if l == 0:
        sampled = _initial_sample(state, env)
    else:
        sampled = support(select_frames(indicator, skip_indicator(env.sampler, state.timeline_length)))

    row.recovered = len(recovery.recovered_frames)
    row.sampled = len(sampled)

    alpha = state.alpha_for(l)
    auto_ids, human_ids = alpha_split(
        [str(f) for f in sampled], SplitSpec(alpha=alpha, seed=_split_seed(state))
    )
    row.auto = len(auto_ids)
    row.human = len(human_ids)

    recovered_by_index = recovery.stream.by_index()
    payload = {
        str(f): (recovered_by_index[f].detections if f in recovered_by_index else ())
        for f in sampled
    }
    images = {
        str(f): (recovered_by_index[f].image_ref if f in recovered_by_index else None)
        for f in sampled
    }
    pending = PendingReview(
        iteration=l,
        auto_entries=tuple(ManifestEntry(fid, AnnotationSource.MODEL, l) for fid in auto_ids),
        human_frames=tuple(human_ids),
        payload=payload,
        images=images,
    )
    sampled_set = set(sampled)
    remaining = tuple(f for f in state.unlabeled if f not in sampled_set)
    state = replace(state, unlabeled=remaining, pending=pending, phase=LoopPhase.AWAITING_REVIEW)

    if not human_ids:
        # Nothing needs human review this round; advance immediately.
        state = finalize_pending(state)
    return state


def store_reviews(state: LoopState, submissions: Mapping[str, ReviewSubmission]) -> LoopState:
    """Record review submissions without touching the training set.

    Decisions are validated eagerly against the staged detections. A frame
    reviewed twice keeps the latest submission (last write wins); storing
    never advances the loop.
    """
    _require(state.phase is LoopPhase.AWAITING_REVIEW and state.pending is not None,
             f"no review is pending (phase: {state.phase.value})")
    pending = state.pending
    unknown = sorted(set(submissions) - set(pending.human_frames))
    _require(not unknown, f"reviews reference frames not pending review: {unknown}")

    reviews = dict(pending.reviews)
    for frame_id, submission in submissions.items():
        apply_decisions(pending.payload[frame_id], submission.decisions)  # validate eagerly
        reviews[frame_id] = submission
    return replace(state, pending=replace_pending(pending, reviews=reviews))


def finalize_pending(state: LoopState) -> LoopState:
    """Fold the staged sample into the training set and advance the iteration.

    All pending frames must be reviewed; reviewed corrections become human
    annotations, the auto-annotated part keeps its model detections verbatim.
    """
    _require(state.phase is LoopPhase.AWAITING_REVIEW and state.pending is not None,
             f"no review is pending (phase: {state.phase.value})")
    pending = state.pending
    missing = pending.unreviewed()
    if missing:
        raise PendingReviewsError(missing)

    annotations = dict(state.annotations)
    human_entries = []
    for frame_id in pending.human_frames:
        annotations[frame_id] = apply_decisions(
            pending.payload[frame_id], pending.reviews[frame_id].decisions
        )
        human_entries.append(ManifestEntry(frame_id, AnnotationSource.HUMAN, pending.iteration))
    for entry in pending.auto_entries:
        annotations[entry.frame_id] = tuple(
            GroundTruthObject(d.class_id, d.bbox, d.mask) for d in pending.payload[entry.frame_id]
        )

    training = update_training_set(
        state.training,
        DatasetManifest(tuple(human_entries)),
        DatasetManifest(pending.auto_entries),
    )
    return replace(
        state,
        training=training,
        annotations=annotations,
        pending=None,
        iteration=state.iteration + 1,
        phase=LoopPhase.READY,
    )


def ingest_reviews(state: LoopState, submissions: Mapping[str, ReviewSubmission]) -> LoopState:
    """Store a batch of reviews and finalize once every pending frame is covered."""
    state = store_reviews(state, submissions)
    if state.pending is not None and not state.pending.unreviewed():
        state = finalize_pending(state)
    return state


def replace_pending(pending: PendingReview, **changes) -> PendingReview:
    return PendingReview(
        iteration=changes.get("iteration", pending.iteration),
        auto_entries=changes.get("auto_entries", pending.auto_entries),
        human_frames=changes.get("human_frames", pending.human_frames),
        payload=changes.get("payload", pending.payload),
        reviews=changes.get("reviews", pending.reviews),
        images=changes.get("images", pending.images),
    )


# --- Persistence ------------------------------------------------------------

def _entry_to_json(entry: ManifestEntry) -> dict[str, Any]:
    return {"frame_id": entry.frame_id, "source": entry.source.value, "iteration_added": entry.iteration_added}


def _entry_from_json(record: Mapping[str, Any]) -> ManifestEntry:
    return ManifestEntry(record["frame_id"], AnnotationSource(record["source"]), record["iteration_added"])


def _decision_to_json(decision: ReviewDecision) -> dict[str, Any]:
    record: dict[str, Any] = {"detection_index": decision.detection_index, "action": decision.action.value}
    if decision.class_id is not None:
        record["class"] = decision.class_id
    if decision.bbox is not None:
        record["bbox"] = decision.bbox.to_json()
    return record


def decision_from_json(record: Mapping[str, Any]) -> ReviewDecision:
    _require("detection_index" in record and "action" in record,
             "decisions require detection_index and action")
    try:
        action = ReviewAction(record["action"])
    except ValueError:
        raise ValidationError(
            f"unknown action {record['action']!r}; expected one of "
            f"{[a.value for a in ReviewAction]}"
        ) from None
    bbox = record.get("bbox")
    return ReviewDecision(
        detection_index=record["detection_index"],
        action=action,
        class_id=record.get("class"),
        bbox=BBox(*bbox) if bbox is not None else None,
    )


def state_to_dict(state: LoopState) -> dict[str, Any]:
    pending = None
    if state.pending is not None:
        pending = {
            "iteration": state.pending.iteration,
            "auto_entries": [_entry_to_json(e) for e in state.pending.auto_entries],
            "human_frames": list(state.pending.human_frames),
            "payload": {
                fid: [detection_to_json(d) for d in dets]
                for fid, dets in state.pending.payload.items()
            },
            "reviews": {
                fid: {
                    "request_id": sub.request_id,
                    "decisions": [_decision_to_json(d) for d in sub.decisions],
                }
                for fid, sub in state.pending.reviews.items()
            },
            "images": dict(state.pending.images),
        }
    return {
        "schema_version": STATE_SCHEMA_VERSION,
        "seed": state.seed,
        "iteration": state.iteration,
        "phase": state.phase.value,
        "training": [_entry_to_json(e) for e in state.training.entries],
        "unlabeled": list(state.unlabeled),
        "timeline_length": state.timeline_length,
        "alpha_schedule": list(state.alpha_schedule),
        "history": [vars(row).copy() for row in state.history],
        "annotations": {
            fid: [ground_truth_object_to_json(o) for o in objs]
            for fid, objs in state.annotations.items()
        },
        "pending": pending,
        "model_handle": state.model_handle,
    }


def state_from_dict(record: Mapping[str, Any]) -> LoopState:
    version = record.get("schema_version")
    _require(version == STATE_SCHEMA_VERSION,
             f"unsupported state schema version {version!r} (expected {STATE_SCHEMA_VERSION})")
    pending = None
    if record.get("pending") is not None:
        p = record["pending"]
        pending = PendingReview(
            iteration=p["iteration"],
            auto_entries=tuple(_entry_from_json(e) for e in p["auto_entries"]),
            human_frames=tuple(p["human_frames"]),
            payload={
                fid: tuple(detection_from_json(d, f"frame {fid}") for d in dets)
                for fid, dets in p["payload"].items()
            },
            reviews={
                fid: ReviewSubmission(
                    request_id=sub["request_id"],
                    decisions=tuple(decision_from_json(d) for d in sub["decisions"]),
                )
                for fid, sub in p["reviews"].items()
            },
            images=dict(p.get("images", {})),
        )
    return LoopState(
        seed=record["seed"],
        iteration=record["iteration"],
        phase=LoopPhase(record["phase"]),
        training=DatasetManifest(tuple(_entry_from_json(e) for e in record["training"])),
        unlabeled=tuple(record["unlabeled"]),
        timeline_length=record["timeline_length"],
        alpha_schedule=tuple(record["alpha_schedule"]),
        history=[HistoryRow(**row) for row in record["history"]],
        annotations={
            fid: tuple(ground_truth_object_from_json(o, f"frame {fid}") for o in objs)
            for fid, objs in record["annotations"].items()
        },
        pending=pending,
        model_handle=record.get("model_handle"),
    )


def save_state(state: LoopState, path: str | Path) -> None:
    """Atomic write: the state file is never observed half-written."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as handle:
        json.dump(state_to_dict(state), handle, indent=1)
    os.replace(tmp, path)


def load_state(path: str | Path) -> LoopState:
    with open(path, encoding="utf-8") as handle:
        return state_from_dict(json.load(handle))
