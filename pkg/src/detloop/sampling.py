"""Skip sampling over the frame timeline and the auto/human split of samples.

Indicator vectors are plain numpy arrays of 0/1 over timeline positions.
Positions are 0-based everywhere in this package: a skip sampler with skip s
selects positions 0, s+1, 2(s+1), ... below the timeline length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .streams import ValidationError, _require

__all__ = [
    "SkipSampler",
    "SplitSpec",
    "skip_indicator",
    "select_frames",
    "support",
    "alpha_split",
]


@dataclass(frozen=True)
class SkipSampler:
    """Sample one frame, then skip `skip` frames."""

    skip: int = 0

    def __post_init__(self) -> None:
        _require(isinstance(self.skip, int) and self.skip >= 0,
                 f"skip must be an integer >= 0, got {self.skip!r}")


@dataclass(frozen=True)
class SplitSpec:
    """Fraction of sampled frames to auto-annotate, and the shuffle seed."""

    alpha: float
    seed: int = 0

    def __post_init__(self) -> None:
        _require(0.0 <= self.alpha <= 1.0, f"alpha must be within [0, 1], got {self.alpha}")


def skip_indicator(sampler: SkipSampler, n_frames: int) -> np.ndarray:
    """Indicator of the evenly spread sample positions on a timeline."""
    _require(n_frames >= 0, f"n_frames must be >= 0, got {n_frames}")
    indicator = np.zeros(n_frames, dtype=np.int64)
    indicator[:: sampler.skip + 1] = 1
    return indicator


def select_frames(recovered: np.ndarray, sampled: np.ndarray) -> np.ndarray:
    """Elementwise product of two indicators: frames both recovered and sampled."""
    recovered = np.asarray(recovered)
    sampled = np.asarray(sampled)
    if recovered.shape != sampled.shape:
        raise ValidationError(
            f"indicator length mismatch: {recovered.shape[0]} vs {sampled.shape[0]}"
        )
    return recovered * sampled


def support(indicator: np.ndarray) -> list[int]:
    """Positions where an indicator is nonzero, ascending."""
    return np.flatnonzero(indicator).tolist()


def alpha_split(
    frames: Sequence,
    spec: SplitSpec,
    *,
    human_rank: Sequence[float] | None = None,
) -> tuple[list, list]:
    """Partition frame ids into (auto, human) with |auto| = round-half-up(alpha * n).

    Membership comes from a seeded uniform shuffle, so the split is
    reproducible and exhaustive for every alpha including 0 and 1. When
    `human_rank` is given (one value per frame, aligned), the human subset
    instead takes the lowest-ranked frames, e.g. lowest mean recovered score
    first; this is an opt-in policy hook. Both outputs preserve input order.
    """
    frames = list(frames)
    _require(len(set(frames)) == len(frames), "frames must be distinct")
    n_auto = math.floor(spec.alpha * len(frames) + 0.5)
    if human_rank is not None:
        _require(len(human_rank) == len(frames), "human_rank must align with frames")
        n_human = len(frames) - n_auto
        order = sorted(range(len(frames)), key=lambda k: (human_rank[k], k))
        human_positions = set(order[:n_human])
        auto_positions = set(range(len(frames))) - human_positions
    else:
        rng = np.random.default_rng(spec.seed)
        auto_positions = set(rng.permutation(len(frames))[:n_auto].tolist())
    auto = [f for k, f in enumerate(frames) if k in auto_positions]
    human = [f for k, f in enumerate(frames) if k not in auto_positions]
    return auto, human
