"""End-to-end frame pipeline with stage-level wall-clock profiling.

Each frame is billed to three stages: Normalization (grayscale plus the
division to [0, 1]), Scaling (the bilinear resize), and Detection (the
ensemble forward pass and decision).  All timings come from the
monotonic clock and never perturb the numerical result: the detection
returned here is bitwise identical to ``ensemble.detect``.
"""

import json
import time
from dataclasses import dataclass

import numpy as np

from .ensemble import Detection, Ensemble, decide, predict_proba
from .preprocess import preprocess_frame

STAGES = ("normalization", "scaling", "detection")


@dataclass(frozen=True)
class StageTimings:
    normalization_s: float
    scaling_s: float
    detection_s: float

    def __post_init__(self):
        if min(self.normalization_s, self.scaling_s, self.detection_s) < 0:
            raise ValueError("stage durations must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.normalization_s, self.scaling_s, self.detection_s])

    @property
    def shares(self) -> np.ndarray:
        """Per-stage fraction of the total frame time; sums to 1."""
        values = self.as_array()
        return values / values.sum()


def run_pipeline(ensemble: Ensemble, raw_frame) -> tuple[Detection, StageTimings]:
    """Run one frame through preprocessing and detection, timing each stage."""
    prepared = preprocess_frame(raw_frame, ensemble.input_size)
    t0 = time.perf_counter()
    probs = predict_proba(ensemble, prepared.image)
    detection = decide(probs, ensemble.class_names)
    detection_s = time.perf_counter() - t0
    timings = StageTimings(
        normalization_s=prepared.normalization_s,
        scaling_s=prepared.scaling_s,
        detection_s=detection_s,
    )
    return detection, timings


@dataclass(frozen=True)
class ProfileReport:
    """Per-stage duration samples over frames x repetitions, plus aggregates."""

    samples: np.ndarray  # shape (3, frames * repetitions)
    mean_s: np.ndarray
    std_s: np.ndarray
    shares: np.ndarray

    def to_dict(self) -> dict:
        return {
            stage: {
                "mean_s": float(self.mean_s[i]),
                "std_s": float(self.std_s[i]),
                "share": float(self.shares[i]),
            }
            for i, stage in enumerate(STAGES)
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self) -> str:
        lines = ["stage,mean_s,std_s,share"]
        for i, stage in enumerate(STAGES):
            lines.append(
                f"{stage},{self.mean_s[i]:.9f},{self.std_s[i]:.9f},{self.shares[i]:.6f}"
            )
        return "\n".join(lines) + "\n"


def profile(ensemble: Ensemble, frames, repetitions: int = 1) -> ProfileReport:
    """Aggregate stage timings over ``frames`` x ``repetitions`` runs.

    Shares are computed from the per-stage means, so they describe the
    average frame's time decomposition.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("profile needs at least one frame")
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    columns = []
    for _ in range(repetitions):
        for frame in frames:
            _, timings = run_pipeline(ensemble, frame)
            columns.append(timings.as_array())
    samples = np.stack(columns, axis=1)
    mean = samples.mean(axis=1)
    std = samples.std(axis=1)
    return ProfileReport(samples=samples, mean_s=mean, std_s=std, shares=mean / mean.sum())
