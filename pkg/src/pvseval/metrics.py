"""Region/boundary scores, masklet and dataset aggregation, and the
dataset statistics used to characterise annotation data."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .mask_core import (
    DimensionMismatchError,
    as_mask,
    boundary,
    distance_to,
    iou,
)

JF = "jf"
J_ONLY = "j"
METRIC_MODES = (JF, J_ONLY)


def default_boundary_tolerance(height: int, width: int) -> int:
    """ceil(0.008 * diagonal), the usual DAVIS bound."""
    return int(math.ceil(0.008 * math.hypot(height, width)))


def boundary_f(pred, gt, tol: float | None = None) -> float:
    """Boundary F-measure with a Euclidean matching tolerance in pixels."""
    pred = as_mask(pred)
    gt = as_mask(gt)
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"dimension mismatch: {pred.shape} vs {gt.shape}")
    if tol is None:
        tol = default_boundary_tolerance(*gt.shape)
    if tol < 0:
        raise ValueError("tol must be >= 0")
    pb = boundary(pred)
    gb = boundary(gt)
    n_pred = np.count_nonzero(pb)
    n_gt = np.count_nonzero(gb)
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    precision = np.count_nonzero(distance_to(gb)[pb] <= tol) / n_pred
    recall = np.count_nonzero(distance_to(pb)[gb] <= tol) / n_gt
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class FrameScore:
    idx: int
    j: float
    f: float | None = None

    @property
    def jf(self) -> float | None:
        if self.f is None:
            return None
        return (self.j + self.f) / 2

    def to_json(self) -> dict:
        return {"idx": self.idx, "j": self.j, "f": self.f}


def score_frame(idx: int, pred, gt, mode: str = JF, tol: float | None = None) -> FrameScore:
    j = iou(pred, gt)
    f = boundary_f(pred, gt, tol) if mode == JF else None
    return FrameScore(idx, j, f)


@dataclass
class MaskletScore:
    mode: str
    frames: list[FrameScore]
    excluded: list[int] = field(default_factory=list)

    @property
    def scored_frames(self) -> list[int]:
        return [s.idx for s in self.frames]

    @property
    def j_mean(self) -> float:
        return _mean(s.j for s in self.frames)

    @property
    def f_mean(self) -> float | None:
        if self.mode == J_ONLY:
            return None
        return _mean(s.f for s in self.frames)

    @property
    def jf_mean(self) -> float | None:
        if self.mode == J_ONLY:
            return None
        return _mean(s.jf for s in self.frames)

    @property
    def headline(self) -> float:
        """J&F mean, or J mean in J-only mode."""
        return self.j_mean if self.mode == J_ONLY else self.jf_mean

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "j": self.j_mean,
            "f": self.f_mean,
            "jf": self.jf_mean,
            "excluded": list(self.excluded),
            "frames": [s.to_json() for s in self.frames],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MaskletScore":
        return cls(
            mode=obj["mode"],
            frames=[FrameScore(d["idx"], d["j"], d["f"]) for d in obj["frames"]],
            excluded=list(obj["excluded"]),
        )


def _mean(values: Iterable[float]) -> float:
    vals = list(values)
    if not vals:
        raise ValueError("mean of an empty set")
    return math.fsum(vals) / len(vals)


def score_masklet(
    preds: Sequence,
    gts: Sequence,
    exclude_prompted: Iterable[int] = (),
    mode: str = JF,
    tol: float | None = None,
    frames: Iterable[int] | None = None,
) -> MaskletScore:
    """Score a predicted masklet against ground truth.

    ``frames`` restricts the candidate frame set (default: all); frames in
    ``exclude_prompted`` are then removed from it.
    """
    if mode not in METRIC_MODES:
        raise ValueError(f"unknown metric mode {mode!r}")
    if len(preds) != len(gts):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(gts)} GT frames")
    excluded = sorted(set(int(i) for i in exclude_prompted))
    candidates = range(len(gts)) if frames is None else sorted(set(frames))
    scored = [i for i in candidates if i not in set(excluded)]
    if not scored:
        raise ValueError("no frames left to score")
    return MaskletScore(
        mode=mode,
        frames=[score_frame(i, preds[i], gts[i], mode, tol) for i in scored],
        excluded=excluded,
    )


def g_mean(js: float, fs: float, ju: float, fu: float) -> float:
    """YouTube-VOS overall score: mean of seen/unseen J and F."""
    return (js + fs + ju + fu) / 4


@dataclass(frozen=True)
class ObjectKey:
    video: str
    obj: str

    def sort_key(self):
        return (self.video, _natural(self.obj))


def _natural(s: str):
    return tuple(int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s))


def split_g(
    scores: Mapping[ObjectKey, MaskletScore],
    seen: Mapping[ObjectKey, bool],
    categories: Mapping[ObjectKey, str] | None = None,
    average: str = "object",
) -> dict:
    """Seen/unseen J and F means and their overall mean.

    ``average="object"`` averages objects directly; ``"category"`` first
    averages within each category and then across categories.
    """
    if average not in ("object", "category"):
        raise ValueError(f"unknown averaging {average!r}")
    if average == "category" and categories is None:
        raise ValueError("category averaging needs categories")
    out = {}
    for split, flag in (("s", True), ("u", False)):
        keys = sorted((k for k in scores if seen.get(k) is flag), key=ObjectKey.sort_key)
        if not keys:
            raise ValueError(f"no objects in the {'seen' if flag else 'unseen'} split")
        if average == "object":
            j = _mean(scores[k].j_mean for k in keys)
            f = _mean(scores[k].f_mean for k in keys)
        else:
            groups: dict[str, list[ObjectKey]] = {}
            for k in keys:
                groups.setdefault(categories[k], []).append(k)
            j = _mean(_mean(scores[k].j_mean for k in groups[c]) for c in sorted(groups))
            f = _mean(_mean(scores[k].f_mean for k in groups[c]) for c in sorted(groups))
        out["j_" + split] = j
        out["f_" + split] = f
    out["g"] = g_mean(out["j_s"], out["f_s"], out["j_u"], out["f_u"])
    return out


def has_disappearance(presence: Sequence[int | bool]) -> bool:
    """True when the sequence contains present, then absent, then present again."""
    seen_present = False
    gap = False
    for p in presence:
        if p:
            if gap:
                return True
            seen_present = True
        elif seen_present:
            gap = True
    return False


def disappearance_rate(presences: Iterable[Sequence[int | bool]]) -> float:
    """Percent of masklets that vanish for at least one frame and reappear."""
    flags = [has_disappearance(p) for p in presences]
    if not flags:
        return 0.0
    return 100.0 * sum(flags) / len(flags)


@dataclass(frozen=True)
class SizeBucket:
    label: str
    lo: int
    hi: float


SIZE_BUCKETS = (
    SizeBucket("small", 1, 32 ** 2),
    SizeBucket("medium", 32 ** 2, 96 ** 2),
    SizeBucket("large", 96 ** 2, math.inf),
)


def size_bucket(area: int, buckets: Sequence[SizeBucket] = SIZE_BUCKETS) -> str | None:
    for b in buckets:
        if b.lo <= area < b.hi:
            return b.label
    return None


def alignment_score(
    masks: Mapping[tuple, object],
    refs: Mapping[tuple, object],
    threshold: float = 0.75,
    buckets: Sequence[SizeBucket] = SIZE_BUCKETS,
) -> dict:
    """Percent of masks whose IoU with the paired reference exceeds ``threshold``.

    Pairs are keyed by ``(video, object, frame)``. Each pair is bucketed by
    reference-mask area; pairs whose reference is empty have no bucket and
    are reported under ``skipped_empty_ref`` instead of being scored.
    """
    missing = set(masks) ^ set(refs)
    if missing:
        raise KeyError(f"unpaired masks: {sorted(missing, key=repr)[:5]}")
    counts = {b.label: [0, 0] for b in buckets}
    skipped = 0
    for key in sorted(masks, key=repr):
        ref = as_mask(refs[key])
        area = int(np.count_nonzero(ref))
        label = size_bucket(area, buckets)
        if label is None:
            skipped += 1
            continue
        counts[label][1] += 1
        if iou(masks[key], ref) > threshold:
            counts[label][0] += 1
    hit = sum(c[0] for c in counts.values())
    total = sum(c[1] for c in counts.values())
    return {
        "threshold": threshold,
        "overall": 100.0 * hit / total if total else None,
        "n": total,
        "skipped_empty_ref": skipped,
        "buckets": {
            label: {"percent": 100.0 * c[0] / c[1] if c[1] else None, "n": c[1], "aligned": c[0]}
            for label, c in counts.items()
        },
    }


def area_stats(
    masks: Iterable, bins: int = 10, below: float = 0.1
) -> dict:
    """Distribution of mask areas normalised by frame area.

    Empty masks (object not visible) are not counted.
    """
    normalized = []
    for m in masks:
        m = as_mask(m)
        a = np.count_nonzero(m)
        if a:
            normalized.append(a / m.size)
    arr = np.asarray(normalized, dtype=np.float64)
    hist, edges = np.histogram(arr, bins=bins, range=(0.0, 1.0))
    return {
        "n": int(arr.size),
        "normalized_areas": arr.tolist(),
        "histogram": {"counts": hist.tolist(), "edges": edges.tolist()},
        "fraction_below": below,
        "percent_below": 100.0 * np.count_nonzero(arr < below) / arr.size if arr.size else None,
    }


@dataclass
class ObjectResult:
    """One object's outcome inside a dataset report.

    ``rounds`` holds the headline score after each interaction round for the
    interactive protocols; ``extra`` carries protocol-specific trace data.
    """

    score: MaskletScore | None
    error: str | None = None
    rounds: list[float] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "score": None if self.score is None else self.score.to_json(),
            "error": self.error,
            "rounds": list(self.rounds),
            "extra": self.extra,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ObjectResult":
        score = obj["score"]
        return cls(
            score=None if score is None else MaskletScore.from_json(score),
            error=obj["error"],
            rounds=list(obj["rounds"]),
            extra=obj["extra"],
        )


@dataclass
class DatasetReport:
    dataset: str
    protocol: str
    mode: str
    objects: dict[ObjectKey, ObjectResult]
    config: dict = field(default_factory=dict)
    splits: dict | None = None

    def ordered(self) -> list[tuple[ObjectKey, ObjectResult]]:
        return sorted(self.objects.items(), key=lambda kv: kv[0].sort_key())

    @property
    def failed(self) -> list[ObjectKey]:
        return [k for k, r in self.ordered() if r.error is not None]

    def _ok(self) -> list[MaskletScore]:
        return [r.score for _, r in self.ordered() if r.score is not None]

    def means(self) -> dict:
        """Unweighted means over objects."""
        scores = self._ok()
        if not scores:
            return {"j": None, "f": None, "jf": None, "headline": None}
        out = {"j": _mean(s.j_mean for s in scores)}
        if self.mode == J_ONLY:
            out["f"] = None
            out["jf"] = None
            out["headline"] = out["j"]
        else:
            out["f"] = _mean(s.f_mean for s in scores)
            out["jf"] = _mean(s.jf_mean for s in scores)
            out["headline"] = out["jf"]
        return out

    def round_means(self) -> list[float]:
        """Per-round headline averaged over objects, rounds aligned by index.

        Objects whose trace is shorter than the longest one carry their final
        value forward.
        """
        trajectories = [r.rounds for _, r in self.ordered() if r.error is None and r.rounds]
        if not trajectories:
            return []
        n = max(len(t) for t in trajectories)
        padded = [list(t) + [t[-1]] * (n - len(t)) for t in trajectories]
        return [_mean(col) for col in zip(*padded)]

    def video_means(self) -> dict[str, float]:
        groups: dict[str, list[float]] = {}
        for key, r in self.ordered():
            if r.score is not None:
                groups.setdefault(key.video, []).append(r.score.headline)
        return {v: _mean(vals) for v, vals in groups.items()}

    def to_json(self) -> dict:
        rounds = self.round_means()
        return {
            "dataset": self.dataset,
            "protocol": self.protocol,
            "mode": self.mode,
            "config": self.config,
            "means": self.means(),
            "round_means": rounds,
            "round_average": _mean(rounds) if rounds else None,
            "video_means": self.video_means(),
            "splits": self.splits,
            "failed": [[k.video, k.obj] for k in self.failed],
            "objects": [
                {"video": k.video, "object": k.obj, **r.to_json()} for k, r in self.ordered()
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetReport":
        return cls(
            dataset=obj["dataset"],
            protocol=obj["protocol"],
            mode=obj["mode"],
            config=obj["config"],
            splits=obj["splits"],
            objects={
                ObjectKey(o["video"], o["object"]): ObjectResult.from_json(o)
                for o in obj["objects"]
            },
        )


def summarize_by_mode(reports: Iterable[DatasetReport]) -> dict[str, dict]:
    """Average dataset headlines separately for J&F and J-only datasets."""
    groups: dict[str, list[DatasetReport]] = {}
    for r in reports:
        groups.setdefault(r.mode, []).append(r)
    out = {}
    for mode in sorted(groups):
        heads = [(r.dataset, r.means()["headline"]) for r in groups[mode]]
        valid = [h for _, h in heads if h is not None]
        out[mode] = {
            "datasets": dict(heads),
            "mean": _mean(valid) if valid else None,
        }
    return out
