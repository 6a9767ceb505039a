"""Evaluation protocols: semi-supervised VOS, offline and online interactive
video segmentation, click-based image segmentation, plus the annotation-time
model and the per-dataset driver.

Every run owns one segmenter and one memory bank; objects are evaluated
independently of each other.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mask_core import BinaryMask, as_mask, iou, rle_encode
from .memory_bank import MemoryBank
from .metrics import (
    JF,
    METRIC_MODES,
    DatasetReport,
    MaskletScore,
    ObjectKey,
    ObjectResult,
    score_masklet,
    split_g,
)
from .prompt_sim import (
    PROMPT_KINDS,
    Prompt,
    PromptLog,
    correction_clicks,
    first_frame_prompt,
)
from .segmenter import Segmenter, Selection, select_output

PROTOCOLS = ("semi", "offline", "online", "image")


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    n_click: int = 3
    n_frame_max: int = 8
    online_threshold: float = 0.75
    prompt_kind: str = "mask"
    metric: str | None = None  # None: use the dataset's own metric
    exclude_prompted: bool | None = None  # None: True for semi, False otherwise
    boundary_tol: float | None = None
    image_clicks: int = 1
    occlusion_threshold: float = 0.5
    n_recent: int = 6
    n_prompted: int = 8
    allow_rebase: bool = True
    g_average: str = "object"
    seed: int = 0

    def __post_init__(self):
        if self.n_click < 1:
            raise ValueError("n_click must be >= 1")
        if self.n_frame_max < 1:
            raise ValueError("n_frame_max must be >= 1")
        if not (0.0 < self.online_threshold < 1.0):
            raise ValueError("online_threshold must be in (0, 1)")
        if self.prompt_kind not in PROMPT_KINDS:
            raise ValueError(f"prompt_kind must be one of {PROMPT_KINDS}")
        if self.metric is not None and self.metric not in METRIC_MODES:
            raise ValueError(f"metric must be one of {METRIC_MODES}")
        if self.image_clicks < 1:
            raise ValueError("image_clicks must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TimeModel:
    t_loc: float = 1.0
    t_click: float = 1.5
    t_exam: float = 30.0
    exam_frames: int = 300

    def __post_init__(self):
        if min(self.t_loc, self.t_click, self.t_exam, self.exam_frames) <= 0:
            raise ValueError("time model constants must be positive")


def annotation_time(
    mode: str, length: int, n_click: int, n_frame: int, tm: TimeModel = TimeModel()
) -> float:
    """Simulated seconds to annotate one object.

    Offline re-examines the whole video every round; online examines it once.
    """
    if length <= 0 or n_click <= 0 or n_frame <= 0:
        raise ValueError("length, n_click and n_frame must be positive")
    exam = tm.t_exam * (length / tm.exam_frames)
    per_frame = tm.t_loc + tm.t_click * n_click
    if mode == "offline":
        return (exam + per_frame) * n_frame
    if mode == "online":
        return exam + per_frame * n_frame
    raise ValueError(f"mode must be 'offline' or 'online', got {mode!r}")


# ---------------------------------------------------------------------------
# streaming engine


def _frame(frames, t):
    return None if frames is None else frames[t]


def _new_bank(cfg: EvalConfig) -> MemoryBank:
    return MemoryBank(cfg.n_recent, cfg.n_prompted)


def _step(seg: Segmenter, bank: MemoryBank, t: int, frames, prompts, cfg: EvalConfig) -> Selection:
    seg.observe_frame(t, _frame(frames, t))
    candidates = seg.segment(t, list(prompts), bank.context_for(t))
    return select_output(candidates, cfg.occlusion_threshold)


def _commit(seg: Segmenter, bank: MemoryBank, t: int, sel: Selection, prompts) -> None:
    entry, pointer = seg.commit(t, sel.mask, list(prompts), sel.occluded)
    if prompts:
        bank.push_prompted(entry, pointer)
    else:
        bank.push_unprompted(entry, pointer)


def query_frame(seg: Segmenter, frames, t: int, prompts, cfg: EvalConfig) -> BinaryMask:
    """Prediction for frame ``t`` from its prompts alone (fresh state)."""
    seg.reset()
    return _step(seg, _new_bank(cfg), t, frames, prompts, cfg).mask


@dataclass
class Propagation:
    preds: list[BinaryMask]
    occluded: list[bool]


def propagate(
    seg: Segmenter,
    frames,
    shape: tuple[int, int],
    length: int,
    prompts_by_frame: dict[int, list[Prompt]],
    start: int,
    cfg: EvalConfig,
) -> Propagation:
    """Reset, replay prompted frames chronologically, then stream the rest
    forward from ``start``. Frames before ``start`` stay empty."""
    seg.reset()
    bank = _new_bank(cfg)
    preds = [np.zeros(shape, dtype=bool) for _ in range(length)]
    occluded = [False] * length
    for t in sorted(prompts_by_frame):
        sel = _step(seg, bank, t, frames, prompts_by_frame[t], cfg)
        _commit(seg, bank, t, sel, prompts_by_frame[t])
        preds[t], occluded[t] = sel.mask, sel.occluded
    for t in range(start, length):
        if t in prompts_by_frame:
            continue
        sel = _step(seg, bank, t, frames, (), cfg)
        _commit(seg, bank, t, sel, ())
        preds[t], occluded[t] = sel.mask, sel.occluded
    return Propagation(preds, occluded)


def first_visible(gts: Sequence[BinaryMask]) -> int:
    for t, g in enumerate(gts):
        if g.any():
            return t
    raise ProtocolError("object is never visible")


def _start_frame(gts, cfg: EvalConfig) -> int:
    start = first_visible(gts)
    if start > 0 and not cfg.allow_rebase:
        raise ProtocolError(f"object absent on frame 0 (first visible on {start}) and rebasing is off")
    return start


def _score(preds, gts, start, prompted, cfg: EvalConfig, default_exclude: bool, mode: str) -> MaskletScore:
    exclude = cfg.exclude_prompted if cfg.exclude_prompted is not None else default_exclude
    return score_masklet(
        preds,
        gts,
        exclude_prompted=prompted if exclude else (),
        mode=mode,
        tol=cfg.boundary_tol,
        frames=range(start, len(gts)),
    )


def _by_frame(log: PromptLog) -> dict[int, list[Prompt]]:
    out: dict[int, list[Prompt]] = {}
    for p in log.prompts:
        out.setdefault(p.frame_idx, []).append(p)
    return out


def _gts(gts) -> list[BinaryMask]:
    out = [as_mask(g) for g in gts]
    if not out:
        raise ProtocolError("empty video")
    for g in out[1:]:
        as_mask(g, out[0].shape)
    return out


# ---------------------------------------------------------------------------
# semi-supervised


@dataclass
class SemiResult:
    score: MaskletScore
    prompts: PromptLog
    preds: list[BinaryMask]
    occluded: list[bool]
    start: int


def run_semi_supervised(
    seg: Segmenter, gts, cfg: EvalConfig = EvalConfig(), frames=None, mode: str = JF
) -> SemiResult:
    """Prompt the first visible frame only, then track.

    Objects that appear later are evaluated on the clip starting at their
    first visible frame; that prompted frame is excluded from scoring by
    default.
    """
    gts = _gts(gts)
    start = _start_frame(gts, cfg)
    log = first_frame_prompt(
        gts[start],
        cfg.prompt_kind,
        feedback=lambda ps: query_frame(seg, frames, start, ps, cfg),
        frame_idx=start,
    )
    prop = propagate(seg, frames, gts[0].shape, len(gts), _by_frame(log), start, cfg)
    score = _score(prop.preds, gts, start, {start}, cfg, True, mode)
    return SemiResult(score, log, prop.preds, prop.occluded, start)


# ---------------------------------------------------------------------------
# interactive


@dataclass
class Round:
    index: int  # 1-based
    frame: int
    prompts: list[Prompt]
    score: float  # headline after this round
    pre_iou: float | None = None  # online: IoU that triggered the pause

    def to_json(self) -> dict:
        return {
            "round": self.index,
            "frame": self.frame,
            "n_prompts": len(self.prompts),
            "score": self.score,
            "pre_iou": self.pre_iou,
        }


@dataclass
class InteractionTrace:
    protocol: str
    rounds: list[Round]
    final: MaskletScore
    prompts: PromptLog
    preds: list[BinaryMask]
    n_frame_max: int
    start: int = 0
    # online only: RLE of every earlier frame's prediction at each pause
    snapshots: dict[int, list] = field(default_factory=dict)
    # online only: headline of a pass allowed k prompted frames, k = 1, 2, ...
    budget_scores: list[float] | None = None

    @property
    def prompted_frames(self) -> list[int]:
        return [r.frame for r in self.rounds]

    def round_scores(self) -> list[float]:
        """Headline after rounds 1..n_frame_max, carrying the last value
        forward when the protocol stopped early."""
        scores = self.budget_scores or [r.score for r in self.rounds]
        return scores + [scores[-1]] * (self.n_frame_max - len(scores))


def _interactive_start(seg, gts, frames, cfg) -> tuple[int, PromptLog]:
    start = _start_frame(gts, cfg)
    log = first_frame_prompt(
        gts[start],
        f"click{cfg.n_click}",
        feedback=lambda ps: query_frame(seg, frames, start, ps, cfg),
        frame_idx=start,
        round_=1,
    )
    return start, log


def run_offline_interactive(
    seg: Segmenter, gts, cfg: EvalConfig = EvalConfig(), frames=None, mode: str = JF
) -> InteractionTrace:
    """Multi-pass protocol.

    Each later pass prompts the not-yet-prompted frame with the lowest IoU
    and re-segments the whole video from scratch using every prompt so far.
    Stops after ``n_frame_max`` rounds, or earlier when there is nothing
    left to correct.
    """
    gts = _gts(gts)
    shape, length = gts[0].shape, len(gts)
    start, log = _interactive_start(seg, gts, frames, cfg)
    prop = propagate(seg, frames, shape, length, _by_frame(log), start, cfg)
    score = _score(prop.preds, gts, start, log.frames, cfg, False, mode)
    rounds = [Round(1, start, log.prompts, score.headline)]
    for r in range(2, cfg.n_frame_max + 1):
        prompted = set(log.frames)
        candidates = [t for t in range(start, length) if t not in prompted]
        if not candidates:
            break
        ious = [iou(prop.preds[t], gts[t]) for t in candidates]
        worst = candidates[int(np.argmin(ious))]
        clicks = correction_clicks(prop.preds[worst], gts[worst], cfg.n_click)
        if not clicks:
            break  # every unprompted frame is already exact
        new = [Prompt(worst, c) for c in clicks]
        log.extend(r, new)
        prop = propagate(seg, frames, shape, length, _by_frame(log), start, cfg)
        score = _score(prop.preds, gts, start, log.frames, cfg, False, mode)
        rounds.append(Round(r, worst, new, score.headline))
    return InteractionTrace("offline", rounds, score, log, prop.preds, cfg.n_frame_max, start)


def _online_pass(seg, gts, frames, cfg, start, first_log: PromptLog, budget: int, mode: str):
    shape, length = gts[0].shape, len(gts)
    log = PromptLog(list(first_log.entries))
    seg.reset()
    bank = _new_bank(cfg)
    preds = [np.zeros(shape, dtype=bool) for _ in range(length)]
    first = first_log.prompts
    sel = _step(seg, bank, start, frames, first, cfg)
    _commit(seg, bank, start, sel, first)
    preds[start] = sel.mask
    pauses = [(start, first, None)]
    snapshots: dict[int, list] = {}
    for t in range(start + 1, length):
        sel = _step(seg, bank, t, frames, (), cfg)
        quality = iou(sel.mask, gts[t])
        if quality < cfg.online_threshold and len(pauses) < budget:
            clicks = correction_clicks(sel.mask, gts[t], cfg.n_click)
            if clicks:
                snapshots[t] = [rle_encode(p) for p in preds[:t]]
                prompts = [Prompt(t, c) for c in clicks]
                log.extend(len(pauses) + 1, prompts)
                # re-segment the paused frame with the same memory it saw before
                sel = _step(seg, bank, t, frames, prompts, cfg)
                _commit(seg, bank, t, sel, prompts)
                preds[t] = sel.mask
                pauses.append((t, prompts, quality))
                continue
        _commit(seg, bank, t, sel, ())
        preds[t] = sel.mask
    prompted = [p[0] for p in pauses]
    score = _score(preds, gts, start, prompted, cfg, False, mode)
    return preds, log, pauses, snapshots, score


def run_online_interactive(
    seg: Segmenter, gts, cfg: EvalConfig = EvalConfig(), frames=None, mode: str = JF
) -> InteractionTrace:
    """Single forward pass that pauses on frames with IoU below the threshold.

    The round-``k`` score is the outcome of a pass allowed ``k`` prompted
    frames (the first frame counts as one). Corrections never revisit
    earlier frames.
    """
    gts = _gts(gts)
    start, first_log = _interactive_start(seg, gts, frames, cfg)
    round_scores = []
    result = None
    for budget in range(1, cfg.n_frame_max + 1):
        result = _online_pass(seg, gts, frames, cfg, start, first_log, budget, mode)
        round_scores.append(result[4].headline)
        if len(result[2]) < budget:
            break  # budget not exhausted: larger budgets give the same pass
    preds, log, pauses, snapshots, score = result
    rounds = []
    for k, (t, prompts, pre) in enumerate(pauses, start=1):
        s = round_scores[min(k, len(round_scores)) - 1]
        rounds.append(Round(k, t, list(prompts), s, pre))
    return InteractionTrace(
        "online", rounds, score, log, preds, cfg.n_frame_max, start, snapshots, round_scores
    )


# ---------------------------------------------------------------------------
# images


@dataclass
class ImageResult:
    ious: list[float]
    prompts: list[PromptLog]
    preds: list[BinaryMask]

    @property
    def miou(self) -> float:
        return float(np.mean(self.ious))


def run_image_sa(
    make_segmenter: Callable[[int], Segmenter],
    image,
    instances: Sequence,
    k: int = 1,
    cfg: EvalConfig = EvalConfig(),
) -> ImageResult:
    """k-click evaluation of each instance, treating the image as a
    one-frame video."""
    if not instances:
        raise ProtocolError("no instances")
    frames = None if image is None else [image]
    ious, logs, preds = [], [], []
    for i, gt in enumerate(instances):
        gt = as_mask(gt)
        if not gt.any():
            raise ProtocolError(f"instance {i} is empty")
        seg = make_segmenter(i)
        log = first_frame_prompt(
            gt, f"click{k}", feedback=lambda ps: query_frame(seg, frames, 0, ps, cfg)
        )
        pred = query_frame(seg, frames, 0, log.prompts, cfg)
        ious.append(iou(pred, gt))
        logs.append(log)
        preds.append(pred)
    return ImageResult(ious, logs, preds)


# ---------------------------------------------------------------------------
# datasets

SegmenterFactory = Callable[[object, str, list], Segmenter]


def _run_object(factory, video, oid, gts, frames, protocol, cfg, mode) -> ObjectResult:
    if protocol == "semi":
        res = run_semi_supervised(factory(video, oid, gts), gts, cfg, frames, mode)
        return ObjectResult(
            res.score,
            extra={
                "start": res.start,
                "prompts": res.prompts.to_json(),
                "occluded_frames": [t for t, o in enumerate(res.occluded) if o],
            },
        )
    if protocol in ("offline", "online"):
        run = run_offline_interactive if protocol == "offline" else run_online_interactive
        trace = run(factory(video, oid, gts), gts, cfg, frames, mode)
        rounds = trace.round_scores()
        times = [
            annotation_time(protocol, len(gts), cfg.n_click, n)
            for n in range(1, cfg.n_frame_max + 1)
        ]
        return ObjectResult(
            trace.final,
            rounds=rounds,
            extra={
                "start": trace.start,
                "prompted_frames": trace.prompted_frames,
                "rounds": [r.to_json() for r in trace.rounds],
                "prompts": trace.prompts.to_json(),
                "annotation_time": times,
            },
        )
    if protocol == "image":
        t = first_visible(gts)
        img = None if frames is None else frames[t]
        res = run_image_sa(
            lambda _i: factory(video, oid, [gts[t]]), img, [gts[t]], cfg.image_clicks, cfg
        )
        score = score_masklet(res.preds, [gts[t]], mode="j")
        return ObjectResult(score, extra={"frame": t, "prompts": res.prompts[0].to_json()})
    raise ValueError(f"unknown protocol {protocol!r}")


def run_dataset(
    factory: SegmenterFactory,
    manifest,
    protocol: str,
    cfg: EvalConfig = EvalConfig(),
) -> DatasetReport:
    """Evaluate every (video, object) pair independently.

    ``factory(video, object_id, gts)`` builds a fresh segmenter per object.
    Failures are recorded on the object and do not stop the run.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    mode = "j" if protocol == "image" else (cfg.metric or manifest.metric)
    results: dict[ObjectKey, ObjectResult] = {}
    for video, oid in manifest.masklets():
        key = ObjectKey(video.id, oid)
        try:
            gts = video.masklet(oid)
            frames = video.load_pixels(manifest.root)
            results[key] = _run_object(factory, video, oid, gts, frames, protocol, cfg, mode)
        except Exception as exc:  # recorded per object, the run continues
            results[key] = ObjectResult(None, error=f"{type(exc).__name__}: {exc}")
    report = DatasetReport(manifest.name, protocol, mode, results, cfg.to_json())
    report.splits = _splits(manifest, report, cfg)
    return report


def _splits(manifest, report: DatasetReport, cfg: EvalConfig) -> dict | None:
    if report.mode != JF:
        return None
    seen, cats, scores = {}, {}, {}
    for video in manifest.videos:
        for oid in video.object_ids():
            meta = video.object_meta.get(oid, {})
            key = ObjectKey(video.id, oid)
            res = report.objects.get(key)
            if "seen" not in meta or res is None or res.score is None:
                return None
            seen[key] = meta["seen"]
            cats[key] = meta.get("category", "")
            scores[key] = res.score
    if not scores or all(seen.values()) or not any(seen.values()):
        return None
    out = split_g(scores, seen, cats, cfg.g_average)
    out["average"] = cfg.g_average
    return out
