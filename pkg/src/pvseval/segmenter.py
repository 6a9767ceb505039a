"""Segmenter contract and the two reference segmenters.

A segmenter is driven frame by frame::

    seg.reset()
    seg.observe_frame(t, pixels)
    candidates = seg.segment(t, prompts_on_t, bank.context_for(t))
    choice = select_output(candidates)
    entry, pointer = seg.commit(t, choice.mask, prompts_on_t, choice.occluded)

``OracleSegmenter`` reads ground truth and corrupts it in a controlled way;
``NaiveTracker`` works from 8-bit grayscale pixels and the memory bank only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from .mask_core import (
    BinaryMask,
    Box2D,
    as_mask,
    bounding_box,
    empty_mask,
    rle_decode,
    rle_encode,
)
from .memory_bank import ConditioningSet, MemoryEntry, ObjectPointer
from .prompt_sim import Click, MaskPrompt, Prompt

OCCLUSION_THRESHOLD = 0.5


class SegmentationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MaskCandidate:
    mask: BinaryMask
    predicted_iou: float
    occlusion_score: float  # probability that the object is visible

    def __post_init__(self):
        if not (0.0 <= self.predicted_iou <= 1.0 and 0.0 <= self.occlusion_score <= 1.0):
            raise ValueError("candidate scores must lie in [0, 1]")


@dataclass(frozen=True)
class Selection:
    index: int
    candidate: MaskCandidate
    mask: BinaryMask
    occluded: bool


def select_output(
    candidates: Sequence[MaskCandidate], occlusion_threshold: float = OCCLUSION_THRESHOLD
) -> Selection:
    """Pick the candidate with the highest predicted IoU (lowest index on ties).

    When its visibility score is below ``occlusion_threshold`` the committed
    mask is empty and the frame is flagged occluded.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    best = max(range(len(candidates)), key=lambda i: (candidates[i].predicted_iou, -i))
    cand = candidates[best]
    if cand.occlusion_score < occlusion_threshold:
        return Selection(best, cand, np.zeros_like(cand.mask, dtype=bool), True)
    return Selection(best, cand, cand.mask, False)


class Segmenter(Protocol):
    def reset(self) -> None: ...

    def observe_frame(self, frame_idx: int, pixels: np.ndarray | None) -> None: ...

    def segment(
        self, frame_idx: int, prompts: Sequence[Prompt], context: ConditioningSet
    ) -> list[MaskCandidate]: ...

    def commit(
        self, frame_idx: int, mask: BinaryMask, prompts: Sequence[Prompt], occluded: bool
    ) -> tuple[MemoryEntry, ObjectPointer]: ...


def geometric_pointer(frame_idx: int, mask: BinaryMask, occluded: bool) -> ObjectPointer:
    """4-d summary: area fraction, normalised centroid, occlusion flag."""
    h, w = mask.shape
    area = np.count_nonzero(mask)
    if area:
        rows, cols = np.nonzero(mask)
        cy, cx = rows.mean() / h, cols.mean() / w
    else:
        cy = cx = 0.0
    vec = np.array([area / mask.size, cy, cx, float(occluded)], dtype=np.float64)
    return ObjectPointer(frame_idx, vec)


def honor_clicks(mask: BinaryMask, prompts: Sequence[Prompt]) -> BinaryMask:
    out = mask.copy()
    for p in prompts:
        if isinstance(p.payload, Click):
            out[p.payload.row, p.payload.col] = p.payload.positive
    return out


# ---------------------------------------------------------------------------
# oracle


@dataclass(frozen=True)
class OracleConfig:
    dilation_px: int = 0
    translation_px: int = 0
    drop_prob: float = 0.0
    decay: float = 1.0
    seed: int = 0
    drop_frames: frozenset = frozenset()
    multi_candidate: bool = False
    exact_on_prompt: bool = True

    def __post_init__(self):
        if not (0.0 < self.decay <= 1.0):
            raise ValueError("decay must be in (0, 1]")
        if not (0.0 <= self.drop_prob <= 1.0):
            raise ValueError("drop_prob must be in [0, 1]")
        object.__setattr__(self, "drop_frames", frozenset(int(f) for f in self.drop_frames))

    @property
    def noiseless(self) -> bool:
        return (
            self.dilation_px == 0
            and self.translation_px == 0
            and self.drop_prob == 0.0
            and not self.drop_frames
        )

    def effective(self, prompt_count: int) -> tuple[int, int]:
        """(dilation, translation) after decay; truncated toward zero."""
        scale = self.decay ** prompt_count
        return int(self.dilation_px * scale), int(self.translation_px * scale)

    def to_json(self) -> dict:
        return {
            "dilation_px": self.dilation_px,
            "translation_px": self.translation_px,
            "drop_prob": self.drop_prob,
            "decay": self.decay,
            "seed": self.seed,
            "drop_frames": sorted(self.drop_frames),
            "multi_candidate": self.multi_candidate,
            "exact_on_prompt": self.exact_on_prompt,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "OracleConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown oracle config keys: {sorted(unknown)}")
        return cls(**obj)


def _disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def morph(mask: BinaryMask, radius: int) -> BinaryMask:
    """Dilate by a disk of ``radius`` (erode when negative)."""
    if radius == 0 or not mask.any():
        return mask.copy()
    if radius > 0:
        return ndimage.binary_dilation(mask, structure=_disk(radius))
    return ndimage.binary_erosion(mask, structure=_disk(-radius), border_value=0)


def shift(mask: BinaryMask, dy: int, dx: int) -> BinaryMask:
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    src_r = slice(max(0, -dy), min(h, h - dy))
    dst_r = slice(max(0, dy), min(h, h + dy))
    src_c = slice(max(0, -dx), min(w, w - dx))
    dst_c = slice(max(0, dx), min(w, w + dx))
    if src_r.start < src_r.stop and src_c.start < src_c.stop:
        out[dst_r, dst_c] = mask[src_r, src_c]
    return out


class OracleSegmenter:
    """Ground-truth segmenter with controllable, prompt-decaying corruption.

    Unprompted frames get GT dilated (or eroded) by ``dilation_px`` and shifted
    diagonally by ``translation_px``, both scaled by ``decay ** k`` where ``k``
    is the number of distinct prompts received since ``reset`` and truncated
    toward zero. Prompted frames return exact GT unless ``exact_on_prompt``
    is off, in which case they get the same corruption with the clicks
    forced on/off.

    With a single corruption axis, fewer errors never lower J&F. Combining
    dilation with translation only keeps J monotone: a shifted dilated mask
    can have more boundary within tolerance than the unshifted one.
    """

    def __init__(self, gts: Sequence[BinaryMask], config: OracleConfig | None = None):
        self.gts = [as_mask(g) for g in gts]
        if not self.gts:
            raise ValueError("oracle needs at least one GT frame")
        self.shape = self.gts[0].shape
        self.config = config or OracleConfig()
        self.reset()

    def reset(self) -> None:
        self._seen: set = set()

    @property
    def prompt_count(self) -> int:
        return len(self._seen)

    def observe_frame(self, frame_idx: int, pixels: np.ndarray | None) -> None:
        pass

    def _dropped(self, frame_idx: int) -> bool:
        cfg = self.config
        if frame_idx in cfg.drop_frames:
            return True
        if cfg.drop_prob <= 0.0:
            return False
        u = np.random.default_rng([cfg.seed, frame_idx]).random()
        return bool(u < cfg.drop_prob)

    def _corrupt(self, gt: BinaryMask) -> BinaryMask:
        radius, offset = self.config.effective(self.prompt_count)
        return shift(morph(gt, radius), offset, offset)

    def segment(
        self, frame_idx: int, prompts: Sequence[Prompt], context: ConditioningSet | None = None
    ) -> list[MaskCandidate]:
        gt = self.gts[frame_idx]
        self._seen.update(prompts)
        if prompts:
            if self.config.exact_on_prompt:
                pred = gt.copy()
            else:
                masks = [p.payload.mask for p in prompts if isinstance(p.payload, MaskPrompt)]
                pred = as_mask(masks[-1]).copy() if masks else honor_clicks(self._corrupt(gt), prompts)
        elif self._dropped(frame_idx):
            pred = empty_mask(*self.shape)
        else:
            pred = self._corrupt(gt)
        visible = 1.0 if pred.any() else 0.0
        cands = [MaskCandidate(pred, 1.0, visible)]
        if self.config.multi_candidate:
            cands.append(MaskCandidate(morph(pred, 2), 0.6, visible))
        return cands

    def commit(self, frame_idx, mask, prompts, occluded):
        mask = as_mask(mask)
        entry = MemoryEntry(
            frame_idx, rle_encode(mask), None, occluded, bool(prompts), tuple(prompts)
        )
        return entry, geometric_pointer(frame_idx, mask, occluded)


# ---------------------------------------------------------------------------
# naive tracker


@dataclass(frozen=True)
class TrackerConfig:
    search_radius_px: int = 16
    match_error_threshold: float = 0.25
    stride: int = 1
    intensity_tol: int = 20

    def __post_init__(self):
        if self.search_radius_px < 1:
            raise ValueError("search_radius_px must be >= 1")
        if not (0.0 < self.match_error_threshold <= 0.5):
            raise ValueError("match_error_threshold must be in (0, 0.5]")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    def to_json(self) -> dict:
        return {
            "search_radius_px": self.search_radius_px,
            "match_error_threshold": self.match_error_threshold,
            "stride": self.stride,
            "intensity_tol": self.intensity_tol,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrackerConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown tracker config keys: {sorted(unknown)}")
        return cls(**obj)


class NoMemoryError(SegmentationError):
    pass


class NaiveTracker:
    """Translation-only template tracker.

    Prompted frames are segmented from the prompts (mask reproduced; clicks
    and boxes grown over similar intensities). Unprompted frames shift the
    latest visible memory mask by the integer offset, within the search
    radius, that minimises the mean absolute difference between the memorised
    bounding-box patch and the current frame. The match error, normalised so
    that ``match_error_threshold`` maps to 0.5, gives the visibility score.
    """

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.reset()

    def reset(self) -> None:
        self._frames: dict[int, np.ndarray] = {}

    def observe_frame(self, frame_idx: int, pixels: np.ndarray | None) -> None:
        if pixels is None:
            raise SegmentationError("the naive tracker needs frame pixels")
        self._frames[frame_idx] = np.asarray(pixels, dtype=np.uint8)

    def _pixels(self, frame_idx: int) -> np.ndarray:
        try:
            return self._frames[frame_idx]
        except KeyError:
            raise SegmentationError(f"frame {frame_idx} was not observed") from None

    # -- prompted frames

    def _grow(self, img: np.ndarray, row: int, col: int, within: BinaryMask | None = None) -> BinaryMask:
        similar = np.abs(img.astype(np.int16) - int(img[row, col])) <= self.config.intensity_tol
        if within is not None:
            similar &= within
        labels, _ = ndimage.label(similar)
        lab = labels[row, col]
        if lab == 0:
            out = np.zeros_like(similar)
            out[row, col] = True
            return out
        return labels == lab

    def _box_region(self, img: np.ndarray, box: Box2D) -> BinaryMask:
        h, w = img.shape
        inside = box.to_mask(h, w)
        ring = Box2D(max(box.r0 - 1, 0), max(box.c0 - 1, 0), min(box.r1 + 1, h), min(box.c1 + 1, w))
        ring_mask = ring.to_mask(h, w) & ~inside
        if not ring_mask.any():
            return inside
        bg = float(img[ring_mask].mean())
        fg = inside & (np.abs(img.astype(np.float64) - bg) > self.config.intensity_tol)
        if not fg.any():
            return inside
        labels, n = ndimage.label(fg, structure=np.ones((3, 3), bool))
        areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
        return labels == (int(np.argmax(areas)) + 1)

    def _from_prompts(self, img: np.ndarray, prompts: Sequence[Prompt]) -> BinaryMask:
        masks = [p.payload.mask for p in prompts if isinstance(p.payload, MaskPrompt)]
        if masks:
            out = as_mask(masks[-1], img.shape).copy()
        else:
            out = np.zeros(img.shape, dtype=bool)
            for p in prompts:
                if isinstance(p.payload, Box2D):
                    out |= self._box_region(img, p.payload)
        clicks = [p.payload for p in prompts if isinstance(p.payload, Click)]
        for c in clicks:
            region = self._grow(img, c.row, c.col)
            if c.positive:
                out |= region
            else:
                out &= ~region
        return honor_clicks(out, prompts)

    # -- unprompted frames

    @staticmethod
    def _reference(context: ConditioningSet, frame_idx: int) -> MemoryEntry | None:
        usable = [
            e for e in context.entries()
            if not e.occluded and e.mask.area > 0 and e.feature is not None
        ]
        past = [e for e in usable if e.frame_idx < frame_idx]
        if past:
            return max(past, key=lambda e: e.frame_idx)
        future = [e for e in usable if e.frame_idx > frame_idx]
        if future:
            return min(future, key=lambda e: e.frame_idx)
        return None

    def _match(self, img: np.ndarray, patch: np.ndarray, box: Box2D) -> tuple[int, int, float]:
        """Best (dy, dx, mean abs diff) over the search window."""
        R = self.config.search_radius_px
        s = self.config.stride
        ph, pw = patch.shape
        tmpl = patch[::s, ::s].astype(np.float64)
        # out-of-frame pixels cost the maximum difference
        padded = np.pad(img.astype(np.float64), R, constant_values=np.nan)
        best = (np.inf, 0, 0, 0)
        for dy in range(-R, R + 1):
            r0 = box.r0 + dy + R
            rows = padded[r0:r0 + ph:s]
            # windows over all dx at once: shape (2R+1, ph', pw')
            c_lo = box.c0 - R + R
            band = rows[:, c_lo:c_lo + pw + 2 * R]
            win = np.lib.stride_tricks.sliding_window_view(band, pw, axis=1)[:, :, ::s]
            win = np.moveaxis(win, 1, 0)
            diff = np.abs(win - tmpl[None])
            diff = np.where(np.isnan(diff), 255.0, diff)
            mad = diff.mean(axis=(1, 2))
            for k, val in enumerate(mad):
                dx = k - R
                key = (float(val), abs(dy) + abs(dx), dy, dx)
                if key < best:
                    best = key
        return best[2], best[3], best[0]

    def segment(
        self, frame_idx: int, prompts: Sequence[Prompt], context: ConditioningSet
    ) -> list[MaskCandidate]:
        img = self._pixels(frame_idx)
        if prompts:
            mask = self._from_prompts(img, prompts)
            return [MaskCandidate(mask, 1.0, 1.0 if mask.any() else 0.0)]
        ref = self._reference(context, frame_idx)
        if ref is None:
            raise NoMemoryError(f"no prompt and no usable memory for frame {frame_idx}")
        ref_mask = rle_decode(ref.mask)
        box = bounding_box(ref_mask)
        patch = np.asarray(ref.feature, dtype=np.float64).reshape(box.r1 - box.r0, box.c1 - box.c0)
        dy, dx, mad = self._match(img, patch, box)
        norm_err = min(1.0, mad / (2.0 * self.config.match_error_threshold * 255.0))
        visible = 1.0 - norm_err
        return [MaskCandidate(shift(ref_mask, dy, dx), visible, visible)]

    def commit(self, frame_idx, mask, prompts, occluded):
        mask = as_mask(mask)
        feature = None
        box = bounding_box(mask)
        if box is not None and not occluded:
            img = self._pixels(frame_idx)
            feature = img[box.r0:box.r1, box.c0:box.c1].astype(np.float32).ravel()
        entry = MemoryEntry(
            frame_idx, rle_encode(mask), feature, occluded, bool(prompts), tuple(prompts)
        )
        return entry, geometric_pointer(frame_idx, mask, occluded)


SEGMENTERS = ("oracle", "naive")
