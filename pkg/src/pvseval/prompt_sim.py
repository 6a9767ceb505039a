"""Prompt types and the simulated annotator.

Evaluation clicks go to mask "centers": the pixel farthest (Euclidean) from
the mask boundary. Correction clicks target the largest connected error
region between prediction and ground truth. Ties are always broken in
row-major scan order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .mask_core import (
    BinaryMask,
    Box2D,
    as_mask,
    bounding_box,
    connected_components,
    distance_transform,
    rle_decode,
    rle_encode,
    RleMask,
)

POSITIVE = "positive"
NEGATIVE = "negative"

PROMPT_KINDS = ("click1", "click3", "click5", "box", "mask")


class EmptyMaskError(ValueError):
    pass


class NoErrorRegion(ValueError):
    pass


@dataclass(frozen=True)
class Click:
    row: int
    col: int
    polarity: str = POSITIVE

    @property
    def positive(self) -> bool:
        return self.polarity == POSITIVE


@dataclass(frozen=True)
class MaskPrompt:
    mask: BinaryMask

    def __eq__(self, other):
        return isinstance(other, MaskPrompt) and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash(rle_encode(self.mask))


Payload = Union[Click, Box2D, MaskPrompt]


@dataclass(frozen=True)
class Prompt:
    frame_idx: int
    payload: Payload

    def validate(self, height: int, width: int) -> None:
        p = self.payload
        if isinstance(p, Click):
            if not (0 <= p.row < height and 0 <= p.col < width):
                raise ValueError(f"click {p} outside a {height}x{width} frame")
            if p.polarity not in (POSITIVE, NEGATIVE):
                raise ValueError(f"bad polarity {p.polarity!r}")
        elif isinstance(p, Box2D):
            p.validate(height, width)
        elif isinstance(p, MaskPrompt):
            as_mask(p.mask, (height, width))
        else:
            raise TypeError(f"unknown prompt payload {type(p).__name__}")

    def to_json(self, round_: int) -> dict:
        p = self.payload
        if isinstance(p, Click):
            kind, data = "click", {"row": p.row, "col": p.col, "polarity": p.polarity}
        elif isinstance(p, Box2D):
            kind, data = "box", p.as_list()
        else:
            kind, data = "mask", rle_encode(p.mask).to_json()
        return {"frame": self.frame_idx, "round": round_, "type": kind, "data": data}

    @classmethod
    def from_json(cls, obj: dict) -> tuple["Prompt", int]:
        kind, data = obj["type"], obj["data"]
        if kind == "click":
            payload = Click(int(data["row"]), int(data["col"]), data["polarity"])
        elif kind == "box":
            payload = Box2D(*(int(v) for v in data))
        elif kind == "mask":
            payload = MaskPrompt(rle_decode(RleMask.from_json(data)))
        else:
            raise ValueError(f"unknown prompt type {kind!r}")
        return cls(int(obj["frame"]), payload), int(obj["round"])


@dataclass
class PromptLog:
    """Prompts in issue order, each tagged with its interaction round."""

    entries: list[tuple[int, Prompt]] = field(default_factory=list)

    def add(self, round_: int, prompt: Prompt) -> None:
        if self.entries and round_ < self.entries[-1][0]:
            raise ValueError("rounds must be non-decreasing")
        self.entries.append((round_, prompt))

    def extend(self, round_: int, prompts: Sequence[Prompt]) -> None:
        for p in prompts:
            self.add(round_, p)

    @property
    def prompts(self) -> list[Prompt]:
        return [p for _, p in self.entries]

    def for_frame(self, frame_idx: int) -> list[Prompt]:
        return [p for _, p in self.entries if p.frame_idx == frame_idx]

    @property
    def frames(self) -> list[int]:
        return sorted({p.frame_idx for _, p in self.entries})

    def clicks_per(self) -> dict[tuple[int, int], int]:
        out: dict[tuple[int, int], int] = {}
        for r, p in self.entries:
            if isinstance(p.payload, Click):
                out[(r, p.frame_idx)] = out.get((r, p.frame_idx), 0) + 1
        return out

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> list[dict]:
        return [p.to_json(r) for r, p in self.entries]

    @classmethod
    def from_json(cls, items: list[dict]) -> "PromptLog":
        log = cls()
        for item in items:
            prompt, r = Prompt.from_json(item)
            log.add(r, prompt)
        return log


def _center_of(m: BinaryMask) -> tuple[int, int]:
    dist = distance_transform(m)
    flat = int(np.argmax(dist))  # first maximum in row-major order
    return divmod(flat, m.shape[1])


def center_click(gt) -> Click:
    gt = as_mask(gt)
    if not gt.any():
        raise EmptyMaskError("cannot place a center click on an empty mask")
    r, c = _center_of(gt)
    return Click(int(r), int(c), POSITIVE)


def _error_components(pred: BinaryMask, gt: BinaryMask) -> list[tuple[int, int, str, BinaryMask]]:
    """All 8-connected error components as (area, first_pixel, polarity, mask)."""
    comps = []
    for region, polarity in ((gt & ~pred, POSITIVE), (pred & ~gt, NEGATIVE)):
        labels, areas = connected_components(region, 8)
        if not areas:
            continue
        flat = labels.ravel()
        idx = np.flatnonzero(flat)
        first = np.full(len(areas) + 1, flat.size, dtype=np.int64)
        np.minimum.at(first, flat[idx], idx)
        for lab, area in enumerate(areas, start=1):
            comps.append((area, int(first[lab]), polarity, labels == lab))
    comps.sort(key=lambda c: (-c[0], c[1]))
    return comps


def _click_on_component(comp) -> Click:
    _, _, polarity, region = comp
    r, c = _center_of(region)
    return Click(int(r), int(c), polarity)


def correction_click(pred, gt) -> Click:
    """Click the center of the largest error component.

    Positive when that component is missed foreground, negative when it is a
    false-positive region.
    """
    pred = as_mask(pred)
    gt = as_mask(gt, pred.shape)
    comps = _error_components(pred, gt)
    if not comps:
        raise NoErrorRegion("prediction equals ground truth")
    return _click_on_component(comps[0])


def correction_clicks(pred, gt, n: int) -> list[Click]:
    """Up to ``n`` clicks on distinct error components, largest first."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pred = as_mask(pred)
    gt = as_mask(gt, pred.shape)
    comps = _error_components(pred, gt)
    return [_click_on_component(c) for c in comps[:n]]


def box_prompt(gt) -> Box2D:
    box = bounding_box(gt)
    if box is None:
        raise EmptyMaskError("cannot build a box from an empty mask")
    return box


Feedback = Callable[[list[Prompt]], BinaryMask]


def n_clicks(kind: str) -> int:
    if not kind.startswith("click"):
        raise ValueError(f"{kind!r} is not a click prompt kind")
    return int(kind[len("click"):])


def first_frame_prompt(
    gt,
    kind: str,
    feedback: Feedback | None = None,
    frame_idx: int = 0,
    round_: int = 0,
) -> PromptLog:
    """Initial prompts for one frame.

    ``clickK`` places a center click and then up to K-1 correction clicks,
    each computed against ``feedback(prompts_so_far)``, the segmenter's
    current prediction for this frame. Fewer clicks are issued once the
    prediction matches ``gt``.
    """
    gt = as_mask(gt)
    if not gt.any():
        raise EmptyMaskError("first-frame prompt needs a non-empty ground-truth mask")
    log = PromptLog()
    if kind == "mask":
        log.add(round_, Prompt(frame_idx, MaskPrompt(gt.copy())))
    elif kind == "box":
        log.add(round_, Prompt(frame_idx, box_prompt(gt)))
    elif kind.startswith("click"):
        k = n_clicks(kind)
        if k < 1:
            raise ValueError(f"bad click count in {kind!r}")
        log.add(round_, Prompt(frame_idx, center_click(gt)))
        for _ in range(k - 1):
            if feedback is None:
                raise ValueError("multi-click prompting needs a feedback channel")
            pred = as_mask(feedback(log.prompts), gt.shape)
            try:
                click = correction_click(pred, gt)
            except NoErrorRegion:
                break
            log.add(round_, Prompt(frame_idx, click))
    else:
        raise ValueError(f"unknown prompt kind {kind!r}")
    return log


def interactive_clicks(
    gt,
    feedback: Feedback,
    n: int,
    frame_idx: int,
    round_: int,
    prior: Sequence[Prompt] = (),
) -> list[Prompt]:
    """``n`` correction clicks, re-querying ``feedback`` after each click."""
    gt = as_mask(gt)
    issued: list[Prompt] = []
    for _ in range(n):
        pred = as_mask(feedback(list(prior) + issued), gt.shape)
        try:
            click = correction_click(pred, gt)
        except NoErrorRegion:
            break
        issued.append(Prompt(frame_idx, click))
    return issued


def _uniform_foreground_click(rng: np.random.Generator, gt: BinaryMask) -> Click:
    idx = np.flatnonzero(gt.ravel())
    pick = int(idx[rng.integers(idx.size)])
    r, c = divmod(pick, gt.shape[1])
    return Click(int(r), int(c), POSITIVE)


def sample_training_prompt(rng: np.random.Generator, gt, frame_idx: int = 0) -> Prompt:
    """Initial training prompt: mask (p=0.5), a positive click drawn uniformly
    from the foreground (p=0.25), or the tight box (p=0.25)."""
    gt = as_mask(gt)
    if not gt.any():
        raise EmptyMaskError("cannot sample a training prompt for an empty mask")
    u = rng.random()
    if u < 0.5:
        return Prompt(frame_idx, MaskPrompt(gt.copy()))
    if u < 0.75:
        return Prompt(frame_idx, _uniform_foreground_click(rng, gt))
    return Prompt(frame_idx, box_prompt(gt))


def sample_corrective_click(
    rng: np.random.Generator,
    pred,
    gt,
    random_click_prob: float = 0.0,
    frame_idx: int = 0,
) -> Prompt | None:
    """Training-time corrective click.

    With probability ``random_click_prob`` the click is drawn uniformly from
    the ground-truth foreground regardless of the prediction; otherwise it is
    the error-region center. Returns None when there is nothing to correct.
    """
    pred = as_mask(pred)
    gt = as_mask(gt, pred.shape)
    if random_click_prob > 0 and gt.any() and rng.random() < random_click_prob:
        return Prompt(frame_idx, _uniform_foreground_click(rng, gt))
    try:
        return Prompt(frame_idx, correction_click(pred, gt))
    except NoErrorRegion:
        return None
