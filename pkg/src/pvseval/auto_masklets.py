"""Automatic masklet generation from grid prompts on the first frame."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mask_core import (
    BinaryMask,
    RleMask,
    as_mask,
    fill_small_holes,
    iou,
    remove_small_components,
    rle_decode,
    rle_encode,
)
from .prompt_sim import Click, Prompt
from .protocols import EvalConfig, propagate
from .segmenter import OracleConfig, OracleSegmenter, Segmenter

MIN_REGION_AREA = 200


@dataclass(frozen=True)
class GridSpec:
    full_grid: int = 32
    # (crops per side, points per side within each crop)
    crop_passes: tuple = ((2, 16), (4, 4))
    overlap: float = 0.5

    def n_points(self) -> int:
        return self.full_grid ** 2 + sum(n * n * g * g for n, g in self.crop_passes)


def crop_windows(h: int, w: int, n: int, overlap: float = 0.5) -> list[tuple[int, int, int, int]]:
    """``n x n`` overlapping crops as (r0, c0, r1, c1), row-major.

    Crop side is chosen so that adjacent crops overlap by ``overlap`` of a
    crop: ``size = ceil(L / (n - (n - 1) * overlap))``, i.e. ``ceil(2L/3)``
    for n=2 at 50%. Crops are spread evenly from the top-left to the
    bottom-right corner.
    """
    if n == 1:
        return [(0, 0, h, w)]

    def spans(length):
        size = min(length, math.ceil(length / (n - (n - 1) * overlap)))
        starts = [round(i * (length - size) / (n - 1)) for i in range(n)]
        return [(s, s + size) for s in starts]

    return [(r0, c0, r1, c1) for r0, r1 in spans(h) for c0, c1 in spans(w)]


def _cell_centers(lo: int, hi: int, k: int) -> list[int]:
    span = hi - lo
    return [lo + int((i + 0.5) * span / k) for i in range(k)]


def grid_points(h: int, w: int, spec: GridSpec = GridSpec(), dedup: bool = True) -> list[tuple[int, int]]:
    """Global (row, col) grid points: full-frame grid, then every crop pass."""
    if h < spec.full_grid or w < spec.full_grid:
        raise ValueError(f"a {h}x{w} frame is smaller than the {spec.full_grid}x{spec.full_grid} grid")
    points = [(r, c) for r in _cell_centers(0, h, spec.full_grid) for c in _cell_centers(0, w, spec.full_grid)]
    for n, g in spec.crop_passes:
        for r0, c0, r1, c1 in crop_windows(h, w, n, spec.overlap):
            if r1 - r0 < g or c1 - c0 < g:
                raise ValueError(f"crop {r1 - r0}x{c1 - c0} is smaller than its {g}x{g} grid")
            points.extend((r, c) for r in _cell_centers(r0, r1, g) for c in _cell_centers(c0, c1, g))
    if dedup:
        points = list(dict.fromkeys(points))
    return points


def grid_prompts(h: int, w: int, spec: GridSpec = GridSpec(), dedup: bool = True) -> list[Click]:
    return [Click(r, c) for r, c in grid_points(h, w, spec, dedup)]


@dataclass
class CandidateMasklet:
    point: tuple[int, int]
    masks: list[RleMask]
    postprocessed: bool = False

    def decoded(self) -> list[BinaryMask]:
        return [rle_decode(m) for m in self.masks]

    @property
    def total_area(self) -> int:
        return sum(m.area for m in self.masks)


@dataclass
class GenerationResult:
    candidates: list[CandidateMasklet]
    n_prompts: int
    n_empty: int = 0
    failures: dict = field(default_factory=dict)


def generate_candidates(
    make_segmenter: Callable[[Click], Segmenter],
    length: int,
    shape: tuple[int, int],
    frames=None,
    spec: GridSpec = GridSpec(),
    cfg: EvalConfig = EvalConfig(),
) -> GenerationResult:
    """One independent run per grid point: a single positive click on frame
    0, then streaming. All-empty masklets are dropped; failing points are
    counted and skipped."""
    clicks = grid_prompts(*shape, spec)
    out = GenerationResult([], len(clicks))
    for click in clicks:
        try:
            seg = make_segmenter(click)
            prop = propagate(seg, frames, shape, length, {0: [Prompt(0, click)]}, 0, cfg)
        except Exception as exc:
            out.failures[(click.row, click.col)] = f"{type(exc).__name__}: {exc}"
            continue
        if not any(p.any() for p in prop.preds):
            out.n_empty += 1
            continue
        out.candidates.append(CandidateMasklet((click.row, click.col), [rle_encode(p) for p in prop.preds]))
    return out


def oracle_factory(gt_masklets: Sequence[Sequence[BinaryMask]], config: OracleConfig = OracleConfig()):
    """Oracle picking the GT object under the click on frame 0 (the first in
    the given order when objects overlap). Clicks on background get an
    oracle with all-empty GT, which yields an empty masklet."""
    masklets = [[as_mask(m) for m in ml] for ml in gt_masklets]
    shape = masklets[0][0].shape
    length = len(masklets[0])
    empty = [np.zeros(shape, dtype=bool) for _ in range(length)]

    def make(click: Click) -> OracleSegmenter:
        for ml in masklets:
            if ml[0][click.row, click.col]:
                return OracleSegmenter(ml, config)
        return OracleSegmenter(empty, config)

    return make


def postprocess_frame(m, min_area: int = MIN_REGION_AREA) -> BinaryMask:
    return fill_small_holes(remove_small_components(m, min_area), min_area)


def postprocess(masklet: CandidateMasklet, min_area: int = MIN_REGION_AREA) -> CandidateMasklet:
    masks = [rle_encode(postprocess_frame(rle_decode(m), min_area)) for m in masklet.masks]
    return CandidateMasklet(masklet.point, masks, True)


def mean_iou(a: CandidateMasklet, b: CandidateMasklet) -> float:
    return float(np.mean([iou(x, y) for x, y in zip(a.decoded(), b.decoded())]))


def dedup(masklets: Sequence[CandidateMasklet], iou_threshold: float = 0.8) -> list[CandidateMasklet]:
    """Greedy keep-first by total area (descending, stable); drop masklets
    whose mean per-frame IoU with an already kept one exceeds the threshold."""
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError("iou_threshold must be in (0, 1]")
    order = sorted(range(len(masklets)), key=lambda i: -masklets[i].total_area)
    kept: list[CandidateMasklet] = []
    for i in order:
        cand = masklets[i]
        dup = False
        for k in kept:
            m = mean_iou(cand, k)
            if m > iou_threshold or (iou_threshold == 1.0 and m == 1.0):
                dup = True
                break
        if not dup:
            kept.append(cand)
    return kept


def auto_masklets(
    make_segmenter: Callable[[Click], Segmenter],
    length: int,
    shape: tuple[int, int],
    frames=None,
    spec: GridSpec = GridSpec(),
    iou_threshold: float = 0.8,
    min_area: int = MIN_REGION_AREA,
    cfg: EvalConfig = EvalConfig(),
) -> tuple[list[CandidateMasklet], GenerationResult]:
    """Generate, post-process, and de-duplicate."""
    gen = generate_candidates(make_segmenter, length, shape, frames, spec, cfg)
    cleaned = [postprocess(c, min_area) for c in gen.candidates]
    cleaned = [c for c in cleaned if c.total_area > 0]
    return dedup(cleaned, iou_threshold), gen
