"""Binary masks, column-major RLE, and the pixel algorithms built on them.

A ``BinaryMask`` is simply a 2-D ``numpy`` boolean array (row-major, ``True``
is foreground). ``RleMask`` stores the COCO-style uncompressed encoding:
column-major scan, runs alternating background/foreground, first run counts
background pixels and may be zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

BinaryMask = np.ndarray

_STRUCT_4 = ndimage.generate_binary_structure(2, 1)
_STRUCT_8 = ndimage.generate_binary_structure(2, 2)


class MalformedEncodingError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


def as_mask(m, shape: tuple[int, int] | None = None) -> BinaryMask:
    """Coerce to a 2-D boolean array and validate its dimensions."""
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"mask must be at least 1x1, got {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise DimensionMismatchError(f"mask shape {arr.shape} != expected {tuple(shape)}")
    return arr.astype(bool, copy=False)


def _same_shape(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class RleMask:
    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        self.validate()

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise MalformedEncodingError(f"invalid size {self.height}x{self.width}")
        if any(c < 0 for c in self.counts):
            raise MalformedEncodingError("negative run length")
        if any(c == 0 for c in self.counts[1:]):
            raise MalformedEncodingError("zero-length run after the first position")
        total = sum(self.counts)
        if total != self.height * self.width:
            raise MalformedEncodingError(
                f"run lengths sum to {total}, expected {self.height * self.width}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def area(self) -> int:
        return sum(self.counts[1::2])

    def to_json(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        try:
            h, w = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedEncodingError(f"bad RLE object: {exc}") from exc
        if not isinstance(counts, list) or not all(
            isinstance(c, int) and not isinstance(c, bool) for c in counts
        ):
            raise MalformedEncodingError("counts must be a list of integers")
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in (h, w)):
            raise MalformedEncodingError("size must be two integers")
        return cls(h, w, tuple(counts))

    def foreground_intervals(self) -> tuple[np.ndarray, np.ndarray]:
        """(starts, ends) of foreground runs as half-open column-major offsets."""
        c = np.asarray(self.counts, dtype=np.int64)
        if c.size == 0:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        edges = np.cumsum(c)
        starts = edges[0::2][: c[1::2].size]
        ends = edges[1::2]
        return starts, ends


def rle_encode(m) -> RleMask:
    m = as_mask(m)
    h, w = m.shape
    flat = m.ravel(order="F").astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return RleMask(h, w, tuple(counts))


def rle_decode(r: RleMask) -> BinaryMask:
    r.validate()
    values = np.zeros(len(r.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, r.counts)
    return flat.reshape((r.width, r.height)).T.copy()


def _covered_before(starts: np.ndarray, ends: np.ndarray, x: np.ndarray) -> np.ndarray:
    # covered length of the interval set within [0, x)
    cum = np.concatenate(([0], np.cumsum(ends - starts)))
    k = np.searchsorted(starts, x, side="left")
    out = cum[k].astype(np.int64)
    has = k > 0
    last_end = ends[np.maximum(k - 1, 0)]
    overshoot = np.where(has, np.maximum(last_end - x, 0), 0)
    return out - overshoot


def rle_intersection_area(a: RleMask, b: RleMask) -> int:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape} vs {b.shape}")
    sa, ea = a.foreground_intervals()
    sb, eb = b.foreground_intervals()
    if sa.size == 0 or sb.size == 0:
        return 0
    return int(np.sum(_covered_before(sb, eb, ea) - _covered_before(sb, eb, sa)))


def rle_iou(a: RleMask, b: RleMask) -> float:
    """IoU computed directly on run lengths, without decoding."""
    inter = rle_intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        return 1.0
    return inter / union


def iou(a, b) -> float:
    """Jaccard index. Two empty masks score 1.0."""
    a = as_mask(a)
    b = as_mask(b)
    _same_shape(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def distance_transform(m) -> np.ndarray:
    """Exact Euclidean distance from each foreground pixel to the nearest
    background pixel; pixels beyond the image border are background."""
    m = as_mask(m)
    if not m.any():
        return np.zeros(m.shape, dtype=np.float64)
    padded = np.pad(m, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def distance_to(pixels) -> np.ndarray:
    """Euclidean distance from every pixel to the nearest set pixel of ``pixels``.

    Unlike :func:`distance_transform` the image border is not a source.
    ``pixels`` must be non-empty.
    """
    pixels = as_mask(pixels)
    if not pixels.any():
        raise ValueError("distance_to requires at least one source pixel")
    return ndimage.distance_transform_edt(~pixels)


def connected_components(m, connectivity: int = 8) -> tuple[np.ndarray, list[int]]:
    """Label foreground components.

    Returns ``(labels, areas)`` where labels are contiguous from 1 in
    row-major order of each component's first pixel and ``areas[i]`` is the
    area of label ``i + 1``.
    """
    m = as_mask(m)
    if connectivity == 4:
        struct = _STRUCT_4
    elif connectivity == 8:
        struct = _STRUCT_8
    else:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    labels, n = ndimage.label(m, structure=struct)
    if n == 0:
        return labels, []
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    return labels, [int(a) for a in areas]


def remove_small_components(m, min_area: int) -> BinaryMask:
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    m = as_mask(m)
    if min_area == 0 or not m.any():
        return m.copy()
    labels, areas = connected_components(m, 8)
    keep = np.concatenate(([False], np.asarray(areas) >= min_area))
    return keep[labels]


def fill_small_holes(m, max_area: int) -> BinaryMask:
    """Fill background components that do not touch the border and are
    smaller than ``max_area`` pixels."""
    if max_area < 0:
        raise ValueError("max_area must be >= 0")
    m = as_mask(m)
    bg = ~m
    if max_area == 0 or not bg.any():
        return m.copy()
    labels, areas = connected_components(bg, 8)
    border = np.unique(np.concatenate(
        (labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1])
    ))
    fill = np.concatenate(([False], np.asarray(areas) < max_area))
    fill[border] = False
    return m | fill[labels]


def boundary(m) -> BinaryMask:
    """Foreground pixels with a 4-neighbour that is background or off-image."""
    m = as_mask(m)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def bounding_box(m) -> "Box2D | None":
    m = as_mask(m)
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(m.any(axis=0))
    return Box2D(int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1)


@dataclass(frozen=True)
class Box2D:
    """Half-open pixel box ``[r0, r1) x [c0, c1)``."""

    r0: int
    c0: int
    r1: int
    c1: int

    def validate(self, height: int, width: int) -> None:
        if not (0 <= self.r0 < self.r1 <= height and 0 <= self.c0 < self.c1 <= width):
            raise ValueError(f"invalid box {self} for a {height}x{width} frame")

    def to_mask(self, height: int, width: int) -> BinaryMask:
        out = np.zeros((height, width), dtype=bool)
        out[self.r0:self.r1, self.c0:self.c1] = True
        return out

    def as_list(self) -> list[int]:
        return [self.r0, self.c0, self.r1, self.c1]


def empty_mask(height: int, width: int) -> BinaryMask:
    return np.zeros((height, width), dtype=bool)


def stack_equal(masks_a: Sequence[BinaryMask], masks_b: Sequence[BinaryMask]) -> bool:
    return len(masks_a) == len(masks_b) and all(
        np.array_equal(a, b) for a, b in zip(masks_a, masks_b)
    )
