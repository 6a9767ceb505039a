"""Manifest/annotation files, grayscale frames, synthetic datasets, reports.

Manifest layout (``pvs-manifest/1``)::

    {
      "format": "pvs-manifest/1",
      "name": "my-dataset",
      "metric": "jf",                      # or "j" for J-only datasets
      "videos": [{
        "id": "v000", "length": 12, "height": 96, "width": 128,
        "frames": ["v000/00000.pgm", ...],  # optional, relative to the manifest
        "objects": {"1": {"0": {"size": [96, 128], "counts": [...]}, ...}},
        "object_meta": {"1": {"category": "rect", "seen": true}}   # optional
      }]
    }

A frame missing from an object's map means the object is not visible there.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .mask_core import BinaryMask, MalformedEncodingError, RleMask, rle_decode, rle_encode
from .metrics import METRIC_MODES, DatasetReport

MANIFEST_FORMAT = "pvs-manifest/1"
REPORT_FORMAT = "pvs-report/1"

OBJECT_INTENSITY = 200
BACKGROUND_INTENSITY = 50


class ManifestError(ValueError):
    pass


class SynthError(ValueError):
    pass


class ReportError(ValueError):
    pass


def dumps(obj) -> str:
    """Canonical JSON text used for every file this package writes."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# manifest


@dataclass
class VideoRecord:
    id: str
    length: int
    height: int
    width: int
    objects: dict[str, dict[int, RleMask]]
    frames: list[str] | None = None
    object_meta: dict[str, dict] = field(default_factory=dict)
    pixels: list[np.ndarray] | None = field(default=None, repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def object_ids(self) -> list[str]:
        return sorted(self.objects, key=_natural_key)

    def masklet(self, obj_id: str) -> list[BinaryMask]:
        masks = self.objects[obj_id]
        out = []
        for t in range(self.length):
            rle = masks.get(t)
            out.append(rle_decode(rle) if rle is not None else np.zeros(self.shape, dtype=bool))
        return out

    def presence(self, obj_id: str) -> list[int]:
        masks = self.objects[obj_id]
        return [int(t in masks and masks[t].area > 0) for t in range(self.length)]

    def load_pixels(self, root: Path | None = None) -> list[np.ndarray] | None:
        if self.pixels is not None:
            return self.pixels
        if self.frames is None:
            return None
        base = Path(root) if root is not None else Path(".")
        self.pixels = [read_pgm(base / p) for p in self.frames]
        for t, img in enumerate(self.pixels):
            if img.shape != self.shape:
                raise ManifestError(
                    f"video {self.id!r} frame {t}: pixel shape {img.shape} != {self.shape}"
                )
        return self.pixels

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "length": self.length,
            "height": self.height,
            "width": self.width,
            "frames": self.frames,
            "objects": {
                oid: {str(t): rle.to_json() for t, rle in sorted(masks.items())}
                for oid, masks in self.objects.items()
            },
            "object_meta": self.object_meta,
        }


@dataclass
class Manifest:
    name: str
    videos: list[VideoRecord]
    metric: str = "jf"
    root: Path | None = field(default=None, compare=False)

    def video(self, video_id: str) -> VideoRecord:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise KeyError(f"no video {video_id!r} in manifest {self.name!r}")

    def masklets(self):
        for v in self.videos:
            for oid in v.object_ids():
                yield v, oid

    def to_json(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "name": self.name,
            "metric": self.metric,
            "videos": [v.to_json() for v in self.videos],
        }


def _natural_key(s: str):
    return tuple(int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s))


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def parse_manifest(obj, root: Path | None = None) -> Manifest:
    """Validate a decoded manifest eagerly; errors name the offending location."""
    if not isinstance(obj, dict):
        raise ManifestError("manifest must be a JSON object")
    if obj.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"unsupported manifest format {obj.get('format')!r}")
    name = obj.get("name")
    if not isinstance(name, str) or not name:
        raise ManifestError("manifest name must be a non-empty string")
    metric = obj.get("metric", "jf")
    if metric not in METRIC_MODES:
        raise ManifestError(f"manifest metric must be one of {METRIC_MODES}, got {metric!r}")
    videos_raw = obj.get("videos")
    if not isinstance(videos_raw, list):
        raise ManifestError("manifest 'videos' must be a list")
    videos = []
    seen_ids = set()
    for i, v in enumerate(videos_raw):
        where = f"video #{i}"
        if not isinstance(v, dict):
            raise ManifestError(f"{where}: must be an object")
        vid = v.get("id")
        if not isinstance(vid, str) or not vid:
            raise ManifestError(f"{where}: id must be a non-empty string")
        where = f"video {vid!r}"
        if vid in seen_ids:
            raise ManifestError(f"{where}: duplicate video id")
        seen_ids.add(vid)
        dims = {}
        for key in ("length", "height", "width"):
            val = v.get(key)
            if not _is_int(val) or val < 1:
                raise ManifestError(f"{where}: {key} must be a positive integer, got {val!r}")
            dims[key] = val
        frames = v.get("frames")
        if frames is not None:
            if not isinstance(frames, list) or not all(isinstance(p, str) for p in frames):
                raise ManifestError(f"{where}: frames must be a list of paths")
            if len(frames) != dims["length"]:
                raise ManifestError(
                    f"{where}: {len(frames)} frame paths for length {dims['length']}"
                )
        objects_raw = v.get("objects")
        if not isinstance(objects_raw, dict):
            raise ManifestError(f"{where}: objects must be a map")
        objects: dict[str, dict[int, RleMask]] = {}
        for oid, masks_raw in objects_raw.items():
            owhere = f"{where} object {oid!r}"
            if not isinstance(masks_raw, dict):
                raise ManifestError(f"{owhere}: must map frame index to RLE")
            masks = {}
            for key, rle_raw in masks_raw.items():
                fwhere = f"{owhere} frame {key!r}"
                try:
                    t = int(key)
                except ValueError:
                    raise ManifestError(f"{fwhere}: frame key is not an integer") from None
                if str(t) != key or not (0 <= t < dims["length"]):
                    raise ManifestError(f"{fwhere}: frame index out of range [0, {dims['length']})")
                try:
                    rle = RleMask.from_json(rle_raw)
                except MalformedEncodingError as exc:
                    raise ManifestError(f"{fwhere}: {exc}") from None
                if rle.shape != (dims["height"], dims["width"]):
                    raise ManifestError(
                        f"{fwhere}: mask size {list(rle.shape)} != video size "
                        f"{[dims['height'], dims['width']]}"
                    )
                masks[t] = rle
            objects[oid] = masks
        meta = v.get("object_meta", {}) or {}
        if not isinstance(meta, dict) or not all(isinstance(m, dict) for m in meta.values()):
            raise ManifestError(f"{where}: object_meta must map object ids to objects")
        stray = set(meta) - set(objects)
        if stray:
            raise ManifestError(f"{where}: object_meta for unknown objects {sorted(stray)}")
        for oid, m in meta.items():
            if "seen" in m and not isinstance(m["seen"], bool):
                raise ManifestError(f"{where} object {oid!r}: 'seen' must be a boolean")
            if "category" in m and not isinstance(m["category"], str):
                raise ManifestError(f"{where} object {oid!r}: 'category' must be a string")
        videos.append(VideoRecord(vid, frames=frames, objects=objects, object_meta=meta, **dims))
    return Manifest(name, videos, metric, root)


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed JSON: {exc}") from None
    return parse_manifest(obj, root=path.parent)


def save_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(dumps(manifest.to_json()))


# ---------------------------------------------------------------------------
# 8-bit grayscale PGM (binary P5)


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM frames must be 2-D uint8 arrays")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace before the raster
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return raster.reshape(h, w).copy()


# ---------------------------------------------------------------------------
# synthetic rigid-motion datasets


@dataclass(frozen=True)
class SynthSpec:
    n_videos: int = 20
    length: int = 12
    height: int = 96
    width: int = 128
    n_objects: int = 2
    motion: str = "linear"  # or "static"
    speed: int = 3
    min_size: int = 12
    max_size: int = 22
    # (video index, object index, first hidden frame, first visible-again frame)
    disappearances: tuple = ()
    name: str = "synth"
    metric: str = "jf"

    def __post_init__(self):
        if self.motion not in ("linear", "static"):
            raise SynthError(f"unknown motion {self.motion!r}")
        object.__setattr__(
            self, "disappearances", tuple(tuple(int(x) for x in d) for d in self.disappearances)
        )

    def hidden(self, video: int, obj: int) -> set[int]:
        out = set()
        for v, o, a, b in self.disappearances:
            if v == video and o == obj:
                out.update(range(a, b))
        return out


def _shape_mask(kind: str, size_r: int, size_c: int) -> np.ndarray:
    if kind == "rect":
        return np.ones((size_r, size_c), dtype=bool)
    rr = (np.arange(size_r) + 0.5 - size_r / 2) / (size_r / 2)
    cc = (np.arange(size_c) + 0.5 - size_c / 2) / (size_c / 2)
    return rr[:, None] ** 2 + cc[None, :] ** 2 <= 1.0


def synth_dataset(spec: SynthSpec = SynthSpec(), seed: int = 0) -> Manifest:
    """Deterministic synthetic dataset with exact GT and rendered frames.

    Objects are rectangles or ellipses of intensity 200 on a background of 50,
    moving ``speed`` px/frame along one of 8 directions (or static). They
    never overlap, and must stay fully inside the frame except on frames
    declared hidden in ``spec.disappearances``.
    """
    rng = np.random.default_rng(seed)
    H, W, L = spec.height, spec.width, spec.length
    directions = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    videos = []
    for vi in range(spec.n_videos):
        vid = f"v{vi:03d}"
        objects: dict[str, dict[int, RleMask]] = {}
        meta: dict[str, dict] = {}
        frames = [np.full((H, W), BACKGROUND_INTENSITY, dtype=np.uint8) for _ in range(L)]
        occupied = np.zeros((L, H, W), dtype=bool)
        for oi in range(spec.n_objects):
            hidden = spec.hidden(vi, oi)
            kind = "rect" if rng.random() < 0.5 else "disk"
            sr = int(rng.integers(spec.min_size, spec.max_size + 1))
            sc = int(rng.integers(spec.min_size, spec.max_size + 1))
            shape = _shape_mask(kind, sr, sc)
            if spec.motion == "linear":
                dy, dx = directions[int(rng.integers(len(directions)))]
                vy, vx = dy * spec.speed, dx * spec.speed
            else:
                vy = vx = 0
            visible_t = [t for t in range(L) if t not in hidden]
            if not visible_t:
                raise SynthError(f"{vid} object {oi}: hidden on every frame")
            # feasible top-left positions at t=0 keeping every visible frame in bounds
            lo_r = max(-vy * t for t in visible_t)
            hi_r = min(H - sr - vy * t for t in visible_t)
            lo_c = max(-vx * t for t in visible_t)
            hi_c = min(W - sc - vx * t for t in visible_t)
            if lo_r > hi_r or lo_c > hi_c:
                raise SynthError(
                    f"{vid} object {oi}: a {sr}x{sc} object moving ({vy},{vx}) px/frame "
                    f"cannot stay inside {H}x{W} for {L} frames"
                )
            for _ in range(200):
                r0 = int(rng.integers(lo_r, hi_r + 1))
                c0 = int(rng.integers(lo_c, hi_c + 1))
                footprint = np.zeros((L, H, W), dtype=bool)
                for t in visible_t:
                    r, c = r0 + vy * t, c0 + vx * t
                    # one pixel of margin so objects never touch
                    footprint[t, max(r - 1, 0):r + sr + 1, max(c - 1, 0):c + sc + 1] = True
                if not (footprint & occupied).any():
                    break
            else:
                raise SynthError(f"{vid} object {oi}: could not place without overlap")
            occupied |= footprint
            masks = {}
            for t in visible_t:
                r, c = r0 + vy * t, c0 + vx * t
                m = np.zeros((H, W), dtype=bool)
                m[r:r + sr, c:c + sc] = shape
                frames[t][m] = OBJECT_INTENSITY
                masks[t] = rle_encode(m)
            oid = str(oi + 1)
            objects[oid] = masks
            meta[oid] = {"category": kind, "seen": oi % 2 == 0}
        videos.append(
            VideoRecord(vid, L, H, W, objects, frames=None, object_meta=meta, pixels=frames)
        )
    return Manifest(spec.name, videos, spec.metric)


def write_dataset(manifest: Manifest, out_dir) -> Path:
    """Write frames as PGM plus ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for v in manifest.videos:
        if v.pixels is None:
            continue
        (out / v.id).mkdir(exist_ok=True)
        paths = []
        for t, img in enumerate(v.pixels):
            rel = f"{v.id}/{t:05d}.pgm"
            write_pgm(out / rel, img)
            paths.append(rel)
        v.frames = paths
    path = out / "manifest.json"
    save_manifest(manifest, path)
    manifest.root = out
    return path


# ---------------------------------------------------------------------------
# reports

_FRAME = {
    "type": "object",
    "required": ["idx", "j", "f"],
    "properties": {
        "idx": {"type": "integer", "minimum": 0},
        "j": {"type": "number", "minimum": 0, "maximum": 1},
        "f": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    },
}
_SCORE = {
    "type": ["object", "null"],
    "required": ["mode", "j", "f", "jf", "excluded", "frames"],
    "properties": {
        "mode": {"enum": list(METRIC_MODES)},
        "excluded": {"type": "array", "items": {"type": "integer"}},
        "frames": {"type": "array", "items": _FRAME, "minItems": 1},
    },
}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["format", "tool_version", "seed", "report"],
    "properties": {
        "format": {"const": REPORT_FORMAT},
        "tool_version": {"type": "string"},
        "seed": {"type": "integer"},
        "report": {
            "type": "object",
            "required": ["dataset", "protocol", "mode", "config", "objects", "splits"],
            "properties": {
                "dataset": {"type": "string"},
                "protocol": {"enum": ["semi", "offline", "online", "image"]},
                "mode": {"enum": list(METRIC_MODES)},
                "config": {"type": "object"},
                "splits": {"type": ["object", "null"]},
                "objects": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["video", "object", "score", "error", "rounds", "extra"],
                        "properties": {
                            "video": {"type": "string"},
                            "object": {"type": "string"},
                            "score": _SCORE,
                            "error": {"type": ["string", "null"]},
                            "rounds": {"type": "array", "items": {"type": "number"}},
                            "extra": {"type": "object"},
                        },
                    },
                },
            },
        },
    },
}


def report_document(report: DatasetReport, seed: int) -> dict:
    return {
        "format": REPORT_FORMAT,
        "tool_version": __version__,
        "seed": seed,
        "report": report.to_json(),
    }


def save_report(report: DatasetReport, path, seed: int = 0) -> None:
    doc = report_document(report, seed)
    jsonschema.validate(doc, REPORT_SCHEMA)
    Path(path).write_text(dumps(doc))


def load_report(path) -> tuple[DatasetReport, dict]:
    """Returns the report and the document header (format, version, seed)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}: malformed JSON: {exc}") from None
    try:
        jsonschema.validate(doc, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ReportError(f"{path}: {exc.message}") from None
    header = {k: doc[k] for k in ("format", "tool_version", "seed")}
    return DatasetReport.from_json(doc["report"]), header
