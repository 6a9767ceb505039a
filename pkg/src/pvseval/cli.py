"""Command-line entry point: ``pvseval <command> ...``."""
from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from pathlib import Path

from . import __version__
from .auto_masklets import GridSpec, auto_masklets, oracle_factory
from .dataset_io import (
    Manifest,
    ManifestError,
    SynthSpec,
    VideoRecord,
    dumps,
    load_manifest,
    save_manifest,
    save_report,
    synth_dataset,
    write_dataset,
)
from .mask_core import rle_decode
from .metrics import alignment_score, area_stats, disappearance_rate
from .prompt_sim import PROMPT_KINDS
from .protocols import PROTOCOLS, EvalConfig, annotation_time, run_dataset
from .segmenter import SEGMENTERS, NaiveTracker, OracleConfig, OracleSegmenter, TrackerConfig


def _json_arg(text: str | None) -> dict:
    if not text:
        return {}
    if os.path.isfile(text):
        text = Path(text).read_text()
    obj = json.loads(text)
    if not isinstance(obj, dict):
        raise argparse.ArgumentTypeError("config must be a JSON object")
    return obj


def _object_seed(seed: int, video: str, obj: str) -> int:
    return zlib.crc32(f"{seed}:{video}:{obj}".encode())


def make_factory(name: str, seed: int, oracle_cfg: dict, tracker_cfg: dict):
    if name == "oracle":
        base = dict(oracle_cfg)
        fixed_seed = base.pop("seed", None)

        def factory(video, oid, gts):
            s = fixed_seed if fixed_seed is not None else _object_seed(seed, video.id, oid)
            return OracleSegmenter(gts, OracleConfig.from_json({**base, "seed": s}))

        return factory, {"segmenter": "oracle", "oracle": {**base, "seed": fixed_seed}}
    if name == "naive":
        tc = TrackerConfig.from_json(tracker_cfg)

        def factory(video, oid, gts):
            return NaiveTracker(tc)

        return factory, {"segmenter": "naive", "tracker": tc.to_json()}
    raise SystemExit(f"unknown segmenter {name!r}")


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = EvalConfig(
        n_click=args.n_click,
        n_frame_max=args.n_frame,
        online_threshold=args.threshold,
        prompt_kind=args.prompt,
        metric=args.metric,
        image_clicks=args.image_clicks,
        seed=args.seed,
    )
    factory, seg_desc = make_factory(
        args.segmenter, args.seed, _json_arg(args.oracle_config), _json_arg(args.tracker_config)
    )
    report = run_dataset(factory, manifest, args.protocol, cfg)
    report.config = {**report.config, **seg_desc}
    if args.out:
        save_report(report, args.out, seed=args.seed)
    means = report.means()
    summary = {
        "dataset": report.dataset,
        "protocol": report.protocol,
        "mode": report.mode,
        "objects": len(report.objects),
        "failed": len(report.failed),
        **{k: means[k] for k in ("j", "f", "jf")},
    }
    if report.round_means():
        summary["round_means"] = report.round_means()
    print(dumps(summary), end="")
    for key in report.failed:
        print(f"FAILED {key.video}/{key.obj}: {report.objects[key].error}", file=sys.stderr)
    return 1 if report.failed and not args.lenient else 0


def cmd_time_model(args) -> int:
    modes = ("offline", "online") if args.mode == "both" else (args.mode,)
    seconds = {
        mode: [annotation_time(mode, args.length, args.n_click, n) for n in range(1, args.n_frame + 1)]
        for mode in modes
    }
    print(dumps({"length": args.length, "n_click": args.n_click, "seconds": seconds}), end="")
    return 0


def cmd_stats(args) -> int:
    manifest = load_manifest(args.manifest)
    presences = [v.presence(oid) for v, oid in manifest.masklets()]
    masks = (rle_decode(r) for v in manifest.videos for oid in v.object_ids() for _, r in sorted(v.objects[oid].items()))
    stats = area_stats(masks, bins=args.bins)
    if not args.areas:
        stats.pop("normalized_areas")
    doc = {
        "dataset": manifest.name,
        "videos": len(manifest.videos),
        "masklets": len(presences),
        "disappearance_rate": disappearance_rate(presences),
        "area": stats,
    }
    _emit(doc, args.out)
    return 0


def _keyed_masks(manifest: Manifest) -> dict:
    out = {}
    for v, oid in manifest.masklets():
        for t, m in enumerate(v.masklet(oid)):
            out[(v.id, oid, t)] = m
    return out


def cmd_align(args) -> int:
    masks = _keyed_masks(load_manifest(args.masks))
    refs = _keyed_masks(load_manifest(args.ref))
    try:
        doc = alignment_score(masks, refs, args.threshold)
    except KeyError as exc:
        print(f"cannot align: {exc.args[0]}", file=sys.stderr)
        return 1
    _emit(doc, args.out)
    return 0


def cmd_validate(args) -> int:
    try:
        m = load_manifest(args.manifest)
        if args.frames:
            for v in m.videos:
                v.load_pixels(m.root)
    except (ManifestError, OSError, ValueError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    n = sum(1 for _ in m.masklets())
    print(f"ok: {m.name}: {len(m.videos)} videos, {n} masklets")
    return 0


def _parse_window(text: str) -> tuple[int, int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("disappearance window is video,object,start,stop")
    return tuple(parts)


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_videos=args.videos,
        length=args.length,
        height=args.height,
        width=args.width,
        n_objects=args.objects,
        motion=args.motion,
        speed=args.speed,
        disappearances=tuple(args.disappear or ()),
        name=args.name,
        metric=args.metric,
    )
    path = write_dataset(synth_dataset(spec, args.seed), args.out)
    print(path)
    return 0


def cmd_automask(args) -> int:
    manifest = load_manifest(args.manifest)
    video = manifest.video(args.video) if args.video else manifest.videos[0]
    frames = video.load_pixels(manifest.root)
    if args.segmenter == "oracle":
        gts = [video.masklet(oid) for oid in video.object_ids()]
        make = oracle_factory(gts, OracleConfig.from_json(_json_arg(args.oracle_config)))
    else:
        tc = TrackerConfig.from_json(_json_arg(args.tracker_config))
        make = lambda click: NaiveTracker(tc)  # noqa: E731
    kept, gen = auto_masklets(
        make, video.length, video.shape, frames, GridSpec(), args.iou_threshold, args.min_area
    )
    out = Path(args.out)
    rel_frames = None
    if video.frames is not None and manifest.root is not None:
        base = out.parent.resolve()
        rel_frames = [os.path.relpath((manifest.root / p).resolve(), base) for p in video.frames]
    objects = {
        str(i + 1): {t: m for t, m in enumerate(c.masks) if m.area > 0} for i, c in enumerate(kept)
    }
    meta = {str(i + 1): {"category": "auto", "point": list(c.point)} for i, c in enumerate(kept)}
    result = Manifest(
        f"{manifest.name}-auto",
        [VideoRecord(video.id, video.length, video.height, video.width, objects, rel_frames, meta)],
        manifest.metric,
    )
    save_manifest(result, out)
    print(dumps({
        "prompts": gen.n_prompts,
        "candidates": len(gen.candidates),
        "empty": gen.n_empty,
        "failed": len(gen.failures),
        "kept": len(kept),
    }), end="")
    return 0


def _emit(doc: dict, out: str | None) -> None:
    text = dumps(doc)
    if out:
        Path(out).write_text(text)
    print(text, end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pvseval", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("eval", help="run an evaluation protocol over a manifest")
    e.add_argument("protocol", choices=PROTOCOLS)
    e.add_argument("--manifest", required=True)
    e.add_argument("--segmenter", choices=SEGMENTERS, default="oracle")
    e.add_argument("--oracle-config", help="JSON object or path to a JSON file")
    e.add_argument("--tracker-config", help="JSON object or path to a JSON file")
    e.add_argument("--prompt", choices=PROMPT_KINDS, default="mask", help="semi-supervised prompt")
    e.add_argument("--n-click", type=int, default=3)
    e.add_argument("--n-frame", type=int, default=8)
    e.add_argument("--threshold", type=float, default=0.75, help="online pause IoU")
    e.add_argument("--image-clicks", type=int, default=1)
    e.add_argument("--metric", choices=("jf", "j"), default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="report path (JSON)")
    e.add_argument("--lenient", action="store_true", help="exit 0 even if objects fail")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("time-model", help="simulated annotation time")
    t.add_argument("--mode", choices=("offline", "online", "both"), default="both")
    t.add_argument("--length", type=int, default=300)
    t.add_argument("--n-click", type=int, default=3)
    t.add_argument("--n-frame", type=int, default=8)
    t.set_defaults(func=cmd_time_model)

    s = sub.add_parser("stats", help="disappearance rate and mask-area distribution")
    s.add_argument("--manifest", required=True)
    s.add_argument("--bins", type=int, default=10)
    s.add_argument("--areas", action="store_true", help="include every normalised area")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    a = sub.add_parser("align", help="mask alignment score against reference masks")
    a.add_argument("--masks", required=True)
    a.add_argument("--ref", required=True)
    a.add_argument("--threshold", type=float, default=0.75)
    a.add_argument("--out")
    a.set_defaults(func=cmd_align)

    v = sub.add_parser("validate", help="validate a manifest")
    v.add_argument("--manifest", required=True)
    v.add_argument("--frames", action="store_true", help="also load every frame file")
    v.set_defaults(func=cmd_validate)

    y = sub.add_parser("synth", help="write a synthetic rigid-motion dataset")
    y.add_argument("--out", required=True)
    y.add_argument("--videos", type=int, default=20)
    y.add_argument("--length", type=int, default=12)
    y.add_argument("--height", type=int, default=96)
    y.add_argument("--width", type=int, default=128)
    y.add_argument("--objects", type=int, default=2)
    y.add_argument("--motion", choices=("linear", "static"), default="linear")
    y.add_argument("--speed", type=int, default=3)
    y.add_argument("--disappear", type=_parse_window, action="append",
                   help="video,object,start,stop (object hidden on [start, stop)); repeatable")
    y.add_argument("--name", default="synth")
    y.add_argument("--metric", choices=("jf", "j"), default="jf")
    y.add_argument("--seed", type=int, default=0)
    y.set_defaults(func=cmd_synth)

    m = sub.add_parser("automask", help="grid-prompted automatic masklets")
    m.add_argument("--manifest", required=True)
    m.add_argument("--video")
    m.add_argument("--segmenter", choices=SEGMENTERS, default="oracle")
    m.add_argument("--oracle-config")
    m.add_argument("--tracker-config")
    m.add_argument("--iou-threshold", type=float, default=0.8)
    m.add_argument("--min-area", type=int, default=200)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_automask)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
