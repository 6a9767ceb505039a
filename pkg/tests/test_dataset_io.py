import copy
import json

import numpy as np
import pytest

from pvseval.dataset_io import (
    BACKGROUND_INTENSITY,
    OBJECT_INTENSITY,
    ManifestError,
    ReportError,
    SynthError,
    SynthSpec,
    dumps,
    load_manifest,
    load_report,
    parse_manifest,
    read_pgm,
    save_manifest,
    save_report,
    synth_dataset,
    write_dataset,
    write_pgm,
)
from pvseval.mask_core import rle_encode
from pvseval.metrics import DatasetReport, FrameScore, MaskletScore, ObjectKey, ObjectResult, disappearance_rate


def minimal():
    return {
        "format": "pvs-manifest/1",
        "name": "tiny",
        "metric": "jf",
        "videos": [
            {
                "id": "a",
                "length": 2,
                "height": 2,
                "width": 2,
                "frames": None,
                "objects": {"1": {"0": {"size": [2, 2], "counts": [3, 1]}}},
                "object_meta": {"1": {"seen": True, "category": "x"}},
            }
        ],
    }


# (path, bad value); each breaks exactly one field of the minimal manifest
MUTATIONS = [
    (("format",), "pvs-manifest/2"),
    (("name",), ""),
    (("name",), 5),
    (("metric",), "iou"),
    (("videos",), {}),
    (("videos", 0), []),
    (("videos", 0, "id"), ""),
    (("videos", 0, "id"), 3),
    (("videos", 0, "length"), 0),
    (("videos", 0, "length"), 1.5),
    (("videos", 0, "length"), True),
    (("videos", 0, "height"), 3),
    (("videos", 0, "height"), -2),
    (("videos", 0, "width"), 1),
    (("videos", 0, "width"), "2"),
    (("videos", 0, "frames"), ["only-one.pgm"]),
    (("videos", 0, "frames"), "a.pgm"),
    (("videos", 0, "objects"), []),
    (("videos", 0, "objects", "1"), [1]),
    (("videos", 0, "objects", "1", "0", "counts"), [3]),
    (("videos", 0, "objects", "1", "0", "counts"), [3, 2]),
    (("videos", 0, "objects", "1", "0", "counts"), [3, -1, 2]),
    (("videos", 0, "objects", "1", "0", "counts"), [3.0, 1]),
    (("videos", 0, "objects", "1", "0", "size"), [1, 4]),
    (("videos", 0, "objects", "1", "0", "size"), [2]),
    (("videos", 0, "object_meta"), {"2": {}}),
    (("videos", 0, "object_meta", "1"), "x"),
    (("videos", 0, "object_meta", "1", "seen"), 1),
    (("videos", 0, "object_meta", "1", "category"), 7),
]


def set_path(obj, path, value):
    for key in path[:-1]:
        obj = obj[key]
    obj[path[-1]] = value


class TestManifest:
    def test_minimal(self):
        m = parse_manifest(minimal())
        v = m.videos[0]
        ml = v.masklet("1")
        assert ml[0][1, 1] and ml[0].sum() == 1
        assert not ml[1].any()  # absent frame is empty
        assert v.presence("1") == [1, 0]

    @pytest.mark.parametrize("path,value", MUTATIONS, ids=lambda x: str(x))
    def test_mutation_rejected(self, path, value):
        obj = minimal()
        set_path(obj, path, value)
        with pytest.raises(ManifestError):
            parse_manifest(obj)

    def test_located_errors(self):
        obj = minimal()
        obj["videos"][0]["objects"]["1"]["0"]["counts"] = [2, 1]  # sums to h*w - 1
        with pytest.raises(ManifestError, match=r"video 'a' object '1' frame '0'"):
            parse_manifest(obj)
        obj = minimal()
        obj["videos"][0]["objects"]["1"]["5"] = {"size": [2, 2], "counts": [4]}
        with pytest.raises(ManifestError, match="frame '5'"):
            parse_manifest(obj)
        obj = minimal()
        obj["videos"].append(copy.deepcopy(obj["videos"][0]))
        with pytest.raises(ManifestError, match="duplicate"):
            parse_manifest(obj)

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("{nope")
        with pytest.raises(ManifestError):
            load_manifest(p)

    def test_roundtrip_random(self, tmp_path):
        rng = np.random.default_rng(0)
        for i in range(100):
            h, w, n = (int(x) for x in rng.integers(1, 9, 3))
            objects = {}
            for o in range(int(rng.integers(1, 4))):
                objects[str(o + 1)] = {
                    t: rle_encode(rng.random((h, w)) < 0.5) for t in range(n) if rng.random() < 0.7
                }
            obj = {
                "format": "pvs-manifest/1",
                "name": f"r{i}",
                "metric": "jf",
                "videos": [
                    {
                        "id": "v",
                        "length": n,
                        "height": h,
                        "width": w,
                        "frames": None,
                        "objects": {o: {str(t): r.to_json() for t, r in ms.items()} for o, ms in objects.items()},
                        "object_meta": {},
                    }
                ],
            }
            m = parse_manifest(obj)
            p = tmp_path / "m.json"
            save_manifest(m, p)
            back = load_manifest(p)
            assert back == m
            assert json.loads(p.read_text()) == obj


class TestPgm:
    def test_roundtrip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, (7, 11), dtype=np.uint8)
        write_pgm(tmp_path / "a.pgm", img)
        assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)

    def test_comment_header(self, tmp_path):
        img = np.arange(6, dtype=np.uint8).reshape(2, 3)
        (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n3 2\n255\n" + img.tobytes())
        assert np.array_equal(read_pgm(tmp_path / "c.pgm"), img)

    def test_rejects(self, tmp_path):
        with pytest.raises(ValueError):
            write_pgm(tmp_path / "x.pgm", np.zeros((2, 2), np.int32))
        (tmp_path / "p2.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(ValueError):
            read_pgm(tmp_path / "p2.pgm")


class TestSynth:
    def test_static(self):
        m = synth_dataset(SynthSpec(n_videos=2, n_objects=1, motion="static"))
        presences = [v.presence(o) for v, o in m.masklets()]
        assert all(all(p) for p in presences)
        assert disappearance_rate(presences) == 0.0

    def test_disappearance(self):
        spec = SynthSpec(n_videos=3, n_objects=1, length=6, disappearances=((0, 0, 2, 4),))
        m = synth_dataset(spec)
        assert m.videos[0].presence("1") == [1, 1, 0, 0, 1, 1]
        assert disappearance_rate(v.presence(o) for v, o in m.masklets()) == pytest.approx(100 / 3)

    def test_rendering(self):
        m = synth_dataset(SynthSpec(n_videos=1, length=4))
        v = m.videos[0]
        fg = np.zeros(v.shape, bool)
        for o in v.object_ids():
            for t, g in enumerate(v.masklet(o)):
                assert np.all(v.pixels[t][g] == OBJECT_INTENSITY)
            fg |= v.masklet(o)[0]
        assert np.all(v.pixels[0][~fg] == BACKGROUND_INTENSITY)

    def test_motion_speed(self):
        m = synth_dataset(SynthSpec(n_videos=3, length=5, speed=3))
        for v, o in m.masklets():
            ml = v.masklet(o)
            c = [np.argwhere(g).min(axis=0) for g in ml]
            steps = {tuple(b - a) for a, b in zip(c, c[1:])}
            assert len(steps) == 1
            assert set(map(abs, steps.pop())) <= {0, 3}

    def test_determinism(self, tmp_path):
        spec = SynthSpec(n_videos=3, length=5)
        a = write_dataset(synth_dataset(spec, 4), tmp_path / "a")
        b = write_dataset(synth_dataset(spec, 4), tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a/v000/00003.pgm").read_bytes() == (tmp_path / "b/v000/00003.pgm").read_bytes()
        c = write_dataset(synth_dataset(spec, 5), tmp_path / "c")
        assert a.read_bytes() != c.read_bytes()

    def test_written_dataset_loads(self, tmp_path):
        m = synth_dataset(SynthSpec(n_videos=2, length=3))
        path = write_dataset(m, tmp_path)
        back = load_manifest(path)
        px = back.videos[1].load_pixels(back.root)
        assert all(np.array_equal(a, b) for a, b in zip(px, m.videos[1].pixels))

    def test_leaves_frame(self):
        with pytest.raises(SynthError):
            synth_dataset(SynthSpec(n_videos=1, length=40, height=40, width=40, speed=3, min_size=12, max_size=12))


def random_report(rng, i):
    objs = {}
    for k in range(int(rng.integers(1, 5))):
        if rng.random() < 0.2:
            objs[ObjectKey(f"v{i}", str(k))] = ObjectResult(None, error="x")
            continue
        frames = [FrameScore(t, float(rng.random()), float(rng.random())) for t in range(int(rng.integers(1, 5)))]
        objs[ObjectKey(f"v{i}", str(k))] = ObjectResult(
            MaskletScore("jf", frames, [0]), rounds=[float(x) for x in rng.random(3)], extra={"start": 0}
        )
    return DatasetReport(f"d{i}", "offline", "jf", objs, {"n_click": 3})


class TestReport:
    def test_roundtrip_random(self, tmp_path):
        rng = np.random.default_rng(1)
        for i in range(100):
            rep = random_report(rng, i)
            p = tmp_path / "r.json"
            save_report(rep, p, seed=i)
            back, header = load_report(p)
            assert header["seed"] == i and header["format"] == "pvs-report/1" and header["tool_version"]
            assert dumps(back.to_json()) == dumps(rep.to_json())

    def test_schema_rejects(self, tmp_path):
        rep = random_report(np.random.default_rng(0), 0)
        p = tmp_path / "r.json"
        save_report(rep, p)
        doc = json.loads(p.read_text())
        doc["report"]["protocol"] = "batch"
        p.write_text(json.dumps(doc))
        with pytest.raises(ReportError):
            load_report(p)
        p.write_text("[")
        with pytest.raises(ReportError):
            load_report(p)
        del doc["seed"]
        p.write_text(json.dumps(doc))
        with pytest.raises(ReportError):
            load_report(p)
