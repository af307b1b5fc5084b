"""Smoke test for the mvlens extension module.

Build and run from the repo root:

    cargo build -p mvlens-py --features extension-module
    cp target/debug/libmvlens.so python/mvlens.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import mvlens


def textured(w, h, shift):
    return [[((x + 64 - shift) * 29 + y * 13 + (x * y) % 7) % 253 for x in range(w)] for y in range(h)]


def main():
    print("mvlens", mvlens.__version__)

    f = mvlens.MotionField.uniform(2, 3, 3.0, 4.0)
    assert f.shape == (2, 3)
    assert all(abs(m - 5.0) < 1e-12 for row in f.magnitude() for m in row)
    assert f.scaled(2.0).get(1, 2)[:2] == (6.0, 8.0)

    frames = [textured(32, 32, 2 * t) for t in range(3)]
    fields = mvlens.estimate_sequence(frames, block_size=8, search_radius=4)
    assert len(fields) == 3
    assert set(v for row in fields[0].t_sign for v in row) == {0}
    dx = [v for row in fields[2].dx for v in row]
    assert dx.count(-2.0) > len(dx) // 2, dx
    text = mvlens.format_mv_sidecar(fields)
    back = mvlens.parse_mv_sidecar(text, 4, 4, 8)
    assert [fld for _, fld in back] == fields

    s = mvlens.frame_stats([[0.0, 1.0], [2.0, 3.0]], bins=4)
    assert abs(s["sum"] - 6.0) < 1e-12

    p = [0.5, 0.5]
    assert mvlens.kl(p, p) == 0.0
    assert mvlens.js(p, [0.9, 0.1]) > 0.0
    assert abs(mvlens.wasserstein1([0.0, 1.0], [1.0, 2.0]) - 1.0) < 1e-12

    th = mvlens.calibrate_thresholds([i / 10 for i in range(11)])
    assert th.route(0.0) == "low" and th.route(1.0) == "high"
    assert sum(th.fractions([0.0, 0.5, 1.0])) == 1.0

    mask = mvlens.directional_masks(fields[2])
    assert 0.0 <= mvlens.mask_density(mask) <= 1.0
    assert len(mvlens.motion_evolution([[1.0] * 10, [2.0] * 7], segments=5)) == 5

    with tempfile.TemporaryDirectory() as d:
        for name, step in [("a", 1), ("b", 2)]:
            mvlens.write_y4m([textured(32, 32, step * t) for t in range(4)], os.path.join(d, name + ".y4m"))
        manifest = os.path.join(d, "m.csv")
        with open(manifest, "w") as fh:
            fh.write("clip_id,class_label,frames_path,mv_path\na,real,a.y4m,\nb,real,b.y4m,\n")
        cfg = mvlens.default_config()
        cfg.update(block_size=8, search_radius=4)
        report = mvlens.cmd_stats(manifest, os.path.join(d, "stats"), config_json=json.dumps(cfg), threads=2)
        assert [c["clip_id"] for c in report["clips"]] == ["a", "b"]
        cal = mvlens.cmd_calibrate(manifest, os.path.join(d, "cal"), config_json=json.dumps(cfg))
        assert math.isclose(sum(cal["fractions"].values()), 1.0)

    try:
        mvlens.MotionField([[0.0]], [[0.0, 1.0]], [[0]])
    except ValueError:
        pass
    else:
        raise AssertionError("mismatched shapes accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
