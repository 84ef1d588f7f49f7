"""Smoke test for the `shadowheight` extension module.

Builds the extension with cargo when it is not importable, loads it from a
temporary directory and exercises every binding once.

    python3 python/smoke_test.py [--release]
"""

import argparse
import importlib
import os
import shutil
import subprocess
import sys
import sysconfig
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build_and_stage(profile):
    cmd = ["cargo", "build", "-p", "shadowheight-py", "--features", "extension-module"]
    if profile == "release":
        cmd.append("--release")
    subprocess.run(cmd, cwd=ROOT, check=True)
    target = os.environ.get("CARGO_TARGET_DIR", os.path.join(ROOT, "target"))
    built = os.path.join(target, profile, "libshadowheight.so")
    stage = tempfile.mkdtemp(prefix="shadowheight-py-")
    shutil.copy(built, os.path.join(stage, "shadowheight" + sysconfig.get_config_var("EXT_SUFFIX")))
    sys.path.insert(0, stage)
    return stage


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--release", action="store_true", help="build with the release profile")
    args = parser.parse_args()

    try:
        sh = importlib.import_module("shadowheight")
    except ImportError:
        build_and_stage("release" if args.release else "debug")
        sh = importlib.import_module("shadowheight")

    assert sh.shadow_length_px(10.0, 45.0, 0.25) == 40
    assert sh.shadow_length_px(7.5, 30.0, 0.25) == 52

    tiles = sh.plan_tiles(4000, 4000, 256, 4)
    assert (tiles["grid_rows"], tiles["grid_cols"]) == (16, 16)
    assert (tiles["out_height"], tiles["out_width"]) == (1000, 1000)

    dark = bytes([5, 5, 5])
    bright = bytes([200, 180, 160])
    rgb = b"".join(dark if c < 4 else bright for r in range(8) for c in range(8))
    mask = sh.shadow_map(rgb, 8, 8, contrast_stretch=False, blur_sigma=0.0)
    assert list(mask) == [1 if c < 4 else 0 for r in range(8) for c in range(8)]

    try:
        sh.shadow_map(rgb, 9, 8)
    except sh.ShadowHeightError as e:
        assert "invalid-argument" in str(e)
    else:
        raise AssertionError("mismatched dimensions were accepted")

    assert sh.parameter_count("micro") == sh.Model("micro").parameter_count

    scene_rgb, target, th, tw = sh.generate_scene(seed=4, world=128, n_buildings=4)
    assert len(scene_rgb) == 128 * 128 * 3 and len(target) == th * tw == 32 * 32
    assert max(target) <= 30.0 and min(target) >= 0.0

    model = sh.Model("micro", use_shadow=True, seed=1)
    assert (model.input_size, model.output_size, model.uses_shadow_channel) == (64, 16, True)
    patch = bytes(scene_rgb[: 64 * 3]) * 64
    assert len(model.predict_patch(patch)) == 16 * 16
    heights, h, w, gsd = model.predict(scene_rgb, 128, 128, gsd=0.5)
    assert (h, w, gsd) == (32, 32, 2.0) and min(heights) >= 0.0

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.ckpt")
        model.save(path)
        again = sh.Model.load(path)
        assert again.predict_patch(patch) == model.predict_patch(patch)

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
