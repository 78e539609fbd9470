"""The command line surface, end to end on tiny configurations."""

import json

import numpy as np
import pytest
import torch

from varigan.checkpoint import load_generator
from varigan.cli import main
from varigan.imageio import load_image, save_frames, save_image
from varigan.synthesis import Generator, GeneratorSpec

from conftest import seeded_randn
from test_checkpoint import _external_layout_state


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Workspace with a config, sample images, frames and a direction."""
    root = tmp_path_factory.mktemp("cli")
    g = Generator(GeneratorSpec.desk(64), seed=8)
    g.update_mean_latent(n=32, seed=8)
    with torch.no_grad():
        imgs = g(seeded_randn(3, 512, seed=80), truncation=0.7)
    save_image(root / "face.png", imgs[0])
    save_frames(root / "clip", imgs)
    small = torch.nn.functional.avg_pool2d(imgs[0:1], 4)[0]
    save_image(root / "small.png", small)
    np.save(root / "direction.npy", (0.1 * seeded_randn(512, seed=81)).numpy())
    cfg = {"output_resolution": 64, "iterations": 2, "steps": 2, "pairs": 4,
           "image_size": 64, "batch_size": 2, "out_dir": str(root / "out")}
    (root / "cfg.json").write_text(json.dumps(cfg))
    cfg256 = dict(cfg, output_resolution=256)
    (root / "cfg256.json").write_text(json.dumps(cfg256))
    return root


def run(*argv):
    return main([str(a) for a in argv])


def test_verify_writes_report(ws):
    out = ws / "verify"
    assert run("verify", "--config", ws / "cfg.json", "--out", out, "--seed", "5") == 0
    assert (out / "report.txt").read_text().count("[PASS]") == 5
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["seed"] == 5 and resolved["output_resolution"] == 64


def test_invert_and_edit(ws):
    out = ws / "invert"
    assert run("invert", "--config", ws / "cfg.json",
               "--input", ws / "face.png", "--out", out) == 0
    assert (out / "inversion.npz").exists()
    rec = load_image(out / "reconstruction.png")
    assert rec.shape == (3, 16, 16)  # 64px at M=2 comes back at a quarter size

    out2 = ws / "edit"
    assert run("edit", "--config", ws / "cfg.json",
               "--latents", out / "inversion.npz",
               "--direction", ws / "direction.npy",
               "--scale", "1.5", "--rows", "5:10", "--out", out2) == 0
    assert (out2 / "edited.png").exists() and (out2 / "edited.npz").exists()


def test_superres(ws):
    out = ws / "sr"
    assert run("superres", "--config", ws / "cfg256.json",
               "--input", ws / "small.png", "--factor", "8", "--out", out) == 0
    y = load_image(out / "upsampled.png")
    assert y.shape == (3, 128, 128)  # 16px target, x8 input scaling at M=8


def test_translate(ws):
    out = ws / "tr"
    assert run("translate", "--config", ws / "cfg256.json",
               "--input", ws / "face.png", "--mode", "sketch",
               "--style", ws / "face.png", "--out", out) == 0
    assert (out / "translated.png").exists()
    assert (out / "intermediate.png").exists()


def test_translate_needs_mode(ws):
    assert run("translate", "--config", ws / "cfg.json",
               "--input", ws / "face.png", "--out", ws / "tr2") == 1


def test_video_edit_writes_metrics(ws):
    out = ws / "video"
    assert run("video-edit", "--config", ws / "cfg256.json",
               "--frames", ws / "clip", "--direction", ws / "direction.npy",
               "--scale", "1.0", "--out", out) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert "id_consistency" in metrics and "id_maintenance" in metrics
    assert len(list((out / "frames").glob("*.png"))) == 3


def test_toonify_single_image(ws):
    out = ws / "toon"
    assert run("toonify", "--config", ws / "cfg256.json",
               "--input", ws / "face.png", "--out", out) == 0
    assert (out / "toonified.png").exists()


def test_train_then_reuse_encoder(ws):
    out = ws / "train"
    assert run("train", "--config", ws / "cfg256.json", "--task", "inversion",
               "--out", out) == 0
    assert (out / "encoder.npz").exists()
    assert (out / "history.csv").read_text().startswith("step,")

    reuse = dict(json.loads((ws / "cfg256.json").read_text()),
                 encoder_checkpoint=str(out))
    (ws / "reuse.json").write_text(json.dumps(reuse))
    assert run("invert", "--config", ws / "reuse.json",
               "--input", ws / "face.png", "--out", ws / "invert2") == 0


def test_train_sketch_saves_all_modules(ws):
    out = ws / "train-sketch"
    assert run("train", "--config", ws / "cfg256.json", "--task", "sketch",
               "--out", out) == 0
    assert (out / "encoder.npz").exists()
    assert (out / "fusion.npz").exists()
    assert (out / "translator.npz").exists()


def test_train_rejects_mismatched_geometry(ws, capsys):
    # self-paired synthesis at M=2 cannot satisfy the harness geometry
    assert run("train", "--config", ws / "cfg.json", "--task", "inversion",
               "--out", ws / "train-bad") == 1
    assert "geometry" in capsys.readouterr().err


def test_import_weights(ws):
    src = Generator(GeneratorSpec.desk(64), seed=13)
    src.update_mean_latent(n=32, seed=13)
    torch.save({"g_ema": _external_layout_state(src)}, ws / "external.pt")
    out = ws / "import"
    assert run("import-weights", "--config", ws / "cfg.json",
               "--source", ws / "external.pt", "--out", out) == 0
    g = load_generator(out / "generator.npz")
    z = seeded_randn(1, 512, seed=82)
    with torch.no_grad():
        assert torch.equal(g(z), src(z))


def test_bad_config_is_a_clean_error(ws, capsys):
    bad = ws / "bad.json"
    bad.write_text(json.dumps({"output_resolution": 64, "mystery": 1}))
    assert run("verify", "--config", bad, "--out", ws / "nope") == 1
    assert "mystery" in capsys.readouterr().err


def test_missing_input_is_a_clean_error(ws):
    assert run("invert", "--config", ws / "cfg.json",
               "--input", ws / "nothing.png", "--out", ws / "nope2") == 1


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
