import numpy as np
import pytest

from lensfield.cli import main
from lensfield.field import load_checkpoint
from lensfield.imageio import read_image, write_image


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", "--scene", "two-planes", "--views", "3", "--size", "8", "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    argv = ["train", "--data", str(dataset), "--out", str(out), "--steps", "3", "--batch", "8",
            "--n-coarse", "8", "--n-fine", "8", "--eval-every", "0"]
    assert main(argv) == 0
    return out / "field.ckpt"


def test_synth_writes_views(dataset):
    assert (dataset / "manifest.json").exists()
    assert len(list(dataset.glob("view_*.png"))) == 3


def test_synth_repeatable(dataset, tmp_path):
    assert main(["synth", "--views", "3", "--size", "8", "--seed", "7", "--out", str(tmp_path)]) == 0
    for f in dataset.iterdir():
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()


def test_missing_out_is_usage_error(capsys):
    assert main(["synth", "--views", "2"]) == 2
    assert "--out" in capsys.readouterr().err


def test_unknown_subcommand():
    assert main(["paint"]) == 2


def test_train_zero_steps_is_init(dataset, tmp_path):
    from lensfield.field import DESK_ARCH, FieldParams

    assert main(["train", "--data", str(dataset), "--out", str(tmp_path), "--steps", "0", "--seed", "4"]) == 0
    params, header = load_checkpoint(tmp_path / "field.ckpt")
    init = FieldParams.init(DESK_ARCH, seed=4)
    assert header["step"] == 0
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), init.arrays()))
    assert "kernel_probs: 0.3,0.2,0.2,0.1,0.1,0.1" in (tmp_path / "train_manifest.txt").read_text()


def test_train_degenerate_probs(dataset, tmp_path):
    argv = ["train", "--data", str(dataset), "--out", str(tmp_path), "--steps", "2", "--batch", "4",
            "--n-coarse", "4", "--n-fine", "4", "--eval-every", "0", "--kernel-probs", "1,0,0,0,0,0"]
    assert main(argv) == 0
    rows = (tmp_path / "history.csv").read_text().splitlines()[1:]
    assert {r.split(",")[1] for r in rows} == {"0"}


def test_train_mismatched_kernels(dataset, tmp_path):
    argv = ["train", "--data", str(dataset), "--out", str(tmp_path), "--kernel-sizes", "1,3", "--kernel-probs", "1"]
    assert main(argv) == 2


def test_train_missing_dataset(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == 1


def test_render_and_eval(checkpoint, tmp_path, capsys):
    a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
    assert main(["render", "--checkpoint", str(checkpoint), "--out", str(a), "--view", "1", "--n-coarse", "8", "--n-fine", "8"]) == 0
    assert main(["render", "--checkpoint", str(checkpoint), "--out", str(b), "--view", "1", "--n-coarse", "8", "--n-fine", "8"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert read_image(a).shape == (8, 8, 3)
    capsys.readouterr()
    assert main(["eval", "--image", str(a), "--reference", str(b)]) == 0
    assert "psnr inf" in capsys.readouterr().out


def test_render_lens_controls(checkpoint, tmp_path):
    out = tmp_path / "x.png"
    pose = ",".join(str(v) for v in [1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 4])
    base = ["render", "--checkpoint", str(checkpoint), "--out", str(out), "--n-coarse", "4", "--n-fine", "4"]
    assert main(base + ["--pose-matrix", pose, "--aperture", "0.06", "--focus", "3.4", "--size", "6"]) == 0
    assert read_image(out).shape == (6, 6, 3)
    assert main(base + ["--aperture", "-1"]) == 2
    assert main(base + ["--focus", "0"]) == 2
    assert main(base + ["--pose-matrix", "1,2,3"]) == 2
    assert main(base + ["--view", "99"]) == 2


def test_render_bad_magic(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage!" + bytes(32))
    assert main(["render", "--checkpoint", str(bad), "--out", str(tmp_path / "o.png")]) == 1
    assert "error" in capsys.readouterr().err


def test_eval_blurred_reference(tmp_path, capsys):
    img = np.random.default_rng(0).random((16, 16, 3))
    write_image(tmp_path / "r.png", img)
    assert main(["eval", "--image", str(tmp_path / "r.png"), "--reference", str(tmp_path / "r.png"), "--blur", "7"]) == 0
    assert "psnr inf" not in capsys.readouterr().out


def test_eval_shape_mismatch(tmp_path):
    write_image(tmp_path / "a.png", np.zeros((4, 4, 3)))
    write_image(tmp_path / "b.png", np.zeros((5, 4, 3)))
    assert main(["eval", "--image", str(tmp_path / "a.png"), "--reference", str(tmp_path / "b.png")]) == 2


def test_verify_single_suite(capsys):
    assert main(["verify", "--suite", "lens"]) == 0
    out = capsys.readouterr().out
    assert "lens" in out and "ipe" not in out


def test_verify_tolerance_injection():
    assert main(["verify", "--suite", "lens", "--tolerance-scale", "0"]) == 1
