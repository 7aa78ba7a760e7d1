import json
import math
import re
from pathlib import Path

import numpy as np
import pytest
import yaml

from ftnet.cli import main
from ftnet.data import read_points_csv
from ftnet.experiment import pgm_grid

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"
MNIST_IMAGES = REPO / "data" / "mnist" / "images-idx3-ubyte.gz"


def read_pgm(path):
    """Minimal independent P5 reader: header tokens (with # comments), then raw bytes."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    pos += 1  # exactly one whitespace byte ends the header
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    assert magic == "P5" and maxval == 255
    pixels = np.frombuffer(data[pos:], dtype=np.uint8)
    assert pixels.size == width * height
    return pixels.reshape(height, width)


def synthetic_config(tmp_path, iterations=20, **overrides):
    raw = {
        "name": "tiny", "task": "synthetic", "seed": 5, "log_interval": 5,
        "data": {"kind": "gmm", "variance": 0.005, "points": 500},
        "generator": [{"kind": "tensor", "in": [2, 2, 2], "out": [2, 2, 2],
                       "activation": "leaky_relu(0.2)"},
                      {"kind": "tensor", "in": [2, 2, 2], "out": [1, 1, 2]}],
        "discriminator": [{"kind": "tensor", "in": [1, 1, 2], "out": [2, 2, 2],
                           "activation": "leaky_relu(0.2)"},
                          {"kind": "tensor", "in": [2, 2, 2], "out": [1, 1, 1]}],
        "train": {"iterations": iterations, "batch_size": 16},
        "schedule": {"samples": [10, 20], "checkpoints": [20], "num_samples": 300},
    }
    raw.update(overrides)
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def mnist_config(tmp_path, iterations=3):
    raw = {
        "name": "tiny_mnist", "task": "mnist", "seed": 1, "log_interval": 1,
        "data": {"images": str(MNIST_IMAGES), "limit": 120, "holdout": 20},
        "prior": {"shape": [3, 3]},
        "generator": [{"kind": "tensor", "in": [3, 3], "out": [4, 4], "activation": "leaky_relu"},
                      {"kind": "tensor", "in": [4, 4], "out": [28, 28], "activation": "sigmoid"}],
        "discriminator": [{"kind": "tensor", "in": [28, 28], "out": [4, 4],
                           "activation": "leaky_relu"},
                          {"kind": "tensor", "in": [4, 4], "out": [1, 1]}],
        "train": {"iterations": iterations, "batch_size": 8},
        "schedule": {"samples": [iterations], "num_samples": 10},
    }
    path = tmp_path / "mnist.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def run(argv, capsys):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as exc:  # argparse usage errors
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


# -- train --------------------------------------------------------------------

def test_train_writes_all_artifacts(tmp_path, capsys):
    cfg = synthetic_config(tmp_path)
    out = tmp_path / "run"
    code, stdout, _ = run(["train", cfg, "--out", out], capsys)
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["checkpoint_000000.ftck", "checkpoint_000020.ftck", "config.yaml",
                     "metrics.ndjson", "samples_000010.csv", "samples_000020.csv"]
    records = [json.loads(l) for l in (out / "metrics.ndjson").read_text().splitlines()]
    train_iters = [r["iter"] for r in records if r["kind"] == "train"]
    assert train_iters == [5, 10, 15, 20]
    assert all(math.isfinite(r["d_loss"]) and math.isfinite(r["g_loss"])
               for r in records if r["kind"] == "train")
    evals = [r for r in records if r["kind"] == "eval"]
    assert [r["iter"] for r in evals] == [0, 10, 20]
    assert all(0 <= r["covered_modes"] <= 6 and len(r["mode_hist"]) == 6 for r in evals)
    pts, labels = read_points_csv(out / "samples_000020.csv")
    assert pts.shape == (2, 300) and labels is None
    assert "wrote" in stdout


def test_zero_iterations_gives_only_the_initial_checkpoint(tmp_path, capsys):
    cfg = synthetic_config(tmp_path, iterations=0)
    out = tmp_path / "run"
    assert run(["train", cfg, "--out", out, "--quiet"], capsys)[0] == 0
    assert sorted(p.name for p in out.glob("checkpoint_*")) == ["checkpoint_000000.ftck"]
    assert not list(out.glob("samples_*"))


def test_training_is_byte_reproducible(tmp_path, capsys):
    cfg = synthetic_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["train", cfg, "--out", a, "--quiet"], capsys)[0] == 0
    assert run(["train", cfg, "--out", b, "--quiet"], capsys)[0] == 0
    for name in ("metrics.ndjson", "checkpoint_000020.ftck", "samples_000020.csv", "config.yaml"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_seed_override_changes_the_run(tmp_path, capsys, monkeypatch):
    cfg = synthetic_config(tmp_path)
    assert run(["train", cfg, "--out", tmp_path / "a", "--quiet"], capsys)[0] == 0
    monkeypatch.setenv("FTNET_SEED", "6")
    assert run(["train", cfg, "--out", tmp_path / "b", "--quiet"], capsys)[0] == 0
    assert (tmp_path / "a" / "metrics.ndjson").read_bytes() != \
        (tmp_path / "b" / "metrics.ndjson").read_bytes()
    assert yaml.safe_load((tmp_path / "b" / "config.yaml").read_text())["seed"] == 6


@pytest.mark.skipif(not MNIST_IMAGES.exists(), reason="no MNIST subset")
def test_mnist_train_writes_pgm_and_holdout_loss(tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["train", mnist_config(tmp_path), "--out", out, "--quiet"], capsys)[0] == 0
    img = read_pgm(out / "samples_000003.pgm")
    assert img.shape == (3 * 28, 4 * 28)  # 10 tiles, 4 columns, 3 rows
    assert img[2 * 28:, 2 * 28:].max() == 0  # unused tiles stay black
    evals = [json.loads(l) for l in (out / "metrics.ndjson").read_text().splitlines()
             if '"eval"' in l]
    assert all(math.isfinite(e["holdout_d_loss"]) and 0 <= e["mean_intensity"] <= 1
               for e in evals)


def test_train_invalid_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("task: synthetic\ngenerator: []\n")
    code, _, err = run(["train", path], capsys)
    assert code == 2 and "generator" in err


def test_train_missing_mnist_files_exit_2(tmp_path, capsys):
    path = mnist_config(tmp_path)
    raw = yaml.safe_load(path.read_text())
    raw["data"]["images"] = "nowhere.gz"
    path.write_text(yaml.safe_dump(raw))
    code, _, err = run(["train", path], capsys)
    assert code == 2 and "not found" in err


def test_train_unreadable_config_exits_3(tmp_path, capsys):
    assert run(["train", tmp_path / "missing.yaml"], capsys)[0] == 3


def test_train_unwritable_output_exits_3(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    code, _, _ = run(["train", synthetic_config(tmp_path), "--out", blocker / "run"], capsys)
    assert code == 3


# -- count-params ---------------------------------------------------------------

def test_count_params_degenerate_single_layer(tmp_path, capsys):
    raw = {"name": "one", "task": "synthetic",
           "generator": [{"kind": "dense", "in": [3], "out": [2]}],
           "discriminator": [{"kind": "dense", "in": [2], "out": [1]}]}
    (tmp_path / "one.yaml").write_text(yaml.safe_dump(raw))
    code, out, _ = run(["count-params", tmp_path / "one.yaml", "--json"], capsys)
    report = json.loads(out)
    assert code == 0
    (m,) = report["models"]
    assert (m["generator"], m["discriminator"], m["total"]) == (3 * 2 + 2, 2 * 1 + 1, 11)


def test_count_params_order_one_tensor_equals_dense(tmp_path, capsys):
    def cfg(kind, name):
        raw = {"name": name, "task": "synthetic",
               "generator": [{"kind": kind, "in": [7], "out": [5], "activation": "tanh"},
                             {"kind": kind, "in": [5], "out": [2]}],
               "discriminator": [{"kind": kind, "in": [2], "out": [9]},
                                 {"kind": kind, "in": [9], "out": [1]}]}
        (tmp_path / f"{name}.yaml").write_text(yaml.safe_dump(raw))
        return tmp_path / f"{name}.yaml"

    code, out, _ = run(["count-params", cfg("tensor", "t"), cfg("dense", "d"), "--json"], capsys)
    models = json.loads(out)["models"]
    assert code == 0
    assert [m["total"] for m in models] == [models[1]["total"]] * 2
    assert models[0]["total"] == (7 * 5 + 5) + (5 * 2 + 2) + (2 * 9 + 9) + (9 + 1)


def test_count_params_table_and_json(capsys):
    code, out, _ = run(["count-params", CONFIGS / "mnist_tgan.yaml", CONFIGS / "mnist_gan1.yaml"],
                       capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].split()[:2] == ["model", "layers"]
    report = json.loads(lines[-1])
    totals = {m["name"]: m["total"] for m in report["models"]}
    assert totals == {"mnist_tgan": 20825, "mnist_gan1": 836285}
    (pair,) = report["ratios"]
    assert pair["larger"] == "mnist_gan1" and pair["smaller"] == "mnist_tgan"
    assert re.search(r"mnist_gan1 / mnist_tgan: 32\.25x", out)


def test_count_params_bad_config_exits_2(tmp_path, capsys):
    (tmp_path / "bad.yaml").write_text("task: synthetic\n")
    assert run(["count-params", tmp_path / "bad.yaml"], capsys)[0] == 2


# -- grad-check ---------------------------------------------------------------

def test_grad_check_default_passes(capsys):
    code, out, _ = run(["grad-check"], capsys)
    assert code == 0 and "PASS" in out
    assert {"layer0.U1", "layer0.U2", "layer0.bias"} <= set(re.findall(r"layer0\.\w+", out))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_check_identity_passes(seed, capsys):
    code, _, _ = run(["grad-check", "--activation", "identity", "--seed", seed,
                      "--extents", "2,3,2:3,2,2:1,2,1"], capsys)
    assert code == 0


def test_grad_check_corrupt_fails_with_block(capsys):
    code, _, err = run(["grad-check", "--corrupt"], capsys)
    assert code == 1 and re.search(r"layer0\.(U\d|bias)", err)


@pytest.mark.parametrize("argv", [["--extents", "3,3"], ["--extents", "3,3:2"],
                                  ["--extents", "a,b:1,1"], ["--order", "3", "--extents", "3,3:2,2"],
                                  ["--extents", "0,1:1,1"], ["--activation", "swish"],
                                  ["--batch", "0"], ["--bogus"]])
def test_grad_check_bad_arguments_exit_2(argv, capsys):
    assert run(["grad-check", *argv], capsys)[0] == 2


# -- sample -------------------------------------------------------------------

@pytest.fixture
def synthetic_checkpoint(tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["train", synthetic_config(tmp_path), "--out", out, "--quiet"], capsys)[0] == 0
    return out / "checkpoint_000020.ftck"


def test_sample_csv_one_row(synthetic_checkpoint, tmp_path, capsys):
    out = tmp_path / "one.csv"
    assert run(["sample", synthetic_checkpoint, "--n", 1, "--out", out], capsys)[0] == 0
    assert len(out.read_text().splitlines()) == 2  # header plus one row


def test_sample_is_deterministic(synthetic_checkpoint, tmp_path, capsys):
    for name, seed in (("a.csv", 3), ("b.csv", 3), ("c.csv", 4)):
        assert run(["sample", synthetic_checkpoint, "--n", 50, "--seed", seed,
                    "--out", tmp_path / name], capsys)[0] == 0
    a, b, c = ((tmp_path / n).read_bytes() for n in ("a.csv", "b.csv", "c.csv"))
    assert a == b and a != c


def test_sample_wrong_extension_exits_2(synthetic_checkpoint, tmp_path, capsys):
    assert run(["sample", synthetic_checkpoint, "--out", tmp_path / "x.pgm"], capsys)[0] == 2


@pytest.mark.skipif(not MNIST_IMAGES.exists(), reason="no MNIST subset")
def test_sample_pgm_tiles(tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["train", mnist_config(tmp_path), "--out", out, "--quiet"], capsys)[0] == 0
    ckpt = out / "checkpoint_000000.ftck"
    assert run(["sample", ckpt, "--n", 1, "--out", tmp_path / "one.pgm"], capsys)[0] == 0
    assert read_pgm(tmp_path / "one.pgm").shape == (28, 28)
    assert run(["sample", ckpt, "--n", 7, "--seed", 2, "--out", tmp_path / "a.pgm"], capsys)[0] == 0
    assert run(["sample", ckpt, "--n", 7, "--seed", 2, "--out", tmp_path / "b.pgm"], capsys)[0] == 0
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
    assert read_pgm(tmp_path / "a.pgm").shape == (3 * 28, 3 * 28)


def test_pgm_pixels_round_from_values():
    images = np.zeros((28, 28, 2))
    images[0, 0, 0] = 1.0
    images[0, 1, 0] = 0.5   # 127.5 rounds half to even
    images[27, 27, 1] = 0.2  # 51
    images[1, 0, 1] = 1.7   # clipped
    raw = pgm_grid(images)
    assert raw.startswith(b"P5\n56 28\n255\n")
    pix = np.frombuffer(raw[len(b"P5\n56 28\n255\n"):], np.uint8).reshape(28, 56)
    assert pix[0, 0] == 255 and pix[0, 1] == 128 and pix[27, 55] == 51 and pix[1, 28] == 255


def test_sample_corrupt_checkpoint_exits_4(synthetic_checkpoint, tmp_path, capsys):
    bad = tmp_path / "bad.ftck"
    bad.write_bytes(synthetic_checkpoint.read_bytes()[:-9])
    code, _, err = run(["sample", bad, "--out", tmp_path / "x.csv"], capsys)
    assert code == 4 and "corrupt" in err
    bad.write_bytes(b"nonsense")
    assert run(["sample", bad, "--out", tmp_path / "x.csv"], capsys)[0] == 4


def test_sample_missing_checkpoint_exits_3(tmp_path, capsys):
    assert run(["sample", tmp_path / "nope.ftck", "--out", tmp_path / "x.csv"], capsys)[0] == 3
