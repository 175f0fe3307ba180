import csv

import numpy as np
import pytest
from PIL import Image

from execution.checkpoint import load_checkpoint
from execution.config import settings
from execution.dataset import list_slice_ids, load_mask
from main import cli


def run(*argv):
    return cli(["--log-file", "", "--log-level", "WARNING", *[str(a) for a in argv]])


TINY_MODEL = [
    "--n-epochs", 1, "--n-res-blocks", 1, "--n-channels", 4, "--n-unrolls", 2,
    "--n-cg-iterations", 3, "--center-keep", "2x2", "--n-val", 0,
]


@pytest.fixture
def workspace(tmp_path):
    data, omega = tmp_path / "data", tmp_path / "omega.ksp"
    assert run("simulate", "--out", data, "--n-slices", 4, "--height", 16, "--width", 16,
               "--n-coils", 2, "--noise-std", 0.01, "--seed", 1) == 0
    assert run("genmask", "--height", 16, "--width", 16, "--R", 2, "--acs-lines", 4, "--out", omega) == 0
    return tmp_path, data, omega


def _rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_unknown_flag_is_a_usage_error():
    assert run("simulate", "--bogus") == 1
    assert run("frobnicate") == 1


def test_invalid_config_value_is_a_usage_error(workspace):
    tmp, data, omega = workspace
    assert run("train", "--data", data, "--omega", omega, "--out", tmp / "m.ckpt", "--rho", "1.5") == 1


def test_missing_data_directory_is_a_usage_error(tmp_path):
    assert run("eval", "--ref", tmp_path / "nope", "--est", tmp_path, "--out", tmp_path / "m.csv") == 1


def test_corrupt_mask_is_a_data_error(workspace):
    tmp, data, _ = workspace
    bad = tmp / "bad.ksp"
    bad.write_bytes(b"not a mask")
    assert run("partition", "--omega", bad, "--out-dir", tmp / "parts") == 2


def test_genmask_writes_requested_pattern(workspace):
    _, _, omega_path = workspace
    omega = load_mask(omega_path)
    assert omega.shape == (16, 16)
    assert omega.descriptor["scheme"] == "equispaced" and omega.descriptor["R"] == "2"


def test_partition_is_byte_reproducible(workspace):
    tmp, _, omega = workspace
    for name in ("a", "b"):
        assert run("partition", "--omega", omega, "--out-dir", tmp / name, "--rho", 0.4,
                   "--center-keep", "2x2", "--seed", 5) == 0
    for part in ("theta.ksp", "lambda.ksp"):
        assert (tmp / "a" / part).read_bytes() == (tmp / "b" / part).read_bytes()
    theta, lam = load_mask(tmp / "a" / "theta.ksp"), load_mask(tmp / "a" / "lambda.ksp")
    assert not np.any(theta.grid & lam.grid)


def test_eval_of_identical_images_is_perfect(workspace):
    tmp, data, _ = workspace
    assert run("eval", "--ref", data, "--est", data, "--est-suffix", "image", "--out", tmp / "m.csv") == 0
    rows = _rows(tmp / "m.csv")
    assert len(rows) == 4
    assert all(float(r["nmse_sqnorm"]) == 0.0 and float(r["ssim"]) == 1.0 for r in rows)


def test_train_reconstruct_eval_pipeline(workspace):
    tmp, data, omega = workspace
    ckpt = tmp / "model.ckpt"
    assert run("train", "--data", data, "--omega", omega, "--out", ckpt, "--history", tmp / "h.csv",
               "--n-test", 1, *TINY_MODEL) == 0
    params, unroll = load_checkpoint(ckpt)
    assert unroll.n_unrolls == 2 and params.config.n_channels == 4
    assert (tmp / "model.ckpt.cfg").read_text().startswith("learning_rate = ")
    assert len(_rows(tmp / "h.csv")) == 1

    recon = tmp / "recon"
    assert run("reconstruct", "--data", data, "--omega", omega, "--out-dir", recon,
               "--checkpoint", ckpt, "--n-test", 1) == 0
    assert (recon / "slice_0003.recon.ksp").exists() and (recon / "slice_0003.recon.pgm").exists()

    assert run("eval", "--ref", data, "--est", recon, "--out", tmp / "metrics.csv") == 0
    rows = _rows(tmp / "metrics.csv")
    assert [r["slice_id"] for r in rows] == ["slice_0003"]
    assert np.isfinite(float(rows[0]["nmse_sqnorm"]))


def test_network_reconstruction_needs_checkpoint(workspace):
    tmp, data, omega = workspace
    assert run("reconstruct", "--data", data, "--omega", omega, "--out-dir", tmp / "r") == 1
    assert run("reconstruct", "--data", data, "--omega", omega, "--out-dir", tmp / "r",
               "--method", "cg-sense", "--cg-iterations", 10) == 0


def test_training_is_reproducible_across_invocations(workspace):
    tmp, data, omega = workspace
    for name in ("a", "b"):
        assert run("train", "--data", data, "--omega", omega, "--out", tmp / f"{name}.ckpt", *TINY_MODEL) == 0
    assert (tmp / "a.ckpt").read_bytes() == (tmp / "b.ckpt").read_bytes()


def test_sweep_csv_is_reproducible_without_timing(workspace):
    tmp, data, omega = workspace
    for name in ("a", "b"):
        assert run("sweep", "rho", "--data", data, "--omega", omega, "--out", tmp / f"{name}.csv",
                   "--n-test", 1, "--rho-list", "0.2,0.4", "--workers", 1, "--no-timing", *TINY_MODEL) == 0
    assert (tmp / "a.csv").read_bytes() == (tmp / "b.csv").read_bytes()
    assert [r["rho"] for r in _rows(tmp / "a.csv")] == ["0.2", "0.4"]


def test_sweep_without_mask_is_a_usage_error(workspace):
    tmp, data, _ = workspace
    assert run("sweep", "rho", "--data", data, "--out", tmp / "s.csv") == 1


def test_data_directory_defaults_to_settings(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "data_dir", str(tmp_path / "default_data"))
    assert run("simulate", "--n-slices", 2, "--height", 16, "--width", 16, "--n-coils", 2) == 0
    assert list_slice_ids(tmp_path / "default_data") == ["slice_0000", "slice_0001"]


def test_reconstruct_and_eval_take_no_seed(workspace):
    tmp, data, omega = workspace
    assert run("reconstruct", "--data", data, "--omega", omega, "--out-dir", tmp / "r",
               "--method", "zero-filled", "--seed", 3) == 1
    assert run("eval", "--ref", data, "--est", tmp / "r", "--out", tmp / "m.csv", "--seed", 3) == 1


def test_eval_writes_comparison_strips(workspace):
    tmp, data, omega = workspace
    assert run("reconstruct", "--data", data, "--omega", omega, "--out-dir", tmp / "zf", "--method", "zero-filled") == 0
    assert run("eval", "--ref", data, "--est", tmp / "zf", "--out", tmp / "m.csv", "--strips", tmp / "strips") == 0

    strips = sorted((tmp / "strips").glob("*.compare.pgm"))
    assert [p.name for p in strips] == [f"slice_000{i}.compare.pgm" for i in range(4)]
    with Image.open(strips[0]) as img:
        assert img.size == (48, 16)
