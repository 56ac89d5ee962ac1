import json

import numpy as np
import pytest

from bitpyramid.cli import main
from bitpyramid.toydata import codec_matched_image


@pytest.fixture(scope="module")
def toy_png(tmp_path_factory):
    path = tmp_path_factory.mktemp("img") / "toy.npy"
    np.save(path, codec_matched_image(np.random.default_rng(5)))
    return str(path)


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "toy.bvck"
    rc = main(["train-toy", "--mode", "tf", "--steps", "30", "--batch", "2",
               "--out", str(path), "--log-every", "0"])
    assert rc == 0
    return str(path)


def test_schedule_list_square(capsys):
    assert main(["schedule-list", "--ratio", "1.0"]) == 0
    out = capsys.readouterr().out
    assert "(64,64)" in out
    assert out.count("(") == 13
    assert "1024x1024" in out


def test_schedule_list_all_builtins(capsys):
    assert main(["schedule-list"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
    assert len(lines) == 15
    assert any("1440x720" in l and "(90,45)" in l for l in lines)


def test_params_report_headline_row(capsys):
    assert main(["params-report", "--h", "2048", "--d", "32"]) == 0
    out = capsys.readouterr().out
    assert "8,796,093,022,208" in out
    assert "131,072" in out


def test_params_report_savings_row(capsys):
    assert main(["params-report", "--h", "2048", "--d", "16"]) == 0
    out = capsys.readouterr().out
    assert "99.951%" in out


def test_entropy_bench(capsys):
    assert main(["entropy-bench", "--dims", "4,8,64", "--batch", "256"]) == 0
    out = capsys.readouterr().out
    assert "refused" in out  # exact path declines d = 64
    lines = [l for l in out.splitlines() if l.strip().startswith(("4", "8"))]
    assert len(lines) == 2


def test_encode_decode_roundtrip(tmp_path, toy_png, capsys):
    blob = tmp_path / "img.bvp"
    out = tmp_path / "back.npy"
    assert main(["encode", "--image", toy_png, "--out", str(blob),
                 "--d", "32", "--scales", "7"]) == 0
    assert main(["decode", "--container", str(blob), "--out", str(out)]) == 0
    img = np.load(toy_png)
    back = np.load(out)
    rmse = float(np.sqrt(np.mean((img - back) ** 2)))
    assert rmse < 0.06
    capsys.readouterr()


def test_encode_bsc_p_zero_byte_identical(tmp_path, toy_png, capsys):
    plain = tmp_path / "plain.bvp"
    bsc0 = tmp_path / "bsc0.bvp"
    assert main(["encode", "--image", toy_png, "--out", str(plain),
                 "--d", "32", "--scales", "7"]) == 0
    assert main(["encode", "--image", toy_png, "--out", str(bsc0),
                 "--d", "32", "--scales", "7", "--bsc-p", "0.0"]) == 0
    assert plain.read_bytes() == bsc0.read_bytes()
    capsys.readouterr()


def test_encode_bsc_positive_p_carries_trace(tmp_path, toy_png, capsys):
    plain = tmp_path / "plain.bvp"
    noisy = tmp_path / "noisy.bvp"
    assert main(["encode", "--image", toy_png, "--out", str(plain),
                 "--d", "32", "--scales", "7"]) == 0
    assert main(["encode", "--image", toy_png, "--out", str(noisy),
                 "--d", "32", "--scales", "7", "--bsc-p", "0.3", "--seed", "3"]) == 0
    assert len(noisy.read_bytes()) > len(plain.read_bytes())
    capsys.readouterr()


def test_roundtrip_report(toy_png, capsys):
    assert main(["roundtrip-report", "--image", toy_png, "--d", "32",
                 "--scales", "7"]) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.strip() and l.strip()[0].isdigit()]
    assert len(lines) == 7
    assert "bits/pixel" in out


def test_bsc_study(capsys):
    assert main(["bsc-study", "--trials", "6", "--ratios", "0.3"]) == 0
    out = capsys.readouterr().out
    assert "6/6" in out


def test_train_and_eval_toy(checkpoint, capsys):
    assert main(["eval-toy", "--ckpt", checkpoint, "--samples", "8",
                 "--gen-samples", "4"]) == 0
    out = capsys.readouterr().out
    assert "bit accuracy" in out
    assert "manifold" in out


def test_generate_outputs(tmp_path, checkpoint, capsys):
    pyr = tmp_path / "gen.bvp"
    img = tmp_path / "gen.npy"
    assert main(["generate", "--ckpt", checkpoint, "--cond-id", "1",
                 "--tau", "1.0", "--cfg-mode", "logits", "--cfg-value", "2.0",
                 "--seed", "4", "--out-pyramid", str(pyr),
                 "--out-image", str(img), "--cache"]) == 0
    assert pyr.exists() and img.exists()
    capsys.readouterr()
    # same seed without cache: byte-identical container
    pyr2 = tmp_path / "gen2.bvp"
    assert main(["generate", "--ckpt", checkpoint, "--cond-id", "1",
                 "--tau", "1.0", "--cfg-mode", "logits", "--cfg-value", "2.0",
                 "--seed", "4", "--out-pyramid", str(pyr2)]) == 0
    assert pyr.read_bytes() == pyr2.read_bytes()
    capsys.readouterr()


def test_generate_pyramid_cfg_value_syntax(tmp_path, checkpoint, capsys):
    pyr = tmp_path / "gen3.bvp"
    assert main(["generate", "--ckpt", checkpoint, "--cond-id", "2",
                 "--cfg-mode", "pyramid_logits", "--cfg-value", "1:3",
                 "--seed", "9", "--out-pyramid", str(pyr)]) == 0
    assert pyr.exists()
    capsys.readouterr()


def test_missing_file_error_is_machine_readable(tmp_path, capsys):
    rc = main(["decode", "--container", str(tmp_path / "nope.bvp"),
               "--out", str(tmp_path / "x.npy")])
    assert rc == 1
    err = capsys.readouterr().err
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"] == "missing-file"


def test_corrupt_container_error_kind(tmp_path, toy_png, capsys):
    blob = tmp_path / "img.bvp"
    main(["encode", "--image", toy_png, "--out", str(blob), "--d", "32",
          "--scales", "7"])
    data = bytearray(blob.read_bytes())
    data[30] ^= 0xFF
    blob.write_bytes(bytes(data))
    rc = main(["decode", "--container", str(blob), "--out", str(tmp_path / "x.npy")])
    assert rc == 1
    err = capsys.readouterr().err
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"] == "checksum"


def test_unknown_ratio_error(capsys):
    rc = main(["schedule-list", "--ratio", "9.99"])
    assert rc == 1
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "schedule-lookup"
