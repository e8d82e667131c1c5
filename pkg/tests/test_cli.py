import subprocess
import sys

import numpy as np
import pytest

from acnet import checkpoint as ckpt
from acnet import data as D
from acnet.cli import main
from acnet.model import AcnetConfig, init_params, param_count


@pytest.fixture
def model_path(tmp_path):
    model = init_params(AcnetConfig(channels=4, mode="blind", scales=(2, 3, 4)), seed=4)
    # keep most outputs inside the displayable range so quantisation is exercised
    model.hffeb.t3.weight *= 0.05
    model.hffeb.t3.bias[...] = 0.5
    path = tmp_path / "model.ckpt"
    ckpt.save(path, model)
    return path


@pytest.fixture
def small_image(tmp_path, rng):
    path = tmp_path / "in.png"
    D.save_image(rng.random((16, 16, 3)), path)
    return path


def test_sr_shape_and_repeatability(tmp_path, model_path, small_image):
    outs = []
    for i in range(2):
        out = tmp_path / f"out{i}.png"
        assert main(["sr", "--checkpoint", str(model_path), "--input", str(small_image),
                     "--output", str(out), "--scale", "2"]) == 0
        outs.append(out.read_bytes())
    assert D.load_image(tmp_path / "out0.png").shape == (32, 32, 3)
    assert outs[0] == outs[1]


def test_sr_fused_matches_unfused(tmp_path, model_path, small_image):
    for name, extra in (("plain", []), ("fused", ["--fused"])):
        main(["sr", "--checkpoint", str(model_path), "--input", str(small_image),
              "--output", str(tmp_path / f"{name}.png"), "--scale", "3", *extra])
    a = D.to_uint8(D.load_image(tmp_path / "plain.png")).astype(int)
    b = D.to_uint8(D.load_image(tmp_path / "fused.png")).astype(int)
    assert ((a > 0) & (a < 255)).mean() > 0.5
    assert (a == b).mean() >= 0.999
    assert np.abs(a - b).max() <= 1


def test_sr_unsupported_scale(tmp_path, small_image):
    path = tmp_path / "x2.ckpt"
    ckpt.save(path, init_params(AcnetConfig(channels=4), seed=0))
    assert main(["sr", "--checkpoint", str(path), "--input", str(small_image),
                 "--output", str(tmp_path / "o.png"), "--scale", "3"]) == 1


def test_fuse_command(tmp_path, model_path, caplog):
    out = tmp_path / "fused.ckpt"
    assert main(["fuse", "--checkpoint", str(model_path), "--output", str(out)]) == 0
    plain, fused = ckpt.load_model(model_path), ckpt.load_model(out)
    assert fused.fused
    c = 4
    assert param_count(plain) - param_count(fused) == sum(6 * i * c + 2 * c for i in [3] + [c] * 16)
    again = tmp_path / "again.ckpt"
    with caplog.at_level("WARNING"):
        assert main(["fuse", "--checkpoint", str(out), "--output", str(again)]) == 0
    assert "already fused" in caplog.text
    assert again.read_bytes() == out.read_bytes()


def test_degrade_command(tmp_path, train_dir):
    dirs = [tmp_path / n for n in ("a", "b", "c", "d")]
    main(["degrade", "--input", str(train_dir), "--output", str(dirs[0]), "--scale", "2"])
    main(["degrade", "--input", str(train_dir), "--output", str(dirs[1]), "--scale", "2"])
    main(["degrade", "--input", str(train_dir), "--output", str(dirs[2]), "--scale", "4",
          "--sigma", "10", "--seed", "18446744073709551615"])
    main(["degrade", "--input", str(train_dir), "--output", str(dirs[3]), "--scale", "4",
          "--sigma", "10", "--seed", "18446744073709551615"])
    for path in D.list_images(train_dir):
        assert (dirs[0] / path.name).read_bytes() == (dirs[1] / path.name).read_bytes()
        assert (dirs[2] / path.name).read_bytes() == (dirs[3] / path.name).read_bytes()
        assert D.load_image(dirs[0] / path.name).shape == (100, 100, 3)
        assert D.load_image(dirs[2] / path.name).shape == (50, 50, 3)


def test_eval_bicubic_reports(tmp_path, train_dir, capsys):
    prefix = tmp_path / "rep" / "bicubic"
    assert main(["eval", "--bicubic", "--data", str(train_dir), "--scale", "2",
                 "--output", str(prefix)]) == 0
    assert "mean" in capsys.readouterr().out
    rows = (tmp_path / "rep" / "bicubic.tsv").read_text().splitlines()
    assert len(rows) == 3 and all(len(r.split("\t")) == 3 for r in rows)
    assert (tmp_path / "rep" / "bicubic.txt").exists()


def test_eval_forwards_sigma(tmp_path, train_dir):
    main(["eval", "--bicubic", "--data", str(train_dir), "--output", str(tmp_path / "clean")])
    main(["eval", "--bicubic", "--data", str(train_dir), "--sigma", "30", "--output", str(tmp_path / "noisy")])
    clean = [float(r.split("\t")[1]) for r in (tmp_path / "clean.tsv").read_text().splitlines()]
    noisy = [float(r.split("\t")[1]) for r in (tmp_path / "noisy.tsv").read_text().splitlines()]
    assert all(n < c for n, c in zip(noisy, clean))


def test_eval_model_and_usage_errors(tmp_path, train_dir, model_path):
    assert main(["eval", "--checkpoint", str(model_path), "--data", str(train_dir), "--scale", "4",
                 "--shave", "0", "--output", str(tmp_path / "m")]) == 0
    with pytest.raises(SystemExit) as e:
        main(["eval", "--data", str(train_dir)])
    assert e.value.code == 2


def test_train_command(tmp_path, train_dir):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"channels = 4\npatch = 8\nbatch = 2\nsteps = 2\ndata_dir = {train_dir}\n"
                   f"checkpoint = {tmp_path / 'c.ckpt'}\nlog = {tmp_path / 'log.tsv'}\n")
    assert main(["train", "--config", str(cfg), "--deterministic", "--seed", "5"]) == 0
    assert len((tmp_path / "log.tsv").read_text().splitlines()) == 2
    _, state, _ = ckpt.load(tmp_path / "c.ckpt")
    assert state.step == 2 and state.rng_seed == 5


def test_bad_arguments(tmp_path):
    for argv in (["sr"], ["degrade", "--input", "x", "--output", "y", "--seed", "-1"],
                 ["eval", "--bicubic", "--sigma", "-3"], ["bogus"]):
        with pytest.raises(SystemExit) as e:
            main(argv)
        assert e.value.code == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    with pytest.raises(SystemExit):
        main(["train", "--config", str(bad)])


def test_thread_env(monkeypatch, tmp_path, train_dir):
    monkeypatch.setenv("ACNET_THREADS", "1")
    assert main(["degrade", "--input", str(train_dir), "--output", str(tmp_path / "o")]) == 0
    monkeypatch.setenv("ACNET_THREADS", "zero")
    with pytest.raises(SystemExit):
        main(["degrade", "--input", str(train_dir), "--output", str(tmp_path / "o")])


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "acnet", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("train", "eval", "sr", "fuse", "degrade"):
        assert cmd in out.stdout
