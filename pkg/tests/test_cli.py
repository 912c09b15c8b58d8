import json
import re

import numpy as np
import pytest

import blankcanvas.cli as cli
from blankcanvas.attack import ProtectionReport
from blankcanvas.bench import make_fixture, tamper_splice
from blankcanvas.cli import main, split_overrides
from blankcanvas.io import load_image, load_map, load_mask, save_image

SUMMARY = re.compile(r"^tampered_fraction=(\d\.\d+) threshold=(\S+)( blank)?$")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    save_image(make_fixture(3), d / "orig.png")
    save_image(make_fixture(4), d / "donor.png")
    assert main(["protect", str(d / "orig.png"), str(d / "prot.png")]) == 0
    return d


def test_protect_writes_outputs(workdir):
    assert (workdir / "prot.png").is_file()
    report = json.loads((workdir / "prot.report.json").read_text())
    assert report["psnr_db"] >= 25
    assert report["iterations"] == 200 and report["converged"]
    trace = (workdir / "prot.trace.csv").read_text().splitlines()
    assert trace[0] == "iteration,loss,blank_fraction" and len(trace) == 201
    prot, orig = load_image(workdir / "prot.png"), load_image(workdir / "orig.png")
    assert np.max(np.abs(prot - orig)) <= 16 / 255 + 1 / 510


def test_detect_untampered(workdir, capsys):
    assert main(["detect", str(workdir / "prot.png"), str(workdir / "clean")]) == 0
    m = SUMMARY.match(capsys.readouterr().out.strip())
    assert m and float(m.group(1)) < 0.02
    for suffix in (".mask.png", ".deviation.f32", ".deviation.json", ".overlay.png"):
        assert (workdir / f"clean{suffix}").is_file()
    assert load_map(workdir / "clean.deviation").shape == (64, 64)


def test_detect_splice_fraction(workdir, capsys):
    prot = load_image(workdir / "prot.png")
    tampered, gt = tamper_splice(prot, load_image(workdir / "donor.png"), (24, 30, 16, 16))
    save_image(tampered, workdir / "spliced.png")
    assert main(["detect", str(workdir / "spliced.png"), str(workdir / "sp")]) == 0
    frac = float(SUMMARY.match(capsys.readouterr().out.strip()).group(1))
    true = gt.mean()
    assert abs(frac - true) <= 0.3 * true
    mask = load_mask(workdir / "sp.mask.png")
    assert mask.mean() == pytest.approx(frac, abs=1e-6)


def test_missing_input_exit_codes(tmp_path, capsys):
    assert main(["detect", str(tmp_path / "nope.png"), str(tmp_path / "x")]) == 2
    assert "nope.png" in capsys.readouterr().err
    assert main(["protect", str(tmp_path / "nope.png"), str(tmp_path / "o.png")]) == 2
    assert main(["inspect", str(tmp_path / "nope.png")]) == 2


def test_usage_and_config_errors(workdir, tmp_path, capsys):
    src = str(workdir / "orig.png")
    assert main([]) == 1
    assert main(["protect", src]) == 1
    assert main(["protect", src, str(tmp_path / "o.png"), "--bogus", "1"]) == 1
    assert main(["protect", src, str(tmp_path / "o.png"), "--T", "0"]) == 1
    assert main(["protect", src, str(tmp_path / "o.png"), "--config", str(tmp_path / "c.toml")]) == 1
    assert "config" in capsys.readouterr().err


def test_backend_error(workdir, monkeypatch):
    monkeypatch.delenv("BLANKCANVAS_SAM_WEIGHTS", raising=False)
    assert main(["inspect", str(workdir / "orig.png"), "--backend", "sam-vith"]) == 3
    assert main(["inspect", str(workdir / "orig.png"), "--backend", "nope"]) == 3


def test_non_convergence_exit(workdir, tmp_path, monkeypatch):
    real = cli.protect

    def stalled(x, backend, cfg):
        protected, report = real(x, backend, cfg)
        report.converged = False
        return protected, report

    monkeypatch.setattr(cli, "protect", stalled)
    out = tmp_path / "o.png"
    assert main(["protect", str(workdir / "orig.png"), str(out), "--T", "3"]) == 4
    assert out.is_file()


def test_overrides_and_config_file(workdir, tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[attack]\nT = 4\n")
    out = tmp_path / "o.png"
    assert main(["protect", "--epsilon=0.03", str(workdir / "orig.png"), str(out),
                 "--config", str(cfg), "--alpha-0", "0.01"]) == 1  # unknown key spelling
    capsys.readouterr()
    assert main(["protect", "--epsilon=0.03", str(workdir / "orig.png"), str(out),
                 "--config", str(cfg), "--alpha0", "0.01"]) == 0
    report = json.loads((tmp_path / "o.report.json").read_text())
    assert report["iterations"] == 4 and report["max_abs_delta"] <= 0.03 + 1 / 510
    rest, over = split_overrides(["a", "--lambda-lfc", "0.5", "--C=-19", "--seed", "3"])
    assert rest == ["a", "--seed", "3"] and over == {"lambda_lfc": "0.5", "C": "-19"}


def test_inspect(workdir, tmp_path, capsys):
    assert main(["inspect", str(workdir / "prot.png"), "--dump", str(tmp_path / "phi")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["height"] == 64 and stats["C"] == -19.5
    assert stats["blank_fraction"] >= 0.95 and stats["mask_fraction"] < 0.05
    assert load_map(tmp_path / "phi").shape == (64, 64)


def test_batch_with_jobs(workdir, tmp_path, capsys):
    src = tmp_path / "in"
    src.mkdir()
    for i in range(2):
        save_image(make_fixture(10 + i, size=32), src / f"im{i}.png")
    assert main(["protect", str(src), str(tmp_path / "out"), "--T", "5", "--jobs", "2"]) == 0
    assert sorted(p.name for p in (tmp_path / "out").glob("*.png")) == ["im0.png", "im1.png"]
    serial = tmp_path / "serial"
    assert main(["protect", str(src / "*.png"), str(serial), "--T", "5"]) == 0
    for name in ("im0.png", "im1.png"):
        assert np.array_equal(load_image(serial / name), load_image(tmp_path / "out" / name))
    capsys.readouterr()
    assert main(["detect", str(tmp_path / "out"), str(tmp_path / "det"), "--jobs", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and all("tampered_fraction=" in ln for ln in lines)


def test_bench_generate_is_deterministic(tmp_path, capsys):
    args = ["--generate-fixtures", "--seed", "7", "--T", "5", "--repeats", "1"]
    assert main(["bench", str(tmp_path / "fx"), str(tmp_path / "r1.json"), *args]) == 0
    assert main(["bench", str(tmp_path / "fx2"), str(tmp_path / "r2.json"), *args,
                 "--csv", str(tmp_path / "r.csv")]) == 0
    r1 = json.loads((tmp_path / "r1.json").read_text())
    r2 = json.loads((tmp_path / "r2.json").read_text())
    assert r1 == r2
    assert len(r1["aggregates"]) == 8
    assert len(list((tmp_path / "fx").glob("*.png"))) == 8
    assert (tmp_path / "r.csv").is_file()
    assert "full/clean" in capsys.readouterr().out


def test_bench_missing_fixtures(tmp_path):
    assert main(["bench", str(tmp_path / "none"), str(tmp_path / "r.json")]) == 2
    (tmp_path / "few").mkdir()
    save_image(make_fixture(0), tmp_path / "few" / "a.png")
    assert main(["bench", str(tmp_path / "few"), str(tmp_path / "r.json")]) == 1


def test_report_dataclass_is_public():
    assert "converged" in ProtectionReport.__dataclass_fields__
