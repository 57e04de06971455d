import json

import numpy as np
import pytest

from fmcomp.cli import EXIT_INFEASIBLE, EXIT_MALFORMED, EXIT_OK, main
from fmcomp.formats import read_tensor, write_tensor


@pytest.fixture
def fmap(tmp_path, rng):
    path = tmp_path / "x.fmap"
    write_tensor(path, rng.normal(size=(2, 16, 16)) * 4)
    return path


def test_compress_decompress(fmap, tmp_path, capsys):
    z, out = tmp_path / "x.fmcz", tmp_path / "y.fmap"
    assert main(["compress", str(fmap), "-o", str(z), "--level", "3"]) == EXIT_OK
    assert z.read_bytes()[:4] == b"FMCZ"
    assert main(["decompress", str(z), "-o", str(out), "--frac", "8"]) == EXIT_OK
    data, frac = read_tensor(out)
    assert data.shape == (2, 16, 16) and frac == 8
    assert "ratio" in capsys.readouterr().out


def test_roundtrip(fmap, capsys):
    assert main(["roundtrip", str(fmap), "--per-channel", "--m", "10"]) == EXIT_OK
    assert "psnr" in capsys.readouterr().out


def test_run_with_report(tmp_path, fmap, rng):
    write_tensor(tmp_path / "w.fmap", rng.normal(size=(3, 2, 3, 3)))
    (tmp_path / "net.cfg").write_text("layer c conv in=2 out=3 k=3 pad=1 weights=w.fmap nl=relu\n")
    report = tmp_path / "r.json"
    rc = main(["run", str(tmp_path / "net.cfg"), str(fmap), "--report", str(report),
               "-o", str(tmp_path / "o.fmap")])
    assert rc == EXIT_OK
    d = json.loads(report.read_text())
    assert d["layers"][0]["name"] == "c" and d["summary"]["layers"] == 1
    assert read_tensor(tmp_path / "o.fmap")[0].shape == (3, 16, 16)


def test_selftest():
    assert main(["selftest"]) == EXIT_OK


def test_malformed_stream(tmp_path, fmap, capsys):
    z = tmp_path / "x.fmcz"
    main(["compress", str(fmap), "-o", str(z)])
    z.write_bytes(z.read_bytes()[:-3])
    assert main(["decompress", str(z), "-o", str(tmp_path / "y.fmap")]) == EXIT_MALFORMED
    assert "malformed" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["roundtrip", str(tmp_path / "nope.fmap")]) == EXIT_MALFORMED


def test_bad_config_line(tmp_path, fmap, capsys):
    (tmp_path / "net.cfg").write_text("\nlayer fc1 fc in=2 out=10\n")
    assert main(["run", str(tmp_path / "net.cfg"), str(fmap)]) == EXIT_MALFORMED
    assert "line 2" in capsys.readouterr().err


def test_infeasible_plan(tmp_path, capsys):
    # a 1x1 layer keeps 8 filters in flight: 8 rows x 300 x 8 x 4 B > 64 KB scratch
    write_tensor(tmp_path / "x.fmap", np.ones((1, 8, 300)))
    write_tensor(tmp_path / "w.fmap", np.ones((1, 1, 1, 1)))
    (tmp_path / "net.cfg").write_text("layer c conv in=1 out=1 k=1 weights=w.fmap\n")
    assert main(["run", str(tmp_path / "net.cfg"), str(tmp_path / "x.fmap")]) == EXIT_INFEASIBLE
    assert "infeasible" in capsys.readouterr().err
