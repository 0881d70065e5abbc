import csv

import numpy as np
import pytest

from cachefem.cli import main
from cachefem.mesh import read_mesh


@pytest.fixture
def casting_files(tmp_path):
    mesh = tmp_path / "cast.femesh"
    cfg = tmp_path / "cast.ini"
    assert main(["generate", "--n", "3", "-o", str(mesh), "--config-out", str(cfg)]) == 0
    return mesh, cfg


def test_generate(casting_files, capsys):
    mesh, cfg = casting_files
    m = read_mesh(mesh)
    assert m.n_elements == 6 * (5**3 - 3**3) + 6 * 27
    assert "[region 0]" in cfg.read_text()


def test_reorder(casting_files, tmp_path, capsys):
    mesh, _ = casting_files
    out = tmp_path / "rcm.femesh"
    perm = tmp_path / "perm.txt"
    pat = tmp_path / "pattern.txt"
    assert main(["reorder", str(mesh), "-o", str(out), "--permutation-out", str(perm),
                 "--pattern-out", str(pat)]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    before, after = (int(x.split("=")[1]) for x in line.split()[1:])
    assert after < before
    p = np.loadtxt(perm, dtype=int)
    assert sorted(p.tolist()) == list(range(read_mesh(mesh).n_nodes))
    rows = np.loadtxt(pat, dtype=int)
    assert np.abs(rows[:, 0] - rows[:, 1]).max() == after


def test_partition(casting_files, tmp_path, capsys):
    mesh, _ = casting_files
    pm = tmp_path / "parts.txt"
    assert main(["partition", str(mesh), "--parts", "3", "--blocks", "2", "--metrics",
                 "--partmap-out", str(pm)]) == 0
    out = capsys.readouterr().out
    assert "parts=3" in out and "augmented=True" in out and "blocks=6" in out
    parts = np.loadtxt(pm, dtype=int)
    assert set(parts.tolist()) == {0, 1, 2}
    blocks = np.loadtxt(str(pm) + ".blocks", dtype=int)
    assert set(blocks.tolist()) == set(range(6))


@pytest.mark.parametrize("workers, blocks", [("1", "1"), ("1", "3"), ("2", "2")])
def test_solve_outputs(casting_files, tmp_path, capsys, workers, blocks):
    mesh, cfg = casting_files
    series = tmp_path / "series.csv"
    field = tmp_path / "T.txt"
    sched = tmp_path / "sched.csv"
    args = ["solve", str(mesh), "--config", str(cfg), "--workers", workers, "--blocks",
            blocks, "--steps", "5", "--series-out", str(series), "--field-out", str(field)]
    if workers != "1":
        args += ["--schedule-out", str(sched)]
    assert main(args) == 0
    assert "steps=5" in capsys.readouterr().out
    with open(series) as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["step"] == "0" and rows[-1]["step"] == "5"
    assert np.loadtxt(field).size == read_mesh(mesh).n_nodes
    if workers != "1":
        assert sched.read_text().startswith("stage,workerA,workerB")


def test_solve_fields_agree_across_modes(casting_files, tmp_path):
    mesh, cfg = casting_files
    fields = []
    for w, b in (("1", "1"), ("3", "2")):
        f = tmp_path / f"T{w}{b}.txt"
        main(["solve", str(mesh), "--config", str(cfg), "--workers", w, "--blocks", b,
              "--steps", "8", "--field-out", str(f)])
        fields.append(np.loadtxt(f))
    assert np.max(np.abs(fields[0] - fields[1])) <= 1e-10 * np.max(np.abs(fields[0]))


def test_tune(casting_files, tmp_path):
    mesh, cfg = casting_files
    out = tmp_path / "tune.csv"
    assert main(["tune", str(mesh), "--config", str(cfg), "--candidates", "1,2,4",
                 "--trial-steps", "2", "-o", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["blocks"] for r in rows] == ["1", "2", "4"]


def test_errors_exit_with_status_2(casting_files, tmp_path, capsys):
    mesh, cfg = casting_files
    assert main(["solve", str(mesh), "--config", str(cfg), "--transport", "tcp",
                 "--steps", "1"]) == 2
    assert "tcp" in capsys.readouterr().err
    assert main(["reorder", str(tmp_path / "missing.femesh"), "-o", "x"]) == 2
    bad = tmp_path / "bad.femesh"
    bad.write_text("femesh 1\nnodes 1\n0 0\n")
    assert main(["reorder", str(bad), "-o", str(tmp_path / "y")]) == 2
    with pytest.raises(SystemExit):
        main(["solve", str(mesh), "--config", str(cfg), "--blocks", "zero"])
