import csv

import pytest

from cli_cases import error_cases, run_cli

from avsep.cli import main
from avsep.learn import LikelihoodModel
from avsep.volume import read_rvol


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.mark.parametrize("i", range(5))
def test_error_cases_exit_nonzero_with_message(workdir, i):
    name, argv, text = error_cases(workdir)[i]
    r = run_cli(*argv)
    assert r.returncode != 0, name
    assert text in r.stderr, (name, r.stderr)
    assert "Traceback" not in r.stderr


def test_in_process_errors_return_one(tmp_path, capsys):
    assert main(["segment", "--scene", str(tmp_path / "none"), "--method", "gc",
                 "--out", str(tmp_path / "x.rvol")]) == 1
    assert "avsep segment: error:" in capsys.readouterr().err


def test_gc_end_to_end_on_contact_phantom(tmp_path):
    scene, labels, report = tmp_path / "scene", tmp_path / "gc.rvol", tmp_path / "gc.csv"
    assert run_cli("phantom", "--preset", "straight-contact", "--out", scene, "--seed", 3).returncode == 0
    r = run_cli("segment", "--scene", scene, "--method", "gc", "--out", labels)
    assert r.returncode == 0, r.stderr
    assert run_cli("eval", "--scene", scene, "--result", labels, "--out", report).returncode == 0
    rows = list(csv.DictReader(open(report)))
    assert len(rows) == 1
    row = rows[0]
    assert row["scene"] == "scene" and row["method"] == "GC" and row["N"] == "3"
    assert float(row["len_both"]) < 85.0
    again = tmp_path / "gc2.rvol"
    assert run_cli("segment", "--scene", scene, "--method", "gc", "--out", again).returncode == 0
    assert labels.read_bytes() == again.read_bytes()


def test_train_and_segment_round_trip(tmp_path):
    scene = tmp_path / "s"
    assert main(["phantom", "--preset", "straight-contact", "--out", str(scene), "--size", "48",
                 "--noise", "10"]) == 0
    m1, m2 = tmp_path / "m1.json", tmp_path / "m2.json"
    for m in (m1, m2):
        assert main(["train", "--scenes", str(scene), "--out", str(m), "--saf", "--bins", "16"]) == 0
    assert m1.read_bytes() == m2.read_bytes()
    assert LikelihoodModel.load(m1).logratio.size == 16
    out = tmp_path / "l.rvol"
    assert main(["segment", "--scene", str(scene), "--model", str(m1), "--method", "ddcp-saf",
                 "--n", "1", "--gt-mask", "--out", str(out)]) == 0
    assert read_rvol(out).dims == (48, 48, 48)
    assert out.with_suffix(".json").exists()
