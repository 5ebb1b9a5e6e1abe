import json
import subprocess
import sys

from partcert.cli import main
from partcert.network import random_network, save_network


def test_certify_writes_outputs(tmp_path, capsys):
    out = tmp_path / "res.csv"
    code = main(["certify", "--count", "2", "--methods", "lp,plp-opt", "--output", str(out)])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("problem_id,method,value")
    assert len([l for l in lines if l.startswith("nominal-")]) == 4
    assert out.exists() and (tmp_path / "res.manifest.txt").exists()


def test_certify_single_problem(tmp_path, capsys):
    save_network(random_network([2, 3], seed=1), tmp_path / "net.json")
    doc = {"network": "net.json", "lower": [0, 0], "upper": [1, 1], "cost": [1, -1, 0.5], "name": "toy"}
    (tmp_path / "p.json").write_text(json.dumps(doc))
    assert main(["certify", "--problem", str(tmp_path / "p.json"), "--methods", "lp,sdp"]) == 0
    assert "toy,sdp," in capsys.readouterr().out


def test_width_sweep(tmp_path, capsys):
    cfg = {"sizes": [2], "hidden_width": 5, "output_width": 2, "distributions": ["normal"], "timing_repeats": 1}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["sweep-width", "--config", str(tmp_path / "c.json")]) == 0
    assert "cell,lp,plp" in capsys.readouterr().out


def test_depth_sweep(tmp_path, capsys):
    cfg = {"depths": [1], "depth_width": 3, "depth_io": 2, "distributions": ["uniform"], "timing_repeats": 1}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["sweep-depth", "--config", str(tmp_path / "c.json"), "--epsilon", "0.2"]) == 0
    assert "depth-uniform-01" in capsys.readouterr().out


def test_np_fixture(capsys):
    assert main(["np-fixture", "--trials", "2", "--seed", "5"]) == 0
    assert "gadget-001" in capsys.readouterr().out


def test_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"bogus": 1}')
    assert main(["certify", "--config", str(tmp_path / "c.json")]) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path, capsys):
    assert main(["certify", "--network", str(tmp_path / "none.json")]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "partcert.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "sweep-width" in proc.stdout
