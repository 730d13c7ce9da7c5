import csv
import json

import pytest

from abctorus.cli import main
from abctorus.persist import verify_manifest
from abctorus.render import count_rects
from conftest import CONFIGS

TOY = str(CONFIGS / "toy.json")
K2 = str(CONFIGS / "render_k2.json")
FLAGSHIP = str(CONFIGS / "flagship.json")


def _write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


STAGE = {"n": 1, "k": 2, "l": 4, "q": 2, "p": 1, "sigma": "3/8"}


# ---------------------------------------------------------------- exit codes

def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["params"])
    assert e.value.code == 2
    assert main(["verify", "--config", TOY, "--out", str(tmp_path), "--suite", "nope"]) == 2
    assert main(["params", "--config", TOY, "--out", str(tmp_path), "--stage", "9"]) == 2
    assert main(["render", "--config", TOY, "--out", str(tmp_path)]) == 2
    assert main(["orbit", "--config", TOY, "--out", str(tmp_path), "--what", "zz"]) == 2


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert "abc 0.1.0" in capsys.readouterr().out


@pytest.mark.parametrize("cfg, code", [
    ("{not json", 2),
    ({"stages": [STAGE], "bogus": 1}, 2),
    ({"stages": [dict(STAGE, k=0)]}, 2),
    ({"stages": [dict(STAGE, sigma="x/y")]}, 2),
    ({"stages": [STAGE], "seed": -1}, 2),
    ({"stages": [STAGE], "r1": 0.49, "r2": 0.45}, 2),
    ({"stages": []}, 2),
    ({"stages": [dict(STAGE, p=2)]}, 2),
    ({"stages": [dict(STAGE, sigma="1/2")]}, 2),
])
def test_config_errors(tmp_path, capsys, cfg, code):
    path = _write(tmp_path, cfg)
    assert main(["params", "--config", path, "--out", str(tmp_path / "o")]) == code
    assert "error:" in capsys.readouterr().err


def test_config_error_names_the_field(tmp_path, capsys):
    path = _write(tmp_path, {"stages": [STAGE], "samples": {"area": 0}})
    assert main(["params", "--config", path, "--out", str(tmp_path / "o")]) == 2
    assert "samples.area" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["params", "--config", str(tmp_path / "none.json")]) == 2


def test_numeric_mode_error_exits_4(tmp_path):
    path = _write(tmp_path, {"stages": [dict(STAGE, k=4, q=1, p=0)]})
    # too many boxes to draw is a usage error, not a numeric one
    assert main(["render", "--config", path, "--out", str(tmp_path / "o"),
                 "--what", "partition:zeta"]) == 2
    assert main(["verify", "--config", path, "--out", str(tmp_path / "o"),
                 "--suite", "shiftlaw", "--samples", "100"]) == 4


def test_assertion_failure_exits_3(tmp_path):
    # a loss cap far below the toy's transition mass
    path = _write(tmp_path, {"stages": [STAGE], "mixing_cap": 0.01})
    assert main(["mixing", "--config", path, "--out", str(tmp_path / "o"),
                 "--samples", "4000"]) == 3


# ---------------------------------------------------------------- params

def test_params_toy(tmp_path, capsys):
    assert main(["params", "--config", TOY, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "P3=false" in out and "P4=false" in out
    data = json.loads((tmp_path / "params.json").read_text())
    st = data["stages"][0]
    assert (st["k"], st["q"], st["shear_b"]) == (2, 2, 1)
    rows = list(csv.DictReader((tmp_path / "params.csv").open()))
    assert rows[0]["alpha_next"] == "17/32" and rows[0]["q_next"] == "32"
    assert "C_hat" in data["estimate_sources"]["1"]


def test_params_flagship(tmp_path, capsys):
    assert main(["params", "--config", FLAGSHIP, "--out", str(tmp_path)]) == 0
    assert "P3=true" in capsys.readouterr().out


# ---------------------------------------------------------------- outputs

def test_orbit_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["orbit", "--config", TOY, "--out", str(d), "--samples", "50"]) == 0
    assert (a / "orbit_f.csv").read_bytes() == (b / "orbit_f.csv").read_bytes()
    rows = list(csv.DictReader((a / "orbit_f.csv").open()))
    assert len(rows) == 51 and rows[0]["theta"] == "0.33"


def test_render_partition(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["render", "--config", K2, "--out", str(d), "--what", "partition:eta"]) == 0
    text = (a / "partition_eta.svg").read_text()
    assert count_rects(text) == 3600
    assert (a / "partition_eta.svg").read_bytes() == (b / "partition_eta.svg").read_bytes()
    rows = list(csv.reader((a / "partition_eta.csv").open()))
    assert len(rows) == 3601


def test_render_orbit_file(tmp_path):
    assert main(["orbit", "--config", TOY, "--out", str(tmp_path), "--samples", "10"]) == 0
    src = tmp_path / "orbit_f.csv"
    assert main(["render", "--config", TOY, "--out", str(tmp_path),
                 "--what", f"orbit:{src}"]) == 0
    assert (tmp_path / "orbit_orbit_f.svg").read_text().count("<circle") == 11
    assert main(["render", "--config", TOY, "--out", str(tmp_path),
                 "--what", f"orbit:{tmp_path / 'missing.csv'}"]) == 2


@pytest.mark.parametrize("argv, files", [
    (["params"], ["params.json", "params.csv"]),
    (["verify", "--suite", "partition"], ["verify_partition.json"]),
    (["approx", "--degree", "8"], ["approx.json", "approx_coefficients.csv"]),
    (["distribute", "--samples", "8000"], ["distribute_Phi.json", "distribute_Phi.jsonl"]),
    (["mixing", "--samples", "4000"], ["mixing.json", "mixing.jsonl"]),
])
def test_manifest_lists_every_output(tmp_path, argv, files):
    assert main(argv + ["--config", TOY, "--out", str(tmp_path)]) == 0
    man = tmp_path / f"manifest_{argv[0]}.json"
    data = json.loads(man.read_text())
    assert sorted(f["path"] for f in data["files"]) == sorted(files)
    assert data["artifact_version"] == "0.1.0" and len(data["config_hash"]) == 64
    assert verify_manifest(man) == []
    (tmp_path / files[0]).write_text("tampered")
    assert verify_manifest(man) == [files[0]]


def test_distribute_identity_is_not_satisfied(tmp_path):
    assert main(["distribute", "--config", TOY, "--out", str(tmp_path), "--what", "identity",
                 "--samples", "8000"]) == 0
    data = json.loads((tmp_path / "distribute_identity.json").read_text())
    assert all(not r["satisfied_within_budget"] for r in data["reports"])


def test_outputs_independent_of_worker_count(tmp_path, monkeypatch):
    outs = []
    for w in ("1", "4"):
        monkeypatch.setenv("ABC_WORKERS", w)
        d = tmp_path / w
        assert main(["mixing", "--config", TOY, "--out", str(d), "--samples", "150000"]) == 0
        assert main(["verify", "--config", TOY, "--out", str(d), "--suite", "shiftlaw",
                     "--samples", "150000"]) == 0
        outs.append(d)
    a, b = outs
    ma = json.loads((a / "mixing.json").read_text())
    mb = json.loads((b / "mixing.json").read_text())
    assert ma["report"]["workers"] == 1 and mb["report"]["workers"] == 4
    ma["report"]["workers"] = mb["report"]["workers"] = 0
    assert ma == mb
    assert (a / "mixing.jsonl").read_bytes() == (b / "mixing.jsonl").read_bytes()
    assert (a / "verify_shiftlaw.json").read_bytes() == (b / "verify_shiftlaw.json").read_bytes()


def test_seed_override_changes_samples(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["mixing", "--config", TOY, "--out", str(a), "--samples", "4000"]) == 0
    assert main(["mixing", "--config", TOY, "--out", str(b), "--samples", "4000",
                 "--seed", "7"]) == 0
    assert (a / "mixing.jsonl").read_bytes() != (b / "mixing.jsonl").read_bytes()
