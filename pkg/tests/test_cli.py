import json
import subprocess
import sys

import pytest

from h22strip import cli


def small_config(tmp_path, **over):
    raw = json.loads(cli.default_config_text())
    raw["strip"] = {"lo": -2, "hi": 4}
    raw["sampler"] = {"burn_in": 100, "samples": 400, "thin": 2}
    raw["decay"] = {"levels": [0, 1, 2, 3]}
    raw["grid"] = {"points_per_dim": 9}
    raw["vrjp"].update({"runs": 10, "horizon": 5.0, "half_length": 10, "n_vrjp": 2000, "n_env": 400})
    raw.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return path


def test_default_config_parses():
    cfg = cli.load_config()
    assert cfg.seed == 20240611 and cfg.base.n_vertices == 2
    assert cfg.lo == -4 and cfg.hi == 10
    assert cfg.grid_spec().points_per_dim == 19


def test_verify_default_config(tmp_path, capsys):
    assert cli.main(["verify", "--output-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "verify" / "verify.json").read_text())
    assert rep["passed"] and len(rep["checks"]) == 8
    man = json.loads((tmp_path / "verify" / "manifest.json").read_text())
    assert man["config_sha256"] == cli.load_config().digest()
    assert set(man["files"]) == {"verify.json", "verify.csv"}


def test_bad_weight_is_config_error(tmp_path, capsys):
    raw = json.loads(cli.default_config_text())
    raw["base"]["beta_horizontal"] = [1.0, -0.5]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(raw))
    assert cli.main(["codec", "--config", str(path), "--output-dir", str(tmp_path)]) == 2
    assert "weights.horizontal[1]" in capsys.readouterr().err


def test_config_errors_name_the_field(tmp_path):
    good = json.loads(cli.default_config_text())
    cases = [
        ({k: v for k, v in good.items() if k != "seed"}, "seed"),
        ({**good, "seed": "x"}, "seed"),
        ({**good, "bogus": 1}, "bogus"),
        ({**good, "strip": {"lo": 1, "hi": 3}}, "strip"),
        ({**good, "sampler": {"samples": 0}}, "sampler"),
        ({**good, "grid": {"points_per_dim": 4}}, "grid"),
        ({**good, "deformation": {"eta": -1}}, "deformation"),
    ]
    for raw, name in cases:
        with pytest.raises(cli.ConfigError) as exc:
            cli.parse_config(raw)
        assert exc.value.field == name


def test_malformed_json_reports_position(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "seed": 1,\n  "base": {,}\n}')
    assert cli.main(["codec", "--config", str(path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_missing_base_file(tmp_path):
    raw = {**json.loads(cli.default_config_text()), "base_file": "nope.json"}
    raw.pop("base")
    with pytest.raises(cli.ConfigError, match="base_file"):
        cli.parse_config(raw, tmp_path)


def test_base_file_relative_to_config(tmp_path):
    raw = json.loads(cli.default_config_text())
    (tmp_path / "base.json").write_text(json.dumps(raw.pop("base")))
    raw["base_file"] = "base.json"
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    assert cli.load_config(path).base.n_vertices == 2


def test_codec_report(tmp_path):
    assert cli.main(["codec", "--output-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "codec" / "codec_report.json").read_text())
    assert rep["letters"] == 24 and rep["pairs"] == 90
    rows = (tmp_path / "codec" / "word_counts.csv").read_text().splitlines()
    assert rows[0] == "levels,words,trees" and rows[2] == "2,4,4"


def test_decay_outputs_are_reproducible(tmp_path):
    cfg = small_config(tmp_path)
    outs = []
    for name in ("a", "b"):
        assert cli.main(["decay", "--config", str(cfg), "--output-dir", str(tmp_path / name)]) == 0
        outs.append({p.name: p.read_bytes() for p in (tmp_path / name / "decay").iterdir()})
    assert outs[0] == outs[1]
    header = outs[0]["decay.csv"].decode().splitlines()[0]
    assert header == "l,estimate,stderr,n_eff"
    # a different seed changes the numbers but not the schema
    assert cli.main(["decay", "--config", str(cfg), "--seed", "5",
                     "--output-dir", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "decay" / "decay.csv").read_bytes() != outs[0]["decay.csv"]


def test_output_dir_from_environment(tmp_path, monkeypatch):
    cfg = small_config(tmp_path)
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main(["vrjp", "--config", str(cfg), "--runs", "5"]) == 0
    assert (tmp_path / "env" / "vrjp" / "trajectories.csv").exists()
    mix = json.loads((tmp_path / "env" / "vrjp" / "mixing.json").read_text())
    assert mix["passed"]


def test_spectrum_small_grid(tmp_path):
    cfg = small_config(tmp_path)
    assert cli.main(["spectrum", "--config", str(cfg), "--output-dir", str(tmp_path)]) == 0
    spec = json.loads((tmp_path / "spectrum" / "spectrum.json").read_text())
    assert spec["second_eigenvalue_abs"] < spec["lambda"]
    assert spec["c4"] > 0


def test_vrjp_flag_guards(tmp_path, capsys):
    assert cli.main(["vrjp", "--tmax", "4", "--output-dir", str(tmp_path)]) == 2
    assert cli.main(["vrjp", "--runs", "0", "--output-dir", str(tmp_path)]) == 2
    assert cli.main(["codec", "--seed", "-3", "--output-dir", str(tmp_path)]) == 2


def test_guard_exit_code(tmp_path, capsys):
    cfg = small_config(tmp_path, grid={"points_per_dim": 31})
    assert cli.main(["spectrum", "--config", str(cfg), "--output-dir", str(tmp_path)]) == 1
    assert "TransferError" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "h22strip", "--version"],
                         capture_output=True, text=True, check=True)
    assert res.stdout.strip() == "0.1.0"
