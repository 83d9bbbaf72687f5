import json
import subprocess
import sys
import textwrap

import pytest

from symfcd.cli import ConfigError, describe, main, validate

FAST = """
[[experiment]]
kind = "invariance"
model = "fig1c"
u_bar = 2.0
T = 10.0
signal = { kind = "step", before = 2.0, after = 4.0, t_switch = 1.0 }
transform = { kind = "scale", p = 2.0 }
csv = true

[[experiment]]
kind = "equivariance"
model = "fig2b"
candidate = { provenance = "lemma31", p = 2.0 }
expect = "fail"
"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return str(path)


def load(out):
    return json.loads((out / "report.json").read_text())


def test_all_as_expected_exits_zero(tmp_path):
    out = tmp_path / "out"
    assert main(["--config", write(tmp_path, FAST), "--out", str(out)]) == 0
    rep = load(out)
    assert rep["verdict"] == "PASS" and len(rep["experiments"]) == 2
    assert rep["experiments"][1]["passed"] is False and rep["experiments"][1]["as_expected"]
    assert rep["config"]["experiment"][0]["tol"] == pytest.approx(1e-6)
    names = rep["experiments"][0]["csv"]
    assert sorted(names) == ["0_invariance_fig1c_base.csv", "0_invariance_fig1c_transformed.csv"]
    assert all((out / n).exists() for n in names)


def test_unexpected_verdict_exits_one(tmp_path):
    cfg = write(tmp_path, """
        [[experiment]]
        kind = "equivariance"
        model = "fig2b"
        candidate = { provenance = "lemma31", p = 2.0 }
    """)
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out)]) == 1
    assert load(out)["verdict"] == "FAIL"


@pytest.mark.parametrize("body, code", [
    ('kind = "fcd"\nmodel = "fig9"', "unknown-model"),
    ('kind = "fcd"\nmodel = "fig1c"\nbogus = 1', "unknown-key"),
    ('kind = "nope"\nmodel = "fig1c"', "unknown-kind"),
    ('kind = "gas"\nmodel = "fig1c"', "missing-key"),
    ('kind = "gas"\nmodel = "fig1c"\nu_bar = 2.0\nN = -3', "not-positive"),
    ('kind = "fcd"\nmodel = "fig1c"\nparams = { mu = 1.0 }', "unknown-model"),
    ('kind = "steering"\nmodel = "fig1c"\ntransform = { kind = "scale", q = 2.0 }', "unknown-key"),
])
def test_config_errors_write_nothing(tmp_path, capsys, body, code):
    cfg = write(tmp_path, "[[experiment]]\n" + body + "\n")
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out)]) == 2
    assert not out.exists()
    err = json.loads(capsys.readouterr().err)["error"]
    assert err["code"] == code and err["index"] == 0


def test_invalid_later_entry_blocks_earlier_ones(tmp_path):
    cfg = write(tmp_path, FAST + '\n[[experiment]]\nkind = "fcd"\nmodel = "nope"\n')
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out)]) == 2
    assert not out.exists()


def test_toml_syntax_error(tmp_path):
    assert main(["--config", write(tmp_path, "[[experiment]\n"), "--out", str(tmp_path / "o")]) == 2


def test_numeric_error_exits_three(tmp_path):
    cfg = write(tmp_path, """
        [[experiment]]
        kind = "gas"
        model = "fig1a"
        u_bar = 2.0
        N = 2
        reduction = true
    """)
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out)]) == 3
    rep = load(out)
    assert rep["verdict"] == "ERROR" and rep["experiments"][0]["error"]["code"] == "form-mismatch"


def test_seed_override_is_echoed(tmp_path):
    out = tmp_path / "out"
    assert main(["--config", write(tmp_path, FAST), "--out", str(out), "--seed", "11"]) == 0
    assert all(e["seed"] == 11 for e in load(out)["config"]["experiment"])


def test_validate_fills_defaults():
    res = validate({"experiment": [{"kind": "fcd", "model": "fig2a"}]}, None)
    exp = res["experiment"][0]
    assert exp["label"] == "fcd_fig2a" and exp["expect"] == "pass" and exp["T"] == 30.0


def test_validate_rejects_empty():
    with pytest.raises(ConfigError):
        validate({}, None)


def test_describe_and_list_models(capsys):
    assert "witness" in describe("accessibility")
    assert main(["--describe", "bogus"]) == 2
    assert main(["--list-models"]) == 0
    assert "fig2b" in capsys.readouterr().out


def test_missing_config_is_usage_error():
    assert main([]) == 2
    assert main(["--config", "x.toml", "--jobs", "0"]) == 2


def test_parallel_matches_serial(tmp_path):
    cfg = write(tmp_path, FAST)
    assert main(["--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["--config", cfg, "--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    assert "wall_clock_s" in json.loads((tmp_path / "a" / "timing.json").read_text())


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "symfcd.cli", "--config", write(tmp_path, FAST),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0 and "verdict: PASS" in proc.stdout


def test_out_key_used_without_flag(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write(tmp_path, f'out = "from_cfg"\n{FAST}')
    assert main(["--config", cfg]) == 0
    assert (tmp_path / "from_cfg" / "report.json").exists()
    assert main(["--config", cfg, "--out", "flag"]) == 0
    assert (tmp_path / "flag" / "report.json").exists()
