import json
import subprocess
import sys

import pytest

from thinshell import cli
from thinshell.errors import ConfigurationError, NumericalError


def _run(args, tmp_path, name="out.json"):
    out = tmp_path / name
    code = cli.main(args + ["--out", str(out)])
    return code, out.read_text() if out.exists() else None


def test_tau_report(tmp_path):
    code, text = _run(["tau", "--family", "exp", "--n", "2", "--N", "20000", "--seed", "7"], tmp_path)
    assert code == 0
    doc = json.loads(text)
    assert doc["seed"] == 7 and doc["version"] and doc["config"]["family"] == "exp"
    assert doc["result"]["N"] == 20000


def test_localize_mean_trace(tmp_path):
    code, text = _run(["localize", "--measure", "twopoint", "--paths", "400", "--t", "1", "--seed", "7"],
                      tmp_path)
    assert code == 0
    batch = json.loads(text)["result"]["batch"]
    assert batch["time_grid"][-1] == 1.0
    assert abs(batch["mean_trA"][-1] - 0.3679) < 4 * batch["se_trA"][-1]
    assert "decay" in json.loads(text)["result"]


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sweep\nseed = 3\nn = 4\nN = 5000\nfamily = cube\n")
    c = cli.parse_config(["sigma", "--config", str(cfg), "--n", "2"])
    assert (c.seed, c.n, c.N, c.family) == (3, 2, 5000, "cube")


def test_config_file_errors(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus = 1\n")
    with pytest.raises(ConfigurationError):
        cli.parse_config(["tau", "--config", str(cfg)])


def test_usage_errors_exit_1(capsys):
    assert cli.main(["tau", "--n", "0"]) == 1
    assert "n: must be >= 1" in capsys.readouterr().err
    assert cli.main(["nosuch"]) == 1
    assert cli.main(["tau", "--seed", "-1"]) == 1
    assert cli.main(["tau", "--dt", "abc"]) == 1


def test_numerical_failure_exit_2(monkeypatch, capsys):
    def boom(cfg):
        raise NumericalError("did not converge")

    monkeypatch.setitem(cli.HANDLERS, "tau", boom)
    assert cli.main(["tau"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "NumericalError" and err["exit_code"] == 2


def test_verify_failure_exit_3(monkeypatch, tmp_path):
    from thinshell import verify

    monkeypatch.setattr(verify, "CHECKS", [lambda seed: verify.CheckResult("x", False, "forced")])
    code, text = _run(["verify"], tmp_path)
    assert code == 3 and json.loads(text)["passed"] is False


def test_compare_csv(tmp_path):
    code, text = _run(["compare", "--family", "gaussian", "--n", "3", "--N", "20000", "--format", "csv"],
                      tmp_path, "out.csv")
    assert code == 0
    lines = text.splitlines()
    assert lines[0] == "n,family,norm,E_X,E_Gamma,ratio,tau_hat,bound"
    assert len(lines) == 4


def test_widths(tmp_path):
    code, text = _run(["widths", "--body", "cube", "--n", "3", "--N", "20000"], tmp_path)
    doc = json.loads(text)["result"]
    assert code == 0 and doc["L_K"] == pytest.approx(1 / (2 * 3**0.5))


def test_stopped_small_skips_conformance(tmp_path):
    code, text = _run(["stopped", "--measure", "twopoint", "--paths", "50", "--theta", "0.5"], tmp_path)
    assert code == 0
    assert json.loads(text)["result"]["conformance"].startswith("skipped")


@pytest.mark.parametrize("args", [
    ["tau", "--family", "exp", "--n", "3", "--N", "40000"],
    ["localize", "--measure", "twopoint-skew", "--paths", "2100", "--t", "0.5"],
])
def test_byte_identical_across_threads(tmp_path, args):
    texts = []
    for threads in ("1", "8"):
        _, text = _run(args + ["--threads", threads, "--seed", "11"], tmp_path, f"o{threads}.json")
        texts.append(text)
    assert texts[0] == texts[1]


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "thinshell.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
