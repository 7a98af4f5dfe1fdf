import subprocess
import sys

import pytest

from conftest import tiny_config
from scenehyper.cli import main
from scenehyper.data import default_specs, save_specs
from scenehyper.harness.config import save_config


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def assert_one_line_error(code, err):
    assert code != 0
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("scenehyper: error: ")


@pytest.fixture(scope="module")
def cli_run(tiny_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    cfg = out / "tiny.cfg"
    save_config(tiny_config(), cfg)
    assert main(["train", "--config", str(cfg), "--data", str(tiny_data), "--out", str(out / "run")]) == 0
    return out / "run"


class TestSuccess:
    def test_gen(self, capsys, tmp_path):
        save_specs(default_specs(), tmp_path / "specs.json")
        code, out, _ = run(capsys, "gen", "--specs", str(tmp_path / "specs.json"), "--scenes", "5",
                           "--seed", "1", "--out", str(tmp_path / "data"))
        assert code == 0 and "wrote 5 scenes" in out
        assert len((tmp_path / "data" / "manifest.txt").read_text().splitlines()) == 5

    def test_eval(self, capsys, cli_run, tiny_data, tmp_path):
        code, out, _ = run(capsys, "eval", "--ckpt", str(cli_run / "best.ckpt"), "--data", str(tiny_data),
                           "--iou", "0.25,0.5", "--dump", str(tmp_path / "preds.txt"))
        assert code == 0 and "mAP@0.25:" in out and "mAP@0.5:" in out
        assert (tmp_path / "preds.txt").exists()

    def test_gradcheck(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--component", "head", "--seed", "1")
        assert code == 0 and out.startswith("head max_relative_error")

    def test_report(self, capsys, cli_run, tmp_path):
        code, out, _ = run(capsys, "report", "--runs", str(cli_run), "--out", str(tmp_path))
        assert code == 0 and (tmp_path / "summary.md").exists()

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "scenehyper", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "gradcheck" in proc.stdout


def error_cases(tmp, data, ckpt):
    bad_cfg = tmp / "bad.cfg"
    bad_cfg.write_text("attention = msa\nwarmup = 3\n")
    bad_specs = tmp / "bad.json"
    bad_specs.write_text("{not json")
    bad_ckpt = tmp / "bad.ckpt"
    bad_ckpt.write_bytes(b"garbage")
    bad_metrics = tmp / "badrun"
    bad_metrics.mkdir(exist_ok=True)
    (bad_metrics / "metrics.log").write_text("0 1.0 oops 0\n")
    blocker = tmp / "blocker"
    blocker.write_text("")
    cfg = tmp / "ok.cfg"
    save_config(tiny_config(), cfg)
    return {
        "no command": [],
        "unknown command": ["fly"],
        "missing option": ["gen", "--scenes", "3"],
        "bad scene count": ["gen", "--specs", "x", "--scenes", "0", "--seed", "1", "--out", str(tmp)],
        "missing specs": ["gen", "--specs", str(tmp / "none.json"), "--scenes", "2", "--seed", "1",
                          "--out", str(tmp / "o")],
        "malformed specs": ["gen", "--specs", str(bad_specs), "--scenes", "2", "--seed", "1",
                            "--out", str(tmp / "o")],
        "unwritable out": ["gen", "--specs", str(data / "specs.json"), "--scenes", "2", "--seed", "1",
                           "--out", str(blocker / "sub")],
        "missing config": ["train", "--config", str(tmp / "none.cfg"), "--data", str(data), "--out", str(tmp)],
        "unknown config key": ["train", "--config", str(bad_cfg), "--data", str(data), "--out", str(tmp)],
        "missing data": ["train", "--config", str(cfg), "--data", str(tmp / "nodata"), "--out", str(tmp)],
        "missing checkpoint": ["eval", "--ckpt", str(tmp / "none.ckpt"), "--data", str(data)],
        "corrupt checkpoint": ["eval", "--ckpt", str(bad_ckpt), "--data", str(data)],
        "bad thresholds": ["eval", "--ckpt", str(ckpt), "--data", str(data), "--iou", "0.25,abc"],
        "threshold out of range": ["eval", "--ckpt", str(ckpt), "--data", str(data), "--iou", "1.5"],
        "eval without data": ["eval", "--ckpt", str(ckpt), "--data", str(tmp / "nodata")],
        "unknown component": ["gradcheck", "--component", "optimizer"],
        "gradcheck over tolerance": ["gradcheck", "--component", "head", "--tol", "0"],
        "report missing run": ["report", "--runs", str(tmp / "norun"), "--out", str(tmp / "r")],
        "report malformed metrics": ["report", "--runs", str(bad_metrics), "--out", str(tmp / "r")],
    }


ERROR_IDS = [
    "no command", "unknown command", "missing option", "bad scene count", "missing specs",
    "malformed specs", "unwritable out", "missing config", "unknown config key", "missing data",
    "missing checkpoint", "corrupt checkpoint", "bad thresholds", "threshold out of range",
    "eval without data", "unknown component", "gradcheck over tolerance", "report missing run",
    "report malformed metrics",
]


@pytest.mark.parametrize("case", ERROR_IDS)
def test_error_paths(case, capsys, tmp_path, tiny_data, cli_run):
    argv = error_cases(tmp_path, tiny_data, cli_run / "best.ckpt")[case]
    code, _, err = run(capsys, *argv)
    assert_one_line_error(code, err)


def test_usage_errors_exit_2(capsys):
    code, _, err = run(capsys, "gen")
    assert code == 2 and err.count("\n") == 1


def test_console_script_error():
    proc = subprocess.run([sys.executable, "-m", "scenehyper", "gradcheck", "--component", "nope"],
                          capture_output=True, text=True)
    assert proc.returncode != 0
    assert len(proc.stderr.strip().splitlines()) == 1
