import json
import subprocess
import sys

import pytest

from homoglab import cli
from homoglab.errors import ConfigError
from homoglab.harness import DEFAULTS, KINDS, ExperimentConfig, run


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


# config validation ----------------------------------------------------------------

def test_defaults_cover_all_kinds():
    assert set(DEFAULTS) == set(KINDS)
    for kind in KINDS:
        ExperimentConfig.from_dict({"kind": kind})


@pytest.mark.parametrize("raw,field", [
    ({"kind": "g-conv", "n_list": [8, 4]}, "n_list"),
    ({"kind": "g-conv", "n_list": []}, "n_list"),
    ({"kind": "g-conv", "n_list": [0, 2]}, "n_list"),
    ({"kind": "bogus"}, "kind"),
    ({"kind": "g-conv", "colour": 1}, "colour"),
    ({"kind": "g-conv", "time": {"nu": -1}}, "time.nu"),
    ({"kind": "g-conv", "mesh": {"cells": 0}}, "mesh.cells"),
    ({"kind": "g-conv", "criteria": {"x": {"slope": [1]}}}, "criteria.x.slope"),
])
def test_invalid_fields_are_named(raw, field):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(raw)
    assert exc.value.field == field


def test_unknown_preset_is_named():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict({"kind": "g-conv", "coefficient": {"preset": "marble"}}).build_presets()
    assert "marble" in str(exc.value) and exc.value.field == "coefficient.preset"


def test_wrong_model_kind_rejected():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict({"kind": "dynamic-heat", "model": {"preset": "wave-1d"}}).build_presets()
    assert exc.value.field == "model.preset"


def test_yaml_numbers_are_coerced():
    cfg = ExperimentConfig.from_yaml("kind: g-conv\ntolerances:\n  solution_error: 1e-3\ntime:\n  nu: 2e0\n")
    assert cfg.tolerances["solution_error"] == 1e-3 and cfg.time["nu"] == 2.0


def test_malformed_yaml():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml("kind: [g-conv\n")


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict({"kind": "h-conv", "n_list": [2, 4], "seed": 3})
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


# runs ------------------------------------------------------------------------------

GCONV = "kind: g-conv\nn_list: [4, 8, 16]\nmesh:\n  cells: 2048\n"


def test_run_writes_three_files(tmp_path):
    s = run(_write(tmp_path, GCONV), out=tmp_path / "o")
    for name in ("report.csv", "report.json", "plotdata.csv"):
        assert (tmp_path / "o" / name).exists()
    data = json.loads((tmp_path / "o" / "report.json").read_text())
    assert data["schema"] == "homoglab.report/1"
    assert set(data) == {"schema", "config", "report", "timestamps"}
    csv = (tmp_path / "o" / "report.csv").read_text().splitlines()
    assert csv[0] == "# schema: homoglab.report/1" and csv[1] == "n,test-id,solution-error,flux-error,theorem"
    plot = (tmp_path / "o" / "plotdata.csv").read_text().splitlines()
    assert plot[1] == "n,error-name,value"
    assert s.exit_code == (0 if s.passed else 1)


def test_report_json_is_deterministic(tmp_path):
    cfg = _write(tmp_path, "kind: schur-suite\nn_list: [12]\nsamples: 20\n")
    run(cfg, out=tmp_path / "a", seed=5)
    run(cfg, out=tmp_path / "b", seed=5)
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    a.pop("timestamps"), b.pop("timestamps")
    assert a == b
    assert (tmp_path / "a" / "report.csv").read_text() == (tmp_path / "b" / "report.csv").read_text()


def test_schur_suite_seed_42():
    s = run({"kind": "schur-suite", "n_list": [40], "samples": 200, "out": None}, out="/tmp/homoglab-test-schur",
            seed=42)
    assert s.passed and s.scalars["max_residual"] <= 1e-10


def test_sin_harmonic_g_conv_defaults(tmp_path):
    s = run({"kind": "g-conv"}, out=tmp_path)
    assert s.passed
    assert s.scalars["final_solution_error"] <= 1e-2


def test_splitting_check(tmp_path):
    s = run({"kind": "splitting-check", "n_list": [2, 4]}, out=tmp_path)
    assert s.passed
    report = json.loads((tmp_path / "report.json").read_text())["report"]
    assert report["metadata"]["dims"]["2"] == [1, 15]      # 8 triangles, 16 field unknowns


# CLI ---------------------------------------------------------------------------------

def test_cli_exit_codes(tmp_path, capsys):
    ok = _write(tmp_path, GCONV, "ok.yaml")
    assert cli.main(["run", "--config", str(ok), "--out", str(tmp_path / "ok")]) == 0
    failing = _write(tmp_path, GCONV + "tolerances:\n  solution_error: 1e-14\n", "fail.yaml")
    assert cli.main(["run", "--config", str(failing), "--out", str(tmp_path / "f")]) == 1
    bad_kernel = _write(tmp_path, "kind: nonlocal\nkernel:\n  preset: kernel-sin\n  params:\n    amplitude: 2.0\n"
                        "n_list: [1, 2]\nmesh:\n  cells: 8\n", "k.yaml")
    assert cli.main(["run", "--config", str(bad_kernel), "--out", str(tmp_path / "k")]) == 1
    bad = _write(tmp_path, "kind: g-conv\nn_list: [3, 2]\n", "bad.yaml")
    assert cli.main(["run", "--config", str(bad)]) == 2
    assert "n_list" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["run"])
    assert exc.value.code == 2
    assert cli.main(["verify", "--only", "99"]) == 2


def test_cli_presets_lists_required_names(capsys):
    assert cli.main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in ("constant", "sin-shift", "sin-harmonic", "two-phase", "laminate", "rotation",
                 "kernel-sin", "heat-1d", "wave-1d", "maxwell-1d", "sin-products"):
        assert name in out


def test_cli_verify_single_criterion(capsys):
    assert cli.main(["verify", "--only", "5"]) == 0
    out = capsys.readouterr().out
    assert "[PASS] criterion  5" in out and "1/1 criteria passed" in out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "homoglab", "presets"], capture_output=True, text=True)
    assert res.returncode == 0 and "[coefficient]" in res.stdout


CONFIGS = sorted((__import__("pathlib").Path(__file__).parent.parent / "configs").glob("*.yaml"))


@pytest.mark.parametrize("path", CONFIGS, ids=[p.stem for p in CONFIGS])
def test_sample_configs_load(path):
    cfg = ExperimentConfig.load(path)
    cfg.build_presets()
    assert cfg.kind in KINDS


def test_2d_mesh_cap_and_policy_default(tmp_path):
    with pytest.raises(ConfigError) as exc:
        run({"kind": "h-conv", "coefficient": {"preset": "laminate"}, "mesh": {"cells": 4096}}, out=tmp_path)
    assert exc.value.field == "mesh.cells"
    s = run({"kind": "h-conv", "coefficient": {"preset": "laminate"}, "n_list": [1, 2],
             "tests": {"preset": "sin-products", "params": {"kmax": 1}}}, out=tmp_path)
    meta = json.loads((tmp_path / "report.json").read_text())["report"]["metadata"]
    assert meta["mesh_cells"] == 2 * 40 * 40 and s.passed
