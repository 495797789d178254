import json

import pytest

from smaglab import solver
from smaglab.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from smaglab.config import ConfigError, ExperimentConfig, config_from_dict, load_config, parse_config

TINY = """
seed = 7

[domain]
kind = "channel"
L = 1.0
nz = 4
nx = 4

[model]
kind = "{kind}"
re = 100
cs = 0.17
C = {C}

[stepping]
dt = 0.05
t_final = 0.5
"""


def write_config(tmp_path, name="tiny.toml", kind="smagorinsky", C=1.0, extra=""):
    path = tmp_path / name
    path.write_text(TINY.format(kind=kind, C=C) + extra)
    return path


def run_json(capsys, argv):
    code = main(argv)
    return code, json.loads(capsys.readouterr().out)


# -- configuration --------------------------------------------------------------

def test_defaults_describe_the_annulus_experiment():
    cfg = ExperimentConfig()
    assert (cfg.domain.kind, cfg.domain.m, cfg.domain.n) == ("annulus", 60, 30)
    assert (cfg.model.cs, cfg.stepping.dt, cfg.stepping.t_final) == (0.17, 0.01, 10.0)
    assert cfg.burn_in == 5.0


def test_config_round_trip(tmp_path):
    cfg = load_config(write_config(tmp_path))
    text = cfg.to_toml()
    again = parse_config(text)
    assert again == cfg
    assert again.to_toml() == text
    assert cfg.model.re == 100.0 and isinstance(cfg.model.re, float)


def test_nse_forces_zero_smagorinsky_constant(tmp_path):
    cfg = load_config(write_config(tmp_path, kind="nse"))
    assert cfg.model.cs == 0.0


@pytest.mark.parametrize("data, message", [
    ({"bogus": 1}, "unknown top-level"),
    ({"model": {"nope": 1}}, "unknown keys"),
    ({"model": {"re": "high"}}, "model.re"),
    ({"model": {"kind": "les"}}, "model.kind"),
    ({"domain": {"kind": "channel", "nz": 1}}, "nz"),
    ({"stepping": {"dt": 0.0}}, "stepping"),
    ({"stepping": {"burn_in": 20.0}}, "burn_in"),
    ({"domain": {"kind": "msh-file"}}, "path"),
    ({"seed": 1.5}, "seed"),
])
def test_config_errors(data, message):
    with pytest.raises(ConfigError, match=message):
        config_from_dict(data)


def test_invalid_toml():
    with pytest.raises(ConfigError, match="invalid TOML"):
        parse_config("[model\nre = 1")


def test_delta_rules_in_config():
    cfg = config_from_dict({"model": {"delta_rule": "h-pow", "delta_value": 0.5}})
    assert cfg.delta(0.04) == pytest.approx(0.2)
    cfg = config_from_dict({"model": {"delta_rule": "fixed", "delta_value": 0.3}})
    assert cfg.delta(0.04) == 0.3


# -- bounds -----------------------------------------------------------------------

def test_bounds_single_point(capsys):
    code, out = run_json(capsys, ["bounds", "--re", "4500", "--h", "0.05", "--cs", "0.17"])
    assert code == EXIT_OK
    assert out["inputs"]["delta"] == 0.05
    assert out["normalized"]["coarse"] > 0
    assert out["region"] in {"I", "II", "III", "IV"}


def test_bounds_without_model_term_uses_resolved_form(capsys):
    code, out = run_json(capsys, ["bounds", "--re", "100", "--h", "0.001", "--cs", "0"])
    assert code == EXIT_OK
    assert out["resolved"] == 1.0


def test_bounds_missing_arguments(capsys):
    assert main(["bounds", "--re", "100"]) == EXIT_CONFIG
    assert "missing" in capsys.readouterr().err


def test_bounds_sweep(tmp_path, capsys):
    code, out = run_json(capsys, ["bounds", "--sweep", "--re-grid", "100,1000", "--h-grid", "0.001,0.01,0.1",
                                  "--svg", "--out", str(tmp_path)])
    assert code == EXIT_OK
    for name in ("surface_delta_h.csv", "surface_delta_h16.dat", "zeta_re1000.csv", "minimizers.csv", "zeta.svg"):
        assert (tmp_path / name).exists()
    assert "zeta.svg" in out["files"]


# -- mesh ---------------------------------------------------------------------------

def test_mesh_from_config(tmp_path, capsys):
    code, out = run_json(capsys, ["mesh", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "m")])
    assert code == EXIT_OK
    assert out["valid"] and out["triangles"] == 32
    assert (tmp_path / "m" / "mesh.vtk").exists()
    code, again = run_json(capsys, ["mesh", "--inspect", str(tmp_path / "m" / "mesh.msh")])
    assert code == EXIT_OK and again["hash"] == out["hash"]


def test_mesh_needs_input():
    assert main(["mesh"]) == EXIT_CONFIG


# -- run ----------------------------------------------------------------------------

def test_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    code, report = run_json(capsys, ["run", "--config", str(write_config(tmp_path)), "--out", str(out)])
    assert code == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    check = summary["bound_check"]
    assert check["branch"] == "coarse" and check["satisfied"]
    assert check["c_eps"] == summary["c_eps"] <= check["bound"]
    assert summary["burn_in"] == 0.25
    for name in ("config.toml", "series.csv", "final_state.npz"):
        assert (out / name).exists()
    assert not (out / "bound_warning.json").exists()
    assert report["error"] is None


def test_run_is_deterministic(tmp_path, capsys):
    cfg = str(write_config(tmp_path))
    for tag in ("a", "b"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / tag), "--sequential"]) == EXIT_OK
    capsys.readouterr()
    assert (tmp_path / "a" / "series.csv").read_bytes() == (tmp_path / "b" / "series.csv").read_bytes()


def test_bound_violation_is_surfaced(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(write_config(tmp_path, C=1e-9)), "--out", str(out)]) == EXIT_OK
    capsys.readouterr()
    warning = json.loads((out / "bound_warning.json").read_text())
    assert not warning["satisfied"] and warning["C"] == 1e-9
    assert not json.loads((out / "summary.json").read_text())["bound_check"]["satisfied"]


def test_solver_failure_exit_code(tmp_path, capsys, monkeypatch):
    def broken(*args, **kwargs):
        raise solver.SolverError("factorisation failed")

    monkeypatch.setattr(solver, "_direct_solve", broken)
    out = tmp_path / "run"
    assert main(["run", "--config", str(write_config(tmp_path)), "--out", str(out)]) == EXIT_SOLVER
    capsys.readouterr()
    summary = json.loads((out / "summary.json").read_text())
    assert "factorisation failed" in summary["error"]


def test_missing_config_file(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "none.toml")]) == EXIT_CONFIG
    assert "cannot read" in capsys.readouterr().err


def test_run_with_vtk_and_checkpoints(tmp_path, capsys):
    extra = "\n[outputs]\nvtk_every = 5\ncheckpoint_every = 5\nsvg = true\n"
    out = tmp_path / "run"
    assert main(["run", "--config", str(write_config(tmp_path, extra=extra)), "--out", str(out)]) == EXIT_OK
    capsys.readouterr()
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["checkpoint_000005.npz", "checkpoint_000010.npz"]
    assert (out / "vtk" / "field_000010.vtk").exists()
    assert (out / "series.svg").exists()


# -- compare and verify ---------------------------------------------------------------

def test_compare(tmp_path, capsys):
    nse = write_config(tmp_path, "nse.toml", kind="nse")
    sm = write_config(tmp_path, "sm.toml")
    out = tmp_path / "cmp"
    code, report = run_json(capsys, ["compare", "--config", str(nse), str(sm), "--out", str(out), "--svg"])
    assert code == EXIT_OK
    assert set(report) >= {"std_ke_nse", "std_ke_sm", "std_ratio", "laminarized"}
    assert (out / "compare.csv").exists() and (out / "compare.svg").exists()
    assert json.loads((out / "compare.json").read_text()) == report
    # reuse the stored series
    code, again = run_json(capsys, ["compare", "--config", str(nse), str(sm), "--out", str(out), "--reuse"])
    assert code == EXIT_OK and again["std_ratio"] == report["std_ratio"]


def test_compare_rejects_swapped_models(tmp_path):
    nse = write_config(tmp_path, "nse.toml", kind="nse")
    sm = write_config(tmp_path, "sm.toml")
    assert main(["compare", "--config", str(sm), str(nse), "--out", str(tmp_path / "c")]) == EXIT_CONFIG


def test_compare_rejects_mismatched_horizons(tmp_path):
    nse = write_config(tmp_path, "nse.toml", kind="nse")
    sm = tmp_path / "sm.toml"
    sm.write_text(TINY.format(kind="smagorinsky", C=1.0).replace("t_final = 0.5", "t_final = 1.0"))
    assert main(["compare", "--config", str(nse), str(sm), "--out", str(tmp_path / "c")]) == EXIT_CONFIG


def test_verify(tmp_path, capsys):
    code, report = run_json(capsys, ["verify", "--out", str(tmp_path), "--seed", "3"])
    assert code == EXIT_OK
    assert report["passed"] and report["seed"] == 3
    names = {c["name"] for c in report["checks"]}
    assert {"skew_symmetry", "couette_fixed_point", "energy_identity", "manufactured_order"} <= names
    assert json.loads((tmp_path / "verify.json").read_text()) == report


def test_shipped_configs_load():
    from pathlib import Path

    configs = sorted((Path(__file__).parent.parent / "configs").glob("*.toml"))
    assert configs
    kinds = {load_config(p).model.kind for p in configs}
    assert kinds == {"nse", "smagorinsky"}
