"""Config loading, field persistence, and the command-line surface."""
import json
import math

import numpy as np
import pytest

from epigrid.cli import main
from epigrid.config import build_config, config_digest, load_config
from epigrid.contact import GaussianContact
from epigrid.errors import ValidationError
from epigrid.fields import FieldSeries, read_fields, series_equal, write_fields
from epigrid.infectivity import AgeShifted, ConstantFixed


def _write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


# ---------------------------------------------------------------- config


def test_empty_config_gets_all_defaults():
    cfg = build_config({})
    assert cfg.grid.dim == 1 and cfg.grid.inv_mesh == 8
    assert cfg.params.gamma == 1.0 and cfg.params.horizon == 1.0
    assert cfg.kernel.bound == 1.0
    assert cfg.scale == 100 and cfg.replicates == 1
    assert cfg.pde_backend == "marching"
    assert cfg.seed == 0 and cfg.threads is None
    assert cfg.effective["params"]["nu_s"] == 0.1


def test_gamma_out_of_range_rejected():
    with pytest.raises(ValidationError, match=r"gamma must be in \[0, 1\]"):
        build_config({"params": {"gamma": 1.5}})


def test_fractional_mesh_rejected():
    with pytest.raises(ValidationError, match="integer mesh"):
        build_config({"grid": {"inv_mesh": 7.5}})


def test_declared_caps_enforced():
    with pytest.raises(ValidationError, match="beta_star"):
        build_config({"kernel": {"kind": "gaussian", "scale": 2.0,
                                 "width": 0.1},
                      "beta_star": 1.5})
    with pytest.raises(ValidationError, match="lambda_star"):
        build_config({"new_law": {"kind": "constant_fixed", "amp": 3.0,
                                  "lifetime": "inf"},
                      "lambda_star": 2.0})
    # caps that hold are fine
    build_config({"beta_star": 1.0, "lambda_star": 1.0})


def test_unknown_keys_rejected():
    with pytest.raises(ValidationError, match="unknown key grd"):
        build_config({"grd": {}})
    with pytest.raises(ValidationError, match="params.nu"):
        build_config({"params": {"nu": 0.1}})
    with pytest.raises(ValidationError, match="kernel.widht"):
        build_config({"kernel": {"kind": "gaussian", "width": 0.1,
                                 "widht": 0.2}})


def test_law_kernel_density_construction():
    cfg = build_config({
        "new_law": {"kind": "plateau_trapezoid", "amp": 1.2,
                    "plateau_lo": 0.1, "plateau_hi": 0.4, "ramp": 0.5},
        "initial_law": {"kind": "constant_fixed", "amp": 0.7,
                        "lifetime": "inf", "shift": 0.3},
        "kernel": {"kind": "gaussian", "scale": 1.4, "width": 0.2,
                   "modulation": {"base": 0.8, "amp": 0.2, "period": 2.0}},
        "densities": {"kind": "cosine", "s_mass": 0.8, "i_mass": 0.2,
                      "s_contrast": 0.3},
    })
    assert cfg.new_law.bound == pytest.approx(1.2)
    assert isinstance(cfg.initial_law, AgeShifted)
    assert isinstance(cfg.initial_law.base, ConstantFixed)
    assert isinstance(cfg.kernel, GaussianContact)
    assert cfg.kernel.mod_max() == pytest.approx(1.0)


def test_fourier_density_keys_and_schedule():
    cfg = build_config({
        "grid": {"dim": 2, "inv_mesh": 4},
        "densities": {"kind": "fourier",
                      "s_modes": {"0,0": 0.9, "1,0": [0.05, 0.0],
                                  "-1,0": [0.05, 0.0]},
                      "i_modes": {"0,0": 0.1}},
        "experiment": "lln_fixed_eps",
        "schedule": [[100, 4, 8], [400, 4, 8]],
    })
    assert cfg.densities.dim == 2
    assert cfg.schedule == [(100, 4, 8), (400, 4, 8)]
    with pytest.raises(ValidationError, match="schedule"):
        build_config({"schedule": [[100]]})
    with pytest.raises(ValidationError, match="experiment"):
        build_config({"experiment": "warp_drive"})


def test_digest_ignores_key_order_but_not_values():
    a = {"params": {"gamma": 0.5, "horizon": 2.0}, "seed": 4}
    b = {"seed": 4, "params": {"horizon": 2.0, "gamma": 0.5}}
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest({**a, "seed": 5})


def test_load_config_reports_parse_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"grid": {"dim": 1,}}')
    with pytest.raises(ValidationError, match="line 1, column"):
        load_config(str(path))
    with pytest.raises(ValidationError, match="cannot read"):
        load_config(str(tmp_path / "missing.json"))


# ---------------------------------------------------------------- fields


def _demo_series(n_t=3, shape=(2, 2)):
    rng = np.random.default_rng(0)
    times = np.linspace(0.0, 1.0, n_t)
    fields = {"S": rng.random((n_t,) + shape),
              "I": rng.random((n_t,) + shape)}
    return FieldSeries(times, shape, fields,
                       {"layer": "patch", "config": "abc", "master_seed": 7})


@pytest.mark.parametrize("fmt", ["csv", "ndjson"])
def test_round_trip_bit_exact(tmp_path, fmt):
    series = _demo_series()
    path = tmp_path / f"out.{fmt}"
    write_fields(series, path, fmt)
    back = read_fields(path)
    assert series_equal(series, back)
    assert back.meta["config"] == "abc"
    assert back.meta["layer"] == "patch"


def test_csv_layout_two_index_columns(tmp_path):
    series = _demo_series()
    path = tmp_path / "grid2d.csv"
    write_fields(series, path, "csv")
    lines = path.read_text().splitlines()
    header = [line for line in lines if not line.startswith("#")][0]
    assert header == "t,i1,i2,I,S"
    first = lines[lines.index(header) + 1].split(",")
    assert first[1:3] == ["0", "0"]
    second = lines[lines.index(header) + 2].split(",")
    assert second[1:3] == ["0", "1"]   # row-major node order


def test_empty_series_header_only(tmp_path):
    series = FieldSeries(np.zeros(0), (3,), {"S": np.zeros((0, 3))}, {})
    path = tmp_path / "empty.csv"
    write_fields(series, path, "csv")
    content = [l for l in path.read_text().splitlines()
               if not l.startswith("#")]
    assert content == ["t,i1,S"]
    assert series_equal(series, read_fields(path))
    path2 = tmp_path / "empty.ndjson"
    write_fields(series, path2, "ndjson")
    assert series_equal(series, read_fields(path2))


def test_series_shape_validation():
    with pytest.raises(ValidationError, match="shape"):
        FieldSeries(np.zeros(2), (3,), {"S": np.zeros((2, 4))})
    with pytest.raises(ValidationError, match="at least one field"):
        FieldSeries(np.zeros(2), (3,), {})


def test_shortest_round_trip_floats(tmp_path):
    value = 0.1 + 0.2   # not exactly 0.3
    series = FieldSeries(np.array([value]), (1,),
                         {"S": np.array([[math.pi]])}, {})
    path = tmp_path / "tiny.csv"
    write_fields(series, path, "csv")
    back = read_fields(path)
    assert back.times[0] == value
    assert back.fields["S"][0, 0] == math.pi


# ---------------------------------------------------------------- cli


BASE_CONFIG = {
    "grid": {"dim": 1, "inv_mesh": 4},
    "params": {"nu_s": 0.1, "nu_i": 0.15, "gamma": 0.5, "horizon": 0.5},
    "new_law": {"kind": "constant_exponential", "amp": 0.9, "rate": 0.7},
    "initial_law": {"kind": "constant_exponential", "amp": 0.6, "rate": 0.5},
    "kernel": {"kind": "gaussian", "scale": 1.2, "width": 0.15},
    "densities": {"kind": "cosine", "s_mass": 0.8, "i_mass": 0.2,
                  "s_contrast": 0.3, "i_contrast": 0.4},
    "solver": {"step": 0.015625, "modes": 8},
    "sim": {"scale": 40, "replicates": 2, "sample_count": 9},
    "seed": 31,
}


def test_cli_validate_ok(tmp_path, capsys):
    path = _write(tmp_path, "ok.json", BASE_CONFIG)
    assert main(["validate", "--config", path]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["digest"] == config_digest(BASE_CONFIG)
    assert payload["effective"]["sim"]["scale"] == 40


def test_cli_validate_names_the_violation(tmp_path, capsys):
    bad = dict(BASE_CONFIG, params={"gamma": 1.5})
    path = _write(tmp_path, "bad.json", bad)
    assert main(["validate", "--config", path]) == 1
    assert "gamma must be in [0, 1]" in capsys.readouterr().err


def test_cli_usage_errors_exit_one(tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["simulate"]) == 1   # --config required
    capsys.readouterr()


def test_cli_simulate_writes_replicates_and_repeats(tmp_path, capsys):
    path = _write(tmp_path, "c.json", BASE_CONFIG)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--config", path, "--out", out1]) == 0
    assert main(["simulate", "--config", path, "--out", out2]) == 0
    for name in ("sim_r0000.csv", "sim_r0001.csv"):
        b1 = (tmp_path / "a" / name).read_bytes()
        b2 = (tmp_path / "b" / name).read_bytes()
        assert b1 == b2 and b1
    series = read_fields(tmp_path / "a" / "sim_r0000.csv")
    assert series.meta["master_seed"] == "31"
    assert series.fields["S"].shape == (9, 4)
    capsys.readouterr()


def test_cli_seed_flag_overrides(tmp_path, capsys):
    path = _write(tmp_path, "c.json", BASE_CONFIG)
    out1, out2 = str(tmp_path / "s1"), str(tmp_path / "s2")
    assert main(["simulate", "--config", path, "--seed", "99",
                 "--out", out1]) == 0
    assert main(["simulate", "--config", path, "--out", out2]) == 0
    a = (tmp_path / "s1" / "sim_r0000.csv").read_bytes()
    b = (tmp_path / "s2" / "sim_r0000.csv").read_bytes()
    assert a != b
    capsys.readouterr()


def test_cli_event_log(tmp_path, capsys):
    cfg = dict(BASE_CONFIG, sim={"scale": 20, "replicates": 1,
                                 "sample_count": 5})
    path = _write(tmp_path, "c.json", cfg)
    out = str(tmp_path / "ev")
    assert main(["simulate", "--config", path, "--events",
                 "--out", out]) == 0
    lines = (tmp_path / "ev" / "sim_r0000.events.ndjson").read_text().splitlines()
    assert "_meta" in json.loads(lines[0])
    kinds = {json.loads(l)["kind"] for l in lines[1:]}
    assert kinds <= {"migrate_s", "migrate_i", "infect", "deactivate", "reject"}
    assert len(lines) > 1
    capsys.readouterr()


def test_cli_solve_patch_and_pde(tmp_path, capsys):
    path = _write(tmp_path, "c.json", BASE_CONFIG)
    out = str(tmp_path / "det")
    assert main(["solve-patch", "--config", path, "--out", out,
                 "--format", "ndjson"]) == 0
    patch = read_fields(tmp_path / "det" / "patch.ndjson")
    assert patch.meta["layer"] == "patch"
    assert patch.fields["S"].shape[1:] == (4,)

    assert main(["solve-pde", "--config", path, "--out", out]) == 0
    first = (tmp_path / "det" / "pde.csv").read_bytes()
    assert main(["solve-pde", "--config", path, "--out", out,
                 "--backend", "picard"]) == 0
    second = (tmp_path / "det" / "pde.csv").read_bytes()
    pde = read_fields(tmp_path / "det" / "pde.csv")
    assert pde.meta["layer"] == "pde"
    # backends agree closely but not bitwise; both files parse
    assert first != second
    capsys.readouterr()


def test_cli_numerical_failure_exit_two(tmp_path, capsys):
    cfg = dict(BASE_CONFIG)
    cfg["grid"] = {"dim": 1, "inv_mesh": 32}
    cfg["solver"] = {"step": 0.25, "modes": 8}   # breaks the step bound
    path = _write(tmp_path, "stiff.json", cfg)
    assert main(["solve-patch", "--config", path,
                 "--out", str(tmp_path)]) == 2
    assert "stability" in capsys.readouterr().err


def test_cli_lambda_bar(tmp_path, capsys):
    path = _write(tmp_path, "c.json", BASE_CONFIG)
    out = str(tmp_path / "lam")
    assert main(["lambda-bar", "--config", path, "--out", out]) == 0
    series = read_fields(tmp_path / "lam" / "lambda_bar.csv")
    assert series.shape == ()
    lam = series.fields["lambda_bar"][:, ]
    assert lam[0] == pytest.approx(0.9)
    assert np.all(np.diff(lam) < 0)   # exponential decay
    capsys.readouterr()


def test_cli_converge_runs_and_is_thread_invariant(tmp_path, capsys):
    cfg = dict(BASE_CONFIG)
    cfg["experiment"] = "lln_fixed_eps"
    cfg["schedule"] = [[20, 4, 4], [80, 4, 4]]
    cfg["solver"] = {"step": 0.015625, "modes": 8}
    path = _write(tmp_path, "plan.json", cfg)
    out1, out2 = str(tmp_path / "t1"), str(tmp_path / "t2")
    assert main(["converge", "--config", path, "--out", out1,
                 "--threads", "1"]) == 0
    assert main(["converge", "--config", path, "--out", out2,
                 "--threads", "3"]) == 0
    assert (tmp_path / "t1" / "report.json").read_bytes() == \
        (tmp_path / "t2" / "report.json").read_bytes()
    assert (tmp_path / "t1" / "report.csv").read_bytes() == \
        (tmp_path / "t2" / "report.csv").read_bytes()
    report = json.loads((tmp_path / "t1" / "report.json").read_text())
    assert report["kind"] == "lln_fixed_eps"
    assert len(report["entries"]) == 2
    rows = (tmp_path / "t1" / "report.csv").read_text().splitlines()
    assert rows[0] == "entry,N,eps,N_eps_d,field,norm,mean,stderr"
    capsys.readouterr()


def test_cli_converge_requires_plan(tmp_path, capsys):
    path = _write(tmp_path, "c.json", BASE_CONFIG)
    assert main(["converge", "--config", path, "--out", str(tmp_path)]) == 1
    assert "experiment" in capsys.readouterr().err
