import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from dispcq.cli import main
from dispcq.errors import ConfigError, MeshError
from dispcq.experiments import RunConfig, converge_time, fit_order, interpolation_ladder, run, scalar_order_study
from dispcq.oracle import Harmonic

# the level-0 sphere is coarser than the default target's distance to it
pytestmark = pytest.mark.filterwarnings("ignore:.*accuracy degraded")

SMOKE = {"geometry": {"kind": "sphere", "level": 0}, "rk": {"stages": 1}, "time": {"N": 8}}


@pytest.fixture
def smoke_config(tmp_path):
    path = tmp_path / "smoke.yaml"
    path.write_text(yaml.safe_dump(SMOKE))
    return path


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


# ---- order fits ------------------------------------------------------------------


def test_fit_order_exact_power():
    rows = [(h, 3.0 * h**2) for h in (0.5, 0.25, 0.125, 0.0625)]
    fit = fit_order(rows)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.stderr < 1e-12 and fit.n_points == 4


def test_fit_order_noisy_within_stderr():
    rng = np.random.default_rng(1)
    h = 2.0 ** -np.arange(1, 7)
    fit = fit_order(zip(h, h**3 * np.exp(0.05 * rng.standard_normal(6))))
    assert abs(fit.slope - 3.0) < 3 * fit.stderr + 1e-3


def test_fit_order_edge_cases():
    assert fit_order([(1.0, 1.0), (0.5, 0.25)]).stderr == 0.0
    assert fit_order([(1.0, 9.0), (0.5, 1.0), (0.25, 0.25)], last=2).slope == pytest.approx(2.0)
    with pytest.raises(ValueError):
        fit_order([(1.0, 1.0)])
    with pytest.raises(ValueError):
        fit_order([(1.0, 0.0), (0.5, 0.0)])


def test_scalar_order_studies():
    assert scalar_order_study(2, [16, 32, 64, 128]).slopes["err_max"].slope >= 2.7
    assert scalar_order_study(1, [16, 32, 64, 128]).slopes["err_max"].slope >= 0.9


def test_interpolation_ladder_first_order():
    h = Harmonic(2, 1)
    rep = interpolation_ladder([0, 1, 2, 3], lambda x, faces: h.u(x))
    assert rep.monotone["err_l2"]
    assert rep.slopes["err_l2"].slope > 0.9
    dofs = [r[2] for r in rep.rows]
    assert all(3.9 < b / a < 4.1 for a, b in zip(dofs, dofs[1:]))


# ---- configuration ---------------------------------------------------------------


def test_defaults_and_hash_stability():
    a = RunConfig.from_dict({})
    b = RunConfig.from_dict({"time": {"T": 8.0}})
    assert a.hash == b.hash
    assert a.data["incident"]["t0"] == 4.0 and a.data["incident"]["c"] == 10.0
    assert a.with_updates(**{"time.N": 64}).hash != a.hash


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="'time.dt'"):
        RunConfig.from_dict({"time": {"dt": 0.1}})
    with pytest.raises(ConfigError, match="geometry.gap"):
        RunConfig.from_dict({"geometry": {"kind": "sphere", "gap": 1}})


def test_invalid_material_kind_named():
    bad = {"materials": {"interior": {"epsilon": {"kind": "plasma"}, "mu": {"kind": "vacuum"}}}}
    with pytest.raises(ConfigError, match="materials.interior"):
        RunConfig.from_dict(bad)


def test_load_rejects_bad_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("time: [1, 2\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        RunConfig.load(p)


# ---- runs ------------------------------------------------------------------------


def test_smoke_run_writes_declared_files(tmp_path):
    cfg = RunConfig.from_dict(SMOKE)
    res = run(cfg, tmp_path)
    for name in ("fields.csv", "densities.bin", "densities.csv", "config.yaml", "manifest.json"):
        assert (tmp_path / name).exists()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config_hash"] == cfg.hash
    assert man["tau"] == pytest.approx(1.0) and man["N"] == 8
    assert len(man["solver"]) == man["nodes_evaluated"] == 5
    assert res.fields.E.shape == (9, 1, 3)


def test_doubling_N_halves_tau(tmp_path):
    a = run(RunConfig.from_dict(SMOKE), tmp_path / "a").manifest
    b = run(RunConfig.from_dict(SMOKE).with_updates(**{"time.N": 16}), tmp_path / "b").manifest
    assert b["tau"] == pytest.approx(a["tau"] / 2)


def test_run_errors_name_stage(tmp_path):
    cfg = RunConfig.from_dict({**SMOKE, "geometry": {"kind": "file", "path": str(tmp_path / "x.off")}})
    with pytest.raises(MeshError, match=r"^\[mesh\] mesh file"):
        run(cfg)


def test_cli_run_deterministic(smoke_config, tmp_path):
    for d in ("one", "two"):
        assert invoke("run", smoke_config, "--out", tmp_path / d).exit_code == 0
    for name in ("fields.csv", "densities.csv", "densities.bin", "config.yaml"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


# ---- command line ----------------------------------------------------------------


def test_cli_materials_check():
    r = invoke("materials", "check")
    assert r.exit_code == 0
    lines = r.output.splitlines()
    assert lines[0] == "s_re,s_im,margin_eps,margin_mu,re_wavenumber"
    assert len(lines) > 2000
    r = invoke("materials", "check", "--summary")
    assert r.exit_code == 0 and r.output.splitlines()[0] == "law,points,min_margin,ok"


def test_cli_materials_check_detects_active_law(tmp_path):
    cfg = {"materials": {"interior": {
        "epsilon": {"kind": "shifted_heaviside", "alpha1": 0.5, "alpha2": 2.0, "t_star": 1.0, "strict": False},
        "mu": {"kind": "vacuum"}}}}
    p = tmp_path / "active.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert invoke("materials", "check", "--config", p).exit_code == 3


def test_cli_config_error_exit_code(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("bogus: 1\n")
    r = invoke("run", p, "--out", tmp_path / "o")
    assert r.exit_code == 2
    assert "bogus" in r.output


def test_cli_cq_weights_headers():
    r = invoke("cq", "weights", "-m", 1, "--N", 4)
    assert r.output.splitlines()[0] == "n,re,im" and len(r.output.splitlines()) == 6
    r = invoke("cq", "weights", "-m", 2, "--N", 4)
    assert r.output.splitlines()[0] == "n,i,j,re,im" and len(r.output.splitlines()) == 1 + 5 * 4


def test_cli_cq_test_scalar():
    r = invoke("cq", "test-scalar", "-m", 2)
    assert r.exit_code == 0
    assert r.output.splitlines()[0] == "tau,error,order"
    assert float(r.output.splitlines()[-2].split(",")[2]) > 2.7


def test_cli_oracle_mie():
    r = invoke("oracle", "mie", "--s", "1+2j", "--lmax", 3)
    lines = r.output.splitlines()
    assert lines[0] == "ell,pol,re,im,tail" and len(lines) == 7
    assert invoke("oracle", "mie", "--s", "one").exit_code == 2


def test_cli_mesh_info():
    info = json.loads(invoke("mesh", "info", "--sphere", 1).output)
    assert (info["vertices"], info["edges"], info["faces"], info["euler"]) == (42, 120, 80, 2)
    info = json.loads(invoke("mesh", "info", "--two-cubes", 0.5).output)
    assert info["components"] == 2 and info["volume"] == pytest.approx(2.0)
    assert invoke("mesh", "info").exit_code == 2


def test_cli_slice(tmp_path):
    cfg = {**SMOKE, "targets": {"points": [], "plane": {"n": [5, 5]}}}
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(cfg))
    r = invoke("slice", p, "--out", tmp_path / "o")
    assert r.exit_code == 0
    head = (tmp_path / "o" / "slice.csv").read_text().splitlines()[0]
    assert head == "t,x,y,z,Ex_re,Ey_re,Ez_re,Hx_re,Hy_re,Hz_re"


def test_converge_time_small_ladder():
    rep = converge_time(RunConfig.from_dict({"geometry": {"kind": "sphere", "level": 0}}), [8, 16], 32)
    assert [r[0] for r in rep.rows] == [8, 16]
    assert rep.columns == ["N", "tau", "err_point_max", "err_density_l2", "err_density_graph"]
    assert all(rep.monotone.values())
    with pytest.raises(ConfigError):
        converge_time(RunConfig.from_dict(SMOKE), [3], 8)
