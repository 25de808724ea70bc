import dataclasses

import numpy as np
import pytest

from dispcq.cq import CQGrid
from dispcq.errors import ConfigError
from dispcq.materials import MaterialPair
from dispcq.maxwell import AssemblyPlan
from dispcq.mesh import icosphere
from dispcq.rt import rt_interpolate
from dispcq.scattering import (
    IncidentWave,
    ScatterRun,
    incident_trace,
    plane_grid,
    reconstruct_fields,
    side_of,
    slice_points,
    solve_scattering,
)


@pytest.fixture(scope="module")
def base_run():
    run = ScatterRun.standard(icosphere(0), N=32)
    plan = AssemblyPlan(run.space)
    return run, plan, solve_scattering(run, plan=plan)


def test_wave_validation():
    with pytest.raises(ConfigError, match="transversal"):
        IncidentWave(p=(1, 0, 0), d=(1, 0, 0))
    with pytest.raises(ConfigError, match="unit length"):
        IncidentWave(d=(0, 0, 2))
    with pytest.raises(ConfigError):
        IncidentWave.from_dict({"speed": 1})


def test_default_wave_geometry():
    w = IncidentWave()
    np.testing.assert_allclose(w.h_polarization, [0, 1, 0], atol=1e-15)
    x = np.array([[0.3, 0.1, -0.2]])
    t = 4.2
    assert w.E(x, t)[0] @ w.H(x, t)[0] == pytest.approx(0.0, abs=1e-15)
    assert IncidentWave.from_dict(w.to_dict()) == w


def test_trace_vanishes_initially(base_run):
    run, _, _ = base_run
    rhs = incident_trace(run.wave, run.space, run.grid, run.tableau)
    assert np.abs(rhs[0]).max() <= 1e-8 * np.abs(rhs).max()
    E = run.space.dim
    np.testing.assert_array_equal(rhs[..., : 2 * E], -rhs[..., 2 * E :])


def test_zero_wave_gives_zero_densities(base_run):
    run, plan, _ = base_run
    quiet = dataclasses.replace(run, wave=IncidentWave(amplitude=0.0))
    assert np.all(solve_scattering(quiet, plan=plan).signal == 0)


def test_linearity_in_amplitude(base_run):
    run, plan, hist = base_run
    loud = dataclasses.replace(run, wave=IncidentWave(amplitude=2.5))
    y = solve_scattering(loud, plan=plan).signal
    assert np.abs(y - 2.5 * hist.signal).max() <= 1e-10 * np.abs(y).max()


def test_solver_stats(base_run):
    run, _, hist = base_run
    st = hist.stats
    assert st["nodes_evaluated"] == run.grid.N // 2 + 1
    assert max(s["residual"] for s in st["solves"]) < 1e-10


def test_time_translation(base_run):
    run, plan, hist = base_run
    shift = 3
    later = dataclasses.replace(run, wave=IncidentWave(t0=run.wave.t0 + shift * run.grid.tau))
    y = solve_scattering(later, plan=plan).values()
    x = hist.values()
    peak = np.abs(x).max()
    assert np.abs(y[shift:] - x[:-shift]).max() <= 1e-6 * peak


@pytest.mark.filterwarnings("ignore:.*accuracy degraded")
def test_causality_before_arrival(base_run):
    run, _, hist = base_run
    target = np.array([[0.0, 0.0, 2.0]])
    fields = reconstruct_fields(hist, target, run.interior, run.exterior)
    dist = 1.0
    arrival = run.wave.t0 - 1.0 + dist
    early = fields.times < arrival - 5 / np.sqrt(run.wave.c)
    peak = np.abs(fields.E).max()
    assert early.sum() > 5
    assert np.abs(fields.E[early]).max() <= 1e-6 * peak
    assert np.abs(fields.H[early]).max() <= 1e-6 * np.abs(fields.H).max()


def test_no_contrast_scattered_densities_decrease():
    vac_in = MaterialPair.vacuum("interior")
    rel = []
    for level in (0, 1):
        run = ScatterRun.standard(icosphere(level), N=16, interior=vac_in)
        v = solve_scattering(run).values()
        E = run.space.dim
        rel.append(np.abs(v[:, : 2 * E]).max() / np.abs(v[:, 2 * E :]).max())
    assert rel[1] < rel[0] < 0.5


def test_no_contrast_interior_blocks_match_incident_traces():
    run = ScatterRun.standard(icosphere(1), N=32, interior=MaterialPair.vacuum("interior"))
    hist = solve_scattering(run)
    n = int(np.argmax(np.abs(hist.values()).max(axis=1)))
    t = run.grid.times[n]
    mesh = run.space.mesh

    def trace(field):
        return lambda x, faces: np.cross(field(x, t), mesh.normals[faces])

    phi = rt_interpolate(run.space, lambda x, f: -trace(run.wave.H)(x, f))
    psi = rt_interpolate(run.space, trace(run.wave.E))
    v = hist.values()[n]
    for got, want in ((hist.block("phi-", v), phi), (hist.block("psi-", v), psi)):
        assert run.space.l2_norm(got - want) <= 0.25 * run.space.l2_norm(want)


def test_no_contrast_interior_field_is_incident():
    run = ScatterRun.standard(icosphere(1), N=32, interior=MaterialPair.vacuum("interior"))
    hist = solve_scattering(run)
    origin = np.zeros((1, 3))
    f = reconstruct_fields(hist, origin, run.interior, run.exterior)
    exact = run.wave.E(origin, f.times[:, None])[:, 0]
    assert np.abs(f.E[:, 0] - exact).max() <= 0.15 * np.abs(exact).max()


def test_side_of():
    m = icosphere(1)
    np.testing.assert_array_equal(side_of(m, [[0, 0, 0], [0, 0, 2.0], [0.5, 0.5, 0.0]]), [-1, 1, -1])


def test_history_dump_round_trip(base_run, tmp_path):
    _, _, hist = base_run
    hist.dump(tmp_path / "dens")
    raw = np.fromfile(tmp_path / "dens.bin", dtype="<f8").reshape(hist.values().shape)
    np.testing.assert_array_equal(raw, hist.values())
    head = (tmp_path / "dens.csv").read_text().splitlines()
    assert head[0] == "step,t,offset_bytes,length"
    assert len(head) == hist.grid.N + 2


@pytest.mark.filterwarnings("ignore:.*accuracy degraded")
def test_field_csv_columns(base_run, tmp_path):
    run, _, hist = base_run
    f = reconstruct_fields(hist, [[0, 0, 2.0]], run.interior, run.exterior)
    f.write_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "t,x,y,z,Ex_re,Ey_re,Ez_re,Hx_re,Hy_re,Hz_re"
    assert len(lines) == run.grid.N + 2


def test_plane_grid_and_slice():
    pts = plane_grid("y", 0.5, n=(5, 7))
    assert pts.shape == (35, 3) and np.all(pts[:, 1] == 0.5)
    m = icosphere(1)
    kept = slice_points(m, pts)
    assert 0 < len(kept) < len(pts)


def test_grid_must_fit_signal(base_run):
    run, plan, _ = base_run
    other = dataclasses.replace(run, grid=CQGrid(8.0, 16))
    rhs = incident_trace(run.wave, run.space, run.grid, run.tableau)
    with pytest.raises(ValueError):
        solve_scattering(other, rhs=rhs, plan=plan)
