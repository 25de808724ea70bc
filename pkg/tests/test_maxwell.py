import numpy as np
import pytest
import scipy.linalg as sla

from dispcq.errors import ConfigError, DomainError
from dispcq.materials import MaterialPair, fractional_interior, impedance_ratio, wavenumber
from dispcq.maxwell import (
    AssemblyPlan,
    PotentialEvaluator,
    QuadratureOptions,
    assemble_A,
    distance_to_surface,
    helmholtz_kernel,
    hermitian_min_eig,
)
from dispcq.mesh import icosphere
from dispcq.oracle import Harmonic, mie_traces, sphere_operator_errors
from dispcq.rt import RTSpace, pairing_load, rt_interpolate


@pytest.fixture(scope="module")
def sphere1():
    space = RTSpace(icosphere(1))
    return space, AssemblyPlan(space)


def test_kernel_values():
    assert helmholtz_kernel(1.0, [1.0, 0, 0]) == pytest.approx(np.exp(-1) / (4 * np.pi))
    x = np.array([[0, 2.0, 0], [0, 0, 0.5]])
    np.testing.assert_allclose(helmholtz_kernel(2 + 1j, x), np.exp(-(2 + 1j) * np.array([2, 0.5])) / (4 * np.pi * np.array([2, 0.5])))
    with pytest.raises(DomainError):
        helmholtz_kernel(1.0, [0, 0, 0])


def test_quadrature_options_validation():
    with pytest.raises(ConfigError):
        QuadratureOptions(far_order=4, near_order=2)
    with pytest.raises(ConfigError):
        QuadratureOptions.from_dict({"bogus": 1})


def test_operators_symmetric(sphere1):
    space, plan = sphere1
    V, K = plan.assemble([1 + 2j])[1 + 2j]
    assert np.abs(V - V.T).max() <= 1e-13 * np.abs(V).max()
    assert np.abs(K - K.T).max() <= 1e-13 * np.abs(K).max()


def test_nonpositive_wavenumber_rejected(sphere1):
    with pytest.raises(DomainError):
        sphere1[1].assemble([-1.0])


def test_quadrature_self_convergence(sphere1):
    space, plan = sphere1
    k = 1 + 2j
    ref = AssemblyPlan(space, QuadratureOptions(6, 10, 10)).assemble([k])[k]
    fine = AssemblyPlan(space, QuadratureOptions(4, 8, 8)).assemble([k])[k]
    base = plan.assemble([k])[k]
    for a, b in zip(fine, ref):
        assert np.abs(a - b).max() <= 1e-4 * np.abs(b).max()
    for a, b in zip(base, ref):
        assert np.abs(a - b).max() <= 1e-3 * np.abs(b).max()


@pytest.mark.parametrize("s", [1.0, 1 + 2j, 1 - 2j, 3.0])
@pytest.mark.parametrize("level", [0, 1])
def test_coercivity(s, level):
    space = RTSpace(icosphere(level))
    ops = assemble_A(s, fractional_interior(), MaterialPair.vacuum(), space)
    assert hermitian_min_eig(ops.A) > 0


def test_coupling_blocks_skew(sphere1):
    space, plan = sphere1
    ops = assemble_A(1.0, fractional_interior(), MaterialPair.vacuum(), space, plan)
    J = ops.coupling_part()
    assert np.abs(J + J.conj().T).max() == 0.0
    E = space.dim
    assert np.array_equal(ops.A[:E, 3 * E :], -0.5 * ops.B)


def test_impedances_and_wavenumbers_in_blocks(sphere1):
    space, plan = sphere1
    s = 2 - 1j
    inner, outer = fractional_interior(), MaterialPair.vacuum()
    ops = assemble_A(s, inner, outer, space, plan)
    assert ops.kappa_int == pytest.approx(complex(wavenumber(inner, s)))
    assert ops.z_ext == pytest.approx(complex(impedance_ratio(outer, s)))
    E = space.dim
    np.testing.assert_allclose(ops.A[E : 2 * E, E : 2 * E], -ops.V_ext / ops.z_ext)


def test_lu_matches_dense_solve(sphere1, rng):
    space, plan = sphere1
    A = assemble_A(1 + 1j, fractional_interior(), MaterialPair.vacuum(), space, plan).A
    b = rng.standard_normal(len(A)) + 1j * rng.standard_normal(len(A))
    x = sla.lu_solve(sla.lu_factor(A), b)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-9, atol=1e-12)


def test_sphere_operator_symbols_level1():
    space = RTSpace(icosphere(1))
    V, K = AssemblyPlan(space).assemble([1.0])[1.0]
    errs = sphere_operator_errors(space, 1.0, Harmonic(1, 0), V, K)
    assert max(errs.values()) < 0.12


def _jump_residuals(level, rng, k=1.0 + 0.5j):
    space = RTSpace(icosphere(level))
    m = space.mesh
    faces = np.arange(0, m.n_faces, max(1, m.n_faces // 20))
    x, n = m.centroids[faces], m.normals[faces]
    delta = 0.02 * m.h**2
    c = rng.standard_normal(space.dim)
    sp_, dp = PotentialEvaluator(space, x + delta * n).evaluate(k, c, c)
    sm, dm = PotentialEvaluator(space, x - delta * n).evaluate(k, c, c)
    phi = space.evaluate(c, faces, x)
    scale = np.linalg.norm(phi)
    return (np.linalg.norm(np.cross(sp_ - sm, n)) / scale,
            np.linalg.norm(np.cross(dp - dm, n) + phi) / scale)


def test_jump_relations_decrease():
    rng = np.random.default_rng(7)
    res = [_jump_residuals(level, rng) for level in (0, 1)]
    assert res[1][0] < res[0][0] and res[1][1] < res[0][1]
    assert res[1][1] < 0.2


def test_potentials_vanish_for_zero_density(sphere1):
    space, _ = sphere1
    ev = PotentialEvaluator(space, [[0, 0, 2.0], [0.1, 0, 0]])
    S, D = ev.evaluate(1.0, np.zeros(space.dim), np.zeros(space.dim))
    assert np.all(S == 0) and np.all(D == 0)


def test_far_target_decay(sphere1, rng):
    space, _ = sphere1
    k = 2.0
    pts = np.array([[0, 0, r] for r in (3.0, 6.0, 12.0)])
    S, D = PotentialEvaluator(space, pts).evaluate(k, rng.standard_normal(space.dim), rng.standard_normal(space.dim))
    for field in (S, D):
        mag = np.linalg.norm(field, axis=1)
        bound = np.exp(-k * (pts[:, 2] - 1)) / (pts[:, 2] - 1)
        ratio = mag / bound
        assert np.all(ratio < 10 * ratio[0])
        assert mag[2] < 1e-6 * mag[0]


def test_target_on_surface_rejected(sphere1):
    space, _ = sphere1
    with pytest.raises(DomainError):
        PotentialEvaluator(space, space.mesh.vertices[:1])


def test_distance_to_surface():
    m = icosphere(2)
    d = distance_to_surface(m, np.array([[0, 0, 3.0], [0, 0, 0]]))
    assert d[0] == pytest.approx(2.0, abs=1e-12)
    assert 0.95 < d[1] <= 1.0


def test_near_target_warns(sphere1):
    space, _ = sphere1
    x = space.mesh.centroids[:1] * 1.001
    with pytest.warns(UserWarning, match="accuracy degraded"):
        PotentialEvaluator(space, x, warn_distance=0.01)


@pytest.mark.slow
def test_mie_transmission_solve_converges():
    s, inner, outer = 1.0, fractional_interior(), MaterialPair.vacuum()
    errs = []
    for level in (1, 2):
        space = RTSpace(icosphere(level))
        A = assemble_A(s, inner, outer, space).A
        tr = mie_traces(s, inner, outer, Harmonic(1, 0), "TE")
        gE, gH = pairing_load(space, tr.gE_inc), pairing_load(space, tr.gH_inc)
        x = np.linalg.solve(A, np.concatenate([-gE / 2, -gH / 2, gE / 2, gH / 2]))
        exact = np.concatenate([rt_interpolate(space, f) for f in tr.densities()])
        E = space.dim
        blocks = [space.l2_norm(x[b * E : (b + 1) * E] - exact[b * E : (b + 1) * E])
                  / space.l2_norm(exact[b * E : (b + 1) * E]) for b in range(4)]
        errs.append(max(blocks))
    assert errs[1] < errs[0] < 0.5
