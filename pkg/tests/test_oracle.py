import numpy as np
import pytest
from scipy import special

from dispcq.errors import DomainError
from dispcq.materials import MaterialPair, MaterialSymbol, fractional_interior, wavenumber
from dispcq.oracle import (
    Harmonic,
    fractional_integral_oracle,
    mie_coefficients,
    mie_coefficients_mp,
    mie_table,
    power_integral,
    radial_factors,
    sph_i,
    sph_k,
)

Z = np.array([0.3, 1.0, 2.5 + 1j, 7.0 - 3j, 20.0])


def test_bessel_against_scipy():
    lmax = 12
    i, k = sph_i(lmax, Z), sph_k(lmax, Z)
    for l in range(lmax + 1):
        np.testing.assert_allclose(i[l], special.spherical_in(l, Z), rtol=1e-11)
        np.testing.assert_allclose(k[l], special.spherical_kn(l, Z), rtol=1e-11)


def test_bessel_small_argument_and_domain():
    assert sph_i(3, 0.0)[0] == 1.0
    assert np.all(sph_i(3, 0.0)[1:] == 0.0)
    with pytest.raises(DomainError):
        sph_k(2, -1.0)


def test_wronskian():
    # i_l k_{l+1} + i_{l+1} k_l = pi / (2 z^2)
    i, k = sph_i(8, Z), sph_k(8, Z)
    for l in range(8):
        np.testing.assert_allclose(i[l] * k[l + 1] + i[l + 1] * k[l], np.pi / (2 * Z**2), rtol=1e-10)


@pytest.mark.parametrize("s", [1.0, 1 + 2j, 3.0])
@pytest.mark.parametrize("pol", ["TE", "TM"])
def test_mie_double_precision_against_mpmath(s, pol):
    inner, outer = fractional_interior(), MaterialPair.vacuum()
    for l in (1, 3, 6):
        c = mie_coefficients(s, inner, outer, l, pol)
        R, T = mie_coefficients_mp(s, inner, outer, l, pol)
        assert abs(c.reflection - R) <= 1e-10 * max(abs(R), 1e-300)
        assert abs(c.transmission - T) <= 1e-10 * abs(T)


def test_mie_debye_law_against_mpmath():
    debye = MaterialPair(MaterialSymbol("debye", {"beta": 2.0, "lam": 0.5}), MaterialSymbol("vacuum", {}), "interior")
    c = mie_coefficients(1.5 - 1j, debye, MaterialPair.vacuum(), 2, "TM")
    R, T = mie_coefficients_mp(1.5 - 1j, debye, MaterialPair.vacuum(), 2, "TM")
    assert c.reflection == pytest.approx(R, rel=1e-10)


def test_mie_transmission_conditions():
    s, inner, outer = 2 + 1j, fractional_interior(), MaterialPair.vacuum()
    c = mie_coefficients(s, inner, outer, 2, "TE")
    ip, _, kk, _ = radial_factors(2, complex(wavenumber(outer, s)))
    im, _, _, _ = radial_factors(2, complex(wavenumber(inner, s)))
    assert ip + c.reflection * kk == pytest.approx(c.transmission * im, rel=1e-12)


@pytest.mark.parametrize("pol", ["TE", "TM"])
def test_no_contrast_gives_no_reflection(pol):
    vac = MaterialPair.vacuum()
    c = mie_coefficients(1 + 1j, MaterialPair.vacuum("interior"), vac, 2, pol)
    assert abs(c.reflection) < 1e-14
    assert c.transmission == pytest.approx(1.0, rel=1e-13)


def test_mie_table_tail():
    rows = mie_table(1.0, fractional_interior(), MaterialPair.vacuum(), lmax=15)
    assert len(rows) == 30
    tails = {(l, pol): tail for l, pol, _, tail in rows}
    assert tails[(15, "TE")] < 1e-12 and tails[(15, "TM")] < 1e-12


def test_harmonic_modes_tangential(rng):
    x = rng.standard_normal((50, 3))
    x /= np.linalg.norm(x, axis=1)[:, None]
    for h in (Harmonic(1, 0), Harmonic(3, 1)):
        for f in (h.u, h.w):
            assert np.abs(np.sum(f(x) * x, axis=1)).max() < 1e-13
        assert np.abs(np.sum(h.u(x) * h.w(x), axis=1)).max() < 1e-13


def test_harmonic_gradient_matches_finite_difference(rng):
    h = Harmonic(3, 1)
    x = rng.standard_normal((5, 3))
    eps = 1e-6
    fd = np.stack([(h.value(x + eps * e) - h.value(x - eps * e)) / (2 * eps) for e in np.eye(3)], axis=1)
    np.testing.assert_allclose(h.gradient(x), fd, rtol=1e-7, atol=1e-8)


@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_fractional_integral_closed_form(alpha):
    t = np.array([0.0, 0.3, 1.0, 2.0])
    np.testing.assert_allclose(fractional_integral_oracle(lambda r: r**3, alpha, t),
                               power_integral(3, alpha, t), rtol=1e-11, atol=1e-14)


def test_fractional_integral_rejects_alpha():
    with pytest.raises(ValueError):
        fractional_integral_oracle(np.sin, 1.5, [1.0])
