"""Reference solutions: modal actions on the unit sphere, Mie transmission
coefficients at complex frequencies, and scalar fractional-integral values.

Modified spherical Bessel functions follow the normalisation
i_0(z) = sinh(z)/z and k_0(z) = (pi/2) exp(-z)/z, for which

    G(k, |x - y|) = (2k/pi) sum_l i_l(k r<) k_l(k r>) sum_m Y_lm(x^) conj Y_lm(y^).

On the unit sphere write u = grad_G Y and w = n x grad_G Y for a spherical
harmonic Y of degree l, f for a radial function at r = 1 and g = f + k f'
(the derivative of r f(k r) at r = 1).  Then, with the Galerkin conventions
of :mod:`dispcq.maxwell`,

    V u = a w,  V w = b u,  K u = c u,  K w = -c w,
    a = -(2/pi) g_i g_k,  b = -(2 k^2/pi) i_l k_l,  c = -(k/pi)(i_l g_k + k_l g_i).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NumericalError
from .materials import MaterialPair, eval_epsilon, impedance_ratio, wavenumber
from .quadrature import chart, gauss01, triangle_rule


def sph_k(lmax: int, z):
    """k_0..k_lmax at complex z (upward recurrence, stable for Re z > 0)."""
    z = np.asarray(z, dtype=complex)
    if np.any(z.real <= 0):
        raise DomainError("modified spherical Bessel functions need Re z > 0")
    out = np.empty((lmax + 1,) + z.shape, complex)
    e = 0.5 * np.pi * np.exp(-z)
    out[0] = e / z
    if lmax >= 1:
        out[1] = e * (1.0 / z + 1.0 / z**2)
    for l in range(1, lmax):
        out[l + 1] = out[l - 1] + (2 * l + 1) / z * out[l]
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"k_l overflow for lmax={lmax}")
    return out


def sph_i(lmax: int, z):
    """i_0..i_lmax at complex z (Miller downward recurrence normalised by i_0)."""
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        out = np.zeros((lmax + 1,) + z.shape, complex)
        out[0] = 1.0
        nz = z != 0
        if np.any(nz):
            out[:, nz] = sph_i(lmax, z[nz])
        return out
    start = lmax + 20 + int(np.max(np.abs(z)))
    out = np.zeros((lmax + 1,) + z.shape, complex)
    nxt = np.zeros(z.shape, complex)
    cur = np.full(z.shape, 1e-300, complex)
    for l in range(start, 0, -1):
        prev = nxt + (2 * l + 1) / z * cur  # i_{l-1}
        nxt, cur = cur, prev
        # rescale to dodge overflow
        big = np.abs(cur) > 1e250
        if np.any(big):
            scale = np.where(big, 1e-250, 1.0)
            cur, nxt, out = cur * scale, nxt * scale, out * scale
        if l - 1 <= lmax:
            out[l - 1] = cur
    small = np.abs(z) < 1e-3
    i0 = np.where(small, 1 + z**2 / 6 + z**4 / 120, np.sinh(z) / np.where(small, 1, z))
    return out * (i0 / out[0])


def _with_derivatives(vals, z, kind):
    """(f_l, f_l') for l = 0..lmax; needs one extra order in ``vals``."""
    lmax = vals.shape[0] - 2
    f = vals[: lmax + 1]
    d = np.empty_like(f)
    l = np.arange(lmax + 1).reshape((-1,) + (1,) * np.ndim(z))
    if kind == "i":
        d[0] = vals[1]
        d[1:] = vals[:lmax] - (l[1:] + 1) / z * vals[1 : lmax + 1]
    else:
        d[0] = -vals[1]
        d[1:] = -vals[:lmax] - (l[1:] + 1) / z * vals[1 : lmax + 1]
    return f, d


def radial_factors(l: int, k):
    """(i_l, g_i, k_l, g_k) at r = 1 for wavenumber k."""
    k = complex(k)
    fi, di = _with_derivatives(sph_i(l + 1, k), k, "i")
    fk, dk = _with_derivatives(sph_k(l + 1, k), k, "k")
    return fi[l], fi[l] + k * di[l], fk[l], fk[l] + k * dk[l]


def sphere_symbols(l: int, k):
    """(a, b, c): actions of V and K on degree-l modes of the unit sphere."""
    i_l, gi, k_l, gk = radial_factors(l, k)
    k = complex(k)
    a = -(2 / np.pi) * gi * gk
    b = -(2 * k * k / np.pi) * i_l * k_l
    c = -(k / np.pi) * (i_l * gk + k_l * gi)
    return a, b, c


# ---- harmonic test functions on the unit sphere ---------------------------


@dataclass(frozen=True)
class Harmonic:
    """Degree-l solid harmonic Re((x + i y)^l) or Re((x + i y)^(l-1)) z
    (``family`` 0 or 1), restricted to the unit sphere."""

    l: int
    family: int = 0

    def __post_init__(self):
        if self.l < 1 or self.family not in (0, 1):
            raise ValueError("need l >= 1 and family in {0, 1}")

    def value(self, x):
        zeta = x[:, 0] + 1j * x[:, 1]
        if self.family == 0:
            return np.real(zeta**self.l)
        return np.real(zeta ** (self.l - 1)) * x[:, 2]

    def gradient(self, x):
        zeta = x[:, 0] + 1j * x[:, 1]
        out = np.zeros_like(x)
        if self.family == 0:
            w = self.l * zeta ** (self.l - 1)
            out[:, 0], out[:, 1] = w.real, (1j * w).real
        else:
            n = self.l - 1
            w = n * zeta ** (n - 1) if n > 0 else np.zeros_like(zeta)
            out[:, 0], out[:, 1] = (w * x[:, 2]).real, (1j * w * x[:, 2]).real
            out[:, 2] = np.real(zeta**n)
        return out

    def surface_gradient(self, x):
        """grad_G Y on the unit sphere at points x (projected radially first)."""
        xh = x / np.linalg.norm(x, axis=1)[:, None]
        g = self.gradient(xh)
        # degree-l homogeneity: the radial derivative is l Y
        return g - xh * np.sum(xh * g, axis=1)[:, None]

    def u(self, x):
        return self.surface_gradient(x)

    def w(self, x):
        xh = x / np.linalg.norm(x, axis=1)[:, None]
        return np.cross(xh, self.surface_gradient(x))


def mode_field(h: Harmonic, kind: str):
    """Tangential field evaluator ``f(points, faces)`` for u- or w-type modes."""
    fn = h.u if kind == "u" else h.w
    return lambda x, faces=None: fn(x)


def arc_interpolate(space, fn, n: int = 6) -> np.ndarray:
    """RT0 coefficients from the flux of ``fn`` through the great-circle arcs
    over the mesh edges, with the field pulled back by the radial projection.

    For a sphere mesh this is the natural interpolant of a field defined on
    the exact sphere; it avoids the O(h) geometric error of sampling on flat faces.
    """
    m = space.mesh
    g, gw = gauss01(n)
    a = m.vertices[m.edges[:, 0]]
    b = m.vertices[m.edges[:, 1]]
    fp = space.plus_minus_faces[:, 0]
    pts = a[:, None, :] + g[None, :, None] * (b - a)[:, None, :]
    r = np.linalg.norm(pts, axis=2)
    xh = pts / r[..., None]
    tangent = ((b - a)[:, None, :] - xh * np.sum(xh * (b - a)[:, None, :], axis=2)[..., None]) / r[..., None]
    conormal = np.cross(tangent, xh)
    sign = np.sign(np.sum(conormal[:, 0, :] * (a - m.centroids[fp]), axis=1))
    conormal *= sign[:, None, None]
    v = fn(xh.reshape(-1, 3)).reshape(conormal.shape)
    return np.einsum("q,eqx,eqx->e", gw, v, conormal) / m.edge_lengths


def piola_load(space, fn, order: int = 6) -> np.ndarray:
    """Pairings [phi_i, rotated target] for a target field on the exact sphere.

    Returns l_i = int_S (P phi_i) . fn with P the radial Piola pull-forward,
    so that solving with the mass matrix yields the L2 projection of ``fn``.
    """
    m = space.mesh
    ref, w = triangle_rule(order)
    x = chart(m.corners, ref)
    F, q = x.shape[:2]
    faces = np.repeat(np.arange(F), q)
    pts = x.reshape(-1, 3)
    r = np.linalg.norm(pts, axis=1)
    xh = pts / r[:, None]
    phi = space.basis_at(faces, pts)
    phi = (phi - xh[:, None, :] * np.einsum("nkx,nx->nk", phi, xh)[:, :, None]) / r[:, None, None]
    vals = np.einsum("nkx,nx->nk", phi, fn(xh)) * (w[None, :] * 2 * m.areas[:, None]).reshape(-1)[:, None]
    out = np.zeros(space.dim, complex)
    np.add.at(out, m.face_edges[faces].ravel(), vals.ravel())
    return out


def sphere_operator_errors(space, k, harmonic: Harmonic, V, K) -> dict:
    """Relative L2 errors of the Galerkin actions of V(k), K(k) on the u and w
    modes of ``harmonic`` against the modal symbols.

    Galerkin rows are tested with the pairing, so M^-1 (V c) approximates
    nu x (V u); since nu x w = -u and nu x u = w the rotated images are again
    modes.  Keys are ("V" | "K", "u" | "w").
    """
    from scipy.sparse.linalg import splu

    M = splu(space.mass_matrix.tocsc().astype(complex))
    a, b, c = sphere_symbols(harmonic.l, k)
    images = {
        ("V", "u"): lambda x: -a * harmonic.u(x),
        ("V", "w"): lambda x: b * harmonic.w(x),
        ("K", "u"): lambda x: c * harmonic.w(x),
        ("K", "w"): lambda x: c * harmonic.u(x),
    }
    Mm = space.mass_matrix
    out = {}
    for (op, kind), image in images.items():
        coeff = arc_interpolate(space, harmonic.u if kind == "u" else harmonic.w)
        mat = V if op == "V" else K
        z = M.solve(mat @ coeff)
        zr = M.solve(piola_load(space, image))
        d = z - zr
        out[(op, kind)] = float(np.sqrt(abs(np.vdot(d, Mm @ d)) / abs(np.vdot(zr, Mm @ zr))))
    return out


# ---- Mie transmission -------------------------------------------------------


@dataclass(frozen=True)
class ModalCoefficients:
    l: int
    pol: str
    reflection: complex
    transmission: complex


def mie_coefficients(s, interior: MaterialPair, exterior: MaterialPair, l: int, pol: str):
    """Scattered (k_l, exterior) and interior (i_l) amplitudes for a unit incident
    regular mode of degree l.  ``pol`` is 'TE' (E of M-type) or 'TM' (H of M-type)."""
    s = complex(s)
    kp = complex(wavenumber(exterior, s))
    km = complex(wavenumber(interior, s))
    ip, gip, kkp, gkp = radial_factors(l, kp)
    im, gim, _, _ = radial_factors(l, km)
    if pol == "TE":
        cp = eval_epsilon(exterior.mu, s) * s
        cm = eval_epsilon(interior.mu, s) * s
    elif pol == "TM":
        cp = eval_epsilon(exterior.epsilon, s) * s
        cm = eval_epsilon(interior.epsilon, s) * s
    else:
        raise ValueError("pol must be 'TE' or 'TM'")
    # continuity of f and of g/c across r = 1:  ip + R kkp = T im,  (gip + R gkp)/cp = T gim/cm
    M = np.array([[kkp, -im], [gkp / cp, -gim / cm]])
    rhs = -np.array([ip, gip / cp])
    R, T = np.linalg.solve(M, rhs)
    return ModalCoefficients(l, pol, complex(R), complex(T))


def mie_coefficients_mp(s, interior: MaterialPair, exterior: MaterialPair, l: int, pol: str, dps=40):
    """The same coefficients through mpmath Bessel functions (independent check)."""
    import mpmath as mp

    mp.mp.dps = dps
    s_ = mp.mpc(complex(s))

    def law(sym):
        p = sym.params
        if sym.kind == "vacuum":
            chi = 0
        elif sym.kind == "fractional":
            chi = p["gamma"] / (1 + p["beta"] * mp.power(s_, p["eta"]))
        elif sym.kind == "debye":
            chi = p["beta"] / (s_ + p["lam"])
        else:
            chi = mp.mpc(complex(sym.chi(complex(s))))
        return sym.base * (1 + chi)

    def kappa(pair):
        return mp.sqrt(law(pair.epsilon) * s_) * mp.sqrt(law(pair.mu) * s_)

    def i_fn(n, z):
        return mp.sqrt(mp.pi / (2 * z)) * mp.besseli(n + mp.mpf(1) / 2, z)

    def k_fn(n, z):
        return mp.sqrt(mp.pi / (2 * z)) * mp.besselk(n + mp.mpf(1) / 2, z)

    def fg(fn, k):
        f = fn(l, k)
        d = mp.diff(lambda t: fn(l, t), k)
        return f, f + k * d

    kp, km = kappa(exterior), kappa(interior)
    ip, gip = fg(i_fn, kp)
    kkp, gkp = fg(k_fn, kp)
    im, gim = fg(i_fn, km)
    if pol == "TE":
        cp, cm = law(exterior.mu) * s_, law(interior.mu) * s_
    else:
        cp, cm = law(exterior.epsilon) * s_, law(interior.epsilon) * s_
    M = mp.matrix([[kkp, -im], [gkp / cp, -gim / cm]])
    R, T = mp.lu_solve(M, mp.matrix([-ip, -gip / cp]))
    return complex(R), complex(T)


def mie_table(s, interior, exterior, lmax: int = 15):
    """Rows (l, pol, R, tail) with tail = |(2l+1) i_l(k+) R_l| / max over l."""
    kp = complex(wavenumber(exterior, s))
    rows = []
    for pol in ("TE", "TM"):
        coefs = [mie_coefficients(s, interior, exterior, l, pol) for l in range(1, lmax + 1)]
        ivals = sph_i(lmax, kp)
        size = np.array([abs((2 * c.l + 1) * ivals[c.l] * c.reflection) for c in coefs])
        peak = size.max() if size.max() > 0 else 1.0
        rows += [(c.l, pol, c.reflection, size[i] / peak) for i, c in enumerate(coefs)]
    return rows


@dataclass
class ModeTraces:
    """Traces of one incident mode's transmission solution on the unit sphere.

    Evaluators take (points, faces) and return (K, 3) complex vectors:
    ``gE_ext``/``gH_ext`` are traces of the scattered exterior field,
    ``gE_int``/``gH_int`` of the interior field, ``gE_inc``/``gH_inc`` of the
    incident mode.
    """

    coefficients: ModalCoefficients
    gE_ext: object
    gH_ext: object
    gE_int: object
    gH_int: object
    gE_inc: object
    gH_inc: object

    def densities(self):
        """(phi+, psi+, phi-, psi-) = (gH+, -gE+, -gH-, gE-) as evaluators."""
        neg = lambda f: (lambda x, faces=None: -f(x, faces))
        return self.gH_ext, neg(self.gE_ext), neg(self.gH_int), self.gE_int


def mie_traces(s, interior: MaterialPair, exterior: MaterialPair, harmonic: Harmonic, pol: str) -> ModeTraces:
    """Transmission solution for an incident regular mode built on ``harmonic``.

    TE: E = -f w type, so gE = -f u and gH = g/(mu s) w.
    TM: H = -f w type, so gH = -f u and gE = -g/(eps s) w.
    """
    s = complex(s)
    coef = mie_coefficients(s, interior, exterior, harmonic.l, pol)
    kp = complex(wavenumber(exterior, s))
    km = complex(wavenumber(interior, s))
    ip, gip, kkp, gkp = radial_factors(harmonic.l, kp)
    im, gim, _, _ = radial_factors(harmonic.l, km)
    u, w = harmonic.u, harmonic.w
    R, T = coef.reflection, coef.transmission

    def traces(f, g, pair):
        if pol == "TE":
            c = eval_epsilon(pair.mu, s) * s
            return (lambda x, faces=None: -f * u(x)), (lambda x, faces=None: g / c * w(x))
        c = eval_epsilon(pair.epsilon, s) * s
        return (lambda x, faces=None: -g / c * w(x)), (lambda x, faces=None: -f * u(x))

    e_inc, h_inc = traces(ip, gip, exterior)
    e_ext, h_ext = traces(R * kkp, R * gkp, exterior)
    e_int, h_int = traces(T * im, T * gim, interior)
    return ModeTraces(coef, e_ext, h_ext, e_int, h_int, e_inc, h_inc)


# ---- scalar oracles -----------------------------------------------------------


def fractional_integral_oracle(g, alpha: float, t):
    """Riemann-Liouville integral (1/Gamma(a)) int_0^t (t - r)^(a-1) g(r) dr."""
    t = np.atleast_1d(np.asarray(t, float))
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    out = np.zeros_like(t)
    for i, ti in enumerate(t):
        if ti <= 0:
            continue
        if alpha == 1:
            val, _ = integrate.quad(g, 0, ti, epsabs=1e-14, epsrel=1e-13, limit=200)
        else:
            val, _ = integrate.quad(g, 0, ti, weight="alg", wvar=(0, alpha - 1),
                                    epsabs=1e-14, epsrel=1e-13, limit=200)
        out[i] = val / math.gamma(alpha)
    return out


def power_integral(p: float, alpha: float, t):
    """Closed form for g(t) = t^p: Gamma(p+1)/Gamma(p+1+a) t^(p+a)."""
    t = np.asarray(t, float)
    return special.gamma(p + 1) / special.gamma(p + 1 + alpha) * t ** (p + alpha)
