"""Dispersive permittivity/permeability symbols in the Laplace domain.

A material symbol is ``eps(s) = eps0 * (1 + chi(s))`` where ``chi`` is the
Laplace transform of a susceptibility kernel.  All square roots and
fractional powers use the principal branch; on ``Re s > 0`` this is the
branch that keeps passive laws analytic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DomainError, MaterialError, PassivityError

KINDS = (
    "vacuum",
    "debye",
    "shifted_heaviside",
    "drude",
    "lorentz",
    "fractional",
    "rational_custom",
)

_REQUIRED = {
    "vacuum": (),
    "debye": ("beta", "lam"),
    "shifted_heaviside": ("alpha1", "alpha2", "t_star"),
    "drude": ("omega_d", "gamma_d"),
    "lorentz": ("beta_l", "alpha_l", "omega_l"),
    "fractional": ("beta", "gamma", "eta"),
    "rational_custom": ("num", "den"),
}


def _check_re(s):
    s = np.asarray(s, dtype=complex)
    if np.any(s.real <= 0):
        raise DomainError(f"material symbols need Re s > 0, got {s}")
    return s


@dataclass(frozen=True)
class MaterialSymbol:
    """One Laplace-domain material law, e.g. ``MaterialSymbol("debye", {"beta": 1, "lam": 1})``.

    ``base`` is eps0 (or mu0).  ``strict=False`` skips the admissibility
    checks, which is how the destabilising Heaviside regime
    ``alpha2 > alpha1`` is audited.
    """

    kind: str = "vacuum"
    params: Mapping[str, object] = field(default_factory=dict)
    base: float = 1.0
    strict: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MaterialError(f"unknown material kind {self.kind!r}; expected one of {KINDS}")
        missing = [k for k in _REQUIRED[self.kind] if k not in self.params]
        if missing:
            raise MaterialError(f"{self.kind}: missing parameter(s) {missing}")
        extra = set(self.params) - set(_REQUIRED[self.kind])
        if extra:
            raise MaterialError(f"{self.kind}: unknown parameter(s) {sorted(extra)}")
        if not self.base > 0:
            raise MaterialError(f"base constant must be positive, got {self.base}")
        if self.strict:
            self._validate()

    def _validate(self):
        p = self.params
        kind = self.kind
        if kind == "debye" and not (p["beta"] > 0 and p["lam"] > 0):
            raise MaterialError("debye needs beta > 0 and lam > 0")
        if kind == "shifted_heaviside" and not (p["alpha1"] >= p["alpha2"] > 0 and p["t_star"] > 0):
            raise MaterialError("shifted_heaviside needs alpha1 >= alpha2 > 0 and t_star > 0")
        if kind == "drude" and not (p["omega_d"] > 0 and p["gamma_d"] > 0):
            raise MaterialError("drude needs omega_d > 0 and gamma_d > 0")
        if kind == "lorentz" and not (
            p["beta_l"] > 0 and 0 < p["alpha_l"] < 4 * p["omega_l"] ** 2
        ):
            raise MaterialError("lorentz needs beta_l > 0 and 0 < alpha_l < 4 omega_l^2")
        if kind == "fractional" and not (p["beta"] > 0 and p["gamma"] > 0 and 0 < p["eta"] < 2):
            raise MaterialError("fractional needs beta > 0, gamma > 0 and 0 < eta < 2")
        if kind == "rational_custom":
            if len(p["den"]) == 0 or not np.any(np.asarray(p["den"], dtype=float)):
                raise MaterialError("rational_custom needs a nonzero denominator")

    @classmethod
    def from_dict(cls, block: Mapping[str, object]) -> "MaterialSymbol":
        block = dict(block)
        kind = block.pop("kind", "vacuum")
        base = float(block.pop("base", 1.0))
        strict = bool(block.pop("strict", True))
        params = {
            k: (tuple(float(c) for c in v) if isinstance(v, (list, tuple)) else float(v))
            for k, v in block.items()
        }
        return cls(kind, params, base, strict)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "base": self.base}
        for k, v in self.params.items():
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    def chi(self, s):
        return eval_chi(self, s)

    def __call__(self, s):
        return eval_epsilon(self, s)


def eval_chi(law: MaterialSymbol, s):
    """Susceptibility symbol chi(s) (vectorised over ``s``)."""
    s = _check_re(s)
    p = law.params
    kind = law.kind
    if kind == "vacuum":
        out = np.zeros_like(s)
    elif kind == "debye":
        out = p["beta"] / (s + p["lam"])
    elif kind == "shifted_heaviside":
        out = (p["alpha1"] + p["alpha2"] * np.exp(-p["t_star"] * s)) / s
    elif kind == "drude":
        out = p["omega_d"] ** 2 / (s * (s + p["gamma_d"]))
    elif kind == "lorentz":
        out = p["beta_l"] / (s * s + p["alpha_l"] * s + p["omega_l"] ** 2)
    elif kind == "fractional":
        out = p["gamma"] / (1.0 + p["beta"] * s ** p["eta"])
    else:
        # coefficients in increasing powers of s
        out = np.polynomial.polynomial.polyval(s, p["num"]) / np.polynomial.polynomial.polyval(
            s, p["den"]
        )
    return out[()] if out.ndim == 0 else out


def eval_epsilon(law: MaterialSymbol, s):
    """eps(s) = base * (1 + chi(s)); the same formula serves mu(s)."""
    return law.base * (1.0 + eval_chi(law, s))


def passivity_margin(law: MaterialSymbol, s):
    """Re(eps(s) s) - eps0 Re s; nonnegative certifies strong passivity at ``s``."""
    s = _check_re(s)
    return (eval_epsilon(law, s) * s).real - law.base * s.real


@dataclass(frozen=True)
class MaterialPair:
    epsilon: MaterialSymbol = field(default_factory=MaterialSymbol)
    mu: MaterialSymbol = field(default_factory=MaterialSymbol)
    side: str = "exterior"

    def __post_init__(self):
        if self.side not in ("interior", "exterior"):
            raise MaterialError(f"side must be 'interior' or 'exterior', got {self.side!r}")

    @classmethod
    def vacuum(cls, side="exterior"):
        return cls(MaterialSymbol(), MaterialSymbol(), side)

    @classmethod
    def from_dict(cls, block: Mapping[str, object], side: str) -> "MaterialPair":
        return cls(
            MaterialSymbol.from_dict(block.get("epsilon", {"kind": "vacuum"})),
            MaterialSymbol.from_dict(block.get("mu", {"kind": "vacuum"})),
            side,
        )

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon.to_dict(), "mu": self.mu.to_dict()}


def fractional_interior() -> MaterialPair:
    """Interior law eps(s) = 1/2 + 1/(1 + s^(1/2)), mu(s) = 1/2 used for the sphere and cube runs."""
    eps = MaterialSymbol("fractional", {"beta": 1.0, "gamma": 2.0, "eta": 0.5}, base=0.5)
    mu = MaterialSymbol("vacuum", {}, base=0.5)
    return MaterialPair(eps, mu, "interior")


def _root_factors(pair: MaterialPair, s):
    s = _check_re(s)
    es = eval_epsilon(pair.epsilon, s) * s
    ms = eval_epsilon(pair.mu, s) * s
    if np.any(np.real(es) <= 0) or np.any(np.real(ms) <= 0):
        raise PassivityError(
            f"Re(eps s) or Re(mu s) is not positive at s={s}; the wavenumber branch is undefined"
        )
    return np.sqrt(es), np.sqrt(ms)


def wavenumber(pair: MaterialPair, s):
    """s sqrt(eps mu), formed as sqrt(eps s) * sqrt(mu s) so that Re > 0."""
    se, sm = _root_factors(pair, s)
    return se * sm


def impedance_ratio(pair: MaterialPair, s):
    """sqrt(mu/eps) as sqrt(mu s)/sqrt(eps s); the admittance is its reciprocal."""
    se, sm = _root_factors(pair, s)
    return sm / se


def m_eps_mu(interior: MaterialPair, exterior: MaterialPair, s) -> float:
    s = _check_re(s)
    vals = []
    for pair in (exterior, interior):
        for law in (pair.epsilon, pair.mu):
            z = eval_epsilon(law, s) * s
            vals.append((abs(z) ** 2 + 1.0) / z.real)
    return float(np.max(vals))


def audit_grid(n_re=21, n_im=101, re_range=(0.1, 10.0), im_max=100.0):
    """Log-spaced Re s times symmetric log-spaced Im s (including 0)."""
    re = np.geomspace(re_range[0], re_range[1], n_re)
    half = np.geomspace(1e-2, im_max, (n_im - 1) // 2)
    im = np.concatenate([-half[::-1], [0.0], half])
    return (re[:, None] + 1j * im[None, :]).ravel()


def documented_laws() -> dict[str, MaterialSymbol]:
    """One admissible representative per law family, used by the passivity audit."""
    return {
        "debye": MaterialSymbol("debye", {"beta": 1.0, "lam": 1.0}),
        "shifted_heaviside": MaterialSymbol(
            "shifted_heaviside", {"alpha1": 1.0, "alpha2": 0.5, "t_star": 1.0}
        ),
        "drude": MaterialSymbol("drude", {"omega_d": 1.0, "gamma_d": 1.0}),
        "lorentz": MaterialSymbol("lorentz", {"beta_l": 1.0, "alpha_l": 0.5, "omega_l": 1.0}),
        "fractional": MaterialSymbol("fractional", {"beta": 1.0, "gamma": 2.0, "eta": 0.5}, 0.5),
    }


def passivity_audit(law: MaterialSymbol, grid=None):
    """Return (s, margin) over the audit grid."""
    grid = audit_grid() if grid is None else np.asarray(grid)
    return grid, passivity_margin(law, grid)
