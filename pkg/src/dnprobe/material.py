"""Coefficient laws gamma(t, s) and rho(t, s) and their admissibility checks.

Laws come from a small closed-form library (selected by name + parameters)
so that partial derivatives are exact and experiment configs stay
reproducible.  Admissibility -- positivity floors, the time-derivative cap
used by the rho experiment, and the interior-maximum condition on the
difference rho^1 - rho^2 -- is checked by dense sampling, not proved.
"""

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialLaw:
    """Coefficient pair (gamma, rho) with exact partial derivatives.

    All maps take (t, s) with array-broadcasting semantics.  m_floor(s) is
    the positivity floor both coefficients must respect; kappa_cap(s) caps
    sup_t d_t rho(t, s) when the rho experiment is enabled.
    """

    gamma: Callable
    rho: Callable
    d_gamma_ds: Callable
    d_rho_ds: Callable
    d_rho_dt: Callable
    d_gamma_dt: Callable
    m_floor: Callable = field(default=lambda s: 1e-8 + 0.0 * np.asarray(s, float))
    kappa_cap: Callable = field(default=lambda s: np.inf + 0.0 * np.asarray(s, float))
    label: str = ""


@dataclass(frozen=True)
class MatrixField:
    """Constant symmetric elliptic coefficient matrix A."""

    A: np.ndarray
    ellipticity_c: float

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return bool(np.all(self.A == np.diag(np.diagonal(self.A))))

    @property
    def is_identity(self) -> bool:
        return bool(np.allclose(self.A, np.eye(self.dim), atol=0.0))


def make_matrix(A, check_samples: int = 64, rng=None) -> MatrixField:
    """Validate symmetry/ellipticity on sampled directions and wrap A."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise MaterialError("A must be a square matrix")
    if not np.allclose(A, A.T, atol=1e-14):
        raise MaterialError("A must be symmetric")
    eigs = np.linalg.eigvalsh(A)
    c = float(eigs.min())
    if c <= 0.0:
        raise MaterialError(f"A is not elliptic (min eigenvalue {c})")
    rng = np.random.default_rng(0) if rng is None else rng
    xi = rng.normal(size=(check_samples, A.shape[0]))
    quad = np.einsum("ki,ij,kj->k", xi, A, xi)
    assert np.all(quad >= c * (xi ** 2).sum(axis=1) - 1e-12)
    return MatrixField(A=A, ellipticity_c=c)


# ---------------------------------------------------------------------------
# law library


def _coefficient(name: str, params: dict):
    """One scalar coefficient map from the library.

    Returns (f, df_dt, df_ds).  Supported names:

    constant      c0
    affine_t      c0 + c1*t
    trig_t        c0 + c1*sin(2*pi*freq*t + phase)
    gauss_s       c0 + c1*exp(-((s-s0)/w)^2)
    poly_s        c0 + c1*s + c2*s^2
    """
    p = dict(params)

    def g(key, default=0.0):
        return float(p.pop(key, default))

    if name == "constant":
        c0 = g("c0", 1.0)
        f = lambda t, s: c0 + 0.0 * np.asarray(t, float) * np.asarray(s, float)
        ft = lambda t, s: 0.0 * np.asarray(t, float) * np.asarray(s, float)
        fs = ft
    elif name == "affine_t":
        c0, c1 = g("c0", 1.0), g("c1", 0.0)
        f = lambda t, s: c0 + c1 * np.asarray(t, float) + 0.0 * np.asarray(s, float)
        ft = lambda t, s: c1 + 0.0 * np.asarray(t, float) * np.asarray(s, float)
        fs = lambda t, s: 0.0 * np.asarray(t, float) * np.asarray(s, float)
    elif name == "trig_t":
        c0, c1 = g("c0", 1.0), g("c1", 0.0)
        freq, phase = g("freq", 1.0), g("phase", 0.0)
        w = 2.0 * math.pi * freq
        f = lambda t, s: c0 + c1 * np.sin(w * np.asarray(t, float) + phase) + 0.0 * np.asarray(s, float)
        ft = lambda t, s: c1 * w * np.cos(w * np.asarray(t, float) + phase) + 0.0 * np.asarray(s, float)
        fs = lambda t, s: 0.0 * np.asarray(t, float) * np.asarray(s, float)
    elif name == "gauss_s":
        c0, c1, s0, wid = g("c0", 1.0), g("c1", 0.0), g("s0", 0.0), g("w", 1.0)
        f = lambda t, s: c0 + c1 * np.exp(-(((np.asarray(s, float) - s0) / wid) ** 2)) + 0.0 * np.asarray(t, float)
        ft = lambda t, s: 0.0 * np.asarray(t, float) * np.asarray(s, float)
        fs = lambda t, s: (c1 * np.exp(-(((np.asarray(s, float) - s0) / wid) ** 2))
                           * (-2.0 * (np.asarray(s, float) - s0) / wid ** 2) + 0.0 * np.asarray(t, float))
    elif name == "poly_s":
        c0, c1, c2 = g("c0", 1.0), g("c1", 0.0), g("c2", 0.0)
        f = lambda t, s: c0 + c1 * np.asarray(s, float) + c2 * np.asarray(s, float) ** 2 + 0.0 * np.asarray(t, float)
        ft = lambda t, s: 0.0 * np.asarray(t, float) * np.asarray(s, float)
        fs = lambda t, s: c1 + 2.0 * c2 * np.asarray(s, float) + 0.0 * np.asarray(t, float)
    else:
        raise MaterialError(f"unknown coefficient law {name!r}")
    if p:
        raise MaterialError(f"unused parameters for law {name!r}: {sorted(p)}")
    return f, ft, fs


def make_law(gamma=("constant", {"c0": 1.0}), rho=("constant", {"c0": 1.0}),
             m_floor=1e-3, kappa_cap=None, label="") -> MaterialLaw:
    """Assemble a MaterialLaw from library entries (name, params)."""
    gname, gparams = gamma
    rname, rparams = rho
    gf, gft, gfs = _coefficient(gname, gparams)
    rf, rft, rfs = _coefficient(rname, rparams)
    floor = (lambda s: m_floor + 0.0 * np.asarray(s, float)) if np.isscalar(m_floor) else m_floor
    if kappa_cap is None:
        cap = lambda s: np.inf + 0.0 * np.asarray(s, float)
    elif np.isscalar(kappa_cap):
        cap = lambda s: kappa_cap + 0.0 * np.asarray(s, float)
    else:
        cap = kappa_cap
    return MaterialLaw(gamma=gf, rho=rf, d_gamma_ds=gfs, d_rho_ds=rfs,
                       d_rho_dt=rft, d_gamma_dt=gft,
                       m_floor=floor, kappa_cap=cap,
                       label=label or f"gamma={gname},rho={rname}")


def perturb_law(base: MaterialLaw, eps: float, target: str = "gamma",
                profile=("constant", {"c0": 1.0})) -> MaterialLaw:
    """Law with gamma (or rho) shifted by eps times a library profile."""
    pf, pft, pfs = _coefficient(*profile)
    if target == "gamma":
        return MaterialLaw(
            gamma=lambda t, s: base.gamma(t, s) + eps * pf(t, s),
            rho=base.rho,
            d_gamma_ds=lambda t, s: base.d_gamma_ds(t, s) + eps * pfs(t, s),
            d_rho_ds=base.d_rho_ds,
            d_rho_dt=base.d_rho_dt,
            d_gamma_dt=lambda t, s: base.d_gamma_dt(t, s) + eps * pft(t, s),
            m_floor=base.m_floor, kappa_cap=base.kappa_cap,
            label=f"{base.label}+{eps}*gamma-perturbation")
    if target == "rho":
        return MaterialLaw(
            gamma=base.gamma,
            rho=lambda t, s: base.rho(t, s) + eps * pf(t, s),
            d_gamma_ds=base.d_gamma_ds,
            d_rho_ds=lambda t, s: base.d_rho_ds(t, s) + eps * pfs(t, s),
            d_rho_dt=lambda t, s: base.d_rho_dt(t, s) + eps * pft(t, s),
            d_gamma_dt=base.d_gamma_dt,
            m_floor=base.m_floor, kappa_cap=base.kappa_cap,
            label=f"{base.label}+{eps}*rho-perturbation")
    raise MaterialError(f"unknown perturbation target {target!r}")


# ---------------------------------------------------------------------------
# admissibility


@dataclass
class AdmissibilityReport:
    passed: bool
    checks: dict  # name -> (ok, worst_value, worst_point)

    def __bool__(self):
        return self.passed


def check_admissible(law: MaterialLaw, s_range=(-1.0, 1.0), t_grid=None,
                     T=1.0, samples=256, check_kappa=False) -> AdmissibilityReport:
    """Sample the positivity floors (and optionally the d_t rho cap).

    Never raises; the report records the worst sample per predicate.
    """
    t = np.linspace(0.0, T, samples) if t_grid is None else np.asarray(t_grid, float)
    s = np.linspace(s_range[0], s_range[1], samples)
    tt, ss = np.meshgrid(t, s, indexing="ij")
    checks = {}

    def record(name, margin):
        k = np.unravel_index(np.argmin(margin), margin.shape)
        checks[name] = (bool(margin[k] >= 0.0), float(margin[k]),
                        (float(tt[k]), float(ss[k])))

    floor = law.m_floor(ss)
    record("gamma_floor", law.gamma(tt, ss) - floor)
    record("rho_floor", law.rho(tt, ss) - floor)
    if check_kappa:
        record("rho_dt_cap", law.kappa_cap(ss) - law.d_rho_dt(tt, ss))
    return AdmissibilityReport(passed=all(ok for ok, _, _ in checks.values()),
                               checks=checks)


@dataclass
class InteriorMaxReport:
    t_max: float
    value: float
    interior: bool
    degenerate_zero: bool


def check_interior_max(law_pair, lam: float, t_grid) -> InteriorMaxReport:
    """Locate max_t |rho1 - rho2|(t, lam) and flag boundary maximizers.

    A maximum attained only at t in {0, T} violates the interior-maximum
    requirement of the rho experiment; an identically-zero difference is
    reported as degenerate.
    """
    law1, law2 = law_pair
    t = np.asarray(t_grid, dtype=float)
    d = np.abs(law1.rho(t, lam) - law2.rho(t, lam))
    peak = d.max()
    if peak <= 1e-15:
        return InteriorMaxReport(t_max=float(t[len(t) // 2]), value=0.0,
                                 interior=True, degenerate_zero=True)
    hits = np.flatnonzero(d >= peak * (1.0 - 1e-12))
    interior_hits = hits[(hits > 0) & (hits < len(t) - 1)]
    if interior_hits.size == 0:
        k = hits[0]
        return InteriorMaxReport(t_max=float(t[k]), value=float(peak),
                                 interior=False, degenerate_zero=False)
    k = interior_hits[0]
    return InteriorMaxReport(t_max=float(t[k]), value=float(peak),
                             interior=True, degenerate_zero=False)
