"""Operator calculus of the convective Brinkman-Forchheimer system.

The three pieces of the drift are

* the Stokes part ``mu * A u``,
* the convection ``B(u, v) = P((u . grad) v)``,
* the absorption ``C(u) = P(|u|^(r-1) u)``,

and ``G(u) = mu A u + B(u) + beta C(u)``.  All products are formed on a
zero-padded physical grid, so for integer exponents the quadrature is exact
and the discrete identities (skew symmetry of B, ``<C(u), u> = ||u||^(r+1)``)
hold to rounding error.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import AdmissibilityError, ConfigurationError
from .spectral import (
    SpectralField,
    TorusDomain,
    gradient_coeffs,
    inner,
    leray_coeffs,
    norm,
    random_divfree_field,
    stokes_apply,
    to_physical,
    to_spectral,
    weighted_h_norm,
)

INEQUALITY_TOL = 1e-9


@dataclass(frozen=True)
class CBFParameters:
    """Viscosity ``mu``, Forchheimer coefficient ``beta`` and absorption exponent ``r``.

    The Darcy coefficient is fixed at zero.
    """

    mu: float
    beta: float
    r: float
    alpha: float = 0.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigurationError(f"mu must be positive, got {self.mu}")
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if not self.r >= 3:
            raise ConfigurationError(f"r must be >= 3, got {self.r}")
        if self.alpha != 0:
            raise ConfigurationError("the Darcy coefficient alpha is fixed at 0")

    def require_global_monotonicity(self) -> None:
        """Critical exponent r = 3 needs 2*beta*mu >= 1."""
        if self.r == 3 and 2.0 * self.beta * self.mu < 1.0:
            raise AdmissibilityError(
                f"r = 3 requires 2βμ ≥ 1, got 2βμ = {2 * self.beta * self.mu:g}",
                condition="2βμ ≥ 1")


def eta_constant(p: CBFParameters) -> float:
    """Shift eta that makes ``G + eta I`` monotone.

    For r > 3 this is ``(r-3)/(2 mu (r-1)) * (2/(beta mu (r-1)))^(2/(r-3))``.
    For r = 3 the operator is globally monotone when 2*beta*mu >= 1 and eta = 0.
    """
    r, mu, beta = p.r, p.mu, p.beta
    if r == 3:
        p.require_global_monotonicity()
        return 0.0
    return (r - 3.0) / (2.0 * mu * (r - 1.0)) * (2.0 / (beta * mu * (r - 1.0))) ** (2.0 / (r - 3.0))


# --------------------------------------------------------------------------
# raw kernels on coefficient arrays
# --------------------------------------------------------------------------

def B_coeffs(u: np.ndarray, v: np.ndarray, domain: TorusDomain, m: int | None = None) -> np.ndarray:
    """Coefficients of P((u . grad) v) for raw (possibly batched) coefficient arrays."""
    d = domain.dim
    m = m or domain.quad_size(2.0)
    up = to_physical(u, d, m)
    gp = to_physical(gradient_coeffs(v, domain), d, m)
    conv = np.sum(gp * np.expand_dims(up, axis=-d - 2), axis=-d - 1)
    return leray_coeffs(to_spectral(conv, d, domain.resolution), domain)


def _abs_power(sq: np.ndarray, e: float) -> np.ndarray:
    """sq ** e for sq = |u|^2, avoiding pow for the common integer cases."""
    if e == 0:
        return np.ones_like(sq)
    if e == 1:
        return sq
    if e == 2:
        return sq * sq
    return sq ** e


def C_coeffs(u: np.ndarray, domain: TorusDomain, r: float, m: int | None = None) -> np.ndarray:
    d = domain.dim
    m = m or domain.quad_size(r + 1.0)
    up = to_physical(u, d, m)
    sq = np.sum(up * up, axis=-d - 1, keepdims=True)
    return leray_coeffs(to_spectral(_abs_power(sq, (r - 1.0) / 2.0) * up, d, domain.resolution), domain)


def vorticity_coeffs(u: np.ndarray, domain: TorusDomain) -> np.ndarray:
    """Curl of u: a scalar component in 2D, three components in 3D."""
    k = domain.wavenumbers.astype(float)
    d = domain.dim
    ux = np.take(u, 0, axis=-d - 1)
    uy = np.take(u, 1, axis=-d - 1)
    if d == 2:
        return np.expand_dims(1j * (k[0] * uy - k[1] * ux), axis=-d - 1)
    uz = np.take(u, 2, axis=-d - 1)
    return 1j * np.stack([k[1] * uz - k[2] * uy, k[2] * ux - k[0] * uz, k[0] * uy - k[1] * ux],
                         axis=-d - 1)


def _omega_cross_u(om: np.ndarray, up: np.ndarray, d: int) -> np.ndarray:
    ux = np.take(up, 0, axis=-d - 1)
    uy = np.take(up, 1, axis=-d - 1)
    if d == 2:
        w = np.take(om, 0, axis=-d - 1)
        return np.stack([-w * uy, w * ux], axis=-d - 1)
    uz = np.take(up, 2, axis=-d - 1)
    wx, wy, wz = (np.take(om, i, axis=-d - 1) for i in range(3))
    return np.stack([wy * uz - wz * uy, wz * ux - wx * uz, wx * uy - wy * ux], axis=-d - 1)


def drift_coeffs(u: np.ndarray, domain: TorusDomain, beta: float, r: float):
    """Fused ``-(B(u) + beta C(u))`` and the quadrature of ``||u||^(r+1)_{L^(r+1)}``.

    The convection enters in rotational form, ``P((u . grad) u) = P(omega x u)``,
    which needs half the transforms of the convective form; the two agree to
    rounding because the products are exact and P removes the gradient
    ``grad |u|^2 / 2`` mode by mode.  One padded grid serves both terms;
    returns ``(coeffs, lr1_power)`` with ``lr1_power`` of the batch shape of ``u``.
    """
    d = domain.dim
    m = domain.quad_size(r + 1.0)
    up = to_physical(u, d, m)
    om = to_physical(vorticity_coeffs(u, domain), d, m)
    sq = np.sum(up * up, axis=-d - 1, keepdims=True)
    w = _abs_power(sq, (r - 1.0) / 2.0)
    total = _omega_cross_u(om, up, d) + beta * (w * up)
    lr1 = domain.volume * np.mean(w * sq, axis=tuple(range(-d - 1, 0)))
    out = -leray_coeffs(to_spectral(total, d, domain.resolution), domain)
    return out, lr1


# --------------------------------------------------------------------------
# field-level operators
# --------------------------------------------------------------------------

def _same_domain(*fields: SpectralField) -> TorusDomain:
    dom = fields[0].domain
    for f in fields[1:]:
        if f.domain != dom:
            raise ConfigurationError("fields live on different domains")
    return dom


def bilinear_B(u: SpectralField, v: SpectralField | None = None) -> SpectralField:
    """P((u . grad) v), with ``v = u`` when omitted."""
    v = u if v is None else v
    dom = _same_domain(u, v)
    return SpectralField(dom, B_coeffs(u.coeffs, v.coeffs, dom))


def nonlinear_C(u: SpectralField, r: float) -> SpectralField:
    if r < 1:
        raise ConfigurationError(f"r must be >= 1, got {r}")
    return SpectralField(u.domain, C_coeffs(u.coeffs, u.domain, r))


def stokes_term(u: SpectralField, mu: float) -> SpectralField:
    return SpectralField(u.domain, mu * u.domain.k2 * u.coeffs)


def full_G(u: SpectralField, p: CBFParameters, f: SpectralField | None = None) -> SpectralField:
    """mu A u + B(u) + beta C(u) - f."""
    dom = u.domain
    c = p.mu * dom.k2 * u.coeffs + B_coeffs(u.coeffs, u.coeffs, dom) \
        + p.beta * C_coeffs(u.coeffs, dom, p.r)
    if f is not None:
        _same_domain(u, f)
        c = c - f.coeffs
    return SpectralField(dom, c)


def lr1_power(u: SpectralField, r: float) -> float:
    """||u||^(r+1)_{L^(r+1)} on the same grid the operator C uses."""
    d = u.domain
    up = u.physical(d.quad_size(r + 1.0))
    sq = np.sum(up * up, axis=0)
    return float(d.volume * np.mean(sq ** ((r + 1.0) / 2.0)))


# --------------------------------------------------------------------------
# inequality checkers
# --------------------------------------------------------------------------

def inequality_scale(u: SpectralField, v: SpectralField) -> float:
    """1 + ||u||_V^2 + ||v||_V^2, the magnitude used to scale tolerances."""
    return 1.0 + norm(u, "V") ** 2 + norm(v, "V") ** 2


@dataclass
class MonotonicityReport:
    lhs: float
    eta_term: float
    rhs_bound: float
    gap: float
    passed: bool
    tolerance: float

    def to_dict(self) -> dict:
        return asdict(self)


def monotonicity_gap(u: SpectralField, v: SpectralField, p: CBFParameters,
                     tol: float = INEQUALITY_TOL) -> MonotonicityReport:
    """Check the shifted monotonicity of G on one pair.

    For r > 3 the bound is ``lhs + eta ||u-v||_H^2 >= (mu/2) ||u-v||_V^2``.
    For r = 3 (with 2*beta*mu >= 1) it is
    ``lhs >= (1/2)(beta - 1/(2 mu)) || |v| (u-v) ||_H^2``.
    """
    _same_domain(u, v)
    w = u - v
    lhs = inner(full_G(u, p) - full_G(v, p), w)
    eta = eta_constant(p)
    if p.r == 3:
        eta_term = 0.0
        rhs = 0.5 * (p.beta - 1.0 / (2.0 * p.mu)) * weighted_h_norm(w, v, 3.0)
    else:
        eta_term = eta * norm(w, "H") ** 2
        rhs = 0.5 * p.mu * norm(w, "V") ** 2
    gap = lhs + eta_term - rhs
    scaled = tol * inequality_scale(u, v)
    return MonotonicityReport(lhs, eta_term, rhs, gap, bool(gap >= -scaled), scaled)


def c_monotonicity_gap(u: SpectralField, v: SpectralField, r: float) -> float:
    """<C(u)-C(v), u-v> - (1/2)(|| |u|^((r-1)/2) (u-v) ||^2 + || |v|^((r-1)/2) (u-v) ||^2)."""
    _same_domain(u, v)
    w = u - v
    lhs = inner(nonlinear_C(u, r) - nonlinear_C(v, r), w)
    return lhs - 0.5 * (weighted_h_norm(w, u, r) + weighted_h_norm(w, v, r))


def hemicontinuity_probe(u: SpectralField, v: SpectralField, w: SpectralField,
                         p: CBFParameters, lambdas) -> np.ndarray:
    """|<G(u + lam v) - G(u), w>| for each lam."""
    _same_domain(u, v, w)
    gu = full_G(u, p)
    out = [abs(inner(full_G(u + float(lam) * v, p) - gu, w)) for lam in lambdas]
    return np.asarray(out)


@dataclass
class PeriodicInequalityRecord:
    weighted_grad: float          # integral |grad u|^2 |u|^(r-1)
    c_dot_Au: float               # integral |u|^(r-1) u . Au
    upper_gap: float              # r * weighted_grad - c_dot_Au
    lower_gap: float              # c_dot_Au - weighted_grad
    ratio_3r: float | None        # ||u||^(r+1)_{L^{3(r+1)}} / weighted_grad, None for u = 0


def check_periodic_inequalities(u: SpectralField, r: float) -> PeriodicInequalityRecord:
    """Sandwich ``I <= int |u|^(r-1) u . Au <= r I`` with ``I = int |grad u|^2 |u|^(r-1)``."""
    if r < 1:
        raise ConfigurationError(f"r must be >= 1, got {r}")
    d = u.domain
    m = d.quad_size(r + 1.0)
    up = u.physical(m)
    gp = to_physical(gradient_coeffs(u.coeffs, d), d.dim, m)
    au = to_physical(d.k2 * u.coeffs, d.dim, m)
    sq = np.sum(up * up, axis=0)
    weight = sq ** ((r - 1.0) / 2.0)
    grad_sq = np.sum(gp * gp, axis=(0, 1))
    i1 = float(d.volume * np.mean(weight * grad_sq))
    i2 = float(d.volume * np.mean(weight * np.sum(up * au, axis=0)))
    if i1 > 0:
        p3 = 3.0 * (r + 1.0)
        up3 = u.physical(d.quad_size(p3))
        l3 = float(d.volume * np.mean(np.sum(up3 * up3, axis=0) ** (p3 / 2.0))) ** (1.0 / 3.0)
        ratio = l3 / i1
    else:
        ratio = None
    return PeriodicInequalityRecord(i1, i2, r * i1 - i2, i2 - i1, ratio)


def fuzz_field_pair(domain: TorusDomain, seed: int, index: int):
    """Deterministic random pair with varied decay and amplitude.

    Amplitudes are log-uniform in [0.01, 3].  Every fourth case is a
    near-equal pair ``v = u + eps * w`` with ``eps`` log-uniform in [1e-4, 1e-1]
    so the small-difference regime is exercised too.
    """
    ss = np.random.SeedSequence([seed, index])
    rng = np.random.default_rng(ss)
    s1, s2 = (int(x) for x in ss.generate_state(2))
    lo = domain.dim / 2.0 + 0.5

    def amp():
        return float(np.exp(rng.uniform(np.log(0.01), np.log(3.0))))

    u = random_divfree_field(domain, rng.uniform(lo, lo + 1.5), amp(), s1)
    w = random_divfree_field(domain, rng.uniform(lo, lo + 1.5), amp(), s2)
    if index % 4 == 3:
        eps = float(np.exp(rng.uniform(np.log(1e-4), np.log(1e-1))))
        return u, u + w * eps
    return u, w


def monotonicity_fuzz(domain: TorusDomain, p: CBFParameters, cases: int, seed: int,
                      tol: float = INEQUALITY_TOL) -> list:
    """Run ``monotonicity_gap`` on seeded random pairs; one JSON-ready dict per case."""
    out = []
    for i in range(cases):
        u, v = fuzz_field_pair(domain, seed, i)
        rep = monotonicity_gap(u, v, p, tol)
        out.append({"seed": seed, "case": i, "r": p.r, "mu": p.mu, "beta": p.beta,
                    "lhs": rep.lhs + rep.eta_term, "rhs": rep.rhs_bound, "gap": rep.gap,
                    "passed": rep.passed})
    return out


def c_monotonicity_fuzz(domain: TorusDomain, r: float, cases: int, seed: int,
                        tol: float = INEQUALITY_TOL) -> list:
    out = []
    for i in range(cases):
        u, v = fuzz_field_pair(domain, seed, i)
        gap = c_monotonicity_gap(u, v, r)
        scale = inequality_scale(u, v)
        out.append({"seed": seed, "case": i, "r": r, "mu": None, "beta": None,
                    "lhs": gap, "rhs": 0.0, "gap": gap, "passed": bool(gap >= -tol * scale)})
    return out


def b_antisymmetry_ratio(u: SpectralField, v: SpectralField | None = None) -> float:
    """|<B(u, v), v>| / (||u||_{L^4} ||v||_{L^4} ||v||_V), zero for exact skew symmetry."""
    v = u if v is None else v
    val = abs(inner(bilinear_B(u, v), v))
    scale = norm(u, 4) * norm(v, 4) * norm(v, "V")
    return val / scale if scale > 0 else 0.0



def identity_case(u: SpectralField, r_values=(3.0, 3.5, 4.0, 5.0)) -> dict:
    """Discrete identities on one field.

    * ``b_ratio``: |<B(u), u>| / (||u||_{L^4}^2 ||u||_V)
    * ``c_rel[r]``: |<C(u), u> - ||u||^(r+1)_{L^(r+1)}| / ||u||^(r+1)_{L^(r+1)}
    * ``a_rel``: |<Au, u> - ||u||_V^2| / ||u||_V^2
    """
    out = {"b_ratio": b_antisymmetry_ratio(u)}
    c_rel = {}
    for r in r_values:
        ref = lr1_power(u, r)
        c_rel[str(float(r))] = abs(inner(nonlinear_C(u, r), u) - ref) / ref if ref > 0 else 0.0
    out["c_rel"] = c_rel
    v2 = norm(u, "V") ** 2
    out["a_rel"] = abs(inner(stokes_apply(u), u) - v2) / v2 if v2 > 0 else 0.0
    return out


def identity_fuzz(domain: TorusDomain, cases: int, seed: int,
                  r_values=(3.0, 3.5, 4.0, 5.0), b_tol: float = 1e-10, c_tol: float = 1e-8,
                  a_tol: float = 1e-12) -> list:
    """``identity_case`` on ``cases`` seeded random fields; one JSON-ready dict per case."""
    out = []
    for i in range(cases):
        u, _ = fuzz_field_pair(domain, seed, i)
        rec = identity_case(u, r_values)
        rec.update({"seed": seed, "case": i})
        rec["passed"] = bool(rec["b_ratio"] <= b_tol and rec["a_rel"] <= a_tol
                             and all(x <= c_tol for x in rec["c_rel"].values()))
        out.append(rec)
    return out
