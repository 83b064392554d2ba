"""Stationary solutions of the deterministic system and their stability.

The stationary problem ``mu A u + B(u) + beta C(u) = f`` is solved by a
relaxed fixed-point iteration preconditioned with the exact Stokes inverse:

    u <- (1 - omega) u + omega (mu A)^(-1) (f - B(u) - beta C(u)).

Residuals are measured in the discrete dual norm ``||A^(-1/2) R||_H``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import AdmissibilityError, ConfigurationError
from .integrator import SimulationConfig, run_ensemble
from .operators import CBFParameters, eta_constant, full_G
from .spectral import (
    SpectralField,
    TorusDomain,
    leray_project,
    norm,
    random_divfree_field,
    sq_norm_coeffs,
)


def dual_norm(r: SpectralField) -> float:
    """||A^(-1/2) r||_H, the discrete V' norm."""
    k2 = r.domain.k2
    w = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    return float(np.sqrt(sq_norm_coeffs(r.coeffs, r.domain, w)))


def stationary_residual(u: SpectralField, p: CBFParameters, f: SpectralField) -> float:
    return dual_norm(full_G(u, p, f))


@dataclass
class StationaryState:
    u_inf: SpectralField
    residual_norm: float
    iterations: int
    converged: bool
    omega: float = 0.5
    history: List[float] = field(default_factory=list, repr=False)

    def record(self) -> dict:
        return {"residual_norm": self.residual_norm, "iterations": self.iterations,
                "converged": self.converged, "omega": self.omega,
                "history": [float(x) for x in self.history]}


def _fixed_point_map(u: SpectralField, p: CBFParameters, f: SpectralField) -> SpectralField:
    """(mu A)^(-1) (f - B(u) - beta C(u))."""
    g = full_G(u, p, f)                       # mu A u + B + beta C - f
    rest = -(g.coeffs - p.mu * u.domain.k2 * u.coeffs)
    k2 = u.domain.k2
    inv = np.where(k2 > 0, 1.0 / (p.mu * np.where(k2 > 0, k2, 1.0)), 0.0)
    return SpectralField(u.domain, rest * inv * u.domain.active)


def solve_stationary(p: CBFParameters, f: SpectralField, init: Optional[SpectralField] = None,
                     tol: float = 1e-10, omega: float = 0.5, omega_min: float = 1.0 / 64,
                     max_iter: int = 10_000, refine: Optional[str] = None) -> StationaryState:
    """Damped fixed-point solve of the stationary system.

    ``omega`` is halved (down to ``omega_min``) whenever a step would increase
    the residual or the residual stalls over ten iterations, and doubled back
    (up to its initial value) after ten iterations of fast progress.  ``refine="newton"``
    polishes the result with a Jacobian-free Newton-Krylov solve.
    """
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    dom = f.domain
    omega0 = omega
    f = leray_project(f)
    u = SpectralField.zeros(dom) if init is None else leray_project(init)
    res = stationary_residual(u, p, f)
    hist = [res]
    it = 0
    stall_ref = res
    while res > tol and it < max_iter:
        it += 1
        target = _fixed_point_map(u, p, f)
        cand = u * (1.0 - omega) + target * omega
        rc = stationary_residual(cand, p, f)
        if not np.isfinite(rc) or rc > res:
            if omega > omega_min:
                omega = max(omega / 2.0, omega_min)
                continue
            if not np.isfinite(rc):
                break
        u, res = cand, rc
        hist.append(res)
        if it % 10 == 0:
            if res > 0.9 * stall_ref and omega > omega_min:
                omega = max(omega / 2.0, omega_min)
            elif res < 0.1 * stall_ref:
                omega = min(2.0 * omega, omega0)
            stall_ref = res
    if refine == "newton" and np.isfinite(res):
        u, res = _newton_refine(u, p, f, tol)
        hist.append(res)
    elif refine not in (None, "newton"):
        raise ConfigurationError(f"unknown refinement {refine!r}")
    return StationaryState(u, float(res), it, bool(res <= tol), omega, hist)


def _newton_refine(u: SpectralField, p: CBFParameters, f: SpectralField, tol: float):
    """Newton-Krylov on the preconditioned residual (mu A)^(-1) G(u)."""
    from scipy.optimize import newton_krylov
    from scipy.optimize import NoConvergence

    dom = u.domain
    act = dom.active
    shape = (dom.dim,) + dom.shape
    k2 = np.where(dom.k2 > 0, dom.k2, 1.0)

    def pack(c):
        c = c[:, act]
        return np.concatenate([c.real.ravel(), c.imag.ravel()])

    def unpack(x):
        h = len(x) // 2
        c = np.zeros(shape, dtype=complex)
        c[:, act] = (x[:h] + 1j * x[h:]).reshape(dom.dim, -1)
        return SpectralField(dom, c)

    def fun(x):
        g = full_G(leray_project(unpack(x)), p, f)
        return pack(g.coeffs / (p.mu * k2))

    try:
        x = newton_krylov(fun, pack(u.coeffs), f_tol=tol * 1e-2, maxiter=50)
    except NoConvergence as exc:
        x = exc.args[0]
    cand = leray_project(unpack(x))
    rc = stationary_residual(cand, p, f)
    r0 = stationary_residual(u, p, f)
    return (cand, rc) if rc < r0 else (u, r0)


def require_uniqueness_regime(p: CBFParameters) -> float:
    """Return eta after checking mu > 2 eta / lambda_1 (or 2 beta mu >= 1 at r = 3)."""
    if p.r == 3:
        if p.mu < 1.0 / (2.0 * p.beta):
            raise AdmissibilityError("r = 3 uniqueness needs μ ≥ 1/(2β)", condition="μ ≥ 1/(2β)")
        return 0.0
    eta = eta_constant(p)
    if not p.mu > 2.0 * eta:
        raise AdmissibilityError(f"uniqueness needs μ > 2η/λ₁ = {2 * eta:g}", condition="μ > 2η/λ₁")
    return eta


@dataclass
class UniquenessProbe:
    max_distance: float
    all_converged: bool
    states: list = field(repr=False, default_factory=list)

    @property
    def conclusive(self) -> bool:
        return self.all_converged


def uniqueness_probe(p: CBFParameters, f: SpectralField, n_inits: int, seed: int,
                     tol: float = 1e-10, init_norm: Optional[float] = None) -> UniquenessProbe:
    """Solve from ``n_inits`` random starts and report the largest pairwise distance.

    Starts are random solenoidal fields with H norm ``init_norm`` (default: one
    plus twice the norm of the Stokes solution ``(mu A)^(-1) f``).
    """
    require_uniqueness_regime(p)
    dom = f.domain
    if init_norm is None:
        k2 = np.where(dom.k2 > 0, dom.k2, 1.0)
        stokes = SpectralField(dom, leray_project(f).coeffs / (p.mu * k2))
        init_norm = 1.0 + 2.0 * norm(stokes, "H")
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(n_inits)]
    states = []
    for s in seeds:
        init = random_divfree_field(dom, dom.dim / 2.0 + 1.0, 1.0, s)
        init = init * (init_norm / norm(init, "H"))
        states.append(solve_stationary(p, f, init, tol=tol))
    dist = 0.0
    for i in range(n_inits):
        for j in range(i + 1, n_inits):
            dist = max(dist, norm(states[i].u_inf - states[j].u_inf, "H"))
    return UniquenessProbe(float(dist), all(s.converged for s in states), states)


@dataclass
class DeterministicDecay:
    times: np.ndarray
    distance_sq: np.ndarray
    envelope: np.ndarray
    kappa: float
    slope: float
    passed: bool
    offending_time: Optional[float] = None


def decay_slope(times: np.ndarray, values: np.ndarray) -> float:
    """Least-squares slope of log(values) against time over positive entries."""
    ok = values > 0
    if ok.sum() < 2:
        return float("-inf")
    return float(np.polyfit(times[ok], np.log(values[ok]), 1)[0])


def deterministic_decay_experiment(p: CBFParameters, f: Optional[SpectralField], u0: SpectralField,
                                   T: float, dt: float, tol: float = 0.01,
                                   u_inf: Optional[StationaryState] = None,
                                   record_every: int = 10) -> DeterministicDecay:
    """Check s(t) = ||u(t) - u_inf||^2 <= s(0) exp(-kappa t) (1 + tol) along a noiseless run."""
    eta = require_uniqueness_regime(p)
    kappa = p.mu - 2.0 * eta
    dom: TorusDomain = u0.domain
    f = f if f is not None else SpectralField.zeros(dom)
    if u_inf is None:
        u_inf = solve_stationary(p, f, tol=1e-12)
    target = u_inf.u_inf.coeffs
    cfg = SimulationConfig(dom, p, forcing=f, T=T, dt=dt, record_every=record_every)
    res = run_ensemble(cfg, u0, observables={"dist": lambda c: sq_norm_coeffs(c - target, dom)})
    s = res.observables["dist"][0]
    env = s[0] * np.exp(-kappa * res.times)
    bad = np.flatnonzero(s > env * (1.0 + tol))
    passed = len(bad) == 0
    return DeterministicDecay(res.times, s, env, kappa, decay_slope(res.times, s), passed,
                              None if passed else float(res.times[bad[0]]))
