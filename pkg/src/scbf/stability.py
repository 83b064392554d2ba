"""Stochastic stability experiments around a stationary state.

All rates use lambda_1 = 1:

* kappa = mu - 2 eta                      deterministic decay of ||u - u_inf||^2
* theta = mu - (2 eta + L)                mean-square decay and coupling contraction
* theta_strict = mu - (2 eta + 6 L)       gate for the pathwise result
* vartheta = 2 theta_strict
* zeta = mu - eta + rho                   pathwise rate under stabilizing noise
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import AdmissibilityError, ConfigurationError
from .integrator import SimulationConfig, run_coupled, run_ensemble
from .noise import JumpModel, derive_constants, require_stabilizing
from .operators import CBFParameters, eta_constant
from .spectral import SpectralField, sq_norm_coeffs
from .stationary import stationary_residual

MC_SLACK = 0.10
STATIONARY_TOL = 1e-8


@dataclass(frozen=True)
class StabilityConstants:
    eta: float
    kappa: float
    theta: float
    theta_strict: float
    vartheta: float
    zeta: float
    K: float
    L: float
    rho: float
    deterministic_ok: bool
    meansquare_ok: bool
    pathwise_ok: bool
    stabilization_ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


def stability_constants(p: CBFParameters, model: Optional[JumpModel] = None) -> StabilityConstants:
    """Derived rates and the admissibility flag of each result."""
    eta = eta_constant(p)
    if model is None or model.marks.rate == 0:
        K = L = rho = 0.0
    else:
        c = derive_constants(model)
        K, L = c.K, c.L
        rho = c.rho if c.rho is not None else 0.0
    mu = p.mu
    kappa = mu - 2.0 * eta
    theta = mu - (2.0 * eta + L)
    strict = mu - (2.0 * eta + 6.0 * L)
    zeta = mu - eta + rho
    return StabilityConstants(eta, kappa, theta, strict, 2.0 * strict, zeta, K, L, rho,
                              kappa > 0, theta > 0, strict > 0, rho > 0 and zeta > 0)


def _require(flag: bool, message: str, condition: str):
    if not flag:
        raise AdmissibilityError(message, condition=condition)


def distance_observable(u_inf: SpectralField):
    target = u_inf.coeffs
    dom = u_inf.domain

    def fn(c):
        return sq_norm_coeffs(c - target, dom)
    return fn


@dataclass
class DecayReport:
    """Ensemble mean-square distance against its theoretical envelope."""

    times: np.ndarray
    ms_distance: np.ndarray
    envelope: np.ndarray
    stderr: np.ndarray
    rate: float
    slope: float
    passed: bool
    tol: float
    paths: int
    blowups: int = 0
    label: str = ""
    extra: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "ms_distance", "envelope", "stderr"])
            for row in zip(self.times, self.ms_distance, self.envelope, self.stderr):
                w.writerow([repr(float(x)) for x in row])

    def verdict(self) -> dict:
        out = {"label": self.label, "passed": self.passed, "rate": self.rate,
               "fitted_slope": self.slope, "tol": self.tol, "paths": self.paths,
               "blowups": self.blowups}
        out.update(self.extra)
        return out

    def write_verdict(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.verdict(), fh, indent=2)


def _fit_slope(times, values) -> float:
    ok = np.isfinite(values) & (values > 0)
    if ok.sum() < 2:
        return float("-inf")
    return float(np.polyfit(times[ok], np.log(values[ok]), 1)[0])


def envelope_report(times, samples, initial, rate, tol, label, blowups=0) -> DecayReport:
    """Compare the mean of ``samples`` (paths x times) with ``initial * exp(-rate t)``."""
    samples = samples[np.all(np.isfinite(samples), axis=1)]
    P = len(samples)
    if P == 0:
        raise ConfigurationError("no finite paths to average")
    ms = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(P) if P > 1 else np.zeros_like(ms)
    env = initial * np.exp(-rate * times)
    passed = bool(np.all(ms <= env * (1.0 + tol) + 3.0 * se))
    return DecayReport(times, ms, env, se, rate, _fit_slope(times, ms), passed, tol, P,
                       blowups, label)


def _check_anchor(cfg: SimulationConfig, u_inf: SpectralField):
    """u_inf must solve the configured stationary system and be a zero of the noise."""
    f = cfg.forcing if cfg.forcing is not None else SpectralField.zeros(cfg.domain)
    res = stationary_residual(u_inf, cfg.params, f)
    if not res <= STATIONARY_TOL:
        raise ConfigurationError(f"u_inf is not a stationary state of the configured system "
                                 f"(residual {res:.3g}); check the forcing")
    nz = cfg.noise
    if nz is None:
        return
    if nz.family != "stabilizing":
        raise AdmissibilityError("the stationary state must be a zero of the noise: use the "
                                 "stabilizing family γ = g(z)(u − u_∞)", condition="γ(u_∞, z) = 0")
    gap = np.max(np.abs(nz.anchor.coeffs - u_inf.coeffs))
    if gap > 1e-12 * max(1.0, float(np.max(np.abs(u_inf.coeffs)))):
        raise ConfigurationError("noise anchor differs from the supplied stationary state")


def meansquare_decay_experiment(cfg: SimulationConfig, u0: SpectralField, u_inf: SpectralField,
                                paths: int, tol: float = MC_SLACK,
                                threads: Optional[int] = None) -> DecayReport:
    """E||u(t) - u_inf||^2 <= exp(-theta t) E||u0 - u_inf||^2, checked on a Monte Carlo ensemble."""
    _check_anchor(cfg, u_inf)
    k = stability_constants(cfg.params, cfg.noise)
    _require(k.meansquare_ok, f"mean-square stability needs μ > (2η + L)/λ₁ (θ = {k.theta:g})",
             "μ > (2η + L)/λ₁")
    res = run_ensemble(cfg, u0, paths=paths, observables={"dist": distance_observable(u_inf)},
                       threads=threads)
    d = res.observables["dist"]
    rep = envelope_report(res.times, d, float(np.mean(d[:, 0])), k.theta, tol, "meansquare",
                          int(res.blown_up.sum()))
    rep.extra.update({"theta": k.theta, "eta": k.eta, "L": k.L})
    return rep


@dataclass
class PathwiseReport:
    n0: np.ndarray              # first window from which the bound holds; n_windows if never
    n_windows: int
    window: float
    theta: float
    eps: float
    finite_fraction: float
    window_sup: np.ndarray      # (paths, n_windows) sup ||u - u_inf||_H over each window
    bound: np.ndarray           # (n_windows,)
    passed: bool
    blowups: int = 0

    def verdict(self) -> dict:
        return {"n_windows": self.n_windows, "window": self.window, "theta": self.theta,
                "eps": self.eps, "finite_fraction": self.finite_fraction, "passed": self.passed,
                "blowups": self.blowups, "n0": [int(x) for x in self.n0]}


def first_holding_window(sups: np.ndarray, bound: np.ndarray) -> int:
    """Smallest n0 such that sups[n] <= bound[n] for every n >= n0."""
    bad = np.flatnonzero(~(sups <= bound))
    return 0 if len(bad) == 0 else int(bad[-1] + 1)


def pathwise_decay_experiment(cfg: SimulationConfig, u0: SpectralField, u_inf: SpectralField,
                              paths: int, h: float, eps: Optional[float] = None,
                              required_fraction: float = 0.95,
                              threads: Optional[int] = None) -> PathwiseReport:
    """Windowed sup bound sup_{nh<=t<=(n+1)h} ||u - u_inf|| <= exp(-(theta - eps) n h / 2).

    A path has a finite n0 when the bound holds on every window of the final
    quarter of the horizon.  The experiment is gated on mu > (2 eta + 6 L).
    """
    _check_anchor(cfg, u_inf)
    k = stability_constants(cfg.params, cfg.noise)
    _require(k.pathwise_ok, f"pathwise stability is asserted only for μ > (2η + 6L)/λ₁ "
             f"(μ − 2η − 6L = {k.theta_strict:g})", "μ > (2η + 6L)/λ₁")
    eps = k.theta / 2.0 if eps is None else eps
    if not 0 < eps < k.theta:
        raise ConfigurationError("need 0 < eps < theta")
    every = h / cfg.dt
    if abs(every - round(every)) > 1e-9:
        raise ConfigurationError("window h must be a multiple of dt")
    n_w = int(round(cfg.T / h))
    run_cfg = cfg.replace(record_every=int(round(every)), T=n_w * h)
    res = run_ensemble(run_cfg, u0, paths=paths, observables={"dist": distance_observable(u_inf)},
                       threads=threads)
    sups = np.sqrt(res.observable_max["dist"][:, 1:n_w + 1])
    n = np.arange(n_w)
    bound = np.exp(-0.5 * (k.theta - eps) * n * h)
    n0 = np.array([first_holding_window(s, bound) if np.all(np.isfinite(s)) else n_w
                   for s in sups])
    cutoff = int(np.ceil(0.75 * n_w))
    frac = float(np.mean(n0 <= cutoff))
    return PathwiseReport(n0, n_w, h, k.theta, eps, frac, sups, bound,
                          frac >= required_fraction, int(res.blown_up.sum()))


def martingale_diagnostic(model: JumpModel, times: np.ndarray, marks: np.ndarray,
                          horizons) -> np.ndarray:
    """M(t)/t with M(t) = sum_{tau_i <= t} log(1 + g(z_i)) - t int log(1 + g) dlambda."""
    drift = model.marks.integrate(lambda z: np.log1p(model.profile(z)))
    logs = np.log1p(model.profile(marks)) if len(marks) else np.zeros(0)
    out = []
    for t in np.atleast_1d(horizons):
        s = float(np.sum(logs[times <= t]))
        out.append((s - t * drift) / t)
    return np.asarray(out)


@dataclass
class StabilizationReport:
    zeta: float
    rho: float
    eta: float
    slack: float
    limsup_slopes: np.ndarray     # per path, over the final quarter
    pass_fraction: float
    passed: bool
    blowups: int
    martingale_short: np.ndarray  # |M(t)/t| at t = T/10
    martingale_long: np.ndarray   # |M(t)/t| at t = T
    martingale_ratio: float       # median long / median short

    def verdict(self) -> dict:
        return {"zeta": self.zeta, "rho": self.rho, "eta": self.eta, "slack": self.slack,
                "pass_fraction": self.pass_fraction, "passed": self.passed,
                "blowups": self.blowups, "martingale_ratio": self.martingale_ratio,
                "limsup_slopes": [float(x) for x in self.limsup_slopes]}


def stabilization_experiment(cfg: SimulationConfig, u0: SpectralField, u_inf: SpectralField,
                             paths: int, slack: float = 0.1, required_fraction: float = 0.95,
                             threads: Optional[int] = None) -> StabilizationReport:
    """Per-path log slope (1/t) log(||u(t) - u_inf||^2 / ||u0 - u_inf||^2) against -zeta.

    The slope is bounded over the final quarter of the horizon using the
    running maxima of the distance between record times, so excursions right
    after jumps are included.
    """
    rho = require_stabilizing(cfg.noise)
    _check_anchor(cfg, u_inf)
    k = stability_constants(cfg.params, cfg.noise)
    _require(k.zeta > 0, f"stabilization needs ζ = μλ₁ − η + ρ > 0 (ζ = {k.zeta:g})", "ζ > 0")
    res = run_ensemble(cfg, u0, paths=paths, observables={"dist": distance_observable(u_inf)},
                       threads=threads)
    t = res.times
    dmax = res.observable_max["dist"]
    d0 = res.observables["dist"][:, :1]
    start = 0.75 * cfg.T
    cols = np.flatnonzero(t[1:] > start) + 1
    slopes = np.full(res.paths, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(dmax[:, cols] / d0)
    a = np.maximum(t[cols - 1], start)
    b = t[cols]
    lim = np.maximum(logs / a, logs / b)
    ok_rows = np.all(np.isfinite(logs) | (logs == -np.inf), axis=1) & ~res.blown_up
    slopes[ok_rows] = np.max(lim[ok_rows], axis=1)
    frac = float(np.mean(slopes <= -k.zeta + slack))
    short, long_ = [], []
    for j in res.jumps:
        m = martingale_diagnostic(cfg.noise, j["times"], j["marks"], [cfg.T / 10.0, cfg.T])
        short.append(abs(m[0]))
        long_.append(abs(m[1]))
    short, long_ = np.asarray(short), np.asarray(long_)
    ms = float(np.median(short))
    ratio = float(np.median(long_) / ms) if ms > 0 else 0.0
    return StabilizationReport(k.zeta, rho, k.eta, slack, slopes, frac,
                               frac >= required_fraction, int(res.blown_up.sum()),
                               short, long_, ratio)


def coupling_decay_experiment(cfg: SimulationConfig, u0: SpectralField, v0: SpectralField,
                              paths: int, tol: float = MC_SLACK,
                              threads: Optional[int] = None) -> DecayReport:
    """E||u(t) - v(t)||^2 <= ||u0 - v0||^2 exp(-theta t) under synchronous coupling."""
    k = stability_constants(cfg.params, cfg.noise)
    _require(k.meansquare_ok, f"coupling contraction needs μ > (2η + L)/λ₁ (θ = {k.theta:g})",
             "μ > (2η + L)/λ₁")
    res = run_coupled(cfg, u0, v0, paths, threads=threads)
    d = res.distance_sq
    rep = envelope_report(res.times, d, float(np.mean(d[:, 0])), k.theta, tol, "coupling",
                          int(res.blown_up.sum()))
    rep.extra.update({"theta": k.theta, "eta": k.eta, "L": k.L})
    return rep
