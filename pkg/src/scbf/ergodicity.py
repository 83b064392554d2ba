"""Invariant-measure experiments: time averages, tightness, ergodicity and mixing.

The transition semigroup is never built as an object.  Every expectation
``E[phi(u(t, u0))]`` is a Monte Carlo mean over simulated paths.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import AdmissibilityError, ConfigurationError
from .integrator import SimulationConfig, run_coupled, run_ensemble
from .noise import derive_constants
from .operators import _abs_power
from .spectral import SpectralField, TorusDomain, sq_norm_coeffs, to_physical
from .stability import MC_SLACK, stability_constants

BURN_IN = 0.2
_MODE = re.compile(r"^mode_energy\(\s*(-?\d+(?:\s*,\s*-?\d+)*)\s*\)$")


def observable_function(name: str, domain: TorusDomain, r: float = 3.0):
    """Batch observable ``coeffs (B, dim, N...) -> (B,)`` for an observable id.

    Ids: ``norm_H_sq``, ``norm_V_sq``, ``norm_Lr1`` (the L^(r+1) norm) and
    ``mode_energy(k1,k2[,k3])``, the energy (2 pi)^d (|u_k|^2 + |u_-k|^2) of
    the Fourier pair +-k.
    """
    d = domain.dim
    if name == "norm_H_sq":
        return lambda c: sq_norm_coeffs(c, domain)
    if name == "norm_V_sq":
        return lambda c: sq_norm_coeffs(c, domain, domain.k2)
    if name == "norm_Lr1":
        m = domain.quad_size(r + 1.0)

        def lr1(c):
            up = to_physical(c, d, m)
            sq = np.sum(up * up, axis=-d - 1)
            val = domain.volume * np.mean(_abs_power(sq, (r + 1.0) / 2.0),
                                          axis=tuple(range(-d, 0)))
            return val ** (1.0 / (r + 1.0))
        return lr1
    mt = _MODE.match(name)
    if mt:
        k = [int(x) for x in mt.group(1).split(",")]
        if len(k) != d:
            raise ConfigurationError(f"mode_energy needs {d} integer components, got {k}")
        n = domain.N
        if any(abs(x) >= n // 2 for x in k) or not any(k):
            raise ConfigurationError(f"mode {k} is not an active mode at N = {n}")
        pos = tuple(x % n for x in k)
        neg = tuple(-x % n for x in k)

        def mode(c):
            a = c[(Ellipsis, slice(None)) + pos]
            b = c[(Ellipsis, slice(None)) + neg]
            e = np.sum(np.abs(a) ** 2, axis=-1) + np.sum(np.abs(b) ** 2, axis=-1)
            return domain.volume * e
        return mode
    raise ConfigurationError(f"unknown observable {name!r}")


def running_average(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Left-endpoint running mean (1/(t - t0)) int_{t0}^t values, set to values[0] at t0."""
    dt = np.diff(times)
    integ = np.concatenate([[0.0], np.cumsum(values[:-1] * dt)])
    span = times - times[0]
    out = np.empty_like(values, dtype=float)
    out[0] = values[0]
    out[1:] = integ[1:] / span[1:]
    return out


@dataclass
class ObservableSeries:
    """One observable along one trajectory after burn-in (running average from the burn-in time)."""

    observable: str
    times: np.ndarray
    values: np.ndarray
    running_avg: np.ndarray

    @classmethod
    def build(cls, name, times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        return cls(name, times, values, running_average(times, values))

    @property
    def average(self) -> float:
        return float(self.running_avg[-1])

    def half_averages(self):
        """Time averages over the first and second half of the series."""
        mid = len(self.times) // 2
        a = running_average(self.times[:mid + 1], self.values[:mid + 1])[-1]
        b = running_average(self.times[mid:], self.values[mid:])[-1]
        return float(a), float(b)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "value", "running_avg"])
            for row in zip(self.times, self.values, self.running_avg):
                w.writerow([repr(float(x)) for x in row])


def _relative(a: float, b: float, floor: float) -> float:
    scale = max(abs(a), abs(b))
    if scale <= floor:
        return 0.0
    return abs(a - b) / scale


def require_invariant_regime(cfg: SimulationConfig) -> float:
    """Check mu > K/(2 lambda_1) and f = 0; return K."""
    if cfg.forcing is not None and np.any(cfg.forcing.coeffs != 0):
        raise ConfigurationError("invariant-measure experiments use the unforced system (f = 0)")
    K = derive_constants(cfg.noise).K if cfg.noise is not None and cfg.noise.marks.rate > 0 else 0.0
    if not cfg.params.mu > K / 2.0:
        raise AdmissibilityError(f"invariant measure needs μ > K/(2λ₁) = {K / 2:g}",
                                 condition="μ > K/(2λ₁)")
    return K


@dataclass
class TimeAverageReport:
    series: List[ObservableSeries]
    burn_in: float
    last_half_change: Dict[str, float]   # |avg(T) - avg(T/2)| / |avg(T)|, burn-in excluded
    halves_gap: Dict[str, float]         # disjoint halves, relative
    tol: float
    passed: bool

    def verdict(self) -> dict:
        return {"burn_in": self.burn_in, "tol": self.tol, "passed": self.passed,
                "averages": {s.observable: s.average for s in self.series},
                "last_half_change": self.last_half_change, "halves_gap": self.halves_gap}


def time_average_experiment(cfg: SimulationConfig, u0: SpectralField, observables: Sequence[str],
                            burn_in: float = BURN_IN, tol: float = 0.05,
                            path_index: int = 0) -> TimeAverageReport:
    """Running time averages along one long trajectory (Krylov-Bogoliubov).

    Passes when, after discarding the first ``burn_in`` fraction of the
    horizon, each running average changes by at most ``tol`` (relative) over
    the last half and the averages over the two disjoint halves agree to ``tol``.
    Averages below 1e-12 times the initial observable value count as zero.
    """
    require_invariant_regime(cfg)
    if not 0 <= burn_in < 1:
        raise ConfigurationError("burn_in must lie in [0, 1)")
    fns = {name: observable_function(name, cfg.domain, cfg.params.r) for name in observables}
    res = run_ensemble(cfg, u0, indices=[path_index], observables=fns, threads=1)
    t = res.times
    start = int(np.searchsorted(t, burn_in * cfg.T - 1e-12))
    series, change, halves = [], {}, {}
    ok = not bool(res.blown_up[0])
    for name in observables:
        vals = res.observables[name][0]
        floor = 1e-12 * max(abs(float(vals[0])), 1e-300)
        s = ObservableSeries.build(name, t[start:], vals[start:])
        mid = len(s.times) // 2
        change[name] = _relative(s.running_avg[-1], s.running_avg[mid], floor)
        halves[name] = _relative(*s.half_averages(), floor)
        ok = ok and change[name] <= tol and halves[name] <= tol
        series.append(s)
    return TimeAverageReport(series, burn_in, change, halves, tol, bool(ok))


@dataclass
class TightnessReport:
    lhs: float
    bound: float
    ratio: float
    stderr: float
    K: float
    T: float
    passed: bool

    def verdict(self) -> dict:
        return dict(self.__dict__)


def tightness_diagnostic(cfg: SimulationConfig, u0: SpectralField, paths: int,
                         tol: float = MC_SLACK, threads: Optional[int] = None) -> TightnessReport:
    """(2 mu - K) E[(1/T) int_0^T ||u||_V^2] against E||u0||^2 / T + K.

    Returns the ratio of the two sides; it passes when the ratio is at most
    ``1 + tol`` after allowing three standard errors of the left side.
    """
    K = require_invariant_regime(cfg)
    mu = cfg.params.mu
    res = run_ensemble(cfg, u0, paths=paths, threads=threads)
    ok = ~res.blown_up
    v_int = res.ledger_terms["viscous"][ok] / (2.0 * mu)     # int ||u||_V^2 per path
    samples = (2.0 * mu - K) * v_int / cfg.T
    lhs = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(len(samples))) if len(samples) > 1 else 0.0
    bound = float(np.mean(res.initial_energy)) / cfg.T + K
    if bound == 0.0:
        ratio = 0.0 if lhs == 0.0 else float("inf")
    else:
        ratio = lhs / bound
    passed = bool(lhs <= bound * (1.0 + tol) + 3.0 * se)
    return TightnessReport(lhs, bound, ratio, se, K, cfg.T, passed)


@dataclass
class CrossCheckReport:
    observable: str
    averages: np.ndarray          # ensemble mean time average per initial condition
    stderr: np.ndarray
    max_gap: float
    max_relative_gap: float
    self_consistency: float       # combined MC error of the pairwise differences
    tol: float
    passed: bool
    per_path: List[np.ndarray] = field(default_factory=list, repr=False)

    def verdict(self) -> dict:
        return {"observable": self.observable, "averages": [float(a) for a in self.averages],
                "stderr": [float(s) for s in self.stderr], "max_gap": self.max_gap,
                "max_relative_gap": self.max_relative_gap,
                "self_consistency": self.self_consistency, "tol": self.tol, "passed": self.passed}


def ergodicity_cross_check(cfg: SimulationConfig, u0_list: Sequence[SpectralField],
                           observable: str = "norm_H_sq", paths: int = 1,
                           burn_in: float = BURN_IN, tol: float = 0.05,
                           threads: Optional[int] = None) -> CrossCheckReport:
    """Long-run time averages started from several initial conditions.

    Each start gets ``paths`` independent trajectories (disjoint stream
    indices), and its long-run average is their mean time average after
    burn-in.  Passes when every pairwise gap is within ``tol`` relative to
    the larger average, or within twice the combined standard error.
    Averages below 1e-12 count as zero.
    """
    require_invariant_regime(cfg)
    k = stability_constants(cfg.params, cfg.noise)
    if not k.meansquare_ok:
        raise AdmissibilityError(f"ergodicity needs μ > (2η + L)/λ₁ (θ = {k.theta:g})",
                                 condition="μ > (2η + L)/λ₁")
    fn = observable_function(observable, cfg.domain, cfg.params.r)
    avgs, errs, per = [], [], []
    for g, u0 in enumerate(u0_list):
        res = run_ensemble(cfg, u0, indices=np.arange(paths) + g * paths,
                           observables={observable: fn}, threads=threads)
        t = res.times
        start = int(np.searchsorted(t, burn_in * cfg.T - 1e-12))
        vals = res.observables[observable][~res.blown_up]
        ta = np.array([running_average(t[start:], row[start:])[-1] for row in vals])
        per.append(ta)
        avgs.append(float(np.mean(ta)) if len(ta) else np.nan)
        errs.append(float(np.std(ta, ddof=1) / np.sqrt(len(ta))) if len(ta) > 1 else 0.0)
    avgs, errs = np.array(avgs), np.array(errs)
    gap = rel = combined = 0.0
    ok = bool(np.all(np.isfinite(avgs)))
    for i in range(len(avgs)):
        for j in range(i + 1, len(avgs)):
            g_ij = abs(avgs[i] - avgs[j])
            se = float(np.hypot(errs[i], errs[j]))
            r_ij = _relative(avgs[i], avgs[j], 1e-12)
            gap, rel, combined = max(gap, g_ij), max(rel, r_ij), max(combined, se)
            ok = ok and (r_ij <= tol or g_ij <= 2.0 * se)
    return CrossCheckReport(observable, avgs, errs, float(gap), float(rel), float(combined),
                            tol, bool(ok), per)


@dataclass
class MixingReport:
    times: np.ndarray
    gap: np.ndarray               # |E phi(u(t, u0)) - E phi(u(t, v0))|
    stderr: np.ndarray            # paired-difference standard error
    envelope: np.ndarray
    coupling_distance: np.ndarray  # sqrt(E ||u - v||_H^2)
    rate: float                   # theoretical (mu - (2 eta + L)) / 2
    fitted_rate: float            # from the coupling distance curve
    lipschitz_ok: bool            # |phi(u) - phi(v)| <= ||u - v|| on every path and sample
    passed: bool
    paths: int
    cap: float
    tol: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "gap", "stderr", "envelope", "coupling_distance"])
            for row in zip(self.times, self.gap, self.stderr, self.envelope,
                           self.coupling_distance):
                w.writerow([repr(float(x)) for x in row])

    def verdict(self) -> dict:
        return {"rate": self.rate, "fitted_rate": self.fitted_rate, "paths": self.paths,
                "cap": self.cap, "tol": self.tol, "lipschitz_ok": self.lipschitz_ok,
                "passed": self.passed}

    def write_verdict(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.verdict(), fh, indent=2)


def capped_norm(domain: TorusDomain, cap: float):
    """phi(u) = min(||u||_H, cap), a 1-Lipschitz observable in H."""
    def fn(c):
        return np.minimum(np.sqrt(sq_norm_coeffs(c, domain)), cap)
    return fn


def mixing_rate_experiment(cfg: SimulationConfig, u0: SpectralField, v0: SpectralField,
                           paths: int, cap: float = 1.0, tol: float = MC_SLACK,
                           threads: Optional[int] = None) -> MixingReport:
    """Exponential mixing through synchronous coupling with phi = min(||u||_H, cap)."""
    k = stability_constants(cfg.params, cfg.noise)
    if not k.meansquare_ok:
        raise AdmissibilityError(f"mixing needs μ > (2η + L)/λ₁ (θ = {k.theta:g})",
                                 condition="μ > (2η + L)/λ₁")
    res = run_coupled(cfg, u0, v0, paths, observables={"phi": capped_norm(cfg.domain, cap)},
                      threads=threads)
    ok = ~res.blown_up
    diff = res.u_observables["phi"][ok] - res.v_observables["phi"][ok]
    dist = res.distance_sq[ok]
    n = len(diff)
    gap = np.abs(diff.mean(axis=0))
    se = diff.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(gap)
    d0 = float(np.sqrt(np.mean(dist[:, 0])))
    rate = k.theta / 2.0
    env = d0 * np.exp(-rate * res.times)
    lip = bool(np.all(np.abs(diff) <= np.sqrt(dist) * (1.0 + 1e-9) + 1e-14))
    cd = np.sqrt(dist.mean(axis=0))
    good = cd > 1e-12 * max(d0, 1e-300)
    if good.sum() >= 2:
        fitted = float(-np.polyfit(res.times[good], np.log(cd[good]), 1)[0])
    else:
        fitted = float("inf")
    passed = bool(np.all(gap <= env * (1.0 + tol) + 3.0 * se)) and lip
    return MixingReport(res.times, gap, se, env, cd, rate, fitted, lip, passed, n, cap, tol)
