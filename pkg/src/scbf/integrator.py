"""Jump-adapted exponential Euler integration of the Galerkin system.

Between jumps each mode evolves as

    u_k <- exp(-mu |k|^2 h) u_k + phi_1(mu |k|^2 h) h N_k,
    N = -B(u) - beta C(u) + f - int gamma(u, z) lambda(dz),

so the Stokes part is exact and everything else is explicit first order.
Jump times are inserted as substep boundaries and the jump
``u <- u + gamma(u-, z)`` is applied exactly.

Paths are advanced in batches (leading axis of the coefficient array).  A run
is cut into fixed-size chunks of paths; chunks are independent, so the result
does not depend on how many worker threads process them.

The energy ledger accumulates every term of the Ito energy balance with the
left-endpoint rule the scheme itself uses; the residual therefore measures
only the time discretization error.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .errors import BlowUpError, ConfigurationError
from .noise import (  # noqa: F401  (apply_jump re-exported)
    EventList,
    JumpModel,
    apply_jump,
    derive_constants,
    sample_event_arrays,
    trajectory_rng,
)
from .operators import CBFParameters, drift_coeffs
from .spectral import (
    SpectralField,
    TorusDomain,
    galerkin_mask,
    inner_coeffs,
    leray_coeffs,
    sq_norm_coeffs,
)

Observable = Callable[[np.ndarray], np.ndarray]


def resolve_threads(threads: Optional[int] = None) -> int:
    """Explicit value, else the SCBF_THREADS environment variable, else 1."""
    if threads is None:
        env = os.environ.get("SCBF_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    return int(threads)


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    """Everything that determines a simulated path except its initial state.

    ``kmax`` is the Galerkin cube truncation (every |k_i| <= kmax); ``None``
    keeps all resolved modes.  ``chunk_size`` fixes how paths are batched and is
    part of the reproducibility contract.
    """

    domain: TorusDomain
    params: CBFParameters
    forcing: Optional[SpectralField] = None
    noise: Optional[JumpModel] = None
    kmax: Optional[int] = None
    T: float = 1.0
    dt: float = 1e-3
    record_every: int = 1
    seed: int = 0
    blowup_factor: float = 1e6
    chunk_size: int = 32

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not self.T > 0 or self.dt > self.T * (1 + 1e-12):
            raise ConfigurationError("need 0 < dt <= T")
        n = self.domain.resolution
        if self.kmax is not None and not 0 <= self.kmax <= n // 2:
            raise ConfigurationError(f"kmax must lie in [0, N/2 = {n // 2}]")
        if self.record_every < 1 or self.chunk_size < 1:
            raise ConfigurationError("record_every and chunk_size must be >= 1")
        for fld in (self.forcing,):
            if fld is not None and fld.domain != self.domain:
                raise ConfigurationError("forcing lives on a different domain")
        if self.noise is not None and self.noise.domain not in (None, self.domain):
            raise ConfigurationError("noise anchor/shape lives on a different domain")

    @property
    def n_steps(self) -> int:
        return int(np.ceil(self.T / self.dt - 1e-9))

    def step_times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.T
        return t

    def record_steps(self) -> np.ndarray:
        steps = list(range(0, self.n_steps, self.record_every)) + [self.n_steps]
        return np.unique(np.asarray(steps))

    def replace(self, **changes) -> "SimulationConfig":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return SimulationConfig(**kw)


# --------------------------------------------------------------------------
# ledger and trajectory records
# --------------------------------------------------------------------------

@dataclass
class EnergyLedger:
    """All terms of the pathwise energy balance on [0, T].

    ``residual = kinetic_delta + viscous + damping - forcing_work - jump_qv
    - martingale_term`` vanishes for the exact solution.
    """

    kinetic_delta: float
    viscous: float
    damping: float
    forcing_work: float
    jump_qv: float
    martingale_term: float
    initial_energy: float = 0.0

    @property
    def residual(self) -> float:
        return (self.kinetic_delta + self.viscous + self.damping - self.forcing_work
                - self.jump_qv - self.martingale_term)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["residual"] = self.residual
        return out


@dataclass
class Trajectory:
    """Sampled norms of one path, jump times included (post-jump values)."""

    times: np.ndarray
    norm_H: np.ndarray
    norm_V: np.ndarray
    norm_Lr1: np.ndarray
    is_jump: np.ndarray
    jump_times: np.ndarray
    jump_marks: np.ndarray
    jump_gamma: np.ndarray
    final: Optional[SpectralField] = None

    def csv_rows(self):
        for t, h, v, l, j in zip(self.times, self.norm_H, self.norm_V, self.norm_Lr1,
                                 self.is_jump):
            yield [repr(float(t)), repr(float(h)), repr(float(v)), repr(float(l)), int(j)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "norm_H", "norm_V", "norm_Lr1", "is_jump"])
            w.writerows(self.csv_rows())

    def write_jump_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "z", "gamma_norm_H"])
            for row in zip(self.jump_times, self.jump_marks, self.jump_gamma):
                w.writerow([repr(float(x)) for x in row])


LEDGER_KEYS = ("viscous", "damping", "forcing", "compensator", "qv", "mart_jump")


@dataclass
class EnsembleResult:
    """Output of :func:`run_ensemble`; per-path arrays have the path index first."""

    times: np.ndarray                       # (n_rec,)
    norm_H: np.ndarray                      # (P, n_rec)
    norm_V: np.ndarray
    norm_Lr1: np.ndarray
    observables: Dict[str, np.ndarray]      # (P, n_rec)
    observable_max: Dict[str, np.ndarray]   # max over [t_{j-1}, t_j], column 0 at t = 0
    ledger_terms: Dict[str, np.ndarray]     # (P,)
    initial_energy: np.ndarray
    final_energy: np.ndarray
    sup_energy: np.ndarray
    jumps: list                             # per path: dict of arrays
    final: np.ndarray                       # (P, dim, N...)
    blown_up: np.ndarray
    blowup_time: np.ndarray
    indices: np.ndarray
    domain: Optional[TorusDomain] = None

    @property
    def paths(self) -> int:
        return len(self.indices)

    def ledger(self, i: int) -> EnergyLedger:
        lt = self.ledger_terms
        return EnergyLedger(
            kinetic_delta=float(self.final_energy[i] - self.initial_energy[i]),
            viscous=float(lt["viscous"][i]),
            damping=float(lt["damping"][i]),
            forcing_work=float(lt["forcing"][i]),
            jump_qv=float(lt["qv"][i]),
            martingale_term=float(lt["mart_jump"][i] - lt["compensator"][i]),
            initial_energy=float(self.initial_energy[i]),
        )

    def residuals(self) -> np.ndarray:
        return np.array([self.ledger(i).residual for i in range(self.paths)])

    def trajectory(self, i: int) -> Trajectory:
        j = self.jumps[i]
        t = np.concatenate([self.times, j["times"]])
        order = np.argsort(t, kind="stable")
        is_jump = np.concatenate([np.zeros(len(self.times), int), np.ones(len(j["times"]), int)])
        cat = lambda a, b: np.concatenate([a, b])[order]  # noqa: E731
        final = None
        if self.domain is not None:
            final = SpectralField(self.domain, self.final[i])
        return Trajectory(
            times=t[order],
            norm_H=cat(self.norm_H[i], j["norm_H"]),
            norm_V=cat(self.norm_V[i], j["norm_V"]),
            norm_Lr1=cat(self.norm_Lr1[i], j["norm_Lr1"]),
            is_jump=is_jump[order],
            jump_times=j["times"], jump_marks=j["marks"], jump_gamma=j["gamma"],
            final=final,
        )


# --------------------------------------------------------------------------
# stepping kernel
# --------------------------------------------------------------------------

class _Stepper:
    """Precomputed factors and the explicit right-hand side for one config."""

    def __init__(self, cfg: SimulationConfig):
        d = cfg.domain
        self.cfg = cfg
        self.domain = d
        self.mu, self.beta, self.r = cfg.params.mu, cfg.params.beta, cfg.params.r
        kmax = d.resolution // 2 if cfg.kmax is None else cfg.kmax
        self.mask = (galerkin_mask(d, kmax) & d.active).astype(float)
        self.k2 = d.k2
        self.f = None
        if cfg.forcing is not None:
            self.f = self.mask * leray_coeffs(np.array(cfg.forcing.coeffs), d)
        nz = cfg.noise
        self.noise = nz
        self.cbar = 0.0
        self.a = 0.0
        self.offset = None
        if nz is not None:
            self.cbar = nz.mean_coeff
            self.a = nz.linear_part
            if nz.offset_coeffs is not None:
                self.offset = self.mask * nz.offset_coeffs
        self._cache = {}

    def factors(self, h: float):
        key = float(h)
        hit = self._cache.get(key)
        if hit is None:
            x = self.mu * self.k2 * h
            e = np.exp(-x)
            with np.errstate(invalid="ignore", divide="ignore"):
                phi = np.where(self.k2 > 0, -np.expm1(-x) / (self.mu * np.where(self.k2 > 0, self.k2, 1.0)), h)
            hit = (e, phi)
            if len(self._cache) < 8:
                self._cache[key] = hit
        return hit

    def base(self, c: np.ndarray) -> np.ndarray:
        out = self.a * c
        if self.offset is not None:
            out = out + self.offset
        return out

    def rhs(self, c: np.ndarray):
        """Explicit part N(c) and the left-endpoint ledger integrands."""
        d = self.domain
        nl, lr1 = drift_coeffs(c, d, self.beta, self.r)
        vsq = sq_norm_coeffs(c, d, self.k2)
        fdot = np.zeros(len(c))
        ddot = np.zeros(len(c))
        if self.f is not None:
            nl = nl + self.f
            fdot = inner_coeffs(self.f, c, d)
        if self.noise is not None and self.cbar != 0.0:
            drift = self.cbar * self.base(c)
            nl = nl - drift
            ddot = inner_coeffs(drift, c, d)
        nl = nl * self.mask
        return nl, lr1, vsq, fdot, ddot

    def advance(self, c, nl, h):
        e, phi = self.factors(h)
        return e * c + phi * nl


def _as_batch(u0, paths: int, domain: TorusDomain) -> np.ndarray:
    if isinstance(u0, SpectralField):
        return np.broadcast_to(u0.coeffs, (paths,) + u0.coeffs.shape).copy()
    if isinstance(u0, (list, tuple)):
        return np.stack([np.asarray(u.coeffs if isinstance(u, SpectralField) else u) for u in u0])
    arr = np.asarray(u0, dtype=complex)
    if arr.shape == (domain.dim,) + domain.shape:
        return np.broadcast_to(arr, (paths,) + arr.shape).copy()
    return arr.copy()


def _simulate_chunk(stp: _Stepper, c0: np.ndarray, events: Sequence[EventList],
                    observables: Dict[str, Observable],
                    chunk_observables: Dict[str, Observable]) -> dict:
    cfg = stp.cfg
    d = stp.domain
    P = len(c0)
    c = (c0 * stp.mask).astype(complex)
    t_steps = cfg.step_times()
    n_steps = cfg.n_steps
    rec_steps = cfg.record_steps()
    n_rec = len(rec_steps)
    is_rec = np.zeros(n_steps + 1, bool)
    is_rec[rec_steps] = True
    r1 = 1.0 / (stp.r + 1.0)

    obs_all = {"energy": lambda x: sq_norm_coeffs(x, d)}
    obs_all.update(observables)
    rec_H = np.full((P, n_rec), np.nan)
    rec_V = np.full((P, n_rec), np.nan)
    rec_L = np.full((P, n_rec), np.nan)
    rec_obs = {k: np.full((P, n_rec), np.nan) for k in obs_all}
    rec_max = {k: np.full((P, n_rec), np.nan) for k in obs_all}
    rec_chunk = {k: np.full((P, n_rec), np.nan) for k in chunk_observables}
    cur_max = {k: np.full(P, -np.inf) for k in obs_all}
    led = {k: np.zeros(P) for k in LEDGER_KEYS}

    e0 = sq_norm_coeffs(c, d)
    scale = np.maximum(np.sqrt(e0), 1.0)
    alive = np.ones(P, bool)
    blow_t = np.full(P, np.nan)
    ptr = np.zeros(P, int)
    n_ev = np.array([len(ev) for ev in events])
    jrec = [dict(times=[], marks=[], gamma=[], norm_H=[], norm_V=[], norm_Lr1=[]) for _ in range(P)]
    sup = e0.copy()

    def bump_max(rows, sub):
        for k, fn in obs_all.items():
            vals = fn(sub)
            cur_max[k][rows] = np.maximum(cur_max[k][rows], vals)

    def ledger_add(rows, h, lr1, vsq, fdot, ddot):
        led["viscous"][rows] += 2.0 * stp.mu * h * vsq
        led["damping"][rows] += 2.0 * stp.beta * h * lr1
        led["forcing"][rows] += 2.0 * h * fdot
        led["compensator"][rows] += 2.0 * h * ddot

    rec_j = 0
    for n in range(n_steps + 1):
        idx = np.flatnonzero(alive)
        if n == n_steps:
            lr1 = drift_coeffs(c[idx], d, stp.beta, stp.r)[1] if len(idx) else np.zeros(0)
            vsq = sq_norm_coeffs(c[idx], d, stp.k2)
        else:
            if len(idx):
                nl, lr1, vsq, fdot, ddot = stp.rhs(c[idx])
            else:
                nl = c[idx]
                lr1 = vsq = fdot = ddot = np.zeros(0)
        if is_rec[n]:
            sub = c[idx]
            rec_H[idx, rec_j] = np.sqrt(sq_norm_coeffs(sub, d))
            rec_V[idx, rec_j] = np.sqrt(vsq)
            rec_L[idx, rec_j] = lr1 ** r1
            for k, fn in obs_all.items():
                vals = fn(sub)
                rec_obs[k][idx, rec_j] = vals
                rec_max[k][idx, rec_j] = np.maximum(cur_max[k][idx], vals)
                cur_max[k][idx] = vals
            for k, fn in chunk_observables.items():
                vals = np.asarray(fn(c), dtype=float)
                vals[~alive] = np.nan
                rec_chunk[k][:, rec_j] = vals
            rec_j += 1
        if n == n_steps or len(idx) == 0:
            break
        t0, t1 = t_steps[n], t_steps[n + 1]
        h = t1 - t0
        nxt = np.array([events[i].times[ptr[i]] if ptr[i] < n_ev[i] else np.inf for i in idx])
        jumping = nxt <= t1
        plain = ~jumping
        if plain.any():
            rows = idx[plain]
            c[rows] = stp.advance(c[rows], nl[plain], h)
            ledger_add(rows, h, lr1[plain], vsq[plain], fdot[plain], ddot[plain])
        for pos in np.flatnonzero(jumping):
            i = idx[pos]
            ev = events[i]
            cr = c[i:i + 1]
            terms = (nl[pos:pos + 1], lr1[pos:pos + 1], vsq[pos:pos + 1],
                     fdot[pos:pos + 1], ddot[pos:pos + 1])
            tc = t0
            while ptr[i] < n_ev[i] and ev.times[ptr[i]] <= t1:
                tau, z = float(ev.times[ptr[i]]), float(ev.marks[ptr[i]])
                hh = tau - tc
                if hh > 0:
                    cr = stp.advance(cr, terms[0], hh)
                    ledger_add([i], hh, *terms[1:])
                    bump_max([i], cr)
                gam = float(stp.noise.profile(z)) * stp.base(cr) * stp.mask
                led["qv"][i] += sq_norm_coeffs(gam, d)[0]
                led["mart_jump"][i] += 2.0 * inner_coeffs(gam, cr, d)[0]
                cr = cr + gam
                tc = tau
                ptr[i] += 1
                terms = stp.rhs(cr)
                jr = jrec[i]
                jr["times"].append(tau)
                jr["marks"].append(z)
                jr["gamma"].append(float(np.sqrt(sq_norm_coeffs(gam, d)[0])))
                esq = sq_norm_coeffs(cr, d)[0]
                jr["norm_H"].append(float(np.sqrt(esq)))
                jr["norm_V"].append(float(np.sqrt(terms[2][0])))
                jr["norm_Lr1"].append(float(terms[1][0] ** r1))
                bump_max([i], cr)
                sup[i] = max(sup[i], esq)
            hh = t1 - tc
            if hh > 0:
                cr = stp.advance(cr, terms[0], hh)
                ledger_add([i], hh, *terms[1:])
            c[i] = cr[0]
        sub = c[idx]
        bump_max(idx, sub)
        en = sq_norm_coeffs(sub, d)
        sup[idx] = np.maximum(sup[idx], en)
        bad = ~np.isfinite(en) | (np.sqrt(np.where(np.isfinite(en), en, np.inf)) > cfg.blowup_factor * scale[idx])
        if bad.any():
            rows = idx[bad]
            alive[rows] = False
            blow_t[rows] = t1

    final_energy = sq_norm_coeffs(c, d)
    final_energy[~alive] = np.nan
    jumps = []
    for jr in jrec:
        jumps.append({k: np.asarray(v, dtype=float) for k, v in jr.items()})
    rec_obs.update(rec_chunk)
    return dict(norm_H=rec_H, norm_V=rec_V, norm_Lr1=rec_L, observables=rec_obs,
                observable_max=rec_max, ledger_terms=led, initial_energy=e0,
                final_energy=final_energy, sup_energy=sup, jumps=jumps, final=c,
                blown_up=~alive, blowup_time=blow_t)


def default_events(cfg: SimulationConfig, indices: Sequence[int]) -> list:
    """Jump events of each path from its own stream ``(cfg.seed, index)``."""
    if cfg.noise is None or cfg.noise.marks.rate == 0:
        return [EventList(np.zeros(0), np.zeros(0)) for _ in indices]
    return [sample_event_arrays(cfg.noise.marks, cfg.T, trajectory_rng(cfg.seed, i))
            for i in indices]


def run_ensemble(cfg: SimulationConfig, u0, paths: Optional[int] = None,
                 indices: Optional[Sequence[int]] = None,
                 events: Optional[Sequence[EventList]] = None,
                 observables: Optional[Dict[str, Observable]] = None,
                 chunk_observables: Optional[Dict[str, Observable]] = None,
                 threads: Optional[int] = None) -> EnsembleResult:
    """Simulate many paths.

    Parameters
    ----------
    u0 : SpectralField, coefficient array ``(P, dim, N...)`` or list of fields
        Initial states; a single field is shared by every path.
    paths, indices : trajectory indices default to ``range(paths)``; index ``i``
        draws its jumps from the stream ``(cfg.seed, i)``.
    events : explicit jump events per path (used for synchronous coupling).
    observables : extra functions of a coefficient batch returning one value
        per path, recorded at the record times together with their running
        maxima over every intermediate state.
    chunk_observables : functions of the whole chunk's coefficient array
        ``(p, dim, N...)`` returning one value per row, evaluated only at
        record times (all rows of a chunk are then synchronized).  Used for
        quantities that couple rows, such as the distance between the two
        members of a coupled pair.
    """
    d = cfg.domain
    if indices is None:
        if paths is None:
            arr = np.asarray(u0.coeffs if isinstance(u0, SpectralField) else u0)
            paths = 1 if arr.ndim == d.dim + 1 else len(arr)
        indices = np.arange(paths)
    indices = np.asarray(indices, dtype=int)
    P = len(indices)
    c0 = _as_batch(u0, P, d)
    if c0.shape != (P, d.dim) + d.shape:
        raise ConfigurationError(f"initial states have shape {c0.shape}")
    if events is None:
        events = default_events(cfg, indices)
    if len(events) != P:
        raise ConfigurationError("need one event list per path")
    observables = dict(observables or {})
    chunk_observables = dict(chunk_observables or {})
    stp = _Stepper(cfg)
    cs = cfg.chunk_size
    bounds = [(s, min(s + cs, P)) for s in range(0, P, cs)]

    def work(b):
        s, e = b
        return _simulate_chunk(stp, c0[s:e], events[s:e], observables, chunk_observables)

    nthreads = min(resolve_threads(threads), max(1, len(bounds)))
    if nthreads == 1:
        parts = [work(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            parts = list(pool.map(work, bounds))

    def cat(key):
        return np.concatenate([p[key] for p in parts])

    def cat_dict(key):
        return {k: np.concatenate([p[key][k] for p in parts]) for k in parts[0][key]}

    times = cfg.step_times()[cfg.record_steps()]
    return EnsembleResult(
        times=times, norm_H=cat("norm_H"), norm_V=cat("norm_V"), norm_Lr1=cat("norm_Lr1"),
        observables=cat_dict("observables"), observable_max=cat_dict("observable_max"),
        ledger_terms=cat_dict("ledger_terms"), initial_energy=cat("initial_energy"),
        final_energy=cat("final_energy"), sup_energy=cat("sup_energy"),
        jumps=[j for p in parts for j in p["jumps"]], final=cat("final"),
        blown_up=cat("blown_up"), blowup_time=cat("blowup_time"), indices=indices, domain=d)


def pair_distance_sq(domain: TorusDomain) -> Observable:
    """Chunk observable ``||u_{2i} - u_{2i+1}||_H^2`` reported on both rows of pair i."""
    def fn(c):
        dsq = sq_norm_coeffs(c[0::2] - c[1::2], domain)
        return np.repeat(dsq, 2)
    return fn


@dataclass
class CoupledResult:
    """Synchronously coupled pairs; ``u`` and ``v`` rows split out of one run."""

    times: np.ndarray
    distance_sq: np.ndarray             # (P, n_rec), ||u - v||_H^2
    u_observables: Dict[str, np.ndarray]
    v_observables: Dict[str, np.ndarray]
    ensemble: EnsembleResult

    @property
    def blown_up(self) -> np.ndarray:
        b = self.ensemble.blown_up
        return b[0::2] | b[1::2]


def run_coupled(cfg: SimulationConfig, u0, v0, paths: int,
                observables: Optional[Dict[str, Observable]] = None,
                threads: Optional[int] = None, index_offset: int = 0) -> CoupledResult:
    """Pairs (u_i, v_i) driven by the same jump times and marks from stream ``(seed, i)``.

    Pair members are interleaved so that they always share a chunk.
    """
    if cfg.chunk_size % 2:
        cfg = cfg.replace(chunk_size=cfg.chunk_size + 1)
    d = cfg.domain
    cu = _as_batch(u0, paths, d)
    cv = _as_batch(v0, paths, d)
    c0 = np.empty((2 * paths,) + cu.shape[1:], dtype=complex)
    c0[0::2] = cu
    c0[1::2] = cv
    idx = np.arange(paths) + index_offset
    ev = default_events(cfg, idx)
    events = [e for e in ev for _ in range(2)]
    res = run_ensemble(cfg, c0, indices=np.repeat(idx, 2), events=events,
                       observables=observables,
                       chunk_observables={"pair_distance_sq": pair_distance_sq(d)},
                       threads=threads)
    dist = res.observables["pair_distance_sq"][0::2]
    keys = [k for k in res.observables if k != "pair_distance_sq"]
    return CoupledResult(res.times, dist,
                         {k: res.observables[k][0::2] for k in keys},
                         {k: res.observables[k][1::2] for k in keys}, res)


# --------------------------------------------------------------------------
# single-path API
# --------------------------------------------------------------------------

def deterministic_step(u: SpectralField, dt: float, cfg: SimulationConfig) -> SpectralField:
    """One exponential Euler step of the drift (compensator included, no jumps)."""
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    stp = _Stepper(cfg)
    c = (u.coeffs * stp.mask)[None]
    nl = stp.rhs(c)[0]
    return SpectralField(u.domain, stp.advance(c, nl, dt)[0])


def simulate_path(cfg: SimulationConfig, trajectory_index: int, u0: SpectralField):
    """One path; returns ``(Trajectory, EnergyLedger)`` or raises BlowUpError."""
    res = run_ensemble(cfg, u0, indices=[trajectory_index], threads=1)
    if res.blown_up[0]:
        t = float(res.blowup_time[0])
        last = np.nanmax(res.norm_H[0]) if np.any(np.isfinite(res.norm_H[0])) else np.nan
        raise BlowUpError(f"path {trajectory_index} left the blow-up guard at t = {t:g}",
                          time=t, norms={"max_recorded_norm_H": float(last)})
    return res.trajectory(0), res.ledger(0)


@dataclass
class EnergyEstimateReport:
    estimate: float
    stderr: float
    bound: float
    K: float
    T: float
    initial_energy: float
    passed: bool
    blowups: int = 0
    samples: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("samples")
        return out


def energy_estimate_check(cfg: SimulationConfig, u0: SpectralField, paths: int,
                          threads: Optional[int] = None) -> EnergyEstimateReport:
    """Monte Carlo of E[sup ||u||^2 + 4 mu int ||u||_V^2 + 4 beta int ||u||^(r+1)].

    Compared with ``(2 E||u0||^2 + 14 K T) exp(28 K T)``; the check needs f = 0.
    """
    if cfg.forcing is not None and np.any(cfg.forcing.coeffs != 0):
        raise ConfigurationError("the energy estimate applies to the unforced system (f = 0)")
    K = derive_constants(cfg.noise).K if cfg.noise is not None else 0.0
    res = run_ensemble(cfg, u0, paths=paths, threads=threads)
    lt = res.ledger_terms
    samples = res.sup_energy + 2.0 * lt["viscous"] + 2.0 * lt["damping"]
    ok = ~res.blown_up
    samples = samples[ok]
    est = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(len(samples))) if len(samples) > 1 else 0.0
    e0 = float(np.mean(res.initial_energy))
    bound = (2.0 * e0 + 14.0 * K * cfg.T) * np.exp(28.0 * K * cfg.T)
    passed = bool(est < bound) if e0 > 0 or K > 0 else bool(est <= bound)
    return EnergyEstimateReport(est, se, float(bound), K, cfg.T, e0, passed,
                                int(res.blown_up.sum()), samples)


# --------------------------------------------------------------------------
# closed-form oracle
# --------------------------------------------------------------------------

def beltrami_field(domain: TorusDomain, amplitude: float = 1.0) -> SpectralField:
    """u = a (sin z, cos z, 0): solenoidal, curl u = u and |u| = a everywhere.

    Along the noiseless flow B(u) = 0 and C(u) = |u|^(r-1) u, so the shape is
    kept and only the amplitude evolves (see ``bernoulli_amplitude``).
    """
    if domain.dim != 3:
        raise ConfigurationError("the Beltrami field is three dimensional")
    return SpectralField.from_function(
        domain, lambda x, y, z: (amplitude * np.sin(z), amplitude * np.cos(z), 0.0 * z))


def bernoulli_amplitude(a0, mu: float, beta: float, r: float, t):
    """Solution of a' = -mu a - beta a^r (|k| = 1 Beltrami data, lambda_1 = 1).

    With y = a^(1-r): y' = (r-1)(mu y + beta), so
    a(t) = ((a0^(1-r) + beta/mu) exp((r-1) mu t) - beta/mu)^(-1/(r-1)).
    """
    t = np.asarray(t, dtype=float)
    if a0 == 0:
        return np.zeros_like(t)
    y0 = abs(a0) ** (1.0 - r)
    y = (y0 + beta / mu) * np.exp((r - 1.0) * mu * t) - beta / mu
    return np.sign(a0) * y ** (-1.0 / (r - 1.0))
