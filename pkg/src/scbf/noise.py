"""Finite-activity compensated Poisson noise and its coefficient families.

Every coefficient here has the separable form

    gamma(u, z) = c(z) * P(a u + b),

with a scalar mark profile ``c(z) = scale * z + offset``:

=================  =====  ===========  ==============
family             a      b            c(z)
=================  =====  ===========  ==============
multiplicative     1      0            sigma(z)
stabilizing        1      -u_inf       g(z)
additive           0      phi          h(z)
=================  =====  ===========  ==============

so all mark integrals reduce to the two moments ``int c dlambda`` and
``int c^2 dlambda``, which are computed exactly over atoms (or by Gauss-Legendre
quadrature on an interval).  This keeps K, L and rho closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AdmissibilityError, ConfigurationError
from .spectral import SpectralField, TorusDomain, leray_project, norm

FAMILIES = ("multiplicative", "stabilizing", "additive")
GAUSS_NODES = 32


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


@dataclass(frozen=True)
class MarkDistribution:
    """Law of the marks together with the total jump rate ``rate = lambda(Z)``.

    ``kind`` is ``"two_point"`` or ``"discrete_list"`` (finite atoms with
    weights) or ``"uniform"`` (on ``[low, high]``).  A zero rate is accepted and
    produces no events; it stands for the vanishing-noise limit.
    """

    kind: str
    rate: float
    atoms: tuple = ()
    weights: tuple = ()
    low: float = 0.0
    high: float = 0.0

    def __post_init__(self):
        if self.kind not in ("two_point", "uniform", "discrete_list"):
            raise ConfigurationError(f"unknown mark distribution {self.kind!r}")
        if not (np.isfinite(self.rate) and self.rate >= 0):
            raise ConfigurationError(f"rate must be finite and >= 0, got {self.rate}")
        if self.kind == "uniform":
            if not self.high > self.low:
                raise ConfigurationError("uniform marks need low < high")
            return
        if len(self.atoms) == 0 or len(self.atoms) != len(self.weights):
            raise ConfigurationError("atoms and weights must be nonempty and of equal length")
        if self.kind == "two_point" and len(self.atoms) != 2:
            raise ConfigurationError("two_point marks need exactly two atoms")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigurationError("weights must be nonnegative and sum to 1")

    @classmethod
    def two_point(cls, a: float, b: float, rate: float, p: float = 0.5):
        return cls("two_point", float(rate), (float(a), float(b)), (float(p), 1.0 - float(p)))

    @classmethod
    def discrete(cls, atoms, weights, rate: float):
        return cls("discrete_list", float(rate), tuple(float(a) for a in atoms),
                   tuple(float(w) for w in weights))

    @classmethod
    def single(cls, atom: float, rate: float):
        return cls.discrete([atom], [1.0], rate)

    @classmethod
    def uniform(cls, low: float, high: float, rate: float):
        return cls("uniform", float(rate), low=float(low), high=float(high))

    def nodes(self):
        """Quadrature nodes and probability weights representing the mark law."""
        if self.kind == "uniform":
            x, w = np.polynomial.legendre.leggauss(GAUSS_NODES)
            half = 0.5 * (self.high - self.low)
            return self.low + half * (x + 1.0), 0.5 * w
        return np.asarray(self.atoms, dtype=float), np.asarray(self.weights, dtype=float)

    def integrate(self, fn) -> float:
        """int fn(z) lambda(dz) = rate * E[fn(Z)]."""
        z, w = self.nodes()
        return float(self.rate * np.sum(w * fn(z)))

    def support_bounds(self):
        if self.kind == "uniform":
            return self.low, self.high
        z = np.asarray(self.atoms)[np.asarray(self.weights) > 0]
        return float(z.min()), float(z.max())

    def sample_marks(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size=n)
        atoms = np.asarray(self.atoms, dtype=float)
        idx = rng.choice(len(atoms), size=n, p=np.asarray(self.weights, dtype=float))
        return atoms[idx]


@dataclass(frozen=True)
class JumpEvent:
    time: float
    mark: float


@dataclass(frozen=True)
class EventList:
    """Jump times (strictly increasing) and marks of one path, as arrays."""

    times: np.ndarray
    marks: np.ndarray

    def __len__(self):
        return len(self.times)

    def events(self):
        return [JumpEvent(float(t), float(z)) for t, z in zip(self.times, self.marks)]


def sample_event_arrays(marks: MarkDistribution, T: float, rng: np.random.Generator) -> EventList:
    """Exponential(rate) inter-arrival times on (0, T], then i.i.d. marks."""
    if T <= 0:
        raise ConfigurationError("T must be positive")
    if marks.rate == 0:
        return EventList(np.zeros(0), np.zeros(0))
    scale = 1.0 / marks.rate
    chunk = int(marks.rate * T + 4.0 * np.sqrt(marks.rate * T) + 16)
    times = []
    t = 0.0
    while True:
        cum = t + np.cumsum(rng.exponential(scale, size=chunk))
        inside = cum[cum <= T]
        times.append(inside)
        if len(inside) < chunk:
            break
        t = float(cum[-1])
    times = np.concatenate(times)
    return EventList(times, marks.sample_marks(rng, len(times)))


def sample_jump_events(marks: MarkDistribution, T: float, rng: np.random.Generator) -> list:
    """Ordered list of :class:`JumpEvent` on (0, T]; deterministic given ``rng``'s state."""
    return sample_event_arrays(marks, T, rng).events()


@dataclass(frozen=True)
class MarkProfile:
    """Scalar mark function c(z) = scale * z + offset."""

    scale: float = 0.0
    offset: float = 0.0

    @classmethod
    def constant(cls, value: float):
        return cls(0.0, float(value))

    @classmethod
    def identity(cls):
        return cls(1.0, 0.0)

    def __call__(self, z):
        return self.scale * np.asarray(z, dtype=float) + self.offset


@dataclass(frozen=True)
class NoiseConstants:
    K: float
    L: float
    rho: Optional[float]
    mean_coeff: float       # int c dlambda
    second_moment: float    # int c^2 dlambda


@dataclass(frozen=True, eq=False)
class JumpModel:
    """Compensated Poisson noise with a separable coefficient.

    Parameters
    ----------
    marks : MarkDistribution
    family : {"multiplicative", "stabilizing", "additive"}
    profile : MarkProfile
        sigma, g or h depending on the family.
    anchor : SpectralField, optional
        Stationary state u_inf (stabilizing family).
    shape : SpectralField, optional
        Spatial shape phi (additive family).
    """

    marks: MarkDistribution
    family: str
    profile: MarkProfile
    anchor: Optional[SpectralField] = None
    shape: Optional[SpectralField] = None
    _offset: Optional[SpectralField] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown noise family {self.family!r}")
        if self.family == "stabilizing":
            if self.anchor is None:
                raise ConfigurationError("stabilizing noise needs an anchor field u_inf")
            lo, hi = self.marks.support_bounds()
            gmin = min(self.profile(lo), self.profile(hi))
            if gmin <= -1.0:
                raise AdmissibilityError(
                    f"stabilizing coefficient needs g(z) > -1 on all marks, min g = {gmin:g}",
                    condition="g(z) > -1")
            off = -leray_project(self.anchor)
        elif self.family == "additive":
            if self.shape is None:
                raise ConfigurationError("additive noise needs a shape field phi")
            off = leray_project(self.shape)
        else:
            off = None
        object.__setattr__(self, "_offset", off)

    @classmethod
    def multiplicative(cls, marks, sigma: MarkProfile):
        return cls(marks, "multiplicative", sigma)

    @classmethod
    def stabilizing(cls, marks, g: MarkProfile, anchor: SpectralField):
        return cls(marks, "stabilizing", g, anchor=anchor)

    @classmethod
    def additive(cls, marks, h: MarkProfile, shape: SpectralField):
        return cls(marks, "additive", h, shape=shape)

    @property
    def linear_part(self) -> float:
        """Coefficient a in gamma = c(z) P(a u + b)."""
        return 0.0 if self.family == "additive" else 1.0

    @property
    def offset_coeffs(self) -> Optional[np.ndarray]:
        return None if self._offset is None else self._offset.coeffs

    @property
    def domain(self) -> Optional[TorusDomain]:
        return None if self._offset is None else self._offset.domain

    def check_domain(self, u: SpectralField) -> None:
        if self._offset is not None and self._offset.domain != u.domain:
            raise ConfigurationError("noise anchor/shape and field live on different domains")

    def base_coeffs(self, c: np.ndarray) -> np.ndarray:
        """P(a u + b) for raw (possibly batched) coefficients ``c``."""
        out = self.linear_part * c
        if self._offset is not None:
            out = out + self._offset.coeffs
        return out

    def base(self, u: SpectralField) -> SpectralField:
        self.check_domain(u)
        return SpectralField(u.domain, self.base_coeffs(u.coeffs))

    @property
    def mean_coeff(self) -> float:
        return self.marks.integrate(self.profile)

    @property
    def second_moment(self) -> float:
        return self.marks.integrate(lambda z: self.profile(z) ** 2)


def noise_coefficient(model: JumpModel, u: SpectralField, z: float) -> SpectralField:
    """gamma(u, z), already Leray projected."""
    return model.base(u) * float(model.profile(z))


def compensator_drift(model: JumpModel, u: SpectralField) -> SpectralField:
    """int gamma(u, z) lambda(dz)."""
    return model.base(u) * model.mean_coeff


def apply_jump(u: SpectralField, model: JumpModel, z: float) -> SpectralField:
    """u(tau) = u(tau-) + gamma(u(tau-), z)."""
    return u + noise_coefficient(model, u, z)


def derive_constants(model: JumpModel) -> NoiseConstants:
    """Growth constant K, Lipschitz constant L and (stabilizing only) rho.

    * multiplicative: K = L = int sigma^2.
    * stabilizing: L = int g^2 and K = int g^2 * (1 + ||u_inf||_H^2), the
      smallest K with int ||gamma(u)||^2 <= K (1 + ||u||^2) for every u.
    * additive: K = int h^2 * ||phi||_H^2 and L = 0.
    """
    m1 = model.mean_coeff
    m2 = model.second_moment
    rho = None
    if model.family == "multiplicative":
        K = L = m2
    elif model.family == "stabilizing":
        L = m2
        K = m2 * (1.0 + norm(model._offset, "H") ** 2)
        rho = model.marks.integrate(lambda z: model.profile(z) - np.log1p(model.profile(z)))
    else:
        L = 0.0
        K = m2 * norm(model._offset, "H") ** 2
    return NoiseConstants(K=K, L=L, rho=rho, mean_coeff=m1, second_moment=m2)


def require_stabilizing(model: Optional[JumpModel]) -> float:
    """Return rho for a stabilizing model, refusing any setting with rho <= 0."""
    if model is None or model.marks.rate == 0:
        raise AdmissibilityError("stabilization needs jump noise; without it ρ = 0",
                                 condition="ρ > 0")
    if model.family != "stabilizing":
        raise AdmissibilityError("stabilization needs the stabilizing family g(z)(u - u_∞)",
                                 condition="γ(u_∞, z) = 0")
    rho = derive_constants(model).rho
    if not rho > 0:
        raise AdmissibilityError(f"ρ = {rho:g} must be positive", condition="ρ > 0")
    return rho


@dataclass(frozen=True)
class IsometryEstimate:
    mc_mean: float
    analytic: float
    stderr: float

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.mc_mean == self.analytic else np.inf
        return abs(self.mc_mean - self.analytic) / self.stderr


def ito_isometry_estimate(model: JumpModel, u_frozen: SpectralField, T: float, paths: int,
                          seed: int) -> IsometryEstimate:
    """Monte Carlo check of E||int int gamma dpi~||^2 = T int ||gamma||^2 dlambda.

    With the integrand frozen at ``u_frozen`` the compensated integral is
    ``(sum_i c(z_i) - T int c dlambda) * P(a u + b)``, so each path needs only
    its jump marks.
    """
    if paths < 2:
        raise ConfigurationError("need at least two paths")
    base = model.base(u_frozen)
    base_sq = norm(base, "H") ** 2
    m1 = model.mean_coeff
    values = np.empty(paths)
    for i in range(paths):
        ev = sample_event_arrays(model.marks, T, trajectory_rng(seed, i))
        s = float(np.sum(model.profile(ev.marks))) if len(ev) else 0.0
        values[i] = (s - T * m1) ** 2 * base_sq
    analytic = T * model.second_moment * base_sq
    return IsometryEstimate(float(values.mean()), float(analytic),
                            float(values.std(ddof=1) / np.sqrt(paths)))


def jump_log_rows(times, marks, gamma_norms):
    """Rows (tau, z, ||gamma||_H) for the jump log CSV."""
    return [(float(t), float(z), float(g)) for t, z, g in zip(times, marks, gamma_norms)]
