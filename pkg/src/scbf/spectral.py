"""Periodic torus, divergence-free Fourier fields and the Stokes calculus.

Fields are stored as full-layout Fourier coefficients in numpy FFT ordering,
with the convention

    u(x) = sum_k u_hat[k] exp(i k.x),    x in [0, 2*pi)^dim,

so ``||u||_H^2 = (2*pi)^dim * sum_k |u_hat[k]|^2``.  Nyquist modes
(``|k_i| = N/2``) are kept at zero so every field is an exact trigonometric
polynomial with a Hermitian-consistent spectrum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Union

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusDomain:
    """The torus [0, 2*pi)^dim resolved with ``resolution`` modes per axis.

    ``oversample`` multiplies the resolution to give the physical grid used
    for L^p quadrature and for the dealiased products.
    """

    dim: int
    resolution: int
    oversample: int = 4

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigurationError(f"dim must be 2 or 3, got {self.dim}")
        n = self.resolution
        if not isinstance(n, (int, np.integer)) or n < 8 or n % 2:
            raise ConfigurationError(f"resolution must be an even integer >= 8, got {n}")
        if self.oversample < 2:
            raise ConfigurationError(f"oversample must be >= 2, got {self.oversample}")

    @property
    def N(self) -> int:
        return self.resolution

    @property
    def period(self) -> float:
        return TWO_PI

    @property
    def volume(self) -> float:
        return TWO_PI ** self.dim

    @property
    def shape(self) -> tuple:
        return (self.resolution,) * self.dim

    @property
    def lambda1(self) -> float:
        """Smallest nonzero Stokes eigenvalue (Poincare constant)."""
        return 1.0

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavevectors, shape ``(dim, N, ..., N)``, each in (-N/2, N/2]."""
        n = self.resolution
        k1 = np.fft.fftfreq(n, 1.0 / n).astype(int)
        k1[n // 2] = n // 2
        grids = np.meshgrid(*([k1] * self.dim), indexing="ij")
        out = np.stack(grids)
        out.setflags(write=False)
        return out

    @cached_property
    def k2(self) -> np.ndarray:
        """Stokes eigenvalue |k|^2 attached to each coefficient slot."""
        out = np.sum(self.wavenumbers.astype(float) ** 2, axis=0)
        out.setflags(write=False)
        return out

    @cached_property
    def active(self) -> np.ndarray:
        """Slots that may carry energy: zero mode and Nyquist planes excluded."""
        kabs = np.abs(self.wavenumbers)
        out = np.all(kabs < self.resolution // 2, axis=0) & (self.k2 > 0)
        out.setflags(write=False)
        return out

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Nonzero |k|^2 over the wavenumber set, sorted (lattice multiplicity)."""
        vals = self.k2[self.k2 > 0].ravel()
        return np.sort(vals)

    def quad_size(self, power: float = 2.0) -> int:
        """Physical grid size for integrating a degree-``power`` product of fields.

        Exact for integer ``power`` because active modes satisfy |k_i| < N/2.
        """
        factor = max(self.oversample, math.ceil(power / 2.0), 2)
        return factor * self.resolution


def make_domain(dim: int, resolution: int, oversample: int = 4) -> TorusDomain:
    return TorusDomain(dim, resolution, oversample)


# --------------------------------------------------------------------------
# FFT plumbing on raw coefficient arrays (leading batch axes allowed)
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _pad_indices(n: int, m: int):
    ks = np.concatenate([np.arange(0, n // 2), np.arange(-n // 2 + 1, 0)])
    return ks % n, ks % m, np.arange(n // 2)


def to_physical(coeffs: np.ndarray, dim: int, m: int) -> np.ndarray:
    """Evaluate coefficients (last ``dim`` axes of size N) on an m^dim grid.

    The transform is separable and pruned: only the N/2 retained columns of the
    half spectrum are transformed along the leading spatial axes.
    """
    n = coeffs.shape[-1]
    src, dst, half = _pad_indices(n, m)
    work = coeffs[..., : n // 2]
    for ax in range(-dim, -1):
        shape = list(work.shape)
        shape[ax] = m
        buf = np.zeros(shape, dtype=complex)
        sel_dst = [slice(None)] * len(shape)
        sel_src = [slice(None)] * len(shape)
        sel_dst[ax] = dst
        sel_src[ax] = src
        buf[tuple(sel_dst)] = work[tuple(sel_src)]
        work = sfft.ifft(buf, axis=ax, norm="forward", overwrite_x=True)
    buf = np.zeros(work.shape[:-1] + (m // 2 + 1,), dtype=complex)
    buf[..., : n // 2] = work
    return sfft.irfft(buf, n=m, axis=-1, norm="forward", overwrite_x=True)


def to_spectral(values: np.ndarray, dim: int, n: int) -> np.ndarray:
    """Fourier coefficients of real grid values, truncated to the active N-mode set."""
    m = values.shape[-1]
    src, dst, half = _pad_indices(n, m)
    work = sfft.rfft(values, axis=-1, norm="forward")[..., : n // 2]
    for ax in range(-2, -dim - 1, -1):
        work = sfft.fft(work, axis=ax, norm="forward", overwrite_x=True)
        sel = [slice(None)] * work.ndim
        sel[ax] = dst
        work = work[tuple(sel)]
    lead = values.shape[:-dim]
    out = np.zeros(lead + (n,) * dim, dtype=complex)
    sel = [Ellipsis] + [src] * (dim - 1)
    out[(Ellipsis,) + np.ix_(*([src] * (dim - 1) + [half]))] = work
    pos = out[..., 1:n // 2]
    neg = (-np.arange(n)) % n
    for ax in range(-dim, -1):
        pos = np.take(pos, neg, axis=ax)
    out[..., n // 2 + 1:] = np.conj(pos[..., ::-1])
    out[..., n // 2] = 0.0
    return out


def leray_coeffs(c: np.ndarray, domain: TorusDomain) -> np.ndarray:
    """Mode-wise projection (I - k k^T/|k|^2) on the vector axis ``-dim-1``, mean removed."""
    k = domain.wavenumbers.astype(float)
    k2 = np.where(domain.k2 > 0, domain.k2, 1.0)
    div = np.sum(k * c, axis=-domain.dim - 1, keepdims=True)
    out = c - k * (div / k2)
    # H is the zero-mean solenoidal space, so the projection also drops the mean
    out[(Ellipsis, slice(None)) + (0,) * domain.dim] = 0.0
    return out


def gradient_coeffs(c: np.ndarray, domain: TorusDomain) -> np.ndarray:
    """Coefficients of d_j u_i, shape (..., dim[i], dim[j], N...)."""
    k = domain.wavenumbers.astype(float)
    return 1j * np.expand_dims(c, axis=-domain.dim - 1) * k


def sq_norm_coeffs(c: np.ndarray, domain: TorusDomain, weight=None) -> np.ndarray:
    """(2 pi)^dim sum |c|^2 (optionally weighted per mode) over vector+spatial axes."""
    a = np.abs(c) ** 2
    if weight is not None:
        a = a * weight
    axes = tuple(range(-domain.dim - 1, 0))
    return domain.volume * np.sum(a, axis=axes)


def inner_coeffs(a: np.ndarray, b: np.ndarray, domain: TorusDomain) -> np.ndarray:
    axes = tuple(range(-domain.dim - 1, 0))
    return domain.volume * np.real(np.sum(a * np.conj(b), axis=axes))


# --------------------------------------------------------------------------
# Field type
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real vector field on the torus held as Fourier coefficients.

    ``coeffs`` has shape ``(dim, N, ..., N)`` and is read-only.
    """

    domain: TorusDomain
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        expected = (self.domain.dim,) + self.domain.shape
        if c.shape != expected:
            raise ConfigurationError(f"coeffs shape {c.shape} != {expected}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, domain: TorusDomain) -> "SpectralField":
        return cls(domain, np.zeros((domain.dim,) + domain.shape, dtype=complex))

    @classmethod
    def from_physical(cls, domain: TorusDomain, values: np.ndarray) -> "SpectralField":
        """Project real grid samples (shape ``(dim, M, ..., M)``) onto the active modes.

        The mean is discarded so the result lies in the zero-mean space.
        """
        values = np.asarray(values, dtype=float)
        c = to_spectral(values, domain.dim, domain.resolution)
        c[(slice(None),) + (0,) * domain.dim] = 0.0
        return cls(domain, c)

    @classmethod
    def from_function(cls, domain: TorusDomain, func, m: int | None = None) -> "SpectralField":
        """Sample ``func(*coords) -> sequence of dim arrays`` on an m-point grid."""
        m = m or domain.quad_size()
        x = np.arange(m) * TWO_PI / m
        coords = np.meshgrid(*([x] * domain.dim), indexing="ij")
        vals = np.stack([np.broadcast_to(np.asarray(v, dtype=float), coords[0].shape)
                         for v in func(*coords)])
        return cls.from_physical(domain, vals)

    def physical(self, m: int | None = None) -> np.ndarray:
        return to_physical(self.coeffs, self.domain.dim, m or self.domain.quad_size())

    def _check(self, other: "SpectralField"):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.domain != self.domain:
            raise ConfigurationError("fields live on different domains")
        return None

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.domain, self.coeffs + other.coeffs)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.domain, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return SpectralField(self.domain, self.coeffs * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def __neg__(self):
        return SpectralField(self.domain, -self.coeffs)

    def is_hermitian(self, atol: float = 1e-14) -> bool:
        c = self.coeffs
        neg = (-np.arange(self.domain.resolution)) % self.domain.resolution
        flipped = c
        for ax in range(1, self.domain.dim + 1):
            flipped = np.take(flipped, neg, axis=ax)
        scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
        return bool(np.max(np.abs(c - np.conj(flipped)), initial=0.0) <= atol * scale)

    def divergence_max(self) -> float:
        k = self.domain.wavenumbers.astype(float)
        return float(np.max(np.abs(np.sum(k * self.coeffs, axis=0))))


def inner(u: SpectralField, v: SpectralField) -> float:
    """H inner product (u, v) = integral of u . v."""
    u._check(v)
    return float(inner_coeffs(u.coeffs, v.coeffs, u.domain))


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------

def leray_project(u: SpectralField) -> SpectralField:
    return SpectralField(u.domain, leray_coeffs(u.coeffs, u.domain))


def stokes_apply(u: SpectralField) -> SpectralField:
    """A u: multiply each mode by |k|^2."""
    return SpectralField(u.domain, u.coeffs * u.domain.k2)


def _lp_from_grid(values: np.ndarray, p: float, volume: float) -> float:
    mag = np.sqrt(np.sum(values ** 2, axis=0))
    if np.isinf(p):
        return float(np.max(mag))
    return float((volume * np.mean(mag ** p)) ** (1.0 / p))


Which = Union[str, float, int]


def norm(u: SpectralField, which: Which = "H") -> float:
    """``"H"``, ``"V"`` (exact, Parseval) or a number p for the L^p norm (quadrature)."""
    d = u.domain
    if which == "H":
        return float(np.sqrt(sq_norm_coeffs(u.coeffs, d)))
    if which == "V":
        return float(np.sqrt(sq_norm_coeffs(u.coeffs, d, d.k2)))
    if isinstance(which, str):
        raise ConfigurationError(f"unknown norm {which!r}")
    p = float(which)
    if not p >= 1.0:
        raise ConfigurationError(f"L^p norm needs p >= 1, got {p}")
    m = d.quad_size(2.0 if np.isinf(p) else p)
    return _lp_from_grid(u.physical(m), p, d.volume)


def weighted_h_norm(w: SpectralField, v: SpectralField, r: float) -> float:
    """Integral of |v|^(r-1) |w|^2, i.e. the square of || |v|^((r-1)/2) w ||_H."""
    w._check(v)
    d = w.domain
    m = d.quad_size(r + 1.0)
    wv = w.physical(m)
    vv = v.physical(m)
    weight = np.sum(vv ** 2, axis=0) ** ((r - 1.0) / 2.0)
    return float(d.volume * np.mean(weight * np.sum(wv ** 2, axis=0)))


def smoothing_projection(u: SpectralField, n: int) -> SpectralField:
    """Heat-kernel smoothing on eigenvalues below n^2: u_k -> exp(-|k|^2/n) u_k."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    k2 = u.domain.k2
    factor = np.where(k2 < n * n, np.exp(-k2 / n), 0.0)
    return SpectralField(u.domain, u.coeffs * factor)


def galerkin_mask(domain: TorusDomain, kmax: int) -> np.ndarray:
    return np.all(np.abs(domain.wavenumbers) <= kmax, axis=0)


def galerkin_truncate(u: SpectralField, kmax: int) -> SpectralField:
    """Cube truncation R_k: keep modes with every |k_i| <= kmax."""
    if kmax < 0:
        raise ConfigurationError("kmax must be >= 0")
    return SpectralField(u.domain, u.coeffs * galerkin_mask(u.domain, kmax))


def truncation_lp_ratio(u: SpectralField, kmax: int, p: float) -> float:
    """Empirical ||R_k u||_Lp / ||u||_Lp for the cube truncation (recorded, no bound asserted)."""
    base = norm(u, p)
    if base == 0:
        raise ConfigurationError("the ratio is undefined for the zero field")
    return norm(galerkin_truncate(u, kmax), p) / base


def random_divfree_field(domain: TorusDomain, decay: float, amplitude: float,
                         seed: int) -> SpectralField:
    """Seeded solenoidal field with |u_hat_k| = amplitude * |k|^(-decay) on active modes."""
    if decay <= domain.dim / 2.0:
        raise ConfigurationError(f"decay must exceed dim/2 = {domain.dim / 2}")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((domain.dim,) + domain.shape)
    c = leray_coeffs(to_spectral(noise, domain.dim, domain.resolution), domain)
    mag = np.sqrt(np.sum(np.abs(c) ** 2, axis=0))
    keep = domain.active & (mag > 1e-12)
    k2 = np.where(domain.k2 > 0, domain.k2, 1.0)
    scale = np.where(keep, amplitude * k2 ** (-decay / 2.0) / np.where(keep, mag, 1.0), 0.0)
    return SpectralField(domain, c * scale)


def interpolation_exponent(s: float, r: float, t: float) -> float:
    if not (1.0 <= s <= r <= t < np.inf):
        raise ConfigurationError(f"need 1 <= s <= r <= t < inf, got s={s}, r={r}, t={t}")
    if t == s:
        return 1.0
    return (1.0 / r - 1.0 / t) / (1.0 / s - 1.0 / t)


def check_interpolation(u: SpectralField, s: float, r: float, t: float) -> float:
    """Gap ||u||_s^theta ||u||_t^(1-theta) - ||u||_r, nonnegative by Holder.

    All three norms use one grid so the discrete measure obeys Holder exactly.
    """
    theta = interpolation_exponent(s, r, t)
    d = u.domain
    vals = u.physical(d.quad_size(t))
    ns, nr, nt = (_lp_from_grid(vals, p, d.volume) for p in (s, r, t))
    return ns ** theta * nt ** (1.0 - theta) - nr


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

def field_to_dict(u: SpectralField) -> dict:
    """JSON-ready record: header plus (k, Re, Im) triples for nonzero modes."""
    d = u.domain
    modes = []
    nz = np.argwhere(np.any(u.coeffs != 0, axis=0))
    for idx in nz:
        idx = tuple(int(i) for i in idx)
        k = [int(d.wavenumbers[(j,) + idx]) for j in range(d.dim)]
        vec = u.coeffs[(slice(None),) + idx]
        modes.append([k, [float(x) for x in vec.real], [float(x) for x in vec.imag]])
    return {"dim": d.dim, "N": d.resolution, "oversample": d.oversample, "modes": modes}


def field_from_dict(data: dict) -> SpectralField:
    domain = TorusDomain(int(data["dim"]), int(data["N"]), int(data.get("oversample", 4)))
    c = np.zeros((domain.dim,) + domain.shape, dtype=complex)
    n = domain.resolution
    for k, re, im in data["modes"]:
        idx = tuple(int(ki) % n for ki in k)
        c[(slice(None),) + idx] = np.asarray(re, dtype=float) + 1j * np.asarray(im, dtype=float)
    return SpectralField(domain, c)


def save_field(u: SpectralField, path) -> None:
    path = str(path)
    if path.endswith(".npz"):
        np.savez(path, dim=u.domain.dim, N=u.domain.resolution,
                 oversample=u.domain.oversample, coeffs=u.coeffs)
    else:
        with open(path, "w") as fh:
            json.dump(field_to_dict(u), fh)


def load_field(path) -> SpectralField:
    path = str(path)
    if path.endswith(".npz"):
        with np.load(path) as z:
            domain = TorusDomain(int(z["dim"]), int(z["N"]), int(z["oversample"]))
            return SpectralField(domain, z["coeffs"])
    with open(path) as fh:
        return field_from_dict(json.load(fh))
