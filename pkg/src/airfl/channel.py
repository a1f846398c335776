"""Rayleigh-fading multiple-access channel with truncated channel inversion.

Perfect CSIT inversion makes every active entry arrive with amplitude
``sqrt(rho)`` regardless of the fading phase, so only the squared magnitudes
``|h|^2 ~ Exp(1)`` are simulated. Noise is real Gaussian with variance
``sigma2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DomainError

SPEED_OF_LIGHT = 299_792_458.0


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * np.log10(watts) + 30.0


def transmission_probability(eps):
    """``Pr(|h|^2 >= eps)`` for unit-mean Rayleigh fading."""
    return np.exp(-np.asarray(eps, dtype=np.float64))


def threshold_for_probability(lam):
    return -np.log(np.asarray(lam, dtype=np.float64))


@dataclass
class ChannelParams:
    sigma2: float
    P: np.ndarray
    kappa: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        self.P = np.atleast_1d(np.asarray(self.P, dtype=np.float64))
        self.kappa = np.atleast_1d(np.asarray(self.kappa, dtype=np.float64))
        self.eps = np.atleast_1d(np.asarray(self.eps, dtype=np.float64))
        K = len(self.P)
        if len(self.kappa) != K or len(self.eps) != K:
            raise DimensionError("P, kappa and eps must all have one entry per device")
        if np.any(self.P <= 0):
            raise ConfigError("power budgets must be positive", "P")
        if np.any(self.kappa <= 0):
            raise ConfigError("large-scale gains must be positive", "kappa")
        if np.any(self.eps < 0):
            raise ConfigError("thresholds must be nonnegative", "eps")
        if self.sigma2 < 0:
            raise ConfigError("noise variance must be nonnegative", "sigma2")

    @property
    def K(self) -> int:
        return len(self.P)

    @property
    def lam(self) -> np.ndarray:
        return transmission_probability(self.eps)


@dataclass
class ChannelRound:
    gains: np.ndarray
    masks: np.ndarray
    rho: float | None
    noise: np.ndarray | None


def sample_fading(K: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """K x d matrix of i.i.d. squared Rayleigh magnitudes (unit mean)."""
    return rng.standard_exponential((K, d))


def apply_mask(gains: np.ndarray, eps) -> np.ndarray:
    """1.0 where the gain reaches the threshold (ties transmit), else 0.0.

    ``eps`` is a scalar for a single row, or one value per row of a matrix.
    """
    gains = np.asarray(gains)
    eps = np.asarray(eps, dtype=np.float64)
    if gains.ndim == 2 and eps.ndim == 1:
        eps = eps[:, None]
    return (gains >= eps).astype(np.float64)


def signal_energy(x: np.ndarray, gains: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Per-device ``sum_j q_j x_j^2 / |h_j|^2``; the inversion cost of a unit rho."""
    x = np.atleast_2d(x)
    sq = np.where(masks > 0, x * x, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(masks > 0, sq / gains, 0.0)
    return ratio.sum(axis=1)


def transmit_power(x, gains, masks, rho: float, kappa) -> np.ndarray:
    """Per-device ``(1/d) ||p (.) q (.) x||^2`` with ``p = sqrt(rho)/(sqrt(kappa) h)``."""
    x = np.atleast_2d(x)
    d = x.shape[1]
    return rho * signal_energy(x, gains, masks) / (np.asarray(kappa) * d)


def compute_rho(x, gains, masks, P, kappa) -> float | None:
    """Largest common scaling that keeps every device within its power budget.

    Returns ``None`` for a silent round, i.e. when no device has a nonzero
    masked signal. The result is nudged down by whole ulps when rounding would
    otherwise push the binding device a hair over budget.
    """
    x = np.atleast_2d(x)
    P = np.asarray(P, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.float64)
    if np.any(P <= 0):
        raise ConfigError("power budgets must be positive", "P")
    if np.any(kappa <= 0):
        raise ConfigError("large-scale gains must be positive", "kappa")
    if x.shape != np.shape(gains) or x.shape != np.shape(masks):
        raise DimensionError(f"signal shape {x.shape} does not match channel {np.shape(gains)}")
    d = x.shape[1]
    energy = signal_energy(x, gains, masks)
    active = energy > 0
    if not np.any(active):
        return None
    ratios = d * P[active] * kappa[active] / energy[active]
    rho = float(np.min(ratios))
    while np.any(transmit_power(x, gains, masks, rho, kappa) > P):
        rho = float(np.nextafter(rho, 0.0))
    return rho


def draw_noise(d: int, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Real AWGN; the standard normal draw does not depend on ``sigma2``."""
    return np.sqrt(sigma2) * rng.standard_normal(d)


def superpose(x, masks) -> np.ndarray:
    """``sum_k q_k (.) x_k`` accumulated in device order."""
    x = np.atleast_2d(x)
    masks = np.atleast_2d(masks)
    total = masks[0] * x[0]
    for k in range(1, len(x)):
        total = total + masks[k] * x[k]
    return total


def ota_round(x, gains, masks, rho: float, sigma2: float, rng: np.random.Generator | None = None,
              noise: np.ndarray | None = None) -> np.ndarray:
    """Received vector ``sqrt(rho) * sum_k q_k x_k + n``.

    Either pass a generator for fresh noise or a precomputed ``noise`` vector.
    """
    if not rho > 0:
        raise ConfigError("rho must be positive", "rho")
    x = np.atleast_2d(x)
    d = x.shape[1]
    if noise is None:
        noise = draw_noise(d, sigma2, rng) if (rng is not None and sigma2 > 0) else np.zeros(d)
    return np.sqrt(rho) * superpose(x, masks) + noise


def ota_global_update(theta, y, eta: float, rho: float, K: int) -> np.ndarray:
    if not rho > 0:
        raise ConfigError("rho must be positive", "rho")
    return theta - (eta / (np.sqrt(rho) * K)) * y


def compute_pathloss(r, f_c: float):
    """Free-space gain ``(c / (4 pi f_c r))^2``."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0):
        raise DomainError("distance must be positive")
    if f_c <= 0:
        raise DomainError("carrier frequency must be positive")
    out = (SPEED_OF_LIGHT / (4.0 * np.pi * f_c * r)) ** 2
    return float(out) if out.ndim == 0 else out


def place_devices(K: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Distances uniform on (0, radius]."""
    return radius * (1.0 - rng.random(K))
