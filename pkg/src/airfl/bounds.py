"""Closed-form convergence bounds for over-the-air FL with truncated inversion.

All three schemes share a four-part breakdown: initialization error,
masking contraction, effective channel noise, and SGD/heterogeneity. The
long-term-memory bound uses ``C = 4(1-lam^2)/lam^2`` and ``C~ = C + 1``; the
short-term and memoryless bounds share a different template with their own
``C`` and ``C~``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


def c_lambda(lam):
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0) or np.any(lam > 1):
        raise DomainError("transmission probability must lie in (0, 1]")
    out = 4.0 * (1.0 - lam**2) / lam**2
    return float(out) if out.ndim == 0 else out


def c_tilde_lambda(lam):
    return c_lambda(lam) + 1.0


def check_lr_condition(eta: float, L: float, Q: int) -> bool:
    x = eta * L * Q
    return 45.0 * x**3 + 30.0 * x**2 + 1.5 * x <= 0.125


@dataclass
class BoundInputs:
    B: float
    L: float
    eta: float
    Q: int
    T: int
    K: int
    lam: np.ndarray
    P: np.ndarray
    kappa: np.ndarray
    eps: np.ndarray | None = None
    sigma_l2: float = 0.0
    sigma_g2: float = 0.0
    sigma2: float = 0.0
    f0_minus_fstar: float = 1.0
    d: int | None = None

    def __post_init__(self):
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=np.float64))
        K = len(self.lam)
        if K != self.K:
            raise DomainError(f"got {K} transmission probabilities for K={self.K}")
        self.P = np.broadcast_to(np.asarray(self.P, dtype=np.float64), (K,)).copy()
        self.kappa = np.broadcast_to(np.asarray(self.kappa, dtype=np.float64), (K,)).copy()
        if self.eps is None:
            self.eps = -np.log(self.lam)
        else:
            self.eps = np.broadcast_to(np.asarray(self.eps, dtype=np.float64), (K,)).copy()
        if np.any(self.lam <= 0) or np.any(self.lam > 1):
            raise DomainError("transmission probability must lie in (0, 1]")
        for name in ("B", "L", "eta"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        for name in ("sigma_l2", "sigma_g2", "sigma2"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")

    def with_(self, **kw) -> "BoundInputs":
        vals = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if "lam" in kw and "eps" not in kw:
            vals["eps"] = None
        vals.update(kw)
        return BoundInputs(**vals)


@dataclass
class BoundBreakdown:
    init: float
    contraction: float
    noise: float
    sgd_hetero: float
    total: float
    in_regime: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "init": self.init,
            "contraction": self.contraction,
            "noise": self.noise,
            "sgd_hetero": self.sgd_hetero,
            "total": self.total,
            "in_regime": self.in_regime,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)


def _noise_max(inp: BoundInputs, c_tilde: np.ndarray) -> float:
    """``max_k lam_k B^2 Q C~_k / (P_k kappa_k eps_k)``, zero when noiseless."""
    if inp.sigma2 == 0:
        return 0.0
    if np.any(inp.eps <= 0):
        raise DomainError("noise term needs positive thresholds when sigma2 > 0")
    vals = inp.lam * inp.B**2 * inp.Q * c_tilde / (inp.P * inp.kappa * inp.eps)
    return float(np.max(vals))


def _regime(inp: BoundInputs) -> bool:
    ok = check_lr_condition(inp.eta, inp.L, inp.Q)
    if not ok:
        warnings.warn("learning rate violates the step-size condition; bound is out of regime", stacklevel=3)
    return ok


def bound_airfl_mem(inp: BoundInputs) -> BoundBreakdown:
    ok = _regime(inp)
    eta, B, L, Q, T, K = inp.eta, inp.B, inp.L, inp.Q, inp.T, inp.K
    C = np.atleast_1d(c_lambda(inp.lam))
    init = 8.0 * inp.f0_minus_fstar / (eta * Q * T)
    contraction = 12.0 / K * float(np.sum(eta**2 * B**2 * Q**2 * L**2 * C))
    noise = 8.0 * eta * L * inp.sigma2 / K**2 * _noise_max(inp, C + 1.0)
    sgd = (40.0 * eta**2 * Q * L**2 + 60.0 * eta**3 * Q**2 * L**3) * (inp.sigma_l2 + 6.0 * Q * inp.sigma_g2) \
        + 12.0 * eta * Q * L * inp.sigma_l2
    return BoundBreakdown(init, contraction, noise, sgd, init + contraction + noise + sgd, ok)


def _bound_template(inp: BoundInputs, C: np.ndarray, C_tilde: np.ndarray) -> BoundBreakdown:
    ok = _regime(inp)
    eta, B, L, Q, T, K = inp.eta, inp.B, inp.L, inp.Q, inp.T, inp.K
    init = 4.0 * inp.f0_minus_fstar / (eta * Q * T)
    contraction = 8.0 * B**2 / K * float(np.sum(C))
    noise = 4.0 * eta * L * inp.sigma2 / K**2 * _noise_max(inp, C_tilde)
    # the trailing lam * C~ term is grouped with the SGD part
    masked_energy = 4.0 * eta * Q * B**2 * L / K * float(np.sum(inp.lam * C_tilde))
    sgd = 20.0 * eta**2 * L**2 * Q * (inp.sigma_l2 + 6.0 * Q * inp.sigma_g2) + masked_energy
    return BoundBreakdown(init, contraction, noise, sgd, init + contraction + noise + sgd, ok,
                          extra={"masked_energy": masked_energy})


def bound_short_term(inp: BoundInputs) -> BoundBreakdown:
    lam = inp.lam
    return _bound_template(inp, 1.0 - lam**2, 2.0 - lam)


def bound_no_memory(inp: BoundInputs) -> BoundBreakdown:
    lam = inp.lam
    return _bound_template(inp, 1.0 - lam, np.full_like(lam, 0.5))


BOUNDS = {
    "airfl-mem": bound_airfl_mem,
    "ota-smem": bound_short_term,
    "ota": bound_no_memory,
}


def rho_lower_bound(inp: BoundInputs) -> float:
    """``min_k d P_k kappa_k eps_k / (2 lam_k B^2 Q^2 (C_k + 1))``."""
    if inp.d is None:
        raise DomainError("model dimension d is required")
    return rho_floor(inp.B, inp.Q, inp.d, inp.lam, inp.P, inp.kappa, inp.eps)


def rho_floor(B: float, Q: int, d: int, lam, P, kappa, eps=None) -> float:
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    eps = -np.log(lam) if eps is None else np.asarray(eps, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.float64)
    C = np.atleast_1d(c_lambda(lam))
    return float(np.min(d * P * kappa * eps / (2.0 * lam * B**2 * Q**2 * (C + 1.0))))


def memory_bound(lam, eta: float, B: float, Q: int):
    """Expected squared-norm ceiling on the long-term memory."""
    return c_lambda(lam) * eta**2 * B**2 * Q**2
