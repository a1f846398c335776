"""Monte-Carlo checks of the three supporting facts behind the memory bound.

* masking as a contraction: ``E |theta - q (.) theta|^2 = (1 - lam) |theta|^2``
* memory ceiling: ``|m_k|^2 <= 4 (1 - lam_k^2) / lam_k^2 * eta^2 B^2 Q^2``
* power feasibility: every device within budget every round, and the realized
  ``rho`` never below the closed-form floor
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .bounds import c_lambda, rho_floor
from .rng import Streams


@dataclass
class LemmaResult:
    name: str
    passed: bool
    measured: float
    expected: float
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: measured={self.measured:.6g} expected={self.expected:.6g}"

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "measured": self.measured,
                "expected": self.expected, "detail": self.detail}


def check_contraction(lam: float, d: int = 1000, draws: int = 10_000, seed: int = 0,
                      rtol: float = 0.02, chunk: int = 1000) -> LemmaResult:
    """Mean of ``|theta - q (.) theta|^2`` over ``draws`` fading realizations,
    with ``q`` from thresholding at ``eps = -ln lam``."""
    streams = Streams(seed)
    theta = streams.get("probe", 0, 0).standard_normal(d)
    eps = float(ch.threshold_for_probability(lam))
    sq = theta * theta
    total = 0.0
    rng = streams.get("probe", 1, 0)
    done = 0
    while done < draws:
        n = min(chunk, draws - done)
        masks = ch.apply_mask(ch.sample_fading(n, d, rng), eps)
        total += float(((1.0 - masks) @ sq).sum())
        done += n
    measured = total / draws
    expected = (1.0 - lam) * float(sq.sum())
    rel = abs(measured - expected) / expected
    return LemmaResult(f"contraction lam={lam} d={d}", rel <= rtol, measured, expected,
                       {"rel_err": rel, "rtol": rtol, "draws": draws})


def check_memory(traces, lambdas, eta: float, Q: int) -> LemmaResult:
    """Zero violations of the memory ceiling using the run's largest gradient norm."""
    lambdas = np.asarray(lambdas, dtype=np.float64)
    B_hat = max(tr.max_grad_norm for tr in traces)
    ceiling = np.atleast_1d(c_lambda(lambdas)) * eta**2 * B_hat**2 * Q**2
    worst, violations = -np.inf, 0
    for tr in traces:
        ratio = tr.mem_sq / np.where(ceiling > 0, ceiling, np.inf)
        viol = tr.mem_sq > ceiling
        violations += int(viol.sum())
        worst = max(worst, float(np.max(np.where(ceiling > 0, ratio, np.where(tr.mem_sq > 0, np.inf, 0.0)))))
    return LemmaResult("memory ceiling", violations == 0, worst, 1.0,
                       {"violations": violations, "B_hat": B_hat, "max_ratio": worst})


def check_power(traces, P, kappa, lambdas, Q: int, d: int) -> LemmaResult:
    """Per-device power within budget in every round (no tolerance) and
    ``rho >= rho_floor(B_hat)`` in every non-silent round."""
    P = np.asarray(P, dtype=np.float64)
    B_hat = max(tr.max_grad_norm for tr in traces)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    floor = rho_floor(B_hat, Q, d, lambdas, P, kappa) if B_hat > 0 and np.all(lambdas < 1) else 0.0
    over, below = 0, 0
    min_margin = np.inf
    for tr in traces:
        over += int(np.sum(tr.tx_power > P))
        if not tr.silent:
            below += int(tr.rho < floor)
            if floor > 0:
                min_margin = min(min_margin, tr.rho / floor)
    ok = over == 0 and below == 0
    return LemmaResult("power feasibility", ok, float(min_margin), 1.0,
                       {"over_budget": over, "rho_below_floor": below, "rho_floor": floor, "B_hat": B_hat})


def run_suite(cfg, seed: int | None = None) -> list[LemmaResult]:
    """Contraction checks, then the memory and power checks on one run per
    OTA scheme of ``cfg``."""
    from .experiment import build_problem, channel_setup, run_single

    seed = cfg.seeds[0] if seed is None else seed
    results = [check_contraction(lam, 1000, 10_000, seed) for lam in (0.3, 0.5, 0.9)]
    problem = build_problem(cfg, seed)
    setup = channel_setup(cfg, seed)
    for scheme in cfg.schemes:
        if scheme == "ideal":
            continue
        run = run_single(cfg, scheme, seed, problem, setup)
        if scheme == "airfl-mem":
            r = check_memory(run.traces, setup.lambdas, cfg.eta, cfg.Q)
            r.name = f"{r.name} ({scheme})"
            results.append(r)
        r = check_power(run.traces, setup.P, setup.kappa, setup.lambdas, cfg.Q, problem[0].dim)
        r.name = f"{r.name} ({scheme})"
        results.append(r)
    return results
