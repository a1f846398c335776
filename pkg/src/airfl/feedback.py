"""Transmit-signal construction with and without error feedback, and the
round driver that ties local SGD, the fading channel and aggregation together.

Schemes:

``ideal``      noiseless FedAvg, channel untouched
``ota``        truncated channel inversion, masked entries are dropped
``ota-smem``   re-sends only the previous round's masked-out difference
``airfl-mem``  long-term memory of everything masked out since round 0
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import channel as ch
from .errors import ConfigError, DimensionError, NumericalError
from .learning import (
    DataShard,
    HyperParams,
    Objective,
    eval_loss_and_gradnorm,
    fedavg_update,
    local_sgd_round,
    ordered_sum,
)
from .rng import Streams

SCHEMES = ("ideal", "ota", "ota-smem", "airfl-mem")


@dataclass
class DeviceState:
    id: int
    shard: DataShard
    dim: int
    eps: float = 0.0
    P: float = 1.0
    kappa: float = 1.0
    mem_long: np.ndarray = None
    mem_short: np.ndarray = None

    def __post_init__(self):
        if self.mem_long is None:
            self.mem_long = np.zeros(self.dim)
        if self.mem_short is None:
            self.mem_short = np.zeros(self.dim)

    def reset(self):
        self.mem_long = np.zeros(self.dim)
        self.mem_short = np.zeros(self.dim)

    def memory(self, scheme: str) -> np.ndarray | None:
        if scheme == "airfl-mem":
            return self.mem_long
        if scheme == "ota-smem":
            return self.mem_short
        return None


def build_tx_none(delta: np.ndarray, eta: float) -> np.ndarray:
    return delta / eta


def build_tx_short(delta: np.ndarray, dev: DeviceState, eta: float) -> np.ndarray:
    return (delta + dev.mem_short) / eta


def update_short(dev: DeviceState, delta: np.ndarray, mask: np.ndarray) -> None:
    # keeps only this round's lost difference; the resent part is not carried
    dev.mem_short = np.where(mask > 0, 0.0, delta)


def build_tx_mem(delta: np.ndarray, dev: DeviceState, eta: float) -> np.ndarray:
    return (delta + dev.mem_long) / eta


def update_mem(dev: DeviceState, delta: np.ndarray, mask: np.ndarray) -> None:
    """``m <- m + delta - q (.) (m + delta)``: sent entries reset, lost ones pile up."""
    dev.mem_long = np.where(mask > 0, 0.0, dev.mem_long + delta)


def compensated(scheme: str, delta: np.ndarray, dev: DeviceState) -> np.ndarray:
    """Model-difference-scale payload before masking (``eta * x``)."""
    if scheme == "airfl-mem":
        return delta + dev.mem_long
    if scheme == "ota-smem":
        return delta + dev.mem_short
    return delta


def update_memory(scheme: str, dev: DeviceState, delta: np.ndarray, mask: np.ndarray) -> None:
    if scheme == "airfl-mem":
        update_mem(dev, delta, mask)
    elif scheme == "ota-smem":
        update_short(dev, delta, mask)


@dataclass
class RoundTrace:
    round: int
    loss: float
    gradnorm_sq: float
    rho: float
    mask_fill: float
    max_mem_sq: float
    max_grad_norm: float
    mem_sq: np.ndarray = field(repr=False, default=None)
    tx_power: np.ndarray = field(repr=False, default=None)
    payload_sq: np.ndarray = field(repr=False, default=None)
    silent: bool = False
    superposed: np.ndarray | None = field(repr=False, default=None)


def scheme_round(
    scheme: str,
    obj: Objective,
    devices: Sequence[DeviceState],
    theta: np.ndarray,
    hp: HyperParams,
    t: int,
    streams: Streams,
    sigma2: float = 0.0,
    gains: np.ndarray | None = None,
    masks: np.ndarray | None = None,
    keep_signals: bool = False,
    evaluate: bool = True,
):
    """One global round of ``scheme``; returns ``(theta_next, RoundTrace)``.

    ``gains``/``masks`` override the sampled channel (used for hand-traced
    checks). The server update is evaluated as
    ``theta - (1/K) sum_k q_k (.) (eta x_k) - eta n / (sqrt(rho) K)``, which is
    the received-signal update with the superposition written out; with all
    masks open and no noise it is bitwise the FedAvg step.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}", "scheme")
    K = len(devices)
    d = len(theta)
    eta = hp.lr(t)
    grad_norms: list[float] = []
    deltas = [
        local_sgd_round(obj, dev.shard, theta, eta, hp.Q, hp.batch_size, streams.batch(dev.id, t), grad_norms)
        for dev in devices
    ]
    max_grad = max(grad_norms) if grad_norms else 0.0

    if scheme == "ideal":
        theta_next = fedavg_update(theta, deltas)
        loss, gn = eval_loss_and_gradnorm(obj, theta_next, [dev.shard for dev in devices]) if evaluate else (np.nan, np.nan)
        return theta_next, RoundTrace(
            round=t, loss=loss, gradnorm_sq=gn, rho=0.0, mask_fill=1.0, max_mem_sq=0.0,
            max_grad_norm=max_grad, mem_sq=np.zeros(K), tx_power=np.zeros(K),
            payload_sq=np.array([float(v @ v) for v in deltas]),
        )

    payload = np.stack([compensated(scheme, deltas[k], dev) for k, dev in enumerate(devices)])
    if payload.shape[1] != d:
        raise DimensionError(f"payload length {payload.shape[1]} != model length {d}")
    x = payload / eta
    if gains is None:
        gains = np.vstack([ch.sample_fading(1, d, streams.channel(dev.id, t)) for dev in devices])
    eps = np.array([dev.eps for dev in devices])
    if masks is None:
        masks = ch.apply_mask(gains, eps)
    P = np.array([dev.P for dev in devices])
    kappa = np.array([dev.kappa for dev in devices])
    rho = ch.compute_rho(x, gains, masks, P, kappa)

    if rho is None:
        theta_next = theta.copy()
        power = np.zeros(K)
    else:
        sent = ordered_sum([masks[k] * payload[k] for k in range(K)])
        theta_next = theta - sent / K
        if sigma2 > 0:
            noise = ch.draw_noise(d, sigma2, streams.noise(t))
            theta_next = theta_next - (eta / (np.sqrt(rho) * K)) * noise
        power = ch.transmit_power(x, gains, masks, rho, kappa)

    for k, dev in enumerate(devices):
        update_memory(scheme, dev, deltas[k], masks[k])
    mems = [dev.memory(scheme) for dev in devices]
    mem_sq = np.array([float(m @ m) if m is not None else 0.0 for m in mems])

    loss, gn = eval_loss_and_gradnorm(obj, theta_next, [dev.shard for dev in devices]) if evaluate else (np.nan, np.nan)
    return theta_next, RoundTrace(
        round=t,
        loss=loss,
        gradnorm_sq=gn,
        rho=0.0 if rho is None else rho,
        mask_fill=float(masks.mean()),
        max_mem_sq=float(mem_sq.max()),
        max_grad_norm=max_grad,
        mem_sq=mem_sq,
        tx_power=power,
        payload_sq=np.einsum("kj,kj->k", payload, payload),
        silent=rho is None,
        superposed=ch.superpose(x, masks) if keep_signals else None,
    )


def make_devices(shards: Sequence[DataShard], dim: int, eps, P, kappa) -> list[DeviceState]:
    K = len(shards)
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (K,))
    P = np.broadcast_to(np.asarray(P, dtype=np.float64), (K,))
    kappa = np.broadcast_to(np.asarray(kappa, dtype=np.float64), (K,))
    return [
        DeviceState(id=k, shard=s, dim=dim, eps=float(eps[k]), P=float(P[k]), kappa=float(kappa[k]))
        for k, s in enumerate(shards)
    ]


def simulate(
    scheme: str,
    obj: Objective,
    devices: Sequence[DeviceState],
    theta0: np.ndarray,
    hp: HyperParams,
    streams: Streams,
    sigma2: float = 0.0,
    callback=None,
):
    """Run ``hp.T`` rounds from ``theta0``; memories are reset first.

    Returns the final model and the list of per-round traces. ``callback`` is
    called as ``callback(t, theta_next, trace)`` after every round.
    """
    for dev in devices:
        dev.reset()
    theta = np.array(theta0, dtype=np.float64, copy=True)
    traces = []
    for t in range(hp.T):
        theta, tr = scheme_round(scheme, obj, devices, theta, hp, t, streams, sigma2)
        if not np.all(np.isfinite(theta)):
            raise NumericalError(f"{scheme}: global model diverged", step=t)
        traces.append(tr)
        if callback is not None:
            callback(t, theta, tr)
    return theta, traces
