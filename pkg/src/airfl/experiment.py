"""Experiment orchestration: loss-vs-rounds runs, loss-vs-SNR sweeps and
smoothness/gradient-bound estimation.

Every (scheme, seed) pair with the same seed shares its dataset, device
placement, initial model, mini-batches and fading, so scheme differences are
paired. Traces are CSV with a fixed header; floats are written with ``repr``
so identical runs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import channel as ch
from .config import ExperimentConfig
from .errors import ConfigError
from .feedback import make_devices, simulate
from .learning import MLP, HyperParams, make_synthetic_federation
from .rng import Streams
from .thresholds import OptInputs, solve_thresholds

TRACE_HEADER = ["round", "scheme", "seed", "loss", "gradnorm_sq", "rho", "mask_fill", "max_mem_sq"]
SWEEP_HEADER = ["snr_db", "P", "scheme", "seed", "final_loss", "threshold_mode"]
SNR_DEFINITION = "snr_db = 10*log10(P * kappa(R/2) / sigma2), free-space gain at half the cell radius"
OUT_DIR_ENV = "AIRFL_OUT_DIR"


def atomic_write(path, text: str) -> Path:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def resolve_out_dir(cfg: ExperimentConfig, out: str | None = None) -> Path:
    if out is not None:
        return Path(out)
    env = os.environ.get(OUT_DIR_ENV)
    return Path(env) if env else Path(cfg.out)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def build_problem(cfg: ExperimentConfig, seed: int):
    """Objective, device shards and initial model for one seed."""
    streams = Streams(seed)
    if cfg.objective == "mnist-mlp":
        if not cfg.mnist_images or not cfg.mnist_labels:
            raise ConfigError("the MLP objective needs mnist_images and mnist_labels paths", "mnist_images")
        from .mnist import load_mnist_idx, partition

        X, y = load_mnist_idx(cfg.mnist_images, cfg.mnist_labels)
        obj = MLP()
        shards = partition(X, y, cfg.K, streams.get("data"))
    else:
        obj, shards = make_synthetic_federation(
            cfg.objective, cfg.K, cfg.d, cfg.heterogeneity, seed,
            n_per_device=cfg.n_per_device, signal=cfg.signal, l2=cfg.l2,
        )
    theta0 = obj.init_params(streams.get("init"))
    return obj, shards, theta0


@dataclass
class ChannelSetup:
    distances: np.ndarray
    kappa: np.ndarray
    P: np.ndarray
    sigma2: float
    eps: np.ndarray
    solution: object = None

    @property
    def lambdas(self) -> np.ndarray:
        return ch.transmission_probability(self.eps)

    def to_dict(self) -> dict:
        out = {
            "distances": self.distances.tolist(),
            "kappa": self.kappa.tolist(),
            "P": self.P.tolist(),
            "sigma2": self.sigma2,
            "eps": self.eps.tolist(),
            "lambdas": self.lambdas.tolist(),
        }
        if self.solution is not None:
            out["threshold_solution"] = self.solution.to_dict()
        return out


def optimized_thresholds(cfg: ExperimentConfig, P, kappa, sigma2: float):
    inputs = OptInputs(eta=cfg.eta, L=cfg.L, B=cfg.B, Q=cfg.Q, K=cfg.K, sigma2=sigma2,
                       P=P, kappa=kappa, lambda_min=cfg.lambda_min)
    return solve_thresholds(inputs)


def channel_setup(cfg: ExperimentConfig, seed: int, P=None, sigma2: float | None = None) -> ChannelSetup:
    """Device placement, path loss, power budgets and thresholds for one seed."""
    distances = ch.place_devices(cfg.K, cfg.cell_radius, Streams(seed).get("placement"))
    kappa = np.asarray(ch.compute_pathloss(distances, cfg.f_c), dtype=np.float64)
    P = np.asarray(cfg.per_device("P") if P is None else np.broadcast_to(P, (cfg.K,)), dtype=np.float64)
    sigma2 = cfg.sigma2 if sigma2 is None else float(sigma2)
    if cfg.threshold_mode == "fixed":
        return ChannelSetup(distances, kappa, P, sigma2, np.asarray(cfg.per_device("eps"), dtype=np.float64))
    sol = optimized_thresholds(cfg, P, kappa, sigma2)
    return ChannelSetup(distances, kappa, P, sigma2, np.asarray(sol.eps, dtype=np.float64), sol)


@dataclass
class RunResult:
    scheme: str
    seed: int
    traces: list
    theta: np.ndarray = field(repr=False)

    @property
    def losses(self) -> np.ndarray:
        return np.array([tr.loss for tr in self.traces])


def run_single(cfg: ExperimentConfig, scheme: str, seed: int, problem=None, setup: ChannelSetup | None = None,
               callback=None) -> RunResult:
    obj, shards, theta0 = build_problem(cfg, seed) if problem is None else problem
    setup = channel_setup(cfg, seed) if setup is None else setup
    hp = HyperParams(eta=cfg.eta, Q=cfg.Q, T=cfg.T, K=cfg.K, batch_size=cfg.batch_size, seed=seed)
    devices = make_devices(shards, obj.dim, setup.eps, setup.P, setup.kappa)
    theta, traces = simulate(scheme, obj, devices, theta0, hp, Streams(seed), setup.sigma2, callback=callback)
    return RunResult(scheme, seed, traces, theta)


def _run_job(args):
    cfg_dict, scheme, seed = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return run_single(cfg, scheme, seed)


def trace_rows(result: RunResult) -> list[list]:
    return [
        [tr.round, result.scheme, result.seed, tr.loss, tr.gradnorm_sq, tr.rho, tr.mask_fill, tr.max_mem_sq]
        for tr in result.traces
    ]


def render_csv(header: list[str], rows, comments: list[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def tail_slope(losses, window: int = 50) -> float:
    """Least-squares slope of the last ``window`` losses, per round."""
    y = np.asarray(losses[-window:], dtype=np.float64)
    x = np.arange(len(y), dtype=np.float64)
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: dict
    setups: dict
    csv_text: str
    summary: dict
    paths: dict = field(default_factory=dict)

    def final_losses(self, scheme: str) -> np.ndarray:
        return np.array([self.runs[(scheme, s)].losses[-1] for s in self.config.seeds])

    def mean_curve(self, scheme: str) -> np.ndarray:
        return np.mean([self.runs[(scheme, s)].losses for s in self.config.seeds], axis=0)


def summarize(cfg: ExperimentConfig, runs: dict, setups: dict) -> dict:
    out = {"config": cfg.to_dict(), "schemes": {}, "channel": {str(s): setups[s].to_dict() for s in cfg.seeds}}
    window = min(50, cfg.T)
    for scheme in cfg.schemes:
        finals = [float(runs[(scheme, s)].losses[-1]) for s in cfg.seeds]
        slopes = [tail_slope(runs[(scheme, s)].losses, window) if window >= 2 else 0.0 for s in cfg.seeds]
        out["schemes"][scheme] = {
            "final_loss_mean": float(np.mean(finals)),
            "final_loss_per_seed": finals,
            "tail_slope_per_seed": slopes,
            "silent_rounds": int(sum(tr.silent for s in cfg.seeds for tr in runs[(scheme, s)].traces)),
        }
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None, write: bool = True) -> ExperimentResult:
    """Run every (scheme, seed) pair; write ``traces.csv`` and ``summary.json``."""
    setups = {s: channel_setup(cfg, s) for s in cfg.seeds}
    jobs = [(scheme, s) for s in cfg.seeds for scheme in cfg.schemes]
    runs = {}
    if cfg.workers > 1:
        payload = [(cfg.to_dict(), scheme, s) for scheme, s in jobs]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for (scheme, s), res in zip(jobs, pool.map(_run_job, payload)):
                runs[(scheme, s)] = res
    else:
        for s in cfg.seeds:
            problem = build_problem(cfg, s)
            for scheme in cfg.schemes:
                runs[(scheme, s)] = run_single(cfg, scheme, s, problem, setups[s])
    rows = [row for scheme, s in jobs for row in trace_rows(runs[(scheme, s)])]
    for row in rows:
        if not all(math.isfinite(v) for v in row[3:]):
            raise ConfigError(f"non-finite trace value in round {row[0]} of {row[1]}/seed {row[2]}")
    csv_text = render_csv(TRACE_HEADER, rows)
    summary = summarize(cfg, runs, setups)
    result = ExperimentResult(cfg, runs, setups, csv_text, summary)
    if write:
        out = resolve_out_dir(cfg, out_dir)
        result.paths["traces"] = atomic_write(out / "traces.csv", csv_text)
        result.paths["summary"] = atomic_write(out / "summary.json", json.dumps(summary, indent=2))
    return result


def mean_pathloss(cfg: ExperimentConfig) -> float:
    """Free-space gain at half the cell radius (E[1/r^2] diverges for r ~ U(0, R])."""
    return ch.compute_pathloss(cfg.cell_radius / 2.0, cfg.f_c)


def snr_db(P: float, cfg: ExperimentConfig, sigma2: float | None = None) -> float:
    sigma2 = cfg.sigma2 if sigma2 is None else sigma2
    return 10.0 * math.log10(P * mean_pathloss(cfg) / sigma2)


def power_for_snr(snr: float, cfg: ExperimentConfig) -> float:
    return cfg.sigma2 * 10.0 ** (snr / 10.0) / mean_pathloss(cfg)


@dataclass
class SweepResult:
    config: ExperimentConfig
    points: list
    rows: list
    csv_text: str
    setups: dict
    paths: dict = field(default_factory=dict)

    def mean_final(self, scheme: str, P: float) -> float:
        vals = [r[4] for r in self.rows if r[2] == scheme and r[1] == P]
        return float(np.mean(vals))


def sweep_snr(cfg: ExperimentConfig, snr_points, out_dir=None, write: bool = True) -> SweepResult:
    """Final loss per (scheme, power budget). ``snr_points`` are P values in watts.

    The ideal scheme does not touch the channel, so it is run once per seed
    and reported at every point.
    """
    if cfg.sigma2 <= 0:
        raise ConfigError("an SNR sweep needs positive noise power", "sigma2_w")
    points = [float(p) for p in snr_points]
    if not points or any(p <= 0 for p in points):
        raise ConfigError("power levels must be positive", "P")
    rows, setups = [], {}
    for s in cfg.seeds:
        problem = build_problem(cfg, s)
        ideal_loss = None
        if "ideal" in cfg.schemes:
            base = channel_setup(cfg.replace(threshold_mode="fixed"), s, P=points[0])
            ideal_loss = float(run_single(cfg, "ideal", s, problem, base).losses[-1])
        for P in points:
            setup = channel_setup(cfg, s, P=P)
            setups[(s, P)] = setup
            for scheme in cfg.schemes:
                if scheme == "ideal":
                    loss = ideal_loss
                else:
                    loss = float(run_single(cfg, scheme, s, problem, setup).losses[-1])
                rows.append([snr_db(P, cfg), P, scheme, s, loss, cfg.threshold_mode])
    rows.sort(key=lambda r: (r[1], cfg.schemes.index(r[2]), cfg.seeds.index(r[3])))
    comments = [SNR_DEFINITION, f"sigma2_w = {cfg.sigma2!r}", f"T = {cfg.T}"]
    csv_text = render_csv(SWEEP_HEADER, rows, comments)
    result = SweepResult(cfg, points, rows, csv_text, setups)
    if write:
        out = resolve_out_dir(cfg, out_dir)
        result.paths["sweep"] = atomic_write(out / "sweep.csv", csv_text)
    return result


@dataclass
class ConstantEstimate:
    B_hat: float
    L_hat: float
    probes: int
    radius: float
    step: float
    batch_size: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "B_hat": self.B_hat,
            "L_hat": self.L_hat,
            "probe_grid": {
                "probes": self.probes,
                "radius": self.radius,
                "secant_step": self.step,
                "batch_size": self.batch_size,
                "seed": self.seed,
                "envelope": "uniform ball of the given radius around the center",
            },
        }


def _ball_point(center, radius, rng):
    d = len(center)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    return center + radius * rng.random() ** (1.0 / d) * v


def estimate_constants(obj, shards, probe_count: int = 200, seed: int = 0, radius: float = 1.0,
                       center=None, batch_size: int = 64, step: float | None = None,
                       chain: int = 10) -> ConstantEstimate:
    """Probe-based estimates of the gradient-norm bound B and smoothness L.

    B: largest mini-batch gradient norm over ``probe_count`` points drawn
    uniformly from the ball. L: largest secant ratio
    ``|grad f_k(u) - grad f_k(w)| / |u - w|`` over ``probe_count`` pairs. Pairs
    come in chains of length ``chain``; each next direction is the previous
    gradient difference, a finite-difference power iteration that homes in on
    the top curvature direction.
    """
    if probe_count < 100:
        raise ConfigError("at least 100 probes are required", "probe_count")
    rng = Streams(seed).get("probe")
    center = np.zeros(obj.dim) if center is None else np.asarray(center, dtype=np.float64)
    step = 0.1 * radius if step is None else float(step)
    K = len(shards)
    B_hat = 0.0
    for i in range(probe_count):
        shard = shards[i % K]
        theta = _ball_point(center, radius, rng)
        idx = rng.choice(len(shard), size=min(batch_size, len(shard)), replace=False)
        g = obj.grad(theta, shard.X[idx], shard.y[idx])
        B_hat = max(B_hat, float(np.linalg.norm(g)))
    L_hat = 0.0
    done = 0
    c = 0
    while done < probe_count:
        shard = shards[c % K]
        c += 1
        u = _ball_point(center, radius, rng)
        v = rng.standard_normal(obj.dim)
        v /= np.linalg.norm(v)
        gu = obj.grad(u, shard.X, shard.y)
        for _ in range(min(chain, probe_count - done)):
            w = u + step * v
            diff = obj.grad(w, shard.X, shard.y) - gu
            nd = float(np.linalg.norm(diff))
            L_hat = max(L_hat, nd / step)
            done += 1
            if nd == 0:
                break
            v = diff / nd
    return ConstantEstimate(B_hat, L_hat, probe_count, radius, step, batch_size, seed)
