"""Restarted derivative-free maximisation of the secret key length.

The objective is the real-valued key length before flooring, clamped at
zero, so large regions of parameter space are exactly flat. Restarting from
fresh initial points is what finds key in high-loss or high-noise regimes.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .channel import ProtocolParams, SystemParams, WindowEfficiencies, accumulate_counts
from .keymath import ErrorCorrection, KeyResult, TailBound, secret_key_length

# Bounds (open intervals) on (P_x, P_mu1, P_mu2, mu1, mu2).
DEFAULT_BOUNDS = ((0.3, 1.0), (0.6, 0.9999), (0.0, 0.4), (0.3, 1.0), (0.1, 0.5))
DEFAULT_INITIAL = (0.5, 0.7, 0.1, 0.8, 0.3)
METHODS = ("COBYLA", "Nelder-Mead")
MAX_DRAWS = 1000
# Returned parameters keep at least this distance from every open bound.
BOUND_MARGIN = 1e-9


class InfeasibleBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    bounds: tuple = DEFAULT_BOUNDS
    init: Optional[tuple] = DEFAULT_INITIAL  # None selects random initialisation
    nopt_min: int = 10
    stop_zero: bool = True
    stop_better: bool = True
    method: str = "COBYLA"
    max_evals_per_restart: int = 1000
    seed: int = 0
    xtol: float = 1e-6

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.shape != (5, 2) or np.any(b[:, 0] >= b[:, 1]):
            raise ValueError(f"bounds must be 5 ordered (lower, upper) pairs, got {self.bounds}")
        if np.any(b[:3] < 0) or np.any(b[:3] > 1):
            raise ValueError("probability bounds must lie within [0, 1]")
        if self.nopt_min < 1:
            raise ValueError("nopt_min must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.init is not None and len(self.init) != 5:
            raise ValueError("init must hold 5 values")
        object.__setattr__(self, "bounds", tuple(tuple(map(float, p)) for p in self.bounds))


@dataclass
class OptimizerMetrics:
    restarts: int = 0
    evaluations: int = 0
    best_skl: int = 0
    status: list = field(default_factory=list)
    wall_time: float = 0.0
    stop_reason: str = ""


@dataclass(frozen=True)
class Context:
    window: WindowEfficiencies
    sys: SystemParams
    bound: TailBound = TailBound.CHERNOFF
    ec: ErrorCorrection = ErrorCorrection.LOGM


def key_result(params: ProtocolParams, ctx: Context) -> KeyResult | None:
    """Full chain at ``params``; ``None`` if the parameters are infeasible."""
    if not params.is_feasible(ctx.sys.mu3):
        return None
    counts = accumulate_counts(ctx.window, params, ctx.sys)
    return secret_key_length(counts, params.intensities(ctx.sys.mu3), ctx.sys.sec, ctx.bound, ctx.ec)


def evaluate_objective(params: ProtocolParams, ctx: Context) -> float:
    """Key length before flooring, clamped at zero; zero for infeasible parameters."""
    res = key_result(params, ctx)
    if res is None or math.isnan(res.ell):
        return 0.0
    return max(res.ell, 0.0)


def _inside(x, bounds) -> bool:
    return all(lo < v < hi for v, (lo, hi) in zip(x, bounds))


def _feasible(x, bounds, mu3) -> bool:
    return _inside(x, bounds) and ProtocolParams.from_array(x).is_feasible(mu3)


def random_params(config: OptimizerConfig, mu3: float, rng: np.random.Generator) -> ProtocolParams:
    b = np.asarray(config.bounds)
    for _ in range(MAX_DRAWS):
        x = rng.uniform(b[:, 0], b[:, 1])
        if _feasible(x, config.bounds, mu3):
            return ProtocolParams.from_array(x)
    raise InfeasibleBoundsError(f"no feasible point found in {MAX_DRAWS} draws within {config.bounds}")


def next_initial_params(config: OptimizerConfig, previous, rng: np.random.Generator,
                        mu3: float = 0.0) -> ProtocolParams:
    """Starting point for the first optimisation of a calculation.

    ``previous`` is ``(params, skl)`` from the preceding calculation, or None.
    """
    if config.init is not None:
        return ProtocolParams(*config.init)
    if previous is not None and previous[1] > 0:
        return previous[0]
    return random_params(config, mu3, rng)


def _constraints(mu3):
    return [
        {"type": "ineq", "fun": lambda x: 1.0 - x[1] - x[2] - BOUND_MARGIN},
        {"type": "ineq", "fun": lambda x: x[3] - x[4] - mu3 - BOUND_MARGIN},
        {"type": "ineq", "fun": lambda x: x[4] - mu3 - BOUND_MARGIN},
    ]


def _clip(x, bounds):
    b = np.asarray(bounds)
    lo = b[:, 0] + BOUND_MARGIN
    hi = b[:, 1] - BOUND_MARGIN
    return np.minimum(np.maximum(x, lo), hi)


def _restart_cap(nopt_min: int, max_evals: int, mean_evals: float) -> int:
    if mean_evals <= 0:
        return nopt_min
    return max(nopt_min, math.ceil(10 * nopt_min * max_evals / mean_evals))


def _single_run(x0: np.ndarray, config: OptimizerConfig, ctx: Context, track: dict):
    """One local optimisation. Every feasible evaluation updates ``track``."""
    bounds = config.bounds
    mu3 = ctx.sys.mu3
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        xc = np.asarray(x, dtype=float)
        if not _feasible(xc, bounds, mu3):
            return 0.0
        val = evaluate_objective(ProtocolParams.from_array(xc), ctx)
        if val > track["value"]:
            track["value"] = val
            track["x"] = xc.copy()
        return -val

    if config.method == "COBYLA":
        b = np.asarray(bounds)
        res = minimize(f, x0, method="COBYLA",
                       bounds=list(zip(b[:, 0] + BOUND_MARGIN, b[:, 1] - BOUND_MARGIN)),
                       constraints=_constraints(mu3),
                       options={"maxiter": config.max_evals_per_restart, "rhobeg": 0.05,
                                "tol": config.xtol})
    else:
        res = minimize(f, x0, method="Nelder-Mead",
                       bounds=[(lo + BOUND_MARGIN, hi - BOUND_MARGIN) for lo, hi in bounds],
                       options={"maxfev": config.max_evals_per_restart, "xatol": config.xtol,
                                "fatol": 1e-6})
    # Also score the final iterate in case it was never evaluated feasibly.
    f(_clip(res.x, bounds))
    return evals, str(res.message)


def optimise_skl(config: OptimizerConfig, ctx: Context, previous=None, rng=None):
    """Best protocol parameters over repeated local optimisations.

    Returns ``(params, KeyResult, OptimizerMetrics)``.
    """
    t_start = time.perf_counter()
    rng = np.random.default_rng(config.seed) if rng is None else rng
    mu3 = ctx.sys.mu3
    metrics = OptimizerMetrics()
    track = {"value": -1.0, "x": None}
    first_value = None
    cap = config.nopt_min
    while True:
        if metrics.restarts == 0:
            x0 = next_initial_params(config, previous, rng, mu3)
        else:
            x0 = random_params(config, mu3, rng)
        x0 = x0.as_array()
        if first_value is None:
            if not _feasible(x0, config.bounds, mu3):
                raise ValueError(f"initial parameters {tuple(x0)} violate the bounds or constraints")
            first_value = evaluate_objective(ProtocolParams.from_array(x0), ctx)
        evals, status = _single_run(x0, config, ctx, track)
        metrics.restarts += 1
        metrics.evaluations += evals
        metrics.status.append(status)
        cap = _restart_cap(config.nopt_min, config.max_evals_per_restart,
                           metrics.evaluations / metrics.restarts)
        n = metrics.restarts
        best = max(track["value"], 0.0)
        if n >= config.nopt_min:
            if config.stop_zero and n == config.nopt_min and best <= 0.0:
                metrics.stop_reason = "zero"
                break
            if config.stop_better and best > first_value:
                metrics.stop_reason = "better"
                break
        if n >= cap:
            metrics.stop_reason = "cap"
            break

    params = ProtocolParams.from_array(track["x"])
    result = key_result(params, ctx)
    metrics.best_skl = result.skl
    metrics.wall_time = time.perf_counter() - t_start
    return params, result, metrics
