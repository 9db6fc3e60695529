"""Sweep driver: loop over noise parameters, excess loss and window length.

For every (Pec, QBERI) pair the driver walks the excess-loss grid (outer)
and the half-window grid (inner), optimises or evaluates the protocol
parameters, and writes one row of 31 columns per point.
"""
from __future__ import annotations

import ast
import csv
import io
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .channel import ProtocolParams, SystemParams
from .geometry import EmptyWindowError, OrbitGeometry, WindowSpec, max_elevation, select_window
from .keymath import ErrorCorrection, KeyResult, SecurityParams, TailBound
from .lossio import LossProfile, apply_excess_loss, read_loss_file, system_loss_db
from .optimizer import (DEFAULT_BOUNDS, DEFAULT_INITIAL, Context, OptimizerConfig,
                        OptimizerMetrics, key_result, optimise_skl)

COLUMNS = (
    "ls+sysLoss", "dt", "SKL", "QBERx", "phi_x", "nX", "nZ", "lambdaEC", "sX0", "sX1",
    "vz1", "sZ1", "mpn", "QBERI", "Pec", "Pap", "NoPass", "Rrate", "eps_c", "eps_s",
    "Px", "P1", "P2", "P3", "mu1", "mu2", "mu3", "xi", "min_elev", "max_elev", "shift_elev",
)
METRIC_COLUMNS = ("ls", "dt", "restarts", "evaluations", "best_SKL", "stop_reason", "last_status")


class ConfigError(ValueError):
    pass


def grid(spec: Sequence[float]) -> list:
    """Inclusive ``(start, stop, step)`` grid with ``floor((stop - start)/step) + 1`` points."""
    if len(spec) != 3:
        raise ConfigError(f"range must be (start, stop, step), got {spec!r}")
    start, stop, step = spec
    if not step > 0:
        raise ConfigError(f"range step must be positive, got {step!r}")
    if stop < start:
        raise ConfigError(f"range stop {stop!r} is below start {start!r}")
    if all(float(v).is_integer() for v in spec):
        start, stop, step = int(start), int(stop), int(step)
        return list(range(start, stop + 1, step))
    # Slack keeps an endpoint that falls on the grid despite rounding.
    n = math.floor((stop - start) / step + 1e-9) + 1
    return [start + i * step for i in range(n)]


@dataclass
class SweepConfig:
    loss_file: str = "loss.csv"
    lc: int = 3
    loss_in_db: bool = False
    xi: float = 0.0  # radians
    R_E: float = 6371.0
    h_sat: float = 500.0
    h_ogs: float = 0.0
    mu3: float = 0.0
    eps_c: float = 1e-15
    eps_s: float = 1e-9
    qberi_list: tuple = (0.001, 0.003, 0.005)
    pec_list: tuple = (1e-8, 1e-7, 1e-6)
    p_ap: float = 0.001
    num_passes: int = 1
    source_rate: float = 1e9
    dt_range: tuple = (200, 350, 10)
    min_elev: float = 10.0
    shift_elev: float = 0.0
    ls_range: tuple = (0, 12, 2)
    optimise: bool = True
    init_specified: bool = True
    init: tuple = DEFAULT_INITIAL
    bounds: tuple = DEFAULT_BOUNDS
    method: str = "COBYLA"
    nopt_min: int = 10
    stop_zero: bool = True
    stop_better: bool = True
    max_evals: int = 1000
    seed: int = 0
    bound: str = "Chernoff"
    ec: str = "logM"
    compare_ec: bool = False
    full_data: bool = True
    opti_data: bool = True
    multi_opt: bool = True
    metrics: bool = True
    print_: bool = True
    outbase: str = "out"
    outpath: str = "."
    mpn_unweighted: bool = False

    def __post_init__(self):
        self.bound = TailBound(self.bound).value
        self.ec = ErrorCorrection(self.ec).value
        self.qberi_list = _as_tuple(self.qberi_list)
        self.pec_list = _as_tuple(self.pec_list)
        if not self.qberi_list or not self.pec_list:
            raise ConfigError("QBERI_list and Pec_list must be non-empty")
        grid(self.dt_range)
        grid(self.ls_range)
        if self.bound == TailBound.ASYMPTOTIC.value:
            # Fluctuation terms vanish asymptotically; comparing EC modes is moot.
            self.compare_ec = False

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(bounds=self.bounds, init=self.init if self.init_specified else None,
                               nopt_min=self.nopt_min, stop_zero=self.stop_zero,
                               stop_better=self.stop_better, method=self.method,
                               max_evals_per_restart=self.max_evals, seed=self.seed)

    def system(self, pec: float, qberi: float) -> SystemParams:
        return SystemParams(p_ec=pec, qber_i=qberi, p_ap=self.p_ap, source_rate=self.source_rate,
                            num_passes=self.num_passes, mu3=self.mu3,
                            sec=SecurityParams(self.eps_c, self.eps_s), xi=self.xi)

    def geometry(self) -> OrbitGeometry:
        return OrbitGeometry(self.R_E, self.h_sat, self.h_ogs, math.degrees(self.xi))


def _as_tuple(v) -> tuple:
    if isinstance(v, (int, float)):
        return (v,)
    return tuple(v)


# Config-file keys, named as in the original script's parameter block.
CONFIG_KEYS = {
    "loss_file": "loss_file", "lc": "lc", "loss_in_db": "loss_in_db",
    "xi": "xi", "R_E": "R_E", "h_sat": "h_sat", "h_ogs": "h_ogs",
    "mu3": "mu3", "eps_c": "eps_c", "eps_s": "eps_s",
    "QBERI_list": "qberi_list", "Pec_list": "pec_list", "Pap": "p_ap",
    "NoPass": "num_passes", "Rrate": "source_rate",
    "dt_range": "dt_range", "min_elev": "min_elev", "shift_elev": "shift_elev",
    "ls_range": "ls_range",
    "tOptimise": "optimise", "tInit": "init_specified", "xb": "bounds",
    "method": "method", "NoptMin": "nopt_min", "tStopZero": "stop_zero",
    "tStopBetter": "stop_better", "max_evals": "max_evals", "seed": "seed",
    "boundFunc": "bound", "errcorrFunc": "ec", "tCompareEC": "compare_ec",
    "tFullData": "full_data", "tOptiData": "opti_data", "tMultiOpt": "multi_opt",
    "tMetrics": "metrics", "tPrint": "print_", "outbase": "outbase", "outpath": "outpath",
    "mpn_unweighted": "mpn_unweighted",
}
INIT_KEYS = ("Px_i", "pk1_i", "pk2_i", "mu1_i", "mu2_i")


def parse_value(text: str):
    text = text.strip()
    if text.startswith("np.array(") and text.endswith(")"):
        text = text[len("np.array("):-1]
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(value)
    return out


def config_from_mapping(values: dict, base_dir: Path | None = None) -> SweepConfig:
    kwargs = {}
    init = list(DEFAULT_INITIAL)
    loss_path = values.get("loss_path", "")
    for key, value in values.items():
        if key == "loss_path":
            continue
        if key in INIT_KEYS:
            init[INIT_KEYS.index(key)] = float(value)
        elif key in CONFIG_KEYS:
            kwargs[CONFIG_KEYS[key]] = value
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    kwargs["init"] = tuple(init)
    if "loss_file" in kwargs:
        p = Path(loss_path) / str(kwargs["loss_file"])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        kwargs["loss_file"] = str(p)
    if "outpath" in kwargs and base_dir is not None and not Path(str(kwargs["outpath"])).is_absolute():
        kwargs["outpath"] = str(base_dir / str(kwargs["outpath"] or "."))
    try:
        return SweepConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: Sequence[str] = ()) -> SweepConfig:
    path = Path(path)
    values = parse_config_text(path.read_text())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = parse_value(v)
    return config_from_mapping(values, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Rows and files


def fmt(v) -> str:
    """Shortest round-trip decimal; integers without a fractional part."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def output_row(ls, dt, res: KeyResult, params: ProtocolParams, sysp: SystemParams,
               cfg: SweepConfig, sys_loss: float, max_elev: float) -> tuple:
    mpn = (params.mu1 + params.mu2 + cfg.mu3) / 3.0 if cfg.mpn_unweighted else res.mean_photon_number
    return (
        ls + sys_loss, dt, res.skl, res.qber_x, res.phi_x, res.n_X_total, res.n_Z_total,
        res.lambda_EC, res.s_X0, res.s_X1, res.v_Z1, res.s_Z1, mpn,
        sysp.qber_i, sysp.p_ec, sysp.p_ap, sysp.num_passes, sysp.source_rate,
        sysp.sec.eps_c, sysp.sec.eps_s,
        params.p_x, params.p_mu1, params.p_mu2, params.p_mu3, params.mu1, params.mu2, cfg.mu3,
        math.degrees(cfg.xi), cfg.min_elev, max_elev, cfg.shift_elev,
    )


def zero_result(params: ProtocolParams, mu3: float) -> KeyResult:
    return KeyResult(skl=0, ell=math.nan, qber_x=0.0, phi_x=0.0, n_X_total=0.0, n_Z_total=0.0,
                     lambda_EC=0.0, s_X0=0.0, s_X1=0.0, v_Z1=0.0, s_Z1=0.0,
                     mean_photon_number=params.intensities(mu3).mean_photon_number)


def optimal_rows(rows: Sequence[tuple]) -> list:
    """For each excess loss, the row with the largest SKL (smallest dt on ties)."""
    best = {}
    for row in rows:
        key = row[0]
        cur = best.get(key)
        if cur is None or row[2] > cur[2] or (row[2] == cur[2] and row[1] < cur[1]):
            best[key] = row
    return list(best.values())


def file_tag(pec, qberi) -> str:
    return f"Pec_{fmt(pec)}_QBERI_{fmt(qberi)}"


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    path.write_text(buf.getvalue())


@dataclass
class BlockResult:
    pec: float
    qberi: float
    rows: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    elapsed: float = 0.0


def write_outputs(blocks: Sequence[BlockResult], cfg: SweepConfig) -> list:
    """Write every requested file; returns the paths written."""
    out = Path(cfg.outpath)
    written = []
    multi = []
    for b in blocks:
        tag = file_tag(b.pec, b.qberi)
        if cfg.full_data:
            p = out / f"{cfg.outbase}_{tag}.csv"
            _write_csv(p, COLUMNS, b.rows)
            written.append(p)
        opt = optimal_rows(b.rows)
        multi.extend(opt)
        if cfg.opti_data:
            p = out / f"{cfg.outbase}_opt_{tag}.csv"
            _write_csv(p, COLUMNS, opt)
            written.append(p)
        if cfg.metrics:
            p = out / f"{cfg.outbase}_metrics_{tag}.csv"
            _write_csv(p, METRIC_COLUMNS, b.metrics)
            written.append(p)
    if cfg.multi_opt:
        p = out / f"{cfg.outbase}_multi_opt.csv"
        _write_csv(p, COLUMNS, multi)
        written.append(p)
    return written


def preflight(cfg: SweepConfig) -> None:
    if not any((cfg.full_data, cfg.opti_data, cfg.multi_opt, cfg.metrics)):
        return
    out = Path(cfg.outpath)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")


# ---------------------------------------------------------------------------
# The sweep


class _Runner:
    """Evaluates sweep points, reusing results for repeated identical inputs."""

    def __init__(self, cfg: SweepConfig, stream: TextIO | None):
        self.cfg = cfg
        self.stream = stream
        self.opt_cfg = cfg.optimizer_config()
        self._cache = {}

    def optimise(self, ctx: Context, previous):
        # Every point starts from a fresh generator, so the optimisation is a
        # pure function of the window, system and carried-over start.
        prev_key = None
        if self.opt_cfg.init is None and previous is not None and previous[1] > 0:
            prev_key = tuple(previous[0].as_array().tolist())
        key = (ctx.window.eta.tobytes(), ctx.window.slot_duration, ctx.sys, ctx.bound, ctx.ec, prev_key)
        hit = self._cache.get(key)
        if hit is None:
            rng = np.random.default_rng(self.opt_cfg.seed)
            hit = optimise_skl(self.opt_cfg, ctx, previous=previous, rng=rng)
            self._cache[key] = hit
        return hit

    def point(self, window, sysp: SystemParams, previous):
        cfg = self.cfg
        bound, ec = TailBound(cfg.bound), ErrorCorrection(cfg.ec)
        fixed = ProtocolParams(*cfg.init)
        if window is None:
            return fixed, zero_result(fixed, cfg.mu3), OptimizerMetrics(stop_reason="empty window"), None
        ctx = Context(window, sysp, bound, ec)
        if not cfg.optimise:
            res = key_result(fixed, ctx)
            if res is None:
                raise ConfigError(f"specified parameters {cfg.init} violate the protocol constraints")
            return fixed, res, OptimizerMetrics(stop_reason="fixed"), None
        params, res, metrics = self.optimise(ctx, previous)
        post = None
        if cfg.compare_ec:
            p2, _, _ = self.optimise(replace(ctx, ec=ErrorCorrection.NONE), previous)
            post = key_result(p2, ctx)
        return params, res, metrics, post


def run_sweep(cfg: SweepConfig, stream: TextIO | None = None, profile: LossProfile | None = None):
    """Run the whole sweep, write the requested files, and return the blocks."""
    if stream is None and cfg.print_:
        stream = sys.stdout
    if not cfg.print_:
        stream = None
    preflight(cfg)
    if profile is None:
        try:
            profile = read_loss_file(cfg.loss_file, cfg.lc, in_db=cfg.loss_in_db)
        except OSError as exc:
            raise OSError(f"cannot read loss file {cfg.loss_file}: {exc}") from None
    sys_loss = system_loss_db(profile)
    max_elev = max_elevation(cfg.geometry())
    ls_values = grid(cfg.ls_range)
    dt_values = grid(cfg.dt_range)
    runner = _Runner(cfg, stream)
    t_total = time.perf_counter()
    blocks = []
    for pec in cfg.pec_list:
        for qberi in cfg.qberi_list:
            t_block = time.perf_counter()
            sysp = cfg.system(pec, qberi)
            block = BlockResult(pec, qberi)
            previous = None
            for ls in ls_values:
                lossy = apply_excess_loss(profile, ls)
                for dt in dt_values:
                    t_point = time.perf_counter()
                    try:
                        window = select_window(lossy, WindowSpec(dt, cfg.min_elev, cfg.shift_elev))
                    except EmptyWindowError:
                        window = None
                    params, res, metrics, post = runner.point(window, sysp, previous)
                    previous = (params, res.skl)
                    block.rows.append(output_row(ls, dt, res, params, sysp, cfg, sys_loss, max_elev))
                    block.metrics.append((ls, dt, metrics.restarts, metrics.evaluations, res.skl,
                                          metrics.stop_reason,
                                          metrics.status[-1] if metrics.status else ""))
                    if stream is not None:
                        line = (f"Pec={fmt(pec)} QBERI={fmt(qberi)} ls={fmt(ls)} dt={fmt(dt)} "
                                f"SKL={res.skl} restarts={metrics.restarts} "
                                f"elapsed={time.perf_counter() - t_point:.3f}s")
                        if post is not None:
                            line += f" SKL_EC_after={post.skl}"
                        print(line, file=stream)
            block.elapsed = time.perf_counter() - t_block
            if stream is not None:
                print(f"block Pec={fmt(pec)} QBERI={fmt(qberi)} time={block.elapsed:.3f}s", file=stream)
            blocks.append(block)
    write_outputs(blocks, cfg)
    if stream is not None:
        print(f"total time={time.perf_counter() - t_total:.3f}s", file=stream)
    return blocks


def compare_ec_modes(cfg: SweepConfig, profile: LossProfile | None = None) -> list:
    """Pairs of (EC inside the objective, EC applied after) key lengths for every point."""
    cfg = replace(cfg, compare_ec=True, full_data=False, opti_data=False, multi_opt=False,
                  metrics=False, print_=False)
    if profile is None:
        profile = read_loss_file(cfg.loss_file, cfg.lc, in_db=cfg.loss_in_db)
    runner = _Runner(cfg, None)
    pairs = []
    for pec in cfg.pec_list:
        for qberi in cfg.qberi_list:
            sysp = cfg.system(pec, qberi)
            previous = None
            for ls in grid(cfg.ls_range):
                lossy = apply_excess_loss(profile, ls)
                for dt in grid(cfg.dt_range):
                    try:
                        window = select_window(lossy, WindowSpec(dt, cfg.min_elev, cfg.shift_elev))
                    except EmptyWindowError:
                        window = None
                    params, res, _, post = runner.point(window, sysp, previous)
                    previous = (params, res.skl)
                    pairs.append((res, post if post is not None else res))
    return pairs
