"""Acceptance suite; a PASS/FAIL line per criterion is printed in the terminal summary."""
import math
import time
from pathlib import Path

import numpy as np
import pytest

import oracle
from fixtures.make_golden import GOLDEN_DIR, golden_config, golden_profile
from satqkd.channel import ProtocolParams, SystemParams
from satqkd.geometry import OrbitGeometry, WindowSpec, max_elevation, select_window
from satqkd.keymath import (
    CountStatistics, IntensitySet, SecurityParams, binary_entropy, binomial_cdf_inverse,
    bounded_counts, gamma, lambda_ec, phase_error_rate, qber_x, secret_key_length,
    single_photon_errors, single_photon_events, tau, vacuum_events,
)
from satqkd.lossio import apply_excess_loss, generate_synthetic_profile
from satqkd.optimizer import DEFAULT_BOUNDS, DEFAULT_INITIAL, Context, OptimizerConfig, evaluate_objective, key_result, optimise_skl
from satqkd.sweep import SweepConfig, grid, run_sweep

INIT = ProtocolParams(*DEFAULT_INITIAL)
RNG_SEED = 20240101
KINDS = ("Chernoff", "Hoeffding", "Asymptotic")


@pytest.fixture(scope="module")
def pass_profile():
    # An odd slot count centres the pass on one slot; 601 slots stand in for 600.
    return generate_synthetic_profile(OrbitGeometry(h_sat=500.0), 30.0, 601)


def within(got, want, rel=1e-9):
    return oracle.rel_err(got, want) <= rel


def random_case(rng):
    """Physically consistent intensities, probabilities and counts from a short random window."""
    mu3 = rng.choice([0.0, rng.uniform(0.0, 0.05)])
    mu2 = rng.uniform(max(0.1, mu3 + 0.05), 0.5)
    mu1 = rng.uniform(mu2 + mu3 + 0.05, 1.0)
    p1 = rng.uniform(0.6, 0.9)
    p2 = rng.uniform(0.02, 0.95 - p1)
    px = rng.uniform(0.3, 0.95)
    etas = list(10 ** rng.uniform(-4.5, -2.0, size=5))
    pec = 10 ** rng.uniform(-8, -6)
    qberi = rng.uniform(0.001, 0.01)
    counts = oracle.counts_by_slot(etas, 1e9, px, (p1, p2, 1 - p1 - p2), (mu1, mu2, mu3), pec, qberi, 0.001)
    return (mu1, mu2, mu3), (p1, p2, 1 - p1 - p2), counts


# ---------------------------------------------------------------------------
# 1


@pytest.mark.acceptance(1, "formula oracles agree to 1e-9 on 100 random inputs each")
def test_formula_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(RNG_SEED)
    failures = []

    def check(name, got, want):
        if not within(got, want):
            failures.append((name, got, want))

    for _ in range(100):
        x = rng.uniform(0, 1)
        check("entropy", binary_entropy(x), oracle.h(x))

        mu, p, (nX, nZ, mX, mZ) = random_case(rng)
        iset = IntensitySet(mu, p)
        eps_s = 10 ** rng.uniform(-15, -3)
        eps_c = 10 ** rng.uniform(-15, -3)
        check("tau0", tau(0, iset), oracle.tau(0, mu, p))
        check("tau1", tau(1, iset), oracle.tau(1, mu, p))

        for kind in KINDS:
            lo, hi = bounded_counts(nX, iset, eps_s, kind)
            olo, ohi = oracle.bounds(nX, mu, p, eps_s, kind)
            for j in range(3):
                check(f"{kind} upper", hi[j], ohi[j])
                check(f"{kind} lower", lo[j], olo[j])
            # Estimators fed the oracle's bounds so each is checked in isolation.
            s0 = vacuum_events((olo, ohi), iset)
            check("vacuum events", s0, oracle.s0(olo, ohi, mu, p))
            os0 = oracle.s0(olo, ohi, mu, p)
            check("single-photon events", single_photon_events((olo, ohi), os0, iset),
                  oracle.s1(olo, ohi, os0, mu, p))
            mlo, mhi = oracle.bounds(mZ, mu, p, eps_s, kind)
            check("single-photon errors", single_photon_errors((mlo, mhi), iset), oracle.v1(mlo, mhi, mu, p))

        a, b = 10 ** rng.uniform(-15, -3), rng.uniform(1e-4, 0.5)
        c, d = 10 ** rng.uniform(2, 9), 10 ** rng.uniform(2, 9)
        check("gamma", gamma(a, b, c, d), oracle.gamma(a, b, c, d))

        sz, sx = 10 ** rng.uniform(3, 8), 10 ** rng.uniform(3, 8)
        v = sz * rng.uniform(0.001, 0.3)
        for kind in KINDS:
            check(f"phase error {kind}", phase_error_rate(v, sz, sx, eps_s, kind), oracle.phi(v, sz, sx, eps_s, kind))

        stats = CountStatistics(nX, nZ, mX, mZ)
        check("QBER", qber_x(stats), sum(mX) / sum(nX))
        check("block", lambda_ec(stats, eps_c, "block"), oracle.lambda_block(sum(nX), sum(mX)))
        check("mXtot", lambda_ec(stats, eps_c, "mXtot"), oracle.lambda_mxtot(sum(mX)))

        n_ec = 10 ** rng.uniform(2, 7)
        m_ec = n_ec * rng.uniform(1e-3, 0.2)
        small = CountStatistics((n_ec, 0, 0), (n_ec, 0, 0), (m_ec, 0, 0), (m_ec, 0, 0))
        quantile = oracle.quantile_brute if n_ec <= 3000 else oracle.quantile_scipy
        check("logM", lambda_ec(small, eps_c, "logM"), oracle.lambda_logm(n_ec, m_ec, eps_c, quantile))

        kind = KINDS[rng.integers(3)]
        ec = ("logM", "block", "mXtot", "None")[rng.integers(4)]
        res = secret_key_length(stats, iset, SecurityParams(eps_c, eps_s), kind, ec)
        ell, _ = oracle.skl_chain(nX, nZ, mX, mZ, mu, p, eps_c, eps_s, kind, ec,
                                  quantile=oracle.quantile_scipy if sum(nX) > 3000 else oracle.quantile_brute)
        if ell is None:
            check("key length", res.skl, 0)
        else:
            check("key length", res.ell, ell)

        R, hs, ho = rng.uniform(6000, 6500), rng.uniform(200, 2000), rng.uniform(0, 5)
        xi = rng.uniform(0.0, 0.99) * math.degrees(math.acos((R + ho) / (R + hs)))  # pass clears the horizon
        check("max elevation", max_elevation(OrbitGeometry(R, hs, ho, xi)), oracle.theta_max_deg(R, hs, ho, xi))

    elapsed = time.perf_counter() - t0
    assert not failures, failures[:10]
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# 2


@pytest.mark.acceptance(2, "zenith pass peaks at 90 degrees for 20 altitude pairs")
def test_zenith_max_elevation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(RNG_SEED + 2)
    for _ in range(20):
        h_ogs = rng.uniform(0, 5)
        h_sat = rng.uniform(h_ogs + 100, 40000)
        assert abs(max_elevation(OrbitGeometry(h_sat=h_sat, h_ogs=h_ogs, xi=0.0)) - 90.0) <= 1e-12
    assert time.perf_counter() - t0 < 1.0


# ---------------------------------------------------------------------------
# 3


@pytest.mark.acceptance(3, "tail bounds bracket the asymptotic value on 1000 random tuples")
def test_bound_ordering():
    t0 = time.perf_counter()
    rng = np.random.default_rng(RNG_SEED + 3)
    for _ in range(1000):
        n = 10 ** rng.uniform(-1, 10, size=3) * (rng.uniform(size=3) > 0.1)
        mu = IntensitySet(tuple(rng.uniform(0.0, 1.0, size=3)), tuple(rng.dirichlet((1, 1, 1))))
        eps = 10 ** rng.uniform(-20, -1)
        mid = bounded_counts(n, mu, eps, "Asymptotic")[0]
        for kind in ("Chernoff", "Hoeffding"):
            lo, hi = bounded_counts(n, mu, eps, kind)
            for j in range(3):
                assert 0.0 <= lo[j] <= mid[j] <= hi[j]
    assert time.perf_counter() - t0 < 1.0


# ---------------------------------------------------------------------------
# 4


def _exact_quantiles(n, p, eps_sorted):
    """Smallest k with F(k) >= eps for each eps, from one exact integer pass."""
    from fractions import Fraction

    fp = Fraction(p)
    a, den = fp.numerator, fp.denominator
    b = den - a
    scale = den**n
    targets = [Fraction(e) for e in eps_sorted]
    if a > b:
        return _exact_quantiles_from_top(n, a, b, scale, targets)
    out = []
    acc, term, k = 0, b**n, 0
    for t in targets:
        while True:
            if k > n:
                out.append(n)
                break
            if (acc + term) * t.denominator >= t.numerator * scale:
                out.append(k)
                break
            acc += term
            term = term * (n - k) * a // ((k + 1) * b)
            k += 1
    return out


def _exact_quantiles_from_top(n, a, b, scale, targets):
    # Walk down from k = n; upper holds the mass strictly above k.
    out = []
    upper, term, k = 0, a**n, n
    for t in reversed(targets):
        while k > 0 and (scale - upper - term) * t.denominator >= t.numerator * scale:
            upper += term
            term = term * k * b // ((n - k + 1) * a)
            k -= 1
        out.append(k)
    return out[::-1]


@pytest.mark.acceptance(4, "binomial quantile equals direct CDF summation for n = 1..2000")
def test_quantile_brute_force():
    t0 = time.perf_counter()
    eps_sorted = (1e-15, 1e-9, 0.5)
    mismatches = []
    for p in (0.01, 0.5, 0.99):
        for n in range(1, 2001):
            want = _exact_quantiles(n, p, eps_sorted)
            for eps, w in zip(eps_sorted, want):
                got = binomial_cdf_inverse(eps, n, p)
                if got != w:
                    mismatches.append((n, p, eps, got, w))
    elapsed = time.perf_counter() - t0
    assert not mismatches, mismatches[:10]
    assert elapsed < 30.0


# ---------------------------------------------------------------------------
# 5


@pytest.mark.acceptance(5, "asymptotic key dominates both finite-key bounds")
def test_asymptotic_dominance(pass_profile):
    t0 = time.perf_counter()
    sysp = SystemParams(p_ec=1e-7, qber_i=0.003)
    for ls in (0, 4, 8, 12, 16):
        window = select_window(apply_excess_loss(pass_profile, ls), WindowSpec(200, 10.0))
        skl = {k: key_result(INIT, Context(window, sysp, k, "logM")).skl for k in KINDS}
        assert skl["Asymptotic"] >= skl["Chernoff"]
        assert skl["Asymptotic"] >= skl["Hoeffding"]
    assert time.perf_counter() - t0 < 60.0


# ---------------------------------------------------------------------------
# 6


def _loss_curve(profile, qberi, ec):
    sysp = SystemParams(p_ec=1e-7, qber_i=qberi)
    out = []
    for ls in range(0, 31, 2):
        window = select_window(apply_excess_loss(profile, ls), WindowSpec(200, 10.0))
        out.append(key_result(INIT, Context(window, sysp, "Chernoff", ec)).skl)
    return out


@pytest.mark.acceptance(6, "key falls with loss and its cutoff moves in as intrinsic QBER rises")
def test_loss_monotonicity(pass_profile):
    t0 = time.perf_counter()
    losses = list(range(0, 31, 2))
    # Without an error-correction charge the dark-count vacuum term keeps the
    # key above zero, and phi past 1/2 lets it climb again; see the README.
    for ec in ("logM", "block"):
        cutoffs = []
        for qberi in (0.001, 0.005):
            curve = _loss_curve(pass_profile, qberi, ec)
            assert all(a >= b for a, b in zip(curve, curve[1:])), curve
            assert curve[0] > 0 and curve[-1] == 0, curve
            cutoffs.append(losses[curve.index(0)])
        assert cutoffs[1] <= cutoffs[0]
    assert time.perf_counter() - t0 < 120.0


# ---------------------------------------------------------------------------
# 7


@pytest.mark.acceptance(7, "optimiser matches or beats the initial parameters within bounds")
def test_optimizer_dominance(pass_profile):
    t0 = time.perf_counter()
    sysp = SystemParams(p_ec=1e-7, qber_i=0.003)
    cfg = OptimizerConfig()
    for ls in (0, 8, 16):
        window = select_window(apply_excess_loss(pass_profile, ls), WindowSpec(200, 10.0))
        ctx = Context(window, sysp)
        params, res, _ = optimise_skl(cfg, ctx)
        assert res.skl >= math.floor(evaluate_objective(INIT, ctx))
        for v, (lo, hi) in zip(params.as_array(), DEFAULT_BOUNDS):
            assert lo < v < hi
        assert params.is_feasible(sysp.mu3)
    assert time.perf_counter() - t0 < 300.0


# ---------------------------------------------------------------------------
# 8


@pytest.mark.acceptance(8, "no error-correction cost never yields less key")
def test_error_correction_ordering(pass_profile):
    t0 = time.perf_counter()
    for qberi in (0.001, 0.005):
        sysp = SystemParams(p_ec=1e-7, qber_i=qberi)
        for ls in range(0, 31, 2):
            window = select_window(apply_excess_loss(pass_profile, ls), WindowSpec(200, 10.0))
            for kind in KINDS:
                res = {ec: key_result(INIT, Context(window, sysp, kind, ec))
                       for ec in ("None", "block", "mXtot", "logM")}
                assert res["None"].lambda_EC == 0.0
                for ec in ("block", "mXtot", "logM"):
                    assert res["None"].skl >= res[ec].skl
    assert time.perf_counter() - t0 < 60.0


# ---------------------------------------------------------------------------
# 9


@pytest.mark.acceptance(9, "inclusive grid arithmetic")
def test_grid_arithmetic():
    assert grid((0, 7, 2)) == [0, 2, 4, 6]
    assert len(grid((200, 350, 10))) == 16


# ---------------------------------------------------------------------------
# 10


@pytest.mark.slow
@pytest.mark.acceptance(10, "default 9-file grid is byte-identical across two runs")
def test_reproducibility(tmp_path, pass_profile):
    t0 = time.perf_counter()
    outputs = []
    for name in ("first", "second"):
        cfg = SweepConfig(outpath=str(tmp_path / name), outbase="default", print_=False)
        run_sweep(cfg, profile=pass_profile)
        outputs.append({p.name: p.read_bytes() for p in sorted((tmp_path / name).iterdir())})
    full = [n for n in outputs[0] if n.startswith("default_Pec_")]
    assert len(full) == 9
    assert all(n.count("\n") == 112 + 1 for n in (outputs[0][f].decode() for f in full))
    assert outputs[0] == outputs[1]
    assert time.perf_counter() - t0 < 600.0


# ---------------------------------------------------------------------------
# 11


@pytest.mark.acceptance(11, "mini-grid outputs match the committed golden files")
def test_golden_files(tmp_path):
    t0 = time.perf_counter()
    profile = golden_profile()
    cfg = golden_config(tmp_path)
    run_sweep(cfg, profile=profile)
    produced = sorted(p.name for p in tmp_path.iterdir())
    expected = sorted(p.name for p in GOLDEN_DIR.iterdir())
    assert produced == expected and len(expected) == 2 * 2 * 3 + 1
    for name in expected:
        assert (tmp_path / name).read_bytes() == (GOLDEN_DIR / name).read_bytes(), name

    # The committed rows themselves still agree with the oracle pipeline.
    points = [(ls, dt) for ls in grid(cfg.ls_range) for dt in grid(cfg.dt_range)]
    for pec in cfg.pec_list:
        for qberi in cfg.qberi_list:
            path = GOLDEN_DIR / f"golden_Pec_{pec!r}_QBERI_{qberi!r}.csv"
            rows = [[float(v) for v in line.split(",")] for line in path.read_text().splitlines()[1:]]
            for row, (ls, dt) in zip(rows, points):
                assert not oracle.check_row(row, oracle.sweep_row(profile, ls, dt, pec, qberi))
    assert time.perf_counter() - t0 < 120.0
