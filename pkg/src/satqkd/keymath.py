"""Finite-key secret key length for asymmetric two-decoy BB84 with weak coherent pulses.

Everything here is a pure function of its arguments. Counts are carried as
real-valued expectations, never rounded until the final floor.

Conventions
-----------
Index ``j = 0, 1, 2`` addresses intensities ``mu1, mu2, mu3`` (signal, decoy,
second decoy). ``mu3`` is normally the vacuum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.special import betainc, ndtri

# Number of error-probability partitions shared by the tail bounds.
EPS_PARTITIONS = 21.0
# Error-correction inefficiency used by the block and mXtot estimates.
EC_EFFICIENCY = 1.16
# Half-width of the CDF probe around the quantile estimate.
QUANTILE_PROBE = 8
# Relative CDF gap to eps below which the answer is re-checked exactly.
QUANTILE_TIE_RTOL = 1e-9
# Near-ties are re-checked in exact integer arithmetic up to this n.
EXACT_TIE_MAX_N = 20_000
# The logM leakage is evaluated with natural logs as printed in the source
# formula; set True to use log2 for its last three terms instead.
LOGM_ALL_LOG2 = False


class NoKeyError(ArithmeticError):
    """Raised when the estimators leave nothing to distil a key from."""


class TailBound(str, Enum):
    CHERNOFF = "Chernoff"
    HOEFFDING = "Hoeffding"
    ASYMPTOTIC = "Asymptotic"


class ErrorCorrection(str, Enum):
    LOGM = "logM"
    BLOCK = "block"
    MXTOT = "mXtot"
    NONE = "None"


@dataclass(frozen=True)
class SecurityParams:
    eps_c: float = 1e-15
    eps_s: float = 1e-9

    def __post_init__(self):
        for name in ("eps_c", "eps_s"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v!r}")


@dataclass(frozen=True)
class IntensitySet:
    """Three pulse intensities and the probability of preparing each."""

    mu: tuple[float, float, float]
    p_mu: tuple[float, float, float]

    def __post_init__(self):
        if len(self.mu) != 3 or len(self.p_mu) != 3:
            raise ValueError("exactly three intensities are required")
        object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
        object.__setattr__(self, "p_mu", tuple(float(p) for p in self.p_mu))

    def check(self) -> None:
        """Raise ``ValueError`` unless the decoy ordering and probabilities are valid."""
        mu1, mu2, mu3 = self.mu
        if not mu2 > mu3 >= 0.0:
            raise ValueError(f"need mu2 > mu3 >= 0, got mu={self.mu}")
        if not mu1 > mu2 + mu3:
            raise ValueError(f"need mu1 > mu2 + mu3, got mu={self.mu}")
        if any(not 0.0 < p < 1.0 for p in self.p_mu):
            raise ValueError(f"probabilities must lie in (0, 1), got {self.p_mu}")
        if abs(sum(self.p_mu) - 1.0) > 1e-12:
            raise ValueError(f"probabilities must sum to 1, got {self.p_mu}")

    @property
    def mean_photon_number(self) -> float:
        return sum(m * p for m, p in zip(self.mu, self.p_mu))


@dataclass(frozen=True)
class CountStatistics:
    """Sifted events ``n`` and bit errors ``m`` per basis, per intensity."""

    n_X: np.ndarray
    n_Z: np.ndarray
    m_X: np.ndarray
    m_Z: np.ndarray

    def __post_init__(self):
        names = ("n_X", "n_Z", "m_X", "m_Z")
        arrs = [np.array(getattr(self, name), dtype=float) for name in names]
        for name, arr in zip(names, arrs):
            if arr.shape != (3,):
                raise ValueError(f"{name} must have 3 entries, got shape {arr.shape}")
        block = np.stack(arrs)
        if not (np.isfinite(block).all() and (block >= 0.0).all()):
            raise ValueError(f"counts must be finite and non-negative: {block}")
        # Tolerate last-ulp excess from accumulation.
        if (block[2:] > block[:2] * (1 + 1e-12)).any():
            raise ValueError(f"errors exceed events: n={block[:2]}, m={block[2:]}")
        block.setflags(write=False)
        for name, row in zip(names, block):
            object.__setattr__(self, name, row)

    @classmethod
    def _from_block(cls, block: np.ndarray) -> "CountStatistics":
        """Wrap a (4, 3) array of valid counts without re-checking it."""
        block.setflags(write=False)
        obj = object.__new__(cls)
        for name, row in zip(("n_X", "n_Z", "m_X", "m_Z"), block):
            object.__setattr__(obj, name, row)
        return obj

    def scaled(self, factor: float) -> "CountStatistics":
        return CountStatistics(self.n_X * factor, self.n_Z * factor,
                               self.m_X * factor, self.m_Z * factor)

    def __add__(self, other: "CountStatistics") -> "CountStatistics":
        return CountStatistics(self.n_X + other.n_X, self.n_Z + other.n_Z,
                               self.m_X + other.m_X, self.m_Z + other.m_Z)


@dataclass(frozen=True)
class KeyResult:
    """Secret key length and every intermediate quantity behind it.

    ``ell`` is the real-valued expression before flooring and clamping; it
    is ``nan`` when the chain stopped early on a no-key condition.
    """

    skl: int
    ell: float
    qber_x: float
    phi_x: float
    n_X_total: float
    n_Z_total: float
    lambda_EC: float
    s_X0: float
    s_X1: float
    v_Z1: float
    s_Z1: float
    mean_photon_number: float


# ---------------------------------------------------------------------------
# Elementary functions


def binary_entropy(x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"binary entropy is defined on [0, 1], got {x!r}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def tau(n: int, intensities: IntensitySet) -> float:
    """Probability that an ``n``-photon state is emitted."""
    if n < 0:
        raise ValueError("photon number must be non-negative")
    (m1, m2, m3), (p1, p2, p3) = intensities.mu, intensities.p_mu
    total = math.exp(-m1) * m1**n * p1 + math.exp(-m2) * m2**n * p2 + math.exp(-m3) * m3**n * p3
    return total / math.factorial(n)


def bounded_counts(counts: Sequence[float], intensities: IntensitySet, eps_s: float,
                   kind: TailBound | str, total: float | None = None):
    """Lower and upper bounds on the expected count per intensity.

    ``total`` is the basis-wide count entering the Hoeffding deviation; it
    defaults to the sum of ``counts``.

    Returns two 3-tuples ``(lower, upper)``.
    """
    if not isinstance(kind, TailBound):
        kind = TailBound(kind)
    n = [float(v) for v in counts]
    if len(n) != 3 or not all(v >= 0.0 for v in n):
        raise ValueError(f"counts must be 3 non-negative values, got {counts!r}")
    scale = [math.exp(m) / p for m, p in zip(intensities.mu, intensities.p_mu)]
    if kind is TailBound.ASYMPTOTIC:
        mid = tuple(s * v for s, v in zip(scale, n))
        return mid, mid
    L = math.log(EPS_PARTITIONS / eps_s)
    if kind is TailBound.CHERNOFF:
        upper = [s * (v + L + math.sqrt(2.0 * v * L + L**2)) for s, v in zip(scale, n)]
        lower = [s * (v - 0.5 * L - math.sqrt(2.0 * v * L + 0.25 * L**2)) for s, v in zip(scale, n)]
    else:
        N = math.fsum(n) if total is None else float(total)
        delta = math.sqrt(0.5 * N * L)
        upper = [s * (v + delta) for s, v in zip(scale, n)]
        lower = [s * (v - delta) for s, v in zip(scale, n)]
    return tuple(max(v, 0.0) for v in lower), tuple(upper)


def _check_decoys(intensities: IntensitySet) -> tuple[float, float, float]:
    mu1, mu2, mu3 = intensities.mu
    if not mu2 > mu3:
        raise ValueError(f"degenerate decoy intensities: mu2={mu2} <= mu3={mu3}")
    return mu1, mu2, mu3


def vacuum_events(bounded, intensities: IntensitySet) -> float:
    lower, upper = bounded
    mu1, mu2, mu3 = _check_decoys(intensities)
    s0 = tau(0, intensities) * (mu2 * lower[2] - mu3 * upper[1]) / (mu2 - mu3)
    return float(max(s0, 0.0))


def single_photon_events(bounded, s0: float, intensities: IntensitySet) -> float:
    lower, upper = bounded
    mu1, mu2, mu3 = intensities.mu
    denom = mu1 * (mu2 - mu3) - mu2**2 + mu3**2
    if not denom > 0.0:
        raise ValueError(f"degenerate intensities {intensities.mu}: denominator {denom} <= 0")
    t0, t1 = tau(0, intensities), tau(1, intensities)
    inner = lower[1] - upper[2] - (mu2**2 - mu3**2) / mu1**2 * (upper[0] - s0 / t0)
    return float(max(t1 * mu1 * inner / denom, 0.0))


def single_photon_errors(bounded_errors, intensities: IntensitySet) -> float:
    lower, upper = bounded_errors
    mu1, mu2, mu3 = _check_decoys(intensities)
    return float(max(tau(1, intensities) * (upper[1] - lower[2]) / (mu2 - mu3), 0.0))


def gamma(a: float, b: float, c: float, d: float) -> float:
    """Finite-sampling correction to the phase error rate.

    Zero at ``b in {0, 1}`` (the limit of the expression) and wherever the
    logarithm drops below zero.
    """
    if not 0.0 <= b <= 1.0:
        raise ValueError(f"b must be a rate in [0, 1], got {b!r}")
    if not (c > 0.0 and d > 0.0):
        raise ValueError(f"c and d must be positive, got c={c!r}, d={d!r}")
    if b == 0.0 or b == 1.0:
        return 0.0
    arg = (c + d) / (b * c * d * (1.0 - b)) * (EPS_PARTITIONS**2 / a**2)
    radicand = (c + d) * (1.0 - b) * b / (c * d * math.log(2.0)) * math.log2(arg)
    return math.sqrt(radicand) if radicand > 0.0 else 0.0


def phase_error_rate(vZ1: float, sZ1: float, sX1: float, eps_s: float,
                     kind: TailBound | str) -> float:
    if not isinstance(kind, TailBound):
        kind = TailBound(kind)
    if sZ1 <= 0.0 or sX1 <= 0.0:
        raise NoKeyError(f"no single-photon events (sZ1={sZ1}, sX1={sX1})")
    ratio = vZ1 / sZ1
    if ratio >= 1.0:
        return 1.0
    if kind is TailBound.ASYMPTOTIC:
        return max(ratio, 0.0)
    return min(max(ratio + gamma(eps_s, ratio, sZ1, sX1), 0.0), 1.0)


def qber_x(counts: CountStatistics) -> float:
    total = math.fsum(counts.n_X)
    if total <= 0.0:
        raise NoKeyError("no X-basis events")
    return min(math.fsum(counts.m_X) / total, 1.0)


# ---------------------------------------------------------------------------
# Binomial quantile


def _exact_binom_cdf(k: int, n: int, p: float) -> Fraction:
    """Exact ``F(k; n, p)`` for the binary value of ``p``, using integer arithmetic."""
    if k < 0:
        return Fraction(0)
    if k >= n:
        return Fraction(1)
    fp = Fraction(p)
    a, den = fp.numerator, fp.denominator
    b = den - a
    # Sum whichever tail is shorter: F(k) = 1 - P(n - X <= n - k - 1).
    complement = k + 1 > n - k
    x, y, upto = (b, a, n - k - 1) if complement else (a, b, k)
    term = y**n
    acc = term
    for i in range(upto):
        term = term * (n - i) * x // ((i + 1) * y)
        acc += term
    part = Fraction(acc, den**n)
    return 1 - part if complement else part


def _binom_cdf(k, n: int, p: float):
    """Float ``F(k; n, p)`` for ``0 <= k < n``, via the regularised incomplete beta."""
    return betainc(n - k, k + 1.0, 1.0 - p)


def binomial_cdf_inverse(eps: float, n: int, p: float) -> int:
    """Smallest integer ``k`` with ``F(k; n, p) >= eps``.

    Probes the CDF around a Cornish-Fisher estimate and bisects if the probe
    misses. Near-ties at the boundary are settled in exact rational
    arithmetic for moderate ``n``.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps!r}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p!r}")
    n = int(n)
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0 or p == 0.0:
        return 0
    if p == 1.0:
        return n
    sigma = math.sqrt(n * p * (1.0 - p))
    z = float(ndtri(eps))
    guess = n * p + sigma * z + (z * z - 1.0) * (1.0 - 2.0 * p) / 6.0 - 0.5
    guess = min(max(round(guess), 0), n - 1)
    ks = np.arange(max(guess - QUANTILE_PROBE, 0), min(guess + QUANTILE_PROBE, n - 1) + 1, dtype=float)
    i = int(np.searchsorted(_binom_cdf(ks, n, p), eps, side="left"))
    if 0 < i < len(ks) or (i == 0 and ks[0] == 0):
        k = int(ks[i])
    elif i == len(ks) and ks[-1] == n - 1:
        k = n
    else:
        # Bracket lo < answer <= hi, then bisect.
        lo, hi = (-1, int(ks[0])) if i == 0 else (int(ks[-1]), n)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if _binom_cdf(mid, n, p) >= eps:
                hi = mid
            else:
                lo = mid
        k = hi
    if n <= EXACT_TIE_MAX_N:
        near = [abs(_binom_cdf(j, n, p) - eps) <= QUANTILE_TIE_RTOL * eps for j in (k - 1, k) if 0 <= j < n]
        if any(near):
            e = Fraction(eps)
            while k < n and _exact_binom_cdf(k, n, p) < e:
                k += 1
            while k > 0 and _exact_binom_cdf(k - 1, n, p) >= e:
                k -= 1
    return k


# ---------------------------------------------------------------------------
# Error correction and the key length


def lambda_ec(counts: CountStatistics, eps_c: float, kind: ErrorCorrection | str,
              all_log2: bool | None = None) -> float:
    """Bits leaked to error correction; never negative."""
    if not isinstance(kind, ErrorCorrection):
        kind = ErrorCorrection(kind)
    if kind is ErrorCorrection.NONE:
        return 0.0
    if kind is ErrorCorrection.MXTOT:
        return EC_EFFICIENCY * math.fsum(counts.m_X)
    nX = math.fsum(counts.n_X)
    q = qber_x(counts)
    if kind is ErrorCorrection.LOGM and 0.0 < q < 1.0:
        log = math.log2 if (LOGM_ALL_LOG2 if all_log2 is None else all_log2) else math.log
        quant = binomial_cdf_inverse(eps_c, math.floor(nX), 1.0 - q)
        lam = (nX * binary_entropy(q)
               + (nX * (1.0 - q) - quant - 1.0) * log((1.0 - q) / q)
               - 0.5 * log(nX) - log(1.0 / eps_c))
        return max(lam, 0.0)
    # block, and the logM fallback at QBER_X in {0, 1}
    return EC_EFFICIENCY * nX * binary_entropy(q)


def secret_key_length(counts: CountStatistics, intensities: IntensitySet, sec: SecurityParams,
                      bound: TailBound | str = TailBound.CHERNOFF,
                      ec: ErrorCorrection | str = ErrorCorrection.LOGM) -> KeyResult:
    bound = bound if isinstance(bound, TailBound) else TailBound(bound)
    ec = ec if isinstance(ec, ErrorCorrection) else ErrorCorrection(ec)
    intensities.check()
    eps_s = sec.eps_s
    vals = dict(
        qber_x=0.0, phi_x=0.0, lambda_EC=0.0, s_X0=0.0, s_X1=0.0, v_Z1=0.0, s_Z1=0.0,
        n_X_total=math.fsum(counts.n_X), n_Z_total=math.fsum(counts.n_Z),
        mean_photon_number=intensities.mean_photon_number,
    )
    try:
        bX = bounded_counts(counts.n_X, intensities, eps_s, bound)
        bZ = bounded_counts(counts.n_Z, intensities, eps_s, bound)
        bmZ = bounded_counts(counts.m_Z, intensities, eps_s, bound)
        vals["s_X0"] = s_X0 = vacuum_events(bX, intensities)
        vals["s_X1"] = s_X1 = single_photon_events(bX, s_X0, intensities)
        s_Z0 = vacuum_events(bZ, intensities)
        vals["s_Z1"] = s_Z1 = single_photon_events(bZ, s_Z0, intensities)
        vals["v_Z1"] = v_Z1 = single_photon_errors(bmZ, intensities)
        vals["qber_x"] = qber_x(counts)
        vals["lambda_EC"] = lam = lambda_ec(counts, sec.eps_c, ec)
        vals["phi_x"] = phi = phase_error_rate(v_Z1, s_Z1, s_X1, eps_s, bound)
    except NoKeyError:
        return KeyResult(skl=0, ell=math.nan, **vals)

    ell = s_X0 + s_X1 * (1.0 - binary_entropy(phi)) - lam
    if bound is not TailBound.ASYMPTOTIC:
        ell -= 6.0 * math.log2(EPS_PARTITIONS / eps_s) + math.log2(2.0 / sec.eps_c)
    skl = max(math.floor(ell), 0)
    return KeyResult(skl=skl, ell=ell, **vals)
