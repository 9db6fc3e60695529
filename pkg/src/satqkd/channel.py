"""Expected detection statistics for a decoy-state WCP source over a lossy window.

The detector model is the compact one common to decoy-state BB84 analyses:
a threshold click from either signal photons or an extraneous count, with
after-pulsing inflating both clicks and errors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .keymath import CountStatistics, IntensitySet, SecurityParams


@dataclass(frozen=True)
class SystemParams:
    p_ec: float = 1e-8
    qber_i: float = 0.001
    p_ap: float = 0.001
    source_rate: float = 1e9
    num_passes: int = 1
    mu3: float = 0.0
    sec: SecurityParams = SecurityParams()
    xi: float = 0.0  # radians; carried into the output only

    def __post_init__(self):
        for name in ("p_ec", "qber_i", "p_ap"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v!r}")
        if not self.source_rate > 0:
            raise ValueError("source_rate must be positive")
        if int(self.num_passes) != self.num_passes or self.num_passes < 1:
            raise ValueError("num_passes must be a positive integer")
        if self.mu3 < 0:
            raise ValueError("mu3 must be non-negative")


@dataclass(frozen=True)
class ProtocolParams:
    """The five optimisable protocol parameters, in optimiser order."""

    p_x: float
    p_mu1: float
    p_mu2: float
    mu1: float
    mu2: float

    @property
    def p_mu3(self) -> float:
        return 1.0 - self.p_mu1 - self.p_mu2

    def as_array(self) -> np.ndarray:
        return np.array([self.p_x, self.p_mu1, self.p_mu2, self.mu1, self.mu2])

    @classmethod
    def from_array(cls, x) -> "ProtocolParams":
        return cls(*(float(v) for v in x))

    def is_feasible(self, mu3: float) -> bool:
        return (0.0 < self.p_x < 1.0 and 0.0 < self.p_mu1 < 1.0 and 0.0 < self.p_mu2 < 1.0
                and self.p_mu1 + self.p_mu2 < 1.0
                and self.mu2 > mu3 and self.mu1 > self.mu2 + mu3)

    def intensities(self, mu3: float) -> IntensitySet:
        return IntensitySet((self.mu1, self.mu2, mu3), (self.p_mu1, self.p_mu2, self.p_mu3))


@dataclass(frozen=True)
class WindowEfficiencies:
    eta: np.ndarray
    slot_duration: float = 1.0

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        if eta.ndim != 1:
            raise ValueError("efficiencies must be one-dimensional")
        if np.any((eta < 0) | (eta > 1)) or not np.all(np.isfinite(eta)):
            raise ValueError("efficiencies must lie in [0, 1]")
        if not self.slot_duration > 0:
            raise ValueError("slot_duration must be positive")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    def __len__(self) -> int:
        return len(self.eta)

    def concat(self, other: "WindowEfficiencies") -> "WindowEfficiencies":
        if other.slot_duration != self.slot_duration:
            raise ValueError("cannot join windows with different slot durations")
        return WindowEfficiencies(np.concatenate([self.eta, other.eta]), self.slot_duration)


def _slot_probabilities(eta, mu, sys: SystemParams):
    vac = np.exp(-np.multiply(eta, mu))
    noisy = 1.0 - (1.0 - 2.0 * sys.p_ec) * vac
    click = np.clip((1.0 + sys.p_ap) * noisy, 0.0, 1.0)
    error = sys.p_ec + sys.qber_i * (1.0 - vac) + 0.5 * sys.p_ap * noisy
    return click, np.minimum(np.maximum(error, 0.0), click)


def slot_click_probability(eta, mu: float, sys: SystemParams):
    """Probability that Bob registers a click for one pulse of intensity ``mu``."""
    return _slot_probabilities(eta, mu, sys)[0]


def slot_error_probability(eta, mu: float, sys: SystemParams):
    """Probability of a click carrying a bit error; never exceeds the click probability."""
    return _slot_probabilities(eta, mu, sys)[1]


def accumulate_counts(window: WindowEfficiencies, proto: ProtocolParams,
                      sys: SystemParams) -> CountStatistics:
    if len(window) == 0:
        raise ValueError("empty transmission window")
    pulses = sys.source_rate * window.slot_duration * sys.num_passes
    sift_x = proto.p_x**2
    sift_z = (1.0 - proto.p_x) ** 2
    probs = (proto.p_mu1, proto.p_mu2, proto.p_mu3)
    mus = (proto.mu1, proto.mu2, sys.mu3)
    click, error = _slot_probabilities(window.eta[np.newaxis, :], np.asarray(mus)[:, np.newaxis], sys)
    # Row-wise pairwise summation: a fixed order, so results are reproducible.
    clicks = click.sum(axis=1)
    errors = error.sum(axis=1)
    sent = pulses * np.asarray(probs)
    # Non-negative and errors <= clicks slot by slot, so no re-validation.
    return CountStatistics._from_block(np.stack([sent * sift_x * clicks, sent * sift_z * clicks,
                                                 sent * sift_x * errors, sent * sift_z * errors]))
