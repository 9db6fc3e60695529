"""Finite-key secret key length analysis for satellite decoy-state BB84 overpasses."""
from .channel import ProtocolParams, SystemParams, WindowEfficiencies, accumulate_counts
from .geometry import OrbitGeometry, WindowSpec, max_elevation, select_window
from .keymath import (CountStatistics, ErrorCorrection, IntensitySet, KeyResult, SecurityParams,
                      TailBound, secret_key_length)
from .lossio import LossProfile, apply_excess_loss, generate_synthetic_profile, read_loss_file
from .optimizer import OptimizerConfig, evaluate_objective, optimise_skl
from .sweep import SweepConfig, load_config, run_sweep

__version__ = "0.1.0"
