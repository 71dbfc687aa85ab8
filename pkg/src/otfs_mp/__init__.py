"""Delay-Doppler OTFS simulation and structured sparse channel estimation."""

from .baseline import pilot_sigma, shift_channel, threshold_baseline
from .channel import (ChannelPath, DDChannel, add_noise, apply_channel, build_H,
                      sample_channel)
from .crlb import crlb_bounds, fisher_matrix, normalized_bounds
from .estimator import (EstimateResult, Hyperparams, detect_support, estimate,
                        estimate_integer_doppler, init_state, iterate_once,
                        reconstruct_channel)
from .frame import FrameConfig, SparseSystem, make_system, place_frame
from .harness import SimConfig, run_ber, run_nmse_sweep, run_papr_table
from .kernels import GridDims, phi, phi_prime, spread_f
from .modem import isfft, papr, sfft, to_time_rect

__version__ = "0.1.0"
