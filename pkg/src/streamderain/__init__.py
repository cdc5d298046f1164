"""Streaming rain/snow removal for video with an online multi-scale
convolutional sparse coding model.

Each frame is decomposed into an aligned background, a moving-object layer
on a binary support, a rain layer built from a small bank of learned
multi-scale filters, and Gaussian noise.  The state carried between frames
has a fixed size, so memory does not grow with the length of the stream.
"""

from .align import AffineTransform, AlignmentWarning, align_to_reference, delta_tau, warp
from .core import (DEFAULT_SCALES, FilterBank, ShapeError, convolve_by_scale, convolve_each,
                   convolve_sum, elementwise_compose, luminance, streak_filter_bank)
from .csc import (CscWorkspace, DictionaryStats, csc_objective, soft_threshold,
                  update_feature_maps, update_filters)
from .engine import (Derainer, EngineConfig, FrameResult, OnlineState, ameliorate_background,
                     init_state, process_frame, rank_one_approx, update_multiplier,
                     update_noise_variance, update_rain_layer, update_scale_params)
from .metrics import SequenceReport, evaluate_sequence, psnr, ssim
from .mrf import PixelEnergy, build_energy, energy_of, min_cut_solve
from .synth import StreakParams, make_sequence, synthesize_streaks
from .tv import TvProblem, TvResult, solve_tv, tv_norm

__version__ = "0.1.0"

__all__ = [
    "AffineTransform", "AlignmentWarning", "align_to_reference", "delta_tau", "warp",
    "DEFAULT_SCALES", "FilterBank", "ShapeError", "convolve_by_scale", "convolve_each",
    "convolve_sum", "elementwise_compose", "luminance", "streak_filter_bank",
    "CscWorkspace", "DictionaryStats", "csc_objective", "soft_threshold",
    "update_feature_maps", "update_filters",
    "Derainer", "EngineConfig", "FrameResult", "OnlineState", "ameliorate_background",
    "init_state", "process_frame", "rank_one_approx", "update_multiplier",
    "update_noise_variance", "update_rain_layer", "update_scale_params",
    "SequenceReport", "evaluate_sequence", "psnr", "ssim",
    "PixelEnergy", "build_energy", "energy_of", "min_cut_solve",
    "StreakParams", "make_sequence", "synthesize_streaks",
    "TvProblem", "TvResult", "solve_tv", "tv_norm",
]
