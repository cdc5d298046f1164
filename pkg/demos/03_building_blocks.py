"""The solvers inside one frame update, used on their own.

1. Sparse coding: explain a rain-only image with the multi-scale streak bank.
2. Graph cut: segment a moving square from a known background.
3. TV: fill the object layer smoothly inside that support.

Run:  python3 demos/03_building_blocks.py
"""

import numpy as np

from streamderain import (CscWorkspace, build_energy, convolve_by_scale, min_cut_solve,
                          solve_tv, streak_filter_bank, synthesize_streaks, StreakParams,
                          TvProblem, update_feature_maps)
from streamderain.synth import textured_background

shape = (48, 64)
bg = textured_background(shape, seed=3)
_, rain = synthesize_streaks(np.zeros(shape), StreakParams(density=4.0), 11)

# -- 1. sparse coding -------------------------------------------------------
bank = streak_filter_bank()
maps = update_feature_maps(bank, rain, 0.01, CscWorkspace(max_iter=200))
layers = convolve_by_scale(bank, maps)
fit = sum(layers)
print("filters per scale:", [s for _, s in bank.scales])
print(f"rain fit: relative error {np.linalg.norm(fit - rain) / np.linalg.norm(rain):.3f}, "
      f"{np.count_nonzero(np.abs(maps) > 1e-8)} active coefficients of {maps.size}")

# -- 2. graph cut -----------------------------------------------------------
frame = bg.copy()
frame[18:30, 24:36] = 0.9
obj_guess = np.full(shape, 0.9)
energy = build_energy(frame, bg, obj_guess, np.zeros(shape), 1e-3,
                      np.zeros(shape, np.uint8), alpha=30.0 * 1e-3, beta=2.0 * 1e-3)
H = min_cut_solve(energy)
print(f"support: {int(H.sum())} pixels (square has 144)")

# -- 3. TV object layer -----------------------------------------------------
res = solve_tv(TvProblem(frame, H, 0.02))
print(f"object layer inside support: mean {res.F[H == 1].mean():.3f}, "
      f"{res.iterations} iterations")
