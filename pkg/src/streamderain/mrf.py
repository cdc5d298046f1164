"""Binary moving-object support by exact min-cut.

The energy over a labeling ``H`` is

    E(H) = sum_p cost_{H_p}(p) + alpha * #{4-neighbour pairs with H_p != H_q}

where the unaries already contain the data term, the ``beta`` sparsity
cost on label 1, and a temporal disagreement cost against the previous
mask.  The pairwise term is submodular, so an s-t min cut gives the global
minimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import maxflow
import numpy as np

from .core import ShapeError, as_mask


@dataclass(frozen=True)
class PixelEnergy:
    cost0: np.ndarray
    cost1: np.ndarray
    alpha: float

    def __post_init__(self):
        if self.cost0.shape != self.cost1.shape:
            raise ShapeError("unary cost grids differ in shape")
        if not self.alpha >= 0:
            raise ValueError(f"pairwise weight must be non-negative, got {self.alpha}")

    @property
    def shape(self):
        return self.cost0.shape


def build_energy(X, B_warped, F, R, sigma2, H_prev, alpha, beta, *,
                 alpha_temporal=None) -> PixelEnergy:
    """Unary costs and edge weight of the support labeling energy.

    ``alpha`` weights disagreement between 4-neighbours and, unless
    ``alpha_temporal`` is given, disagreement with ``H_prev``.
    """
    at = alpha if alpha_temporal is None else alpha_temporal
    if at < 0:
        raise ValueError("temporal weight must be non-negative")
    if not sigma2 > 0:
        raise ValueError(f"noise variance must be positive, got {sigma2}")
    X, B_warped, F, R = (np.asarray(a, dtype=np.float64) for a in (X, B_warped, F, R))
    if not (X.shape == B_warped.shape == F.shape == R.shape):
        raise ShapeError("frames differ in shape")
    H_prev = as_mask(H_prev, X.shape)
    cost0 = (X - B_warped - R) ** 2 / (2.0 * sigma2) + at * H_prev
    cost1 = (X - F - R) ** 2 / (2.0 * sigma2) + beta + at * (1 - H_prev)
    return PixelEnergy(cost0, cost1, float(alpha))


def energy_of(energy: PixelEnergy, labeling) -> float:
    H = as_mask(labeling, energy.shape)
    unary = np.where(H == 1, energy.cost1, energy.cost0).sum()
    cuts = np.count_nonzero(H[1:, :] != H[:-1, :]) + np.count_nonzero(H[:, 1:] != H[:, :-1])
    return float(unary + energy.alpha * cuts)


def min_cut_solve(energy: PixelEnergy) -> np.ndarray:
    """Global minimiser of ``energy``; ties resolve to label 0.

    Label 1 is the sink side.  Nodes left unreached by the search trees are
    assigned to the source, which yields the cut with the largest source set,
    i.e. the optimal labeling with the most zeros.
    """
    g = maxflow.GraphFloat()
    ids = g.add_grid_nodes(energy.shape)
    if energy.alpha > 0:
        g.add_grid_edges(ids, weights=energy.alpha, symmetric=True)
    # constant offset keeps terminal capacities non-negative
    base = np.minimum(energy.cost0, energy.cost1)
    g.add_grid_tedges(ids, energy.cost1 - base, energy.cost0 - base)
    g.maxflow()
    return g.get_grid_segments(ids).astype(np.uint8)
