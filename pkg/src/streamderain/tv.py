"""Masked total-variation restoration of the moving-object layer.

Solves

    min_F  || H * (O - F) ||^2 + weight * TV(F)

with anisotropic TV (sum of absolute forward differences, Neumann
boundary).  Pixels outside the mask carry no data term, so the solution
there is a TV extension of the masked values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import as_mask

log = logging.getLogger(__name__)


def grad(u):
    """Forward differences; last row/column of each component is zero."""
    gy = np.zeros_like(u)
    gx = np.zeros_like(u)
    gy[:-1, :] = u[1:, :] - u[:-1, :]
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    return gy, gx


def div(py, px):
    """Negative adjoint of :func:`grad`."""
    d = np.zeros_like(py)
    d[0, :] = py[0, :]
    d[1:-1, :] = py[1:-1, :] - py[:-2, :]
    d[-1, :] = -py[-2, :]
    d[:, 0] += px[:, 0]
    d[:, 1:-1] += px[:, 1:-1] - px[:, :-2]
    d[:, -1] += -px[:, -2]
    return d


def tv_norm(F) -> float:
    F = np.asarray(F, dtype=np.float64)
    return float(np.abs(np.diff(F, axis=0)).sum() + np.abs(np.diff(F, axis=1)).sum())


@dataclass
class TvProblem:
    observation: np.ndarray
    mask: np.ndarray
    weight: float
    tol: float = 1e-4
    max_iter: int = 100

    def __post_init__(self):
        self.observation = np.asarray(self.observation, dtype=np.float64)
        self.mask = as_mask(self.mask, self.observation.shape)
        if not self.weight > 0:
            raise ValueError("TV weight must be positive")

    def objective(self, F) -> float:
        r = self.mask * (self.observation - F)
        return float(np.sum(r * r)) + self.weight * tv_norm(F)


@dataclass
class TvResult:
    F: np.ndarray
    iterations: int
    converged: bool
    objective_trace: list


def solve_tv(p: TvProblem, warm=None) -> TvResult:
    """Chambolle-Pock primal-dual iteration for :class:`TvProblem`.

    Only iterates that do not increase the objective are accepted, so the
    returned trace is non-increasing and the result is the best iterate.
    """
    O, H, lam = p.observation, p.mask.astype(np.float64), p.weight
    x = O.copy() if warm is None else np.array(warm, dtype=np.float64)
    if x.shape != O.shape:
        raise ValueError("warm start shape mismatch")
    py = np.zeros_like(x)
    px = np.zeros_like(x)
    x_bar = x.copy()
    # ||grad||^2 <= 8
    tau = sigma = 0.99 / np.sqrt(8.0)
    best, best_obj = x.copy(), p.objective(x)
    trace = [best_obj]
    converged = False
    it = 0
    for it in range(1, p.max_iter + 1):
        gy, gx = grad(x_bar)
        py = np.clip(py + sigma * gy, -lam, lam)
        px = np.clip(px + sigma * gx, -lam, lam)
        v = x + tau * div(py, px)
        x_new = (v + 2.0 * tau * H * O) / (1.0 + 2.0 * tau * H)
        x_bar = 2.0 * x_new - x
        change = np.linalg.norm(x_new - x) / max(np.linalg.norm(x_new), 1e-12)
        x = x_new
        obj = p.objective(x)
        if obj <= best_obj:
            best, best_obj = x.copy(), obj
        trace.append(best_obj)
        if change < p.tol:
            converged = True
            break
    if not converged:
        log.debug("TV solver stopped at cap (%d iterations)", it)
    return TvResult(best, it, converged, trace)
