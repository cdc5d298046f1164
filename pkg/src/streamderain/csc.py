"""Convolutional sparse coding: feature-map ADMM and online filter updates.

The feature-map problem is

    min_M  1/2 || sum_m D_m * M_m - s ||^2 + sum_m kappa_m || M_m ||_1

solved by ADMM in the Fourier domain, where the linear step reduces to a
rank-one system per frequency (Sherman-Morrison).  The filter problem is
the same quadratic with the maps held fixed; it is expressed through
accumulated second-moment statistics of the maps so that each new frame
only adds its own Gram contribution, and minimised by projected block
coordinate descent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import FilterBank, ShapeError, as_frame, filter_spectra

log = logging.getLogger(__name__)


def soft_threshold(x, kappa):
    """Elementwise ``sign(x) * max(|x| - kappa, 0)``."""
    kappa = np.asarray(kappa, dtype=np.float64)
    if np.any(kappa < 0):
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - kappa, 0.0)


def _shrink(x, kappa, nonneg):
    if nonneg:
        return np.maximum(x - kappa, 0.0)
    return np.sign(x) * np.maximum(np.abs(x) - kappa, 0.0)


@dataclass
class CscWorkspace:
    """Inner ADMM state kept between calls for warm starting.

    Attributes
    ----------
    max_iter, tol
        Iteration cap and relative primal/dual residual tolerance.
    rho_scale
        Initial inner penalty is ``rho_scale * mean(kappa)``.
    relax
        Over-relaxation factor for the ADMM x-update (1 disables).
    nonneg
        Restrict coefficients to be non-negative.
    """

    max_iter: int = 50
    tol: float = 1e-4
    rho_scale: float = 10.0
    relax: float = 1.8
    nonneg: bool = False
    y: np.ndarray | None = field(default=None, repr=False)
    u: np.ndarray | None = field(default=None, repr=False)
    rho: float | None = None
    # diagnostics of the most recent solve
    iterations: int = 0
    converged: bool = False
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    objective_trace: list = field(default_factory=list, repr=False)

    def reset(self):
        self.y = self.u = self.rho = None


def csc_objective(bank: FilterBank, maps, target, kappa) -> float:
    """Value of the feature-map objective."""
    from .core import convolve_sum

    kappa = np.broadcast_to(np.asarray(kappa, dtype=np.float64), (bank.n_filters,))
    r = convolve_sum(bank, maps) - target
    return 0.5 * float(np.sum(r * r)) + float(
        np.sum(kappa * np.abs(maps).reshape(bank.n_filters, -1).sum(axis=1)))


def update_feature_maps(bank: FilterBank, target, kappa, ws: CscWorkspace | None = None):
    """Solve the convolutional sparse coding problem for the feature maps.

    Parameters
    ----------
    bank : FilterBank
    target : (h, w) array
        Signal to represent.
    kappa : float or (n_filters,) array
        Per-filter L1 weights; the ADMM rain step passes ``b_ks / rho``.
    ws : CscWorkspace, optional
        Warm start and solver settings.  Updated in place.

    Returns
    -------
    maps : (n_filters, h, w) array
    """
    if ws is None:
        ws = CscWorkspace()
    target = as_frame(target, check_size=False)
    n = bank.n_filters
    kappa = np.broadcast_to(np.asarray(kappa, dtype=np.float64), (n,)).copy()
    if np.any(kappa < 0):
        raise ValueError("L1 weights must be non-negative")
    shape = target.shape
    kap = kappa[:, None, None]

    Df = filter_spectra(bank, shape)
    Sf = np.fft.rfft2(target)
    DSf = np.conj(Df) * Sf
    dd = np.sum(np.abs(Df) ** 2, axis=0)

    y = ws.y
    u = ws.u
    if y is None or y.shape != (n,) + shape:
        y = np.zeros((n,) + shape)
        u = np.zeros_like(y)
        rho = None
    else:
        rho = ws.rho
    if rho is None:
        rho = ws.rho_scale * float(np.mean(kappa)) if np.mean(kappa) > 0 else 1.0
        rho = max(rho, 1e-3)

    ws.objective_trace = []
    ws.converged = False
    mu, tau_max = 1.2, 1000.0
    it = 0
    r_rel = s_rel = np.inf
    for it in range(1, ws.max_iter + 1):
        # x-step: (D^H D + rho I) x = D^H s + rho (y - u), per frequency
        b = DSf + rho * np.fft.rfft2(y - u)
        c = np.sum(Df * b, axis=0) / (rho + dd)
        xf = (b - np.conj(Df) * c) / rho
        x = np.fft.irfft2(xf, s=shape)
        xr = ws.relax * x + (1.0 - ws.relax) * y
        y_old = y
        y = _shrink(xr + u, kap / rho, ws.nonneg)
        u = u + xr - y

        r_norm = float(np.linalg.norm(x - y))
        s_norm = float(rho * np.linalg.norm(y - y_old))
        # residuals relative to the primal and dual iterate sizes
        r_rel = r_norm / max(float(np.linalg.norm(x)), float(np.linalg.norm(y)), 1e-12)
        s_rel = s_norm / max(float(rho * np.linalg.norm(u)), 1e-12)
        ws.objective_trace.append(csc_objective(bank, y, target, kappa))
        if r_rel <= ws.tol and s_rel <= ws.tol:
            ws.converged = True
            break
        # residual balancing with self-scaled factor; the scaled dual is
        # rescaled to keep the unscaled multiplier fixed
        if s_norm > 0 and r_norm > 0:
            ratio = r_norm / s_norm
            tau = min(np.sqrt(ratio) if ratio > 1 else np.sqrt(1 / ratio), tau_max)
            if ratio > mu:
                rho *= tau
                u = u / tau
            elif 1 / ratio > mu:
                rho /= tau
                u = u * tau

    ws.y, ws.u, ws.rho = y, u, rho
    ws.iterations = it
    ws.primal_residual, ws.dual_residual = r_rel, s_rel
    if not ws.converged:
        log.debug("feature-map ADMM stopped at cap (%d iterations)", it)

    # one proximal-gradient step from the ADMM iterate; never increases the
    # objective and is exact when the filters are orthonormal
    lip = float(dd.max())
    if lip > 0:
        grad = np.fft.irfft2(np.conj(Df) * (np.sum(Df * np.fft.rfft2(y), axis=0) - Sf),
                             s=shape)
        y = _shrink(y - grad / lip, kap / lip, ws.nonneg)
    return y


# ---------------------------------------------------------------------------
# online dictionary statistics


@dataclass
class DictionaryStats:
    """Exponentially forgotten sufficient statistics of the filter problem.

    With ``d`` the concatenation of all filter coefficients, the accumulated
    surrogate is ``1/2 d'Ad - b'd``: ``A`` is the Gram matrix of the shifted
    feature maps and ``b`` their correlation with the target.
    """

    sizes: tuple[int, ...]
    A: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    count: float = 0.0
    forget: float = 0.99

    @classmethod
    def empty(cls, bank: FilterBank, forget: float = 0.99) -> "DictionaryStats":
        sizes = tuple(bank.patch_sizes)
        n = sum(p * p for p in sizes)
        return cls(sizes, np.zeros((n, n)), np.zeros(n), 0.0, forget)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([p * p for p in self.sizes])])

    def copy(self) -> "DictionaryStats":
        return DictionaryStats(self.sizes, self.A.copy(), self.b.copy(), self.count, self.forget)

    def block(self, i: int, j: int) -> np.ndarray:
        o = self.offsets
        return self.A[o[i]:o[i + 1], o[j]:o[j + 1]]

    def surrogate(self, bank: FilterBank) -> float:
        d = np.concatenate([f.ravel() for f in bank.filters])
        return 0.5 * float(d @ self.A @ d) - float(self.b @ d)


def _lag_indices(p: int):
    c = p // 2
    a = np.arange(p) - c
    ay, ax = np.meshgrid(a, a, indexing="ij")
    return ay.ravel(), ax.ravel()


def frame_statistics(sizes, maps, target):
    """Gram matrix and correlation vector of one frame's shifted maps.

    Column ``(m, a)`` of the implicit design matrix is map ``m`` circularly
    shifted by kernel offset ``a``, so that ``design @ d`` equals the
    convolution sum.
    """
    maps = np.asarray(maps, dtype=np.float64)
    n, h, w = maps.shape
    if len(sizes) != n:
        raise ShapeError("maps do not match dictionary statistics")
    Mf = np.fft.fft2(maps)
    Sf = np.fft.fft2(target)
    lags = [_lag_indices(p) for p in sizes]
    offs = np.concatenate([[0], np.cumsum([p * p for p in sizes])])
    A = np.zeros((offs[-1], offs[-1]))
    bvec = np.zeros(offs[-1])
    for i in range(n):
        yi, xi = lags[i]
        # b[(i,a)] = sum_x S(x) M_i(x - a)  =  corr(M_i, S)[a]
        cs = np.real(np.fft.ifft2(np.conj(Mf[i]) * Sf))
        bvec[offs[i]:offs[i + 1]] = cs[yi % h, xi % w]
        for j in range(i, n):
            yj, xj = lags[j]
            cc = np.real(np.fft.ifft2(np.conj(Mf[i]) * Mf[j]))
            # G[(i,a),(j,a')] = corr(M_i, M_j)[a - a']
            dy = (yi[:, None] - yj[None, :]) % h
            dx = (xi[:, None] - xj[None, :]) % w
            blk = cc[dy, dx]
            if j == i:
                blk = 0.5 * (blk + blk.T)  # exact symmetry despite FFT rounding
            A[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = blk
            if j != i:
                A[offs[j]:offs[j + 1], offs[i]:offs[i + 1]] = blk.T
    return A, bvec


def _project(f, nonneg):
    if nonneg:
        f = np.maximum(f, 0.0)
    nrm = np.linalg.norm(f)
    return f / nrm if nrm > 1.0 else f


def update_filters(bank: FilterBank, maps, target, stats: DictionaryStats, *,
                   sweeps: int = 5, nonneg: bool = False):
    """Online filter update by block coordinate descent on the surrogate.

    The frame's statistics are added to ``stats`` after forgetting, then each
    filter takes a projected gradient step of length ``1/L_m`` (``L_m`` the
    largest eigenvalue of its diagonal Gram block) and is projected back to
    the unit Frobenius ball.  Returns ``(new_bank, new_stats)``; the inputs
    are not modified.
    """
    maps = np.asarray(maps, dtype=np.float64)
    target = as_frame(target, check_size=False)
    A_t, b_t = frame_statistics(stats.sizes, maps, target)
    new = DictionaryStats(stats.sizes, stats.forget * stats.A + A_t,
                          stats.forget * stats.b + b_t,
                          stats.forget * stats.count + 1.0, stats.forget)
    if not np.any(maps):
        return bank, new

    off = new.offsets
    d = np.concatenate([f.ravel() for f in bank.filters])
    lips = []
    for m in range(bank.n_filters):
        blk = new.block(m, m)
        lips.append(float(np.linalg.eigvalsh(blk)[-1]) if np.any(blk) else 0.0)
    for _ in range(sweeps):
        for m in range(bank.n_filters):
            if lips[m] <= 0.0:
                continue
            sl = slice(off[m], off[m + 1])
            grad = new.A[sl] @ d - new.b[sl]
            p = bank.patch_sizes[m]
            step = d[sl] - grad / lips[m]
            d[sl] = _project(step.reshape(p, p), nonneg).ravel()
    filters = [d[off[m]:off[m + 1]].reshape(p, p) for m, p in enumerate(bank.patch_sizes)]
    return bank.with_filters(filters), new
