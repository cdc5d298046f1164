"""Online per-frame decomposition engine.

Each incoming frame ``X`` is split into an aligned background, a moving
object layer ``F`` on a binary support ``H``, a multi-scale convolutional
rain layer and Gaussian noise.  One call to :func:`process_frame` runs the
alternating updates for the current frame, warm-started from the previous
frame's state, and folds the frame into the running noise variance and
feature-map scale estimates.
"""

from __future__ import annotations

import hashlib
import logging
import time
import warnings
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from . import align as al
from .core import (DEFAULT_SCALES, FilterBank, ShapeError, as_frame, as_mask,
                   convolve_by_scale, convolve_sum, elementwise_compose, streak_filter_bank)
from .csc import CscWorkspace, DictionaryStats, update_feature_maps, update_filters
from .mrf import build_energy, min_cut_solve
from .tv import TvProblem, solve_tv

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8
SCALE_FLOOR = 1e-8
BUFFER_LEN = 4


@dataclass(frozen=True)
class EngineConfig:
    """Model weights, loop controls and solver budgets.

    ``lam``, ``alpha`` and ``beta`` weight the object-layer TV, the support
    boundary length and the support area.  Data terms are scaled by the
    inverse noise variance, which inside the subproblems is never taken
    below ``sigma2_min``.  ``alpha_temporal`` weights label changes against
    the previous support.  ``rho`` is the coupling penalty of the rain layer
    in units of noise precision.  ``bg_rate`` and ``bg_rate_down`` control how
    fast the carried background follows the rain-free part of the frame
    (upward and downward corrections respectively).
    """

    lam: float = 300.0
    alpha: float = 30.0
    beta: float = 2.0
    rho: float = 0.1
    alpha_temporal: float = 2.0
    sigma2_min: float = 1e-3
    period: int = 20
    outer_iters: int = 5
    outer_tol: float = 1e-3
    scales: tuple = DEFAULT_SCALES
    csc_max_iter: int = 50
    csc_tol: float = 1e-4
    tv_max_iter: int = 100
    tv_tol: float = 1e-4
    forget: float = 0.99
    filter_sweeps: int = 5
    nonneg: bool = False
    align: bool = True
    ameliorate: bool = True
    bootstrap: int = 3
    init_sigma2: float = 1e-3
    init_scale: float = 1e-2
    bg_rate: float = 0.1
    bg_rate_down: float = 0.5

    def __post_init__(self):
        if self.period < 5:
            raise ValueError("amelioration period must be at least 5")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be at least 1")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not (0 <= self.bg_rate <= 1 and 0 <= self.bg_rate_down <= 1):
            raise ValueError("background rates must lie in [0, 1]")
        for name in ("lam", "alpha", "beta", "alpha_temporal", "sigma2_min"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        object.__setattr__(self, "scales", tuple((int(p), int(s)) for p, s in self.scales))

    @property
    def latency(self) -> int:
        return 2 if self.ameliorate else 0


@dataclass
class OnlineState:
    """Everything carried from one frame to the next.

    ``t`` is the index of the next frame to process.  ``sigma2`` and ``b``
    are the floored noise variance and feature-map scales; ``sigma2_mean``
    and ``b_mean`` are the unfloored running means they derive from.  ``F``,
    ``maps``, ``R`` and the ``csc_*`` fields are warm starts.  The size of the
    state does not depend on ``t``.
    """

    t: int
    B: np.ndarray
    H: np.ndarray
    bank: FilterBank
    sigma2: float
    b: np.ndarray
    T: np.ndarray
    stats: DictionaryStats
    frame_buffer: deque
    F: np.ndarray
    maps: np.ndarray
    R: np.ndarray
    sigma2_mean: float = 0.0
    b_mean: np.ndarray | None = None
    csc_y: np.ndarray | None = None
    csc_u: np.ndarray | None = None
    csc_rho: float | None = None

    @property
    def shape(self):
        return self.B.shape

    def validate(self):
        if not self.sigma2 > 0:
            raise ValueError("noise variance must be positive")
        if not np.all(self.b > 0):
            raise ValueError("feature-map scales must be positive")
        if len(self.frame_buffer) > BUFFER_LEN:
            raise ValueError("frame buffer longer than 4")

    def digest(self) -> str:
        """SHA-256 over every array and scalar of the state."""
        h = hashlib.sha256()
        h.update(np.int64(self.t).tobytes())
        h.update(np.float64(self.sigma2).tobytes())
        h.update(np.float64(self.sigma2_mean).tobytes())
        for arr in (self.B, self.H.astype(np.float64), self.b, self.T, self.stats.A,
                    self.stats.b, self.F, self.maps, self.R, *self.bank.filters,
                    *self.frame_buffer):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        h.update(np.float64(self.stats.count).tobytes())
        for arr in (self.b_mean, self.csc_y, self.csc_u):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        if self.csc_rho is not None:
            h.update(np.float64(self.csc_rho).tobytes())
        return h.hexdigest()


@dataclass
class FrameResult:
    index: int
    recovered: np.ndarray
    rain_layer: np.ndarray
    scale_layers: np.ndarray
    mask: np.ndarray
    background: np.ndarray
    objects: np.ndarray
    diagnostics: dict


# ---------------------------------------------------------------------------
# closed-form updates


def update_rain_layer(X, B_warped, F, H, maps, bank, T, sigma2, rho):
    """``R = (X - Gamma) / (1 + rho s2)``, ``Gamma = H'B + HF - rho s2 (DM + T)``."""
    if rho < 0 or not sigma2 > 0:
        raise ValueError("need rho >= 0 and sigma2 > 0")
    DM = convolve_sum(bank, maps)
    rs = rho * sigma2
    gamma = np.where(as_mask(H) == 1, F, B_warped) - rs * (DM + T)
    return (X - gamma) / (1.0 + rs)


def update_multiplier(T, maps, bank, R):
    return T + convolve_sum(bank, maps) - R


def noise_sample_variance(X, B, F, R, H) -> float:
    """Mean squared residual of the model prediction."""
    E = X - elementwise_compose(X, B, F, R, H)
    return float(np.mean(E * E))


def running_mean(prev, sample, t):
    """``sample / t + (t - 1) / t * prev``; at ``t = 1`` the previous value drops out."""
    return sample / t + (t - 1) / t * prev


def update_noise_variance(state: OnlineState, X, B, F, R, H) -> float:
    """Online noise variance, floored at ``VARIANCE_FLOOR``.

    The recursion runs on the unfloored running mean kept in the state, so
    the floor never leaks into later frames.
    """
    s_bar = noise_sample_variance(X, B, F, R, H)
    return max(running_mean(state.sigma2_mean, s_bar, state.t), VARIANCE_FLOOR)


def scale_sample(maps) -> np.ndarray:
    maps = np.asarray(maps)
    return np.abs(maps).reshape(maps.shape[0], -1).mean(axis=1)


def update_scale_params(state: OnlineState, maps) -> np.ndarray:
    b_prev = state.b if state.b_mean is None else state.b_mean
    return np.maximum(running_mean(b_prev, scale_sample(maps), state.t), SCALE_FLOOR)


def rank_one_approx(M):
    """Leading singular pair ``(u * s, v)`` by power iteration.

    ``v`` is unit norm with its first non-zero entry positive, so
    ``outer(u, v)`` is the best rank-one approximation of ``M``.
    """
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    d, n = M.shape
    if not np.any(M):
        return np.zeros(d), np.zeros(n)
    G = M.T @ M
    # start from the dominant diagonal direction; deterministic
    v = G[:, int(np.argmax(np.diag(G)))].copy()
    v /= np.linalg.norm(v)
    # stop on the direction, not the eigenvalue: the Rayleigh quotient
    # settles quadratically faster and would stop with v still off
    for _ in range(20000):
        w = G @ v
        lam = float(np.linalg.norm(w))
        if lam == 0:
            break
        w /= lam
        step = float(np.linalg.norm(w - v))
        v = w
        if step <= 1e-14:
            break
    nz = np.flatnonzero(np.abs(v) > 1e-15 * np.abs(v).max())
    if v[nz[0]] < 0:
        v = -v
    return M @ v, v


# ---------------------------------------------------------------------------
# diagnostics


def kl_noise(prev_sigma2, sigma2) -> float:
    """``KL(N(0, prev) || N(0, cur))``."""
    r = prev_sigma2 / sigma2
    return 0.5 * (r - 1.0 - np.log(r))


def kl_laplace(prev_b, b) -> np.ndarray:
    """``KL(Laplace(0, prev) || Laplace(0, cur))`` per filter."""
    r = np.asarray(prev_b) / np.asarray(b)
    return r - 1.0 - np.log(r)


def augmented_lagrangian(X, B_warped, F, R, H, maps, bank, T, sigma2, b, prev_sigma2,
                         prev_b, t, cfg: EngineConfig) -> float:
    from .tv import tv_norm

    d = X.size
    n_prev = (t - 1) * d
    E = X - elementwise_compose(X, B_warped, F, R, H)
    H = as_mask(H)
    tv3 = (np.count_nonzero(np.diff(H, axis=0)) + np.count_nonzero(np.diff(H, axis=1)))
    l1m = np.abs(maps).reshape(maps.shape[0], -1).sum(axis=1)
    val = float(np.sum(E * E)) / (2 * sigma2) + 0.5 * d * np.log(sigma2)
    val += n_prev * (0.5 * np.log(sigma2) + prev_sigma2 / (2 * sigma2))
    val += cfg.alpha * tv3 + cfg.beta * float(H.sum())
    val += float(np.sum(d * np.log(b) + l1m / b))
    val += float(np.sum(n_prev * (np.log(b) + prev_b / b)))
    val += cfg.lam * tv_norm(F)
    C = convolve_sum(bank, maps) - R + T
    val += 0.5 * cfg.rho / max(sigma2, cfg.sigma2_min) * float(np.sum(C * C))
    return val


# ---------------------------------------------------------------------------
# state


def init_state(first_frame, cfg: EngineConfig = EngineConfig()) -> OnlineState:
    X = as_frame(first_frame)
    bank = streak_filter_bank(cfg.scales)
    n = bank.n_filters
    return OnlineState(
        t=1,
        B=X.copy(),
        H=np.zeros(X.shape, dtype=np.uint8),
        bank=bank,
        sigma2=cfg.init_sigma2,
        b=np.full(n, cfg.init_scale),
        T=np.zeros(X.shape),
        stats=DictionaryStats.empty(bank, cfg.forget),
        frame_buffer=deque(maxlen=BUFFER_LEN),
        F=X.copy(),
        maps=np.zeros((n,) + X.shape),
        R=np.zeros(X.shape),
        sigma2_mean=cfg.init_sigma2,
        b_mean=np.full(n, cfg.init_scale),
    )


def copy_state(s: OnlineState) -> OnlineState:
    return replace(
        s, B=s.B.copy(), H=s.H.copy(), b=s.b.copy(), T=s.T.copy(), stats=s.stats.copy(),
        frame_buffer=deque((f.copy() for f in s.frame_buffer), maxlen=BUFFER_LEN),
        F=s.F.copy(), maps=s.maps.copy(), R=s.R.copy(),
        b_mean=None if s.b_mean is None else s.b_mean.copy(),
        csc_y=None if s.csc_y is None else s.csc_y.copy(),
        csc_u=None if s.csc_u is None else s.csc_u.copy())


def ameliorate_background(frames, current_index: int = 2, *, levels: int = 3):
    """Rank-one background from a window of frames aligned to the current one.

    ``frames`` are raw frames ``X^{t-2} .. X^{t+2}`` (or fewer), with the
    current frame at ``current_index``.  Each neighbour is warped onto the
    current frame; neighbours whose alignment diverges are dropped.  Returns
    the rank-one column belonging to the current frame, or ``None`` when
    fewer than three frames remain.
    """
    ref = np.asarray(frames[current_index], dtype=np.float64)
    cols = []
    cur = None
    for j, f in enumerate(frames):
        if j == current_index:
            cur = len(cols)
            cols.append(ref.ravel())
            continue
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", al.AlignmentWarning)
            tau, warped = al.align_to_reference(f, ref, levels=levels)
        if any(issubclass(w.category, al.AlignmentWarning) for w in caught):
            continue
        cols.append(warped.ravel())
    if len(cols) < 3:
        warnings.warn("fewer than 3 usable frames; amelioration skipped",
                      al.AlignmentWarning, stacklevel=2)
        return None
    us, v = rank_one_approx(np.stack(cols, axis=1))
    return (us * v[cur]).reshape(ref.shape)


def process_frame(state: OnlineState, X, cfg: EngineConfig = EngineConfig(), *,
                  lookahead=(), freeze_alignment: bool = False):
    """Run the per-frame alternating updates.

    Parameters
    ----------
    state : OnlineState
        Carried state; not modified.
    X : (h, w) array
        Current frame ``X^t`` with ``t = state.t``.
    lookahead : sequence of arrays
        The next two raw frames, needed when background amelioration is due.
    freeze_alignment : bool
        Keep the warp at identity for this frame.

    Returns
    -------
    (OnlineState, FrameResult)
    """
    X = as_frame(X)
    if X.shape != state.shape:
        raise ShapeError(f"frame {X.shape} does not match state {state.shape}")
    t0 = time.perf_counter()
    t = state.t
    diag = {"warnings": [], "objective": [], "delta_tau_norm": []}
    s = copy_state(state)

    B_prev = s.B
    ameliorated = False
    if cfg.ameliorate and t > cfg.bootstrap and t % cfg.period == 0:
        window = list(s.frame_buffer)[-2:] + [X] + list(lookahead)[:2]
        if len(window) == 5:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                B_new = ameliorate_background(window, 2)
            diag["warnings"] += [str(w.message) for w in caught]
            if B_new is not None:
                B_prev = B_new
                ameliorated = True
        else:
            diag["warnings"].append("amelioration skipped: lookahead unavailable")
    diag["ameliorated"] = ameliorated

    do_align = cfg.align and not freeze_alignment and t > cfg.bootstrap
    tau = al.AffineTransform.identity()
    B_w = B_prev
    H, F, maps, bank, T = s.H, s.F, s.maps, s.bank, s.T
    # streaks are redrawn every frame, so the rain layer restarts from zero
    R = np.zeros_like(X)
    prev_sigma2, prev_b = s.sigma2, s.b
    prev_sigma2_mean = s.sigma2_mean
    prev_b_mean = s.b if s.b_mean is None else s.b_mean
    sigma2, b = prev_sigma2, prev_b
    sigma2_mean, b_mean = prev_sigma2_mean, prev_b_mean
    ws = CscWorkspace(max_iter=cfg.csc_max_iter, tol=cfg.csc_tol, nonneg=cfg.nonneg,
                      y=s.csc_y, u=s.csc_u, rho=s.csc_rho)
    stats = s.stats
    s_bar = 0.0
    b_bar = np.zeros_like(b)
    it = 0
    for it in range(cfg.outer_iters):
        R_old = R
        # penalty expressed in units of the current noise precision
        v = max(sigma2, cfg.sigma2_min)
        rho = cfg.rho / v
        if do_align:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", al.AlignmentWarning)
                step = al.delta_tau(X, R, B_prev, tau, H)
            diag["warnings"] += [str(w.message) for w in caught]
            if np.any(step):
                cand = tau + step
                try:
                    cand.check()
                    J = al.jacobian(B_prev, tau)
                    B_w = al.warp(B_prev, tau) + (J @ step).reshape(X.shape)
                    tau = cand
                except ValueError:
                    diag["warnings"].append("rejected degenerate alignment step")
            diag["delta_tau_norm"].append(float(np.linalg.norm(step)))

        # F is undetermined off the support, so label 1 is scored against a
        # full-frame TV fit
        tv_w = max(2 * v * cfg.lam, 1e-12)
        F_test = solve_tv(TvProblem(X - R, np.ones_like(s.H), tv_w,
                                    tol=cfg.tv_tol, max_iter=cfg.tv_max_iter), warm=F).F
        H = min_cut_solve(build_energy(X, B_w, F_test, R, v, s.H, cfg.alpha, cfg.beta,
                                         alpha_temporal=cfg.alpha_temporal))
        F = solve_tv(TvProblem(X - R, H, tv_w,
                               tol=cfg.tv_tol, max_iter=cfg.tv_max_iter), warm=F).F

        target = R - T
        # sparsity weights use the scales learned up to the previous frame;
        # feeding back the in-frame estimate makes b and the maps alternate
        maps = update_feature_maps(bank, target, prev_b / cfg.rho, ws)
        bank, stats = update_filters(bank, maps, target, s.stats,
                                     sweeps=cfg.filter_sweeps, nonneg=cfg.nonneg)

        R = update_rain_layer(X, B_w, F, H, maps, bank, T, v, rho)
        T = update_multiplier(T, maps, bank, R)

        s_bar = noise_sample_variance(X, B_w, F, R, H)
        b_bar = scale_sample(maps)
        sigma2_mean = running_mean(prev_sigma2_mean, s_bar, t)
        b_mean = running_mean(prev_b_mean, b_bar, t)
        sigma2 = max(sigma2_mean, VARIANCE_FLOOR)
        b = np.maximum(b_mean, SCALE_FLOOR)

        diag["objective"].append(augmented_lagrangian(
            X, B_w, F, R, H, maps, bank, T, sigma2, b, prev_sigma2, prev_b, t, cfg))
        change = np.linalg.norm(R - R_old) / max(np.linalg.norm(R), 1e-12)
        if change < cfg.outer_tol:
            break

    rain = convolve_sum(bank, maps)
    # rain only brightens: darker observations correct the background
    # anywhere, brighter ones only off the support and after removing rain
    down = np.minimum(X - B_w, 0.0)
    up = np.maximum(X - rain - B_w, 0.0)
    B_t = B_w + cfg.bg_rate_down * down + cfg.bg_rate * (1 - H) * up
    recovered = np.where(H == 1, F, B_t)
    new = replace(
        s, t=t + 1, B=B_t, H=H, bank=bank, sigma2=sigma2, b=b, T=T, stats=stats,
        F=F, maps=maps, R=R, csc_y=ws.y, csc_u=ws.u, csc_rho=ws.rho,
        sigma2_mean=sigma2_mean, b_mean=b_mean)
    new.frame_buffer.append(X.copy())
    diag.update(
        iterations=it + 1, sigma2=sigma2, b=b.copy(), tau=tau.params,
        sigma2_sample=s_bar, b_sample=b_bar.copy(),
        kl_noise=float(kl_noise(prev_sigma2, sigma2)),
        kl_rain=kl_laplace(prev_b, b),
        seconds=time.perf_counter() - t0)
    result = FrameResult(t, recovered, rain, convolve_by_scale(bank, maps), H, B_t, F, diag)
    return new, result


class Derainer:
    """Streaming driver holding one engine state.

    Frames go in through :meth:`push`; results come out in order, delayed by
    ``cfg.latency`` frames so that amelioration can see two frames ahead.
    Call :meth:`flush` at the end of the stream.
    """

    def __init__(self, cfg: EngineConfig = EngineConfig(), state: OnlineState | None = None,
                 freeze_alignment: bool = False):
        self.cfg = cfg
        self.state = state
        self.freeze_alignment = freeze_alignment
        self._pending: deque = deque()

    def _step(self, X, lookahead):
        if self.state is None:
            self.state = init_state(X, self.cfg)
        self.state, res = process_frame(self.state, X, self.cfg, lookahead=lookahead,
                                        freeze_alignment=self.freeze_alignment)
        return res

    def push(self, X) -> list:
        X = as_frame(X)
        self._pending.append(X)
        out = []
        while len(self._pending) > self.cfg.latency:
            cur = self._pending.popleft()
            out.append(self._step(cur, list(self._pending)))
        return out

    def flush(self) -> list:
        out = []
        while self._pending:
            cur = self._pending.popleft()
            out.append(self._step(cur, list(self._pending)))
        return out

    def run(self, frames) -> list:
        out = []
        for f in frames:
            out += self.push(f)
        return out + self.flush()
