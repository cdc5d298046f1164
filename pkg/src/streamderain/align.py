"""Affine alignment by Gauss-Newton (forward additive Lucas-Kanade).

Coordinates are centred: pixel ``(row, col)`` has ``x = col - (w-1)/2`` and
``y = row - (h-1)/2``.  A transform maps output coordinates to source
coordinates, ``[xs, ys] = A @ [x, y] + v``, so a rotation about the image
centre has ``v = 0``.  Parameters are ordered ``(a11, a12, a21, a22, vx, vy)``
and updated additively.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import ShapeError

log = logging.getLogger(__name__)


class AlignmentWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AffineTransform:
    A: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64).reshape(2, 2)
        v = np.array(self.v, dtype=np.float64).reshape(2)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "v", v)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def from_params(cls, p) -> "AffineTransform":
        p = np.asarray(p, dtype=np.float64)
        return cls(p[:4].reshape(2, 2), p[4:6])

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineTransform":
        return cls(np.eye(2), [dx, dy])

    @classmethod
    def rotation(cls, degrees: float) -> "AffineTransform":
        th = np.deg2rad(degrees)
        c, s = np.cos(th), np.sin(th)
        return cls([[c, -s], [s, c]], np.zeros(2))

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.A.ravel(), self.v])

    def __add__(self, delta) -> "AffineTransform":
        return AffineTransform.from_params(self.params + np.asarray(delta))

    def inverse(self) -> "AffineTransform":
        Ai = np.linalg.inv(self.A)
        return AffineTransform(Ai, -Ai @ self.v)

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Transform applying ``other`` to source coordinates of ``self``."""
        return AffineTransform(other.A @ self.A, other.A @ self.v + other.v)

    def is_identity(self) -> bool:
        return bool(np.all(self.A == np.eye(2)) and np.all(self.v == 0))

    def check(self):
        if not abs(np.linalg.det(self.A)) >= 0.1 or not np.all(np.isfinite(self.params)):
            raise ValueError(f"degenerate affine transform: det={np.linalg.det(self.A):.3g}")


def _centred_grid(shape):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return xx - (w - 1) / 2.0, yy - (h - 1) / 2.0


def source_coordinates(shape, tau: AffineTransform):
    """Source ``(row, col)`` coordinates sampled by ``warp``."""
    h, w = shape
    x, y = _centred_grid(shape)
    xs = tau.A[0, 0] * x + tau.A[0, 1] * y + tau.v[0]
    ys = tau.A[1, 0] * x + tau.A[1, 1] * y + tau.v[1]
    return ys + (h - 1) / 2.0, xs + (w - 1) / 2.0


def warp(img, tau: AffineTransform) -> np.ndarray:
    """Bilinear resampling of ``img`` at ``tau``'s source coordinates.

    Samples outside the image take the nearest boundary value.
    """
    img = np.asarray(img, dtype=np.float64)
    tau.check()
    if tau.is_identity():
        return img.copy()
    rows, cols = source_coordinates(img.shape, tau)
    return ndimage.map_coordinates(img, [rows, cols], order=1, mode="nearest")


def image_gradients(img):
    """Central-difference ``(d/dx, d/dy)``; one-sided at the border."""
    gy, gx = np.gradient(np.asarray(img, dtype=np.float64))
    return gx, gy


def jacobian(img, tau: AffineTransform) -> np.ndarray:
    """``(h*w, 6)`` derivative of ``warp(img, tau)`` w.r.t. the parameters."""
    gx, gy = image_gradients(img)
    if not tau.is_identity():
        gx, gy = warp(gx, tau), warp(gy, tau)
    x, y = _centred_grid(np.shape(img))
    cols = [gx * x, gx * y, gy * x, gy * y, gx, gy]
    return np.stack([c.ravel() for c in cols], axis=1)


def delta_tau(X, R, B_prev, tau: AffineTransform, mask, *, min_pixels: int = 60,
              return_info: bool = False):
    """Gauss-Newton increment for aligning ``B_prev`` to ``X - R``.

    Least squares over pixels with ``mask == 0`` of the linearised residual,
    through Tikhonov-regularised normal equations.
    """
    X = np.asarray(X, dtype=np.float64)
    if not (X.shape == np.shape(R) == np.shape(B_prev) == np.shape(mask)):
        raise ShapeError("alignment inputs differ in shape")
    keep = (np.asarray(mask) == 0).ravel()
    J = jacobian(B_prev, tau)
    resid = (X - R - warp(B_prev, tau)).ravel()
    usable = keep & np.any(J[:, 4:] != 0, axis=1)
    if usable.sum() < min_pixels:
        warnings.warn("too few unmasked textured pixels; zero alignment step",
                      AlignmentWarning, stacklevel=2)
        step = np.zeros(6)
        return (step, False) if return_info else step
    J = J[keep]
    JtJ = J.T @ J
    eps = 1e-6 * np.trace(JtJ) / 6.0
    try:
        step = np.linalg.solve(JtJ + eps * np.eye(6), J.T @ resid[keep])
    except np.linalg.LinAlgError:
        step = None
    if step is None or not np.all(np.isfinite(step)):
        warnings.warn("singular alignment normal equations; zero step",
                      AlignmentWarning, stacklevel=2)
        step = np.zeros(6)
        return (step, False) if return_info else step
    return (step, True) if return_info else step


def _residual_norm(X, R, B, tau, mask):
    keep = np.asarray(mask) == 0
    r = (X - R - warp(B, tau))[keep]
    return float(np.sqrt(np.sum(r * r)))


def gauss_newton_step(X, R, B_prev, tau, mask, *, max_halvings: int = 4):
    """One damped Gauss-Newton update.

    The step is halved up to ``max_halvings`` times while the masked
    residual increases.  Returns ``(tau_new, step, accepted)``; a rejected
    step leaves ``tau`` unchanged.
    """
    step = delta_tau(X, R, B_prev, tau, mask)
    if not np.any(step):
        return tau, step, False
    r0 = _residual_norm(X, R, B_prev, tau, mask)
    for _ in range(max_halvings + 1):
        cand = tau + step
        try:
            cand.check()
            if _residual_norm(X, R, B_prev, cand, mask) <= r0:
                return cand, step, True
        except ValueError:
            pass
        step = step / 2.0
    return tau, np.zeros(6), False


def _downsample(img):
    h, w = img.shape
    h2, w2 = h - h % 2, w - w % 2
    a = img[:h2, :w2]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def _align_level(frame, reference, tau, max_iter, tol):
    zero = np.zeros_like(reference)
    prev = _residual_norm(reference, zero, frame, tau, zero)
    growth = 0
    for _ in range(max_iter):
        step = delta_tau(reference, zero, frame, tau, zero)
        if not np.any(step):
            break
        new_tau, taken, ok = gauss_newton_step(reference, zero, frame, tau, zero)
        if not ok:
            growth += 1
            if growth >= 3:
                return tau, True
            break
        tau = new_tau
        cur = _residual_norm(reference, zero, frame, tau, zero)
        growth = growth + 1 if cur > prev else 0
        if growth >= 3:
            return tau, True
        prev = cur
        if np.linalg.norm(taken) < tol:
            break
    return tau, False


def align_to_reference(frame, reference, *, max_iter: int = 30, tol: float = 1e-6,
                       levels: int = 3):
    """Estimate ``tau`` with ``warp(frame, tau) ~ reference``.

    Runs coarse to fine over ``levels`` pyramid levels (factor 2); levels
    that would fall below 16 pixels are skipped.  Returns ``(tau, warped)``;
    on divergence the identity and the unwarped frame are returned.
    """
    frame = np.asarray(frame, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if frame.shape != reference.shape:
        raise ShapeError("frame and reference differ in shape")
    pyr = [(frame, reference)]
    for _ in range(levels - 1):
        f, r = pyr[-1]
        if min(f.shape) < 32:
            break
        pyr.append((_downsample(f), _downsample(r)))
    tau = AffineTransform.identity()
    diverged = False
    with warnings.catch_warnings():
        # per-step warnings are expected inside the iteration
        warnings.simplefilter("ignore", AlignmentWarning)
        for lvl in range(len(pyr) - 1, -1, -1):
            f, r = pyr[lvl]
            tau, diverged = _align_level(f, r, tau, max_iter, tol)
            if diverged:
                break
            if lvl > 0:
                tau = AffineTransform(tau.A, 2.0 * tau.v)
    if diverged:
        warnings.warn("alignment diverged; using identity", AlignmentWarning, stacklevel=2)
        return AffineTransform.identity(), frame.copy()
    return tau, warp(frame, tau)
