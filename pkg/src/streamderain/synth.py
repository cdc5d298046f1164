"""Procedural rain/snow streaks with ground truth, and synthetic test scenes."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .align import AffineTransform, warp


@dataclass(frozen=True)
class StreakParams:
    """Streak appearance.  Angles are degrees from vertical.

    The ``*_drift`` fields are added once per frame by :meth:`at`.
    """

    angle: float = 10.0
    length: float = 9.0
    width: float = 1.0
    density: float = 4.0  # streaks per 1000 px
    intensity: float = 0.5
    angle_drift: float = 0.0
    length_drift: float = 0.0
    width_drift: float = 0.0
    density_drift: float = 0.0
    intensity_drift: float = 0.0

    def __post_init__(self):
        if self.density < 0:
            raise ValueError("density must be non-negative")
        if not 0 <= self.intensity <= 1:
            raise ValueError("intensity must lie in [0, 1]")

    def at(self, frame: int) -> "StreakParams":
        return replace(
            self,
            angle=self.angle + frame * self.angle_drift,
            length=max(self.length + frame * self.length_drift, 1.0),
            width=max(self.width + frame * self.width_drift, 0.5),
            density=max(self.density + frame * self.density_drift, 0.0),
            intensity=float(np.clip(self.intensity + frame * self.intensity_drift, 0.0, 1.0)),
        )


def interpolate_params(start: StreakParams, end: StreakParams, n: int) -> list[StreakParams]:
    """``n`` parameter sets varying linearly from ``start`` to ``end``."""
    out = []
    for i in range(n):
        w = i / (n - 1) if n > 1 else 0.0
        vals = {f.name: (1 - w) * getattr(start, f.name) + w * getattr(end, f.name)
                for f in fields(StreakParams)}
        out.append(StreakParams(**vals))
    return out


def _segment_layer(shape, cy, cx, p: StreakParams, jitter):
    h, w = shape
    th = np.deg2rad(p.angle + jitter)
    dy, dx = np.cos(th), np.sin(th)
    half = p.length / 2.0
    r = int(np.ceil(half + p.width + 1))
    y0, y1 = max(cy - r, 0), min(cy + r + 1, h)
    x0, x1 = max(cx - r, 0), min(cx + r + 1, w)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    ry, rx = yy - cy, xx - cx
    t = np.clip(ry * dy + rx * dx, -half, half)
    dist = np.hypot(ry - t * dy, rx - t * dx)
    # pixel coverage of a band of the given width
    cov = np.clip(p.width / 2.0 + 0.5 - dist, 0.0, 1.0)
    return (slice(y0, y1), slice(x0, x1)), cov


def streak_layer(shape, p: StreakParams, seed) -> np.ndarray:
    """Additive rain layer of ``p.density`` streaks per 1000 pixels.

    Streak ``i`` is drawn from its own generator seeded by ``(seed, i)``, so
    a higher density adds streaks on top of those of a lower one.
    """
    h, w = shape
    n = int(round(p.density * h * w / 1000.0))
    layer = np.zeros(shape)
    if n == 0 or p.intensity == 0:
        return layer
    seed = np.atleast_1d(np.asarray(seed, dtype=np.int64)).tolist()
    for i in range(n):
        g = np.random.default_rng(seed + [i])
        cy = int(g.integers(0, h))
        cx = int(g.integers(0, w))
        jitter = float(g.integers(-4, 5))
        gain = float(g.integers(70, 101)) / 100.0
        sl, cov = _segment_layer(shape, cy, cx, p, jitter)
        layer[sl] += p.intensity * gain * cov
    return layer


def synthesize_streaks(clean, p: StreakParams, seed):
    """Return ``(rainy, rain_gt)`` with ``rainy = clip(clean + rain_gt, 0, 1)``."""
    clean = np.asarray(clean, dtype=np.float64)
    rain = streak_layer(clean.shape, p, seed)
    return np.clip(clean + rain, 0.0, 1.0), rain


# ---------------------------------------------------------------------------
# synthetic scenes


def textured_background(shape, seed=0) -> np.ndarray:
    """Smooth random texture in roughly ``[0.2, 0.7]``."""
    from scipy import ndimage

    g = np.random.default_rng(seed)
    base = ndimage.gaussian_filter(g.standard_normal(shape), 3.0, mode="wrap")
    fine = ndimage.gaussian_filter(g.standard_normal(shape), 1.2, mode="wrap")
    tex = base / base.std() * 0.08 + fine / fine.std() * 0.03
    h, w = shape
    ramp = np.linspace(-0.05, 0.05, w)[None, :] + np.linspace(-0.03, 0.03, h)[:, None]
    return np.clip(0.45 + tex + ramp, 0.0, 1.0)


@dataclass
class SyntheticSequence:
    clean: list
    rainy: list
    rain: list
    params: list
    shifts: list


def make_sequence(n_frames=40, shape=(64, 96), *, start=None, end=None, square=12,
                  square_value=0.9, jitter=0.0, noise=0.005, seed=0) -> SyntheticSequence:
    """Static textured scene, a moving bright square and drifting streaks.

    ``start``/``end`` give the streak parameters of the first and last frame.
    ``jitter`` > 0 translates every frame by a random offset of at most that
    many pixels in each axis (camera shake).
    """
    h, w = shape
    start = start or StreakParams(density=6.0, intensity=0.5)
    end = end or StreakParams(density=1.5, intensity=0.5)
    params = interpolate_params(start, end, n_frames)
    g = np.random.default_rng([seed, 1])
    margin = 4
    bg = textured_background((h + 2 * margin, w + 2 * margin), seed)
    clean, rainy, rain, shifts = [], [], [], []
    for t in range(n_frames):
        sy, sx = (g.uniform(-jitter, jitter, size=2) if jitter > 0 else (0.0, 0.0))
        shifts.append((sx, sy))
        big = warp(bg, AffineTransform.translation(sx, sy)) if jitter > 0 else bg
        frame = big[margin:margin + h, margin:margin + w].copy()
        # square moves left to right along the middle band
        x0 = int(round(4 + (w - square - 8) * t / max(n_frames - 1, 1)))
        y0 = h // 2 - square // 2 + int(round(6 * np.sin(t / 4.0)))
        frame[y0:y0 + square, x0:x0 + square] = square_value
        frame = np.clip(frame + noise * g.standard_normal(shape), 0.0, 1.0)
        wet, r = synthesize_streaks(frame, params[t], [seed, 2, t])
        clean.append(frame)
        rainy.append(wet)
        rain.append(r)
    return SyntheticSequence(clean, rainy, rain, params, shifts)
