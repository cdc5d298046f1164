"""Shared grid types and FFT convolution.

Frames are plain 2-D ``float64`` arrays with values in ``[0, 1]``.  Filter
banks and feature-map sets carry the multi-scale structure of the rain
layer: a bank holds one ``p x p`` kernel per (scale, filter) index, and a
feature-map set is a ``(n_filters, h, w)`` array indexed the same way.

Convolutions are circular.  A kernel of odd size ``p`` is centred on the
origin, so convolving it with a unit impulse at pixel ``q`` reproduces the
kernel centred at ``q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_SIZE = 16

DEFAULT_SCALES: tuple[tuple[int, int], ...] = ((13, 3), (9, 3), (3, 3))


class ShapeError(ValueError):
    """Raised when grids that must agree in size do not."""


def as_frame(values, *, check_size: bool = True) -> np.ndarray:
    """Validate and return ``values`` as a contiguous float64 frame."""
    frame = np.ascontiguousarray(values, dtype=np.float64)
    if frame.ndim != 2:
        raise ShapeError(f"frame must be 2-D, got shape {frame.shape}")
    if check_size and min(frame.shape) < MIN_SIZE:
        raise ShapeError(
            f"frame {frame.shape} below minimum solvable size {MIN_SIZE}x{MIN_SIZE}")
    if not np.all(np.isfinite(frame)):
        raise ValueError("frame contains non-finite values")
    return frame


def as_mask(labels, shape=None) -> np.ndarray:
    """Return ``labels`` as a strictly binary uint8 support mask."""
    mask = np.asarray(labels)
    if shape is not None and mask.shape != tuple(shape):
        raise ShapeError(f"mask shape {mask.shape} != {tuple(shape)}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("support mask must be binary")
    return mask.astype(np.uint8)


def complement(mask: np.ndarray) -> np.ndarray:
    return (1 - mask).astype(np.uint8)


def _check_same_shape(*grids: np.ndarray) -> tuple[int, int]:
    shape = grids[0].shape
    for g in grids[1:]:
        if g.shape != shape:
            raise ShapeError(f"grid shapes differ: {shape} vs {g.shape}")
    return shape


@dataclass(frozen=True)
class FilterBank:
    """Multi-scale convolutional dictionary.

    Attributes
    ----------
    scales : tuple of (patch_size, filter_count)
        One entry per scale, patch sizes odd and strictly decreasing.
    filters : tuple of ndarray
        Flat list of kernels, scale-major: all filters of scale 0, then
        scale 1, and so on.
    """

    scales: tuple[tuple[int, int], ...]
    filters: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        scales = tuple((int(p), int(s)) for p, s in self.scales)
        sizes = [p for p, _ in scales]
        if any(p % 2 == 0 or p < 1 for p in sizes):
            raise ValueError(f"patch sizes must be odd and positive: {sizes}")
        if any(a <= b for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"patch sizes must strictly decrease: {sizes}")
        expected = [p for p, s in scales for _ in range(s)]
        filters = tuple(np.array(f, dtype=np.float64) for f in self.filters)
        if len(filters) != len(expected):
            raise ValueError(f"expected {len(expected)} filters, got {len(filters)}")
        for f, p in zip(filters, expected):
            if f.shape != (p, p):
                raise ShapeError(f"filter shape {f.shape} != ({p}, {p})")
            if np.linalg.norm(f) > 1.0 + 1e-12:
                raise ValueError("filter Frobenius norm exceeds 1")
            f.setflags(write=False)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "filters", filters)

    @property
    def n_filters(self) -> int:
        return len(self.filters)

    @property
    def patch_sizes(self) -> list[int]:
        return [f.shape[0] for f in self.filters]

    def scale_index(self) -> np.ndarray:
        """Scale number ``k`` of every filter, in bank order."""
        return np.repeat(np.arange(len(self.scales)), [s for _, s in self.scales])

    def norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(f) for f in self.filters])

    def with_filters(self, filters) -> "FilterBank":
        return FilterBank(self.scales, tuple(filters))


def streak_kernel(size: int, angle_deg: float, width: float = 0.6) -> np.ndarray:
    """Unit-norm elongated Gaussian oriented at ``angle_deg`` from vertical."""
    c = size // 2
    yy, xx = np.mgrid[-c:c + 1, -c:c + 1].astype(np.float64)
    th = np.deg2rad(angle_deg)
    along = yy * np.cos(th) + xx * np.sin(th)
    across = -yy * np.sin(th) + xx * np.cos(th)
    sigma_along = max(size / 3.0, 0.5)
    k = np.exp(-0.5 * (along / sigma_along) ** 2 - 0.5 * (across / width) ** 2)
    return k / np.linalg.norm(k)


def streak_filter_bank(scales=DEFAULT_SCALES, angles=(-10.0, 0.0, 10.0)) -> FilterBank:
    """Bank of oriented streak kernels, cycling through ``angles`` per scale."""
    filters = []
    for p, s in scales:
        for j in range(s):
            filters.append(streak_kernel(p, angles[j % len(angles)]))
    return FilterBank(tuple(scales), tuple(filters))


def kernel_to_grid(kernel: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Zero-pad ``kernel`` to ``shape`` with its centre moved to the origin."""
    p = kernel.shape[0]
    h, w = shape
    if p > h or p > w:
        raise ShapeError(f"kernel {p}x{p} larger than grid {shape}")
    out = np.zeros(shape)
    out[:p, :p] = kernel
    return np.roll(out, (-(p // 2), -(p // 2)), axis=(0, 1))


def filter_spectra(bank: FilterBank, shape: tuple[int, int]) -> np.ndarray:
    """Real-FFT spectra of every filter on a grid of ``shape``."""
    return np.stack([np.fft.rfft2(kernel_to_grid(f, shape)) for f in bank.filters])


def _check_maps(bank: FilterBank, maps: np.ndarray) -> None:
    if maps.ndim != 3 or maps.shape[0] != bank.n_filters:
        raise ShapeError(
            f"maps shape {maps.shape} does not index {bank.n_filters} filters")


def convolve_each(bank: FilterBank, maps: np.ndarray) -> np.ndarray:
    """Per-filter circular convolutions ``D_m * M_m``, shape ``(n, h, w)``."""
    maps = np.asarray(maps, dtype=np.float64)
    _check_maps(bank, maps)
    shape = maps.shape[1:]
    spec = filter_spectra(bank, shape) * np.fft.rfft2(maps)
    return np.fft.irfft2(spec, s=shape)


def convolve_sum(bank: FilterBank, maps: np.ndarray) -> np.ndarray:
    """Rain layer ``sum_m D_m * M_m`` by circular FFT convolution."""
    maps = np.asarray(maps, dtype=np.float64)
    _check_maps(bank, maps)
    shape = maps.shape[1:]
    spec = np.einsum("mij,mij->ij", filter_spectra(bank, shape), np.fft.rfft2(maps))
    return np.fft.irfft2(spec, s=shape)


def convolve_by_scale(bank: FilterBank, maps: np.ndarray) -> np.ndarray:
    """Rain layer split by scale, shape ``(K, h, w)``; sums to :func:`convolve_sum`."""
    each = convolve_each(bank, maps)
    k = bank.scale_index()
    return np.stack([each[k == i].sum(axis=0) for i in range(len(bank.scales))])


def elementwise_compose(X, B_warped, F, R, H) -> np.ndarray:
    """Model prediction ``H' * B_warped + H * F + R``.

    ``X`` is only used for the shape check; the residual is
    ``X - elementwise_compose(...)``.
    """
    _check_same_shape(np.asarray(X), np.asarray(B_warped), np.asarray(F),
                      np.asarray(R), np.asarray(H))
    H = as_mask(H)
    return np.where(H == 1, F, B_warped) + R


def luminance(rgb: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma of an ``(h, w, 3)`` image."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb @ np.array([0.299, 0.587, 0.114])
