"""Frame sequences on disk, engine configuration files and state snapshots.

Frames are read one at a time from a directory of numbered PNG/PGM files.
Colour frames are split into luminance, which the engine processes, and two
colour-difference planes that are recombined with the recovered luminance on
output.

Snapshot layout (all integers and reals little-endian)::

    magic     8 bytes   b"SDRSTATE"
    version   uint32    currently 1
    count     uint32    number of records
    record*   name_len uint16, name utf-8, dtype uint8 (0 float64, 1 uint8,
              2 int64), ndim uint8, shape uint32 * ndim, raw data (C order)

Scalars are stored as 0-d records.  Filters are stored as ``filter_<i>``
records, frame-buffer entries as ``buffer_<i>``.  Absent optional arrays are
simply not written.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import FilterBank, ShapeError
from .csc import DictionaryStats
from .engine import BUFFER_LEN, EngineConfig, OnlineState

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")
_LUMA = np.array([0.299, 0.587, 0.114])


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True)
class SequenceSpec:
    """Directory of numbered frames and an optional inclusive 1-based range."""

    directory: Path
    first: int = 1
    last: int | None = None
    color: bool = True

    def files(self) -> list[Path]:
        d = Path(self.directory)
        if not d.is_dir():
            raise FileNotFoundError(f"no such frame directory: {d}")
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        last = len(files) if self.last is None else self.last
        if self.first < 1 or last < self.first - 1:
            raise ValueError(f"bad frame range [{self.first}, {self.last}]")
        return files[self.first - 1:last]


@dataclass
class LoadedFrame:
    index: int
    path: Path
    luma: np.ndarray
    chroma: np.ndarray | None  # (2, h, w) differences B - Y and R - Y


def read_image(path) -> np.ndarray:
    """Image as float64 in ``[0, 1]``; grayscale ``(h, w)`` or colour ``(h, w, 3)``."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im).astype(np.float64) / 65535.0
        elif im.mode == "L":
            arr = np.asarray(im).astype(np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("RGB")).astype(np.float64) / 255.0
    return arr


def split_color(rgb):
    y = rgb @ _LUMA
    return y, np.stack([rgb[..., 2] - y, rgb[..., 0] - y])


def merge_color(y, chroma):
    b = y + chroma[0]
    r = y + chroma[1]
    g = (y - _LUMA[0] * r - _LUMA[2] * b) / _LUMA[1]
    return np.stack([r, g, b], axis=-1)


def load_sequence(spec: SequenceSpec):
    """Yield :class:`LoadedFrame` objects one at a time, in name order."""
    shape = None
    for k, path in enumerate(spec.files(), start=spec.first):
        try:
            arr = read_image(path)
        except Exception as exc:
            raise OSError(f"frame {k} ({path.name}) could not be decoded: {exc}") from exc
        if arr.ndim == 3:
            y, chroma = split_color(arr)
            if not spec.color:
                chroma = None
        else:
            y, chroma = arr, None
        if shape is None:
            shape = y.shape
        elif y.shape != shape:
            raise ShapeError(f"frame {k} ({path.name}) is {y.shape}, expected {shape}")
        yield LoadedFrame(k, path, y, chroma)


def save_frame(path, frame, chroma=None):
    """Write a frame losslessly at the file's bit depth.

    Grayscale frames go to 16-bit PNG/PGM, colour frames to 8-bit RGB PNG.
    """
    path = Path(path)
    frame = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    if chroma is None:
        Image.fromarray(np.round(frame * 65535.0).astype(np.uint16)).save(path)
    else:
        rgb = np.clip(merge_color(frame, chroma), 0.0, 1.0)
        Image.fromarray(np.round(rgb * 255.0).astype(np.uint8), "RGB").save(path)


# ---------------------------------------------------------------------------
# configuration

CONFIG_SECTIONS = {
    "model": ("lam", "alpha", "beta", "rho", "alpha_temporal"),
    "loop": ("outer_iters", "outer_tol", "period", "bootstrap"),
    "dictionary": ("scales", "forget", "filter_sweeps", "nonneg"),
    "solvers": ("csc_max_iter", "csc_tol", "tv_max_iter", "tv_tol"),
    "pipeline": ("align", "ameliorate", "init_sigma2", "init_scale", "sigma2_min",
                 "bg_rate", "bg_rate_down"),
}


class ConfigError(ValueError):
    pass


def _parse_value(name, raw, default):
    raw = raw.strip()
    if name == "scales":
        pairs = re.findall(r"(\d+)\s*[x:]\s*(\d+)", raw)
        if not pairs:
            raise ConfigError(f"scales must look like '13x3, 9x3, 3x3', got {raw!r}")
        return tuple((int(p), int(s)) for p, s in pairs)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def parse_config(text: str) -> EngineConfig:
    """Build an :class:`EngineConfig` from ``key = value`` lines in sections.

    Section and key names must match :data:`CONFIG_SECTIONS`; anything else
    is rejected.
    """
    cp = configparser.ConfigParser(interpolation=None, default_section="\0none")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    defaults = EngineConfig()
    kw = {}
    for section in cp.sections():
        if section not in CONFIG_SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in CONFIG_SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            kw[key] = _parse_value(key, raw, getattr(defaults, key))
    try:
        return EngineConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> EngineConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: EngineConfig) -> str:
    lines = []
    for section, keys in CONFIG_SECTIONS.items():
        lines.append(f"[{section}]")
        for k in keys:
            v = getattr(cfg, k)
            if k == "scales":
                v = ", ".join(f"{p}x{s}" for p, s in v)
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# snapshots

MAGIC = b"SDRSTATE"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("u1"), 2: np.dtype("<i8")}
_CODES = {"f": 0, "u": 1, "i": 2, "b": 1}


def _record(name, arr):
    arr = np.asarray(arr)
    code = _CODES[arr.dtype.kind]
    arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def state_records(state: OnlineState) -> dict:
    rec = {
        "t": np.int64(state.t),
        "sigma2": np.float64(state.sigma2),
        "sigma2_mean": np.float64(state.sigma2_mean),
        "b": state.b,
        "B": state.B,
        "H": state.H.astype(np.uint8),
        "T": state.T,
        "F": state.F,
        "maps": state.maps,
        "R": state.R,
        "scales": np.asarray(state.bank.scales, dtype=np.int64),
        "stats_A": state.stats.A,
        "stats_b": state.stats.b,
        "stats_count": np.float64(state.stats.count),
        "stats_forget": np.float64(state.stats.forget),
    }
    for i, f in enumerate(state.bank.filters):
        rec[f"filter_{i}"] = f
    for i, f in enumerate(state.frame_buffer):
        rec[f"buffer_{i}"] = f
    for name in ("b_mean", "csc_y", "csc_u"):
        if getattr(state, name) is not None:
            rec[name] = getattr(state, name)
    if state.csc_rho is not None:
        rec["csc_rho"] = np.float64(state.csc_rho)
    return rec


def save_state(path, state: OnlineState):
    rec = state_records(state)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(rec)))
        for name, arr in rec.items():
            fh.write(_record(name, arr))


def read_records(path) -> dict:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a state snapshot (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode()
            pos += n
            code, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            dt = _DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + size > len(data):
                raise ValueError("truncated")
            out[name] = np.frombuffer(data, dt, count=size // dt.itemsize,
                                      offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, KeyError, ValueError) as exc:
        raise ValueError(f"{path}: corrupt snapshot ({exc})") from None
    return out


def load_state(path) -> OnlineState:
    r = read_records(path)
    scales = tuple((int(p), int(s)) for p, s in r["scales"])
    n = sum(s for _, s in scales)
    bank = FilterBank(scales, tuple(r[f"filter_{i}"] for i in range(n)))
    stats = DictionaryStats(tuple(bank.patch_sizes), r["stats_A"], r["stats_b"],
                            float(r["stats_count"]), float(r["stats_forget"]))
    buf = deque(maxlen=BUFFER_LEN)
    i = 0
    while f"buffer_{i}" in r:
        buf.append(r[f"buffer_{i}"])
        i += 1
    state = OnlineState(
        t=int(r["t"]), B=r["B"], H=r["H"], bank=bank, sigma2=float(r["sigma2"]), b=r["b"],
        T=r["T"], stats=stats, frame_buffer=buf, F=r["F"], maps=r["maps"], R=r["R"],
        sigma2_mean=float(r["sigma2_mean"]), b_mean=r.get("b_mean"),
        csc_y=r.get("csc_y"), csc_u=r.get("csc_u"),
        csc_rho=float(r["csc_rho"]) if "csc_rho" in r else None,
    )
    state.validate()
    return state


def config_fields() -> list[str]:
    return [f.name for f in dataclasses.fields(EngineConfig)]
