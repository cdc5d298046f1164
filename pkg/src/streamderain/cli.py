"""Command-line entry points: ``derain``, ``synth``, ``evaluate``, ``inspect-state``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .engine import Derainer, EngineConfig
from .metrics import evaluate_sequence
from .synth import StreakParams, synthesize_streaks

log = logging.getLogger("streamderain")


def _frames_of(path):
    return (f.luma for f in io.load_sequence(io.SequenceSpec(Path(path), color=False)))


def run_derain(args) -> int:
    cfg = io.load_config(args.config) if args.config else EngineConfig()
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    state = io.load_state(args.state_in) if args.state_in else None
    engine = Derainer(cfg, state=state)
    chroma = {}
    names = {}
    records = []

    def emit(results):
        for res in results:
            name = names.pop(res.index)
            stem = Path(name).stem
            io.save_frame(out / f"{stem}.png", res.recovered, chroma.pop(res.index, None))
            if args.emit_rain_layers:
                np.save(out / f"{stem}_rain.npy", res.rain_layer)
                for k, layer in enumerate(res.scale_layers):
                    np.save(out / f"{stem}_rain_scale{k}.npy", layer)
            d = res.diagnostics
            records.append({
                "frame": stem, "t": res.index, "iterations": d["iterations"],
                "sigma2": d["sigma2"], "b": [float(v) for v in d["b"]],
                "tau": [float(v) for v in d["tau"]], "kl_noise": d["kl_noise"],
                "kl_rain": [float(v) for v in d["kl_rain"]],
                "objective": d["objective"], "mask_pixels": int(res.mask.sum()),
                "seconds": d["seconds"], "warnings": d["warnings"],
            })

    t0 = engine.state.t if engine.state is not None else 1
    for k, frame in enumerate(io.load_sequence(io.SequenceSpec(Path(args.input)))):
        names[t0 + k] = frame.path.name
        if frame.chroma is not None:
            chroma[t0 + k] = frame.chroma
        emit(engine.push(frame.luma))
    emit(engine.flush())
    (out / "diagnostics.json").write_text(json.dumps(
        {"schema": "streamderain.diagnostics/1", "frames": records}, indent=2))
    if args.state_out and engine.state is not None:
        io.save_state(args.state_out, engine.state)
    log.info("processed %d frames", len(records))
    return 0


def _read_params(path):
    """``[start]`` and optional ``[end]`` sections of streak parameters."""
    import configparser

    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(Path(path).read_text())
    valid = set(StreakParams.__dataclass_fields__)
    out = {}
    for sec in cp.sections():
        if sec not in ("start", "end"):
            raise io.ConfigError(f"unknown section [{sec}] in streak parameters")
        kw = {}
        for k, v in cp.items(sec):
            if k not in valid:
                raise io.ConfigError(f"unknown streak parameter {k!r}")
            kw[k] = float(v)
        out[sec] = StreakParams(**kw)
    if "start" not in out:
        raise io.ConfigError("streak parameters need a [start] section")
    return out["start"], out.get("end")


def run_synth(args) -> int:
    from .synth import interpolate_params

    start, end = _read_params(args.params)
    spec = io.SequenceSpec(Path(args.clean), color=False)
    files = spec.files()
    params = interpolate_params(start, end, len(files)) if end else [start.at(i) for i in range(len(files))]
    out = Path(args.out)
    (out / "rain").mkdir(parents=True, exist_ok=True)
    for p, frame in zip(params, io.load_sequence(spec)):
        rainy, rain = synthesize_streaks(frame.luma, p, [args.seed, frame.index])
        stem = frame.path.stem
        io.save_frame(out / f"{stem}.png", rainy)
        np.save(out / "rain" / f"{stem}.npy", rain)
    return 0


def run_evaluate(args) -> int:
    report = evaluate_sequence(_frames_of(args.recovered), _frames_of(args.reference))
    Path(args.report).write_text(report.to_json())
    print(f"mean PSNR {report.mean_psnr:.3f} dB  mean SSIM {report.mean_ssim:.4f}")
    return 0


def run_inspect(args) -> int:
    s = io.load_state(args.file)
    print(f"t = {s.t}")
    print(f"sigma2 = {s.sigma2:.6g}")
    print("b = " + " ".join(f"{v:.6g}" for v in s.b))
    print("filter norms = " + " ".join(f"{v:.6f}" for v in s.bank.norms()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="streamderain", description="Online video rain/snow removal.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derain", help="remove rain from a directory of frames")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    p.add_argument("--emit-rain-layers", action="store_true")
    p.add_argument("--state-out")
    p.add_argument("--state-in")
    p.set_defaults(func=run_derain)

    p = sub.add_parser("synth", help="add procedural streaks to clean frames")
    p.add_argument("--clean", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=run_synth)

    p = sub.add_parser("evaluate", help="PSNR/SSIM report against reference frames")
    p.add_argument("--recovered", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=run_evaluate)

    p = sub.add_parser("inspect-state", help="summarise a state snapshot")
    p.add_argument("file")
    p.set_defaults(func=run_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
