"""Command-line entry point.

Subcommands:
    profile   cost table for the video front-ends (text + CSV)
    train     train on the synthetic task, write checkpoint + LDJSON log
    eval      WER grid over the noise conditions for a trained checkpoint
    gen-data  materialize the synthetic dataset (WAV + RGBV + features)

Flags: --config <path> (flat key=value file), --seed, --front-end, --out.
On failure a machine-readable JSON error record goes to stderr; exit code is
2 for usage/config problems and 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio import write_wav
from .checkpoint import save_tensor
from .config import RunConfig, load_config_text, make_preset
from .errors import AvasrError, ConfigError, InputError
from .model import AvAsrModel, load_model
from .profiling import FLOP_CONVENTION, front_end_cost
from .synthetic import SyntheticAvTask
from .training import FeatureCache, Trainer
from .vgg21d import Vgg21dFrontEnd
from .vit import VitFrontEnd
from .video import write_rgbv

# reference front-end sizes and latency ratio used for reconciliation
REFERENCE_PARAMS_M = {"vit": 37.2, "vgg21d": 7.0}
REFERENCE_GFLOPS = {"vit": 520.7, "vgg21d": 299.3}
REFERENCE_LATENCY_MS = {"vit": 162.3, "vgg21d": 120.7}

LATENCY_RUNS = 20  # timed passes; one untimed warm-up pass precedes them


def _load_config(args) -> RunConfig:
    if args.config:
        text = Path(args.config).read_text()
        cfg = load_config_text(text, front_end=args.front_end)
    else:
        cfg = make_preset(args.preset, args.front_end or "vit")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.front_end is not None:
        cfg.front_end = args.front_end
    return cfg.validate()


def _set_dtype(cfg: RunConfig) -> None:
    T.set_default_dtype(np.float64 if cfg.dtype == "float64" else np.float32)


def _build_front_end(cfg: RunConfig, name: str):
    rng = np.random.default_rng(cfg.seed)
    if name == "vgg21d":
        return Vgg21dFrontEnd(cfg.vgg, rng)
    return VitFrontEnd(cfg.vit, rng)


def _front_end_input(cfg: RunConfig, name: str) -> np.ndarray:
    batch, t_steps = cfg.profile.batch, cfg.profile.t_steps
    dtype = T.default_dtype()
    rng = np.random.default_rng(cfg.seed + 1)
    if name == "vgg21d":
        return rng.standard_normal((batch, t_steps, 128, 128, 3)).astype(dtype)
    return rng.standard_normal((batch, t_steps, 16, cfg.vit.token_dim)).astype(dtype)


def _profile_one(cfg: RunConfig, name: str) -> dict:
    sub = dataclasses.replace(cfg, front_end=name)
    report = front_end_cost(sub)
    fe = _build_front_end(cfg, name)
    x = _front_end_input(cfg, name)
    with T.Graph() as g:
        fe(T.Tensor(x))
    exact = (g.flops == report.flops and g.mult_adds == report.mult_adds
             and fe.param_count() == report.params)
    fe(T.Tensor(x))  # warm-up, excluded from timing
    times = []
    for _ in range(LATENCY_RUNS):
        t0 = time.perf_counter()
        fe(T.Tensor(x))
        times.append((time.perf_counter() - t0) * 1e3)
    return {
        "front_end": name,
        "gflops": report.flops / 1e9,
        "params_m": report.params / 1e6,
        "latency_ms_mean": float(np.mean(times)),
        "instrumented_match": exact,
        "reference_params_m": REFERENCE_PARAMS_M[name],
        "params_residual_pct": 100.0 * abs(report.params / 1e6 - REFERENCE_PARAMS_M[name])
                               / REFERENCE_PARAMS_M[name],
    }


def _format_profile(cfg: RunConfig, rows: list[dict]) -> tuple[str, str]:
    headers = ["front_end", "gflops", "params_m", "latency_ms_mean",
               "instrumented_match", "reference_params_m", "params_residual_pct"]
    formatted = []
    for r in rows:
        formatted.append({
            "front_end": r["front_end"],
            "gflops": f"{r['gflops']:.4f}",
            "params_m": f"{r['params_m']:.4f}",
            "latency_ms_mean": f"{r['latency_ms_mean']:.3f}",
            "instrumented_match": "exact" if r["instrumented_match"] else "MISMATCH",
            "reference_params_m": f"{r['reference_params_m']:.1f}",
            "params_residual_pct": f"{r['params_residual_pct']:.1f}",
        })
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")  # RFC 4180
    writer.writerow(headers)
    for r in formatted:
        writer.writerow([r[h] for h in headers])
    csv_text = buf.getvalue()

    widths = {h: max(len(h), *(len(r[h]) for r in formatted)) for h in headers}
    lines = ["  ".join(h.ljust(widths[h]) for h in headers)]
    for r in formatted:
        lines.append("  ".join(r[h].ljust(widths[h]) for h in headers))
    if len(rows) == 2:
        by_name = {r["front_end"]: r for r in rows}
        if "vit" in by_name and "vgg21d" in by_name:
            ratio = by_name["vit"]["gflops"] / by_name["vgg21d"]["gflops"]
            lat_ratio = by_name["vit"]["latency_ms_mean"] / by_name["vgg21d"]["latency_ms_mean"]
            ref_ratio = REFERENCE_GFLOPS["vit"] / REFERENCE_GFLOPS["vgg21d"]
            ref_lat = REFERENCE_LATENCY_MS["vit"] / REFERENCE_LATENCY_MS["vgg21d"]
            lines.append(f"flop ratio vit/vgg21d: {ratio:.3f} (reference {ref_ratio:.2f})")
            lines.append(f"latency ratio vit/vgg21d: {lat_ratio:.3f} (reference {ref_lat:.2f})")
    lines.append(f"profiling shape: batch={cfg.profile.batch} t_steps={cfg.profile.t_steps} "
                 f"dtype={cfg.dtype}")
    lines.append(f"flop convention: {FLOP_CONVENTION}")
    lines.append("latency is host-CPU wall clock over "
                 f"{LATENCY_RUNS} passes (warm-up excluded); only the vit/vgg21d "
                 "ratio is comparable to the reference hardware")
    return "\n".join(lines) + "\n", csv_text


def cmd_profile(args) -> int:
    cfg = _load_config(args)
    _set_dtype(cfg)
    names = [cfg.front_end] if args.front_end and args.front_end != "audio-only" \
        else ["vgg21d", "vit"]
    if args.front_end == "audio-only":
        raise ConfigError("audio-only has no video front-end to profile")
    rows = [_profile_one(cfg, name) for name in names]
    text, csv_text = _format_profile(cfg, rows)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "profile.txt").write_text(text, encoding="utf-8")
        (out / "profile.csv").write_text(csv_text, encoding="utf-8")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    trainer = Trainer(cfg)
    out = Path(args.out) if args.out else None
    trainer.train(out_dir=out, quiet=False)
    condition = "silence" if cfg.train.video_only else "clean"
    final = trainer.evaluate(condition)
    print(f"final training WER ({condition}): {final:.4f}")
    if out is not None:
        print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


GRID_COLUMNS = {"clean": "∞dB", "snr20": "20dB", "snr10": "10dB",
                "snr0": "0dB", "overlap": "overlap"}


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    ckpt = cfg.checkpoint or (str(Path(args.out) / "model.ckpt") if args.out else "")
    if not ckpt or not Path(ckpt).exists():
        raise InputError("eval requires a checkpoint (config key `checkpoint` "
                         "or an --out directory holding model.ckpt)")
    model = load_model(ckpt)
    trainer = Trainer(model.cfg, model=model)
    grid = trainer.evaluation_grid()
    headers = list(GRID_COLUMNS.values())
    values = [f"{grid[c]:.4f}" for c in GRID_COLUMNS]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(headers)
    writer.writerow(values)
    csv_text = buf.getvalue()
    width = max(len(h) for h in headers) + 2
    text = ("".join(h.rjust(width) for h in headers) + "\n"
            + "".join(v.rjust(width) for v in values) + "\n")
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.txt").write_text(text, encoding="utf-8")
        (out / "eval.csv").write_text(csv_text, encoding="utf-8")
    return 0


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    _set_dtype(cfg)
    if not args.out:
        raise InputError("gen-data requires --out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    task = SyntheticAvTask(cfg.task)
    cache = FeatureCache(task, T.default_dtype())
    rows = []
    for i, sample in enumerate(task.samples):
        wav_path = out / f"sample_{i:04d}.wav"
        rgbv_path = out / f"sample_{i:04d}.rgbv"
        feats_path = out / f"sample_{i:04d}.feats.avt"
        write_wav(wav_path, sample.waveform)
        write_rgbv(rgbv_path, sample.frames, sample.fps)
        save_tensor(feats_path, cache.audio(i, "clean"))
        rows.append((i, sample.transcript, wav_path.name, rgbv_path.name, feats_path.name))
    with open(out / "transcripts.tsv", "w") as f:
        f.write("index\ttranscript\twav\trgbv\tfeatures\n")
        for row in rows:
            f.write("\t".join(str(v) for v in row) + "\n")
    print(f"wrote {len(rows)} samples to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avasr",
                                     description="audio-visual ASR toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("profile", cmd_profile), ("train", cmd_train),
                     ("eval", cmd_eval), ("gen-data", cmd_gen_data)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--preset", default="desk", choices=["desk", "paper"],
                       help="base preset when no --config is given")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--front-end", dest="front_end",
                       choices=["vgg21d", "vit", "audio-only"], default=None)
        p.add_argument("--out", help="output directory")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InputError) as e:
        json.dump({"error": type(e).__name__, "message": str(e)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except AvasrError as e:
        json.dump({"error": type(e).__name__, "message": str(e)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
