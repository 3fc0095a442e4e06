"""Command-line front end: ``oadtm synth|train|eval|infer|grid|inspect``.

Option precedence is command-line flag > ``--config`` file (``key = value``
lines, keys named like the flags' long forms) > built-in defaults.

Exit codes: 0 success, 2 usage, 3 validation, 4 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import struct
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import SynthSpec, generate_synthetic, load_stream, save_stream
from .errors import ConfigError, OADError, ValidationError
from .grid import GridManifest, rows_to_csv, rows_to_text, run_grid, timing_to_csv
from .infer import OnlineSession, ScoreTimeline, infer_stream
from .metrics import evaluate
from .models import HYBRID_PRESETS, INDIVIDUAL_KINDS, ModelSpec, ParamStore, TemporalModel
from .svg import bar_chart
from .train import TrainConfig, format_log_record, train

log = logging.getLogger("oadtm")

MODEL_DEFAULTS = {
    "L": 4,
    "kernel_size": 2,
    "rates": "1,2,4",
    "tc_dilation": 1,
    "hidden_size": 4096,
    "layers": 1,
    "rnn_output": "last",
    "attn_hidden": 512,
    "proj_dim": None,
    "width_mult": 1.0,
    "dcc_dropout": 0.1,
}
TRAIN_DEFAULTS = {
    "lr": 1e-3,
    "momentum": 0.9,
    "decay": 0.95,
    "epochs": 20,
    "batch_size": 32,
    "seed": 0,
    "precision": "fast",
    "clip": None,
}
SYNTH_DEFAULTS = {"streams": 10, "T": 256, "d": 16, "K": 2, "noise": 0.1, "mode": "order", "seed": 0,
                  "prototype_seed": 0, "format": "binary"}


class UsageError(OADError):
    exit_code = 2


# --- config resolution --------------------------------------------------------


def read_config_file(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(args, defaults: dict) -> dict:
    """Merge flags, config file and defaults, coercing file strings to the default's type."""
    cfg = read_config_file(args.config) if getattr(args, "config", None) else {}
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in cfg:
            out[key] = _coerce(cfg[key], default, key)
        else:
            out[key] = default
    return out


def _coerce(text, default, key):
    if default is None:
        if text.lower() in ("none", ""):
            return None
        try:
            return int(text)
        except ValueError:
            return float(text)
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        return type(default)(text)
    except ValueError:
        raise UsageError(f"config value for {key!r} is not a {type(default).__name__}: {text!r}") from None


def _rates(text):
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise UsageError(f"bad dilation rate list {text!r}") from None


def spec_from_options(model: str, opts: dict, feature_dim: int, num_classes: int) -> ModelSpec:
    return ModelSpec.named(
        model,
        feature_dim=feature_dim,
        num_classes=num_classes,
        seq_len=int(opts["L"]),
        kernel_size=int(opts["kernel_size"]),
        dilation_rates=_rates(opts["rates"]),
        tc_dilation=int(opts["tc_dilation"]),
        hidden_size=int(opts["hidden_size"]),
        num_layers=int(opts["layers"]),
        rnn_output=opts["rnn_output"],
        attn_hidden=int(opts["attn_hidden"]),
        proj_dim=None if opts["proj_dim"] is None else int(opts["proj_dim"]),
        width_mult=float(opts["width_mult"]),
        dcc_dropout=float(opts["dcc_dropout"]),
    )


def _stream_paths(items):
    paths = []
    for item in items or []:
        p = Path(item)
        if p.is_dir():
            paths += sorted(q for q in p.iterdir() if q.suffix.lower() in (".oadf", ".csv"))
        else:
            paths.append(p)
    return paths


def _load_streams(items, num_classes=None):
    paths = _stream_paths(items)
    if not paths:
        raise ValidationError("no input streams given")
    streams = [load_stream(p, num_classes=num_classes) for p in paths]
    d, k = streams[0].d, streams[0].num_classes
    for s in streams:
        if s.d != d or s.num_classes != k:
            raise ValidationError(f"stream {s.video_id!r} has (d={s.d}, K={s.num_classes}); expected (d={d}, K={k})")
    return streams, paths


def write_manifest(out_dir: Path, command: str, config: dict, seed, inputs, artifacts, wall_time: float):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "artifacts": [str(p) for p in artifacts],
        "wall_time_s": wall_time,
        "tool_version": __version__,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# --- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    opts = resolve(args, SYNTH_DEFAULTS)
    spec = SynthSpec(num_streams=int(opts["streams"]), T=int(opts["T"]), d=int(opts["d"]), K=int(opts["K"]),
                     noise=float(opts["noise"]), mode=opts["mode"], seed=int(opts["seed"]),
                     prototype_seed=int(opts["prototype_seed"]))
    try:
        spec.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    tic = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".oadf" if opts["format"] == "binary" else ".csv"
    files = []
    for stream in generate_synthetic(spec):
        path = out / f"{stream.video_id}{suffix}"
        save_stream(stream, path, opts["format"])
        files.append(path)
    write_manifest(out, "synth", opts, spec.seed, [], files, time.perf_counter() - tic)
    print(f"wrote {len(files)} streams (T={spec.T}, d={spec.d}, K={spec.K}, mode={spec.mode}) to {out}")
    return 0


def cmd_train(args) -> int:
    opts = resolve(args, {**MODEL_DEFAULTS, **TRAIN_DEFAULTS})
    streams, paths = _load_streams(args.train)
    spec = spec_from_options(args.model, opts, streams[0].d, streams[0].num_classes)
    config = TrainConfig(learning_rate=float(opts["lr"]), momentum=float(opts["momentum"]),
                         decay_rate=float(opts["decay"]), epochs=int(opts["epochs"]),
                         batch_size=int(opts["batch_size"]), seed=int(opts["seed"]), precision=opts["precision"],
                         clip_norm=None if opts["clip"] is None else float(opts["clip"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tic = time.perf_counter()
    params, records = train(spec, streams, config)
    ckpt, spec_path, log_path = out / "model.oadp", out / "model.json", out / "train.log"
    params.save(ckpt)
    spec_path.write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log_path.write_text("".join(format_log_record(r) + "\n" for r in records), encoding="utf-8")
    write_manifest(out, "train", {**opts, "model": args.model, "spec": spec.to_dict()}, config.seed, paths,
                   [ckpt, spec_path, log_path], time.perf_counter() - tic)
    last = records[-1] if records else None
    summary = f"trained {args.model} ({len(params)} tensors, {params.num_values()} values)"
    if last:
        summary += f"; final loss {last['loss']:.4f}, accuracy {last['accuracy']:.3f}"
    print(summary)
    return 0


def _load_model(args, feature_dim, num_classes):
    params = ParamStore.load(args.checkpoint)
    if args.model:
        opts = resolve(args, MODEL_DEFAULTS)
        spec = spec_from_options(args.model, opts, feature_dim, num_classes)
    else:
        spec_path = Path(args.spec) if args.spec else Path(args.checkpoint).with_name("model.json")
        spec = ModelSpec.from_dict(json.loads(spec_path.read_text(encoding="utf-8")))
    if params.fingerprint and params.fingerprint != spec.fingerprint():
        raise ValidationError("checkpoint fingerprint does not match the model configuration")
    if params.shapes() != TemporalModel(spec).param_shapes():
        raise ValidationError("checkpoint parameters do not match the model configuration")
    return spec, params


def cmd_eval(args) -> int:
    streams, paths = _load_streams(args.test)
    spec, params = _load_model(args, streams[0].d, streams[0].num_classes)
    tic = time.perf_counter()
    model = TemporalModel(spec)
    timelines = [infer_stream(s, model, params) for s in streams]
    report = evaluate(timelines, streams, args.metric)
    report.meta["manifest"] = "manifest.json"
    report.meta["model_fingerprint"] = spec.fingerprint()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = [out / "report.txt", out / "report.csv"]
    artifacts[0].write_text(report.to_text(), encoding="utf-8")
    artifacts[1].write_text(report.to_csv(), encoding="utf-8")
    if args.svg:
        values = report.ap if args.metric == "map" else report.cap
        svg_path = out / "per_class.svg"
        svg_path.write_text(bar_chart({str(c): values[c] for c in report.classes},
                                      title=f"per-class {'AP' if args.metric == 'map' else 'cAP'}",
                                      ylabel=args.metric), encoding="utf-8")
        artifacts.append(svg_path)
    if args.save_timelines:
        for tl, s in zip(timelines, streams):
            p = out / f"{s.video_id}.scores.csv"
            p.write_text(tl.to_csv(), encoding="utf-8")
            artifacts.append(p)
    write_manifest(out, "eval", {"metric": args.metric, "spec": spec.to_dict(), "checkpoint": str(args.checkpoint)},
                   None, paths, artifacts, time.perf_counter() - tic)
    sys.stdout.write(report.to_text())
    return 0


def cmd_infer(args) -> int:
    stream = load_stream(args.stream)
    spec, params = _load_model(args, stream.d, stream.num_classes)
    model = TemporalModel(spec)
    if args.incremental:
        session = OnlineSession(model, params)
        rows = [session.push(f) for f in stream.features]
        timeline = ScoreTimeline(np.stack(rows), session.scorer.fingerprint, stream.video_id)
    else:
        timeline = infer_stream(stream, model, params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    timeline.save(out)
    p50, p99 = timeline.latency_percentiles()
    msg = f"scored {len(timeline)} units -> {out}"
    if timeline.latencies:
        msg += f" (latency p50 {p50 * 1e3:.3f} ms, p99 {p99 * 1e3:.3f} ms)"
    print(msg)
    return 0


def cmd_grid(args) -> int:
    manifest = GridManifest.load(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tic = time.perf_counter()
    rows = run_grid(manifest, workers=args.workers)
    (out / "grid.csv").write_text(rows_to_csv(rows), encoding="utf-8")
    (out / "grid.txt").write_text(rows_to_text(rows, manifest.protocol), encoding="utf-8")
    (out / "grid_timing.csv").write_text(timing_to_csv(rows), encoding="utf-8")
    failures = [r for r in rows if r["status"] != "ok"]
    for r in failures:
        (out / f"cell{r['cell']}.error.txt").write_text(r.get("traceback", r["error"]), encoding="utf-8")
    write_manifest(out, "grid", json.loads(Path(args.manifest).read_text(encoding="utf-8")), manifest.seed,
                   [args.manifest], [out / "grid.csv", out / "grid.txt", out / "grid_timing.csv"],
                   time.perf_counter() - tic)
    sys.stdout.write(rows_to_text(rows, manifest.protocol))
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    head = path.read_bytes()[:4]
    if head == b"OADF":
        s = load_stream(path)
        counts = np.bincount(s.labels, minlength=s.num_classes + 1)
        print(f"feature stream {path.name}: T={s.T} d={s.d} K={s.num_classes} label counts={counts.tolist()}")
    elif head == b"OADP":
        params = ParamStore.load(path)
        print(f"checkpoint {path.name}: fingerprint={params.fingerprint} tensors={len(params)} "
              f"values={params.num_values()}")
        for name, shape in params.shapes().items():
            print(f"  {name:<40} {'x'.join(map(str, shape))}  {params[name].dtype}")
    elif head == b"OADS":
        tl = ScoreTimeline.from_bytes(path.read_bytes())
        print(f"score timeline {path.name}: T={len(tl)} classes={tl.probs.shape[1]} fingerprint={tl.fingerprint}")
    elif path.suffix.lower() == ".csv":
        s = load_stream(path)
        print(f"feature stream {path.name} (csv): T={s.T} d={s.d} K={s.num_classes}")
    else:
        raise ValidationError(f"unrecognised file {path}")
    return 0


# --- parser -----------------------------------------------------------------------


def _model_flags(p, required_model=True):
    kinds = ", ".join(INDIVIDUAL_KINDS + tuple(HYBRID_PRESETS))
    p.add_argument("--model", required=required_model, help=f"operator or preset: {kinds}")
    p.add_argument("--L", type=int, help="window length (default 4)")
    p.add_argument("--kernel-size", dest="kernel_size", type=int, help="convolution kernel size (default 2)")
    p.add_argument("--rates", help="dilation rates for PDC/DCC (default 1,2,4)")
    p.add_argument("--tc-dilation", dest="tc_dilation", type=int, help="dilation of the TC operator (default 1)")
    p.add_argument("--hidden-size", dest="hidden_size", type=int, help="full-scale RNN hidden size (default 4096)")
    p.add_argument("--layers", type=int, help="stacked RNN layers (default 1)")
    p.add_argument("--rnn-output", dest="rnn_output", choices=("last", "average"), help="RNN output (default last)")
    p.add_argument("--attn-hidden", dest="attn_hidden", type=int, help="full-scale Nonlinear-SA width (default 512)")
    p.add_argument("--proj-dim", dest="proj_dim", type=int, help="attention projection width (default d/2)")
    p.add_argument("--width-mult", dest="width_mult", type=float, help="scale applied to all layer widths")
    p.add_argument("--dcc-dropout", dest="dcc_dropout", type=float, help="training dropout in DCC (default 0.1)")
    p.add_argument("--config", help="key = value file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oadtm", description="Temporal models for online action detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic feature streams")
    p.add_argument("--streams", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--mode", choices=("order", "static"))
    p.add_argument("--seed", type=int)
    p.add_argument("--prototype-seed", dest="prototype_seed", type=int)
    p.add_argument("--format", choices=("binary", "csv"))
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on feature streams")
    _model_flags(p)
    p.add_argument("--train", nargs="+", required=True, help="stream files or directories")
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--decay", type=float, help="per-epoch learning-rate multiplier")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", choices=("fast", "test"))
    p.add_argument("--clip", type=float, help="global gradient-norm clip (off by default)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score test streams and report AP / cAP")
    _model_flags(p, required_model=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--spec", help="model.json written by train (default: next to the checkpoint)")
    p.add_argument("--test", nargs="+", required=True)
    p.add_argument("--metric", choices=("cap", "map"), default="cap")
    p.add_argument("--svg", action="store_true", help="also write a per-class bar chart")
    p.add_argument("--save-timelines", dest="save_timelines", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="score one stream online")
    _model_flags(p, required_model=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--spec")
    p.add_argument("--stream", required=True)
    p.add_argument("--incremental", action="store_true", help="feed frames one at a time")
    p.add_argument("--out", required=True, help=".csv or binary timeline path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("grid", help="train and evaluate a grid of models")
    p.add_argument("--manifest", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("inspect", help="describe a stream, checkpoint or timeline file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except OADError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, struct.error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
