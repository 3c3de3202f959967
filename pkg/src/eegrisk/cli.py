"""Command-line stages: synth, preprocess, train, risk, sweep, report.

Each stage reads the files written by the previous one and writes its own
outputs atomically, plus a ``<stage>.manifest.json`` listing seeds, timings
and a SHA-256 of every artifact.  Exit codes: 0 ok, 1 usage, 2 data error,
3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_path, read_keyvalue, sha256_file
from .classifier import ModelFormatError, TrainConfig, load_model, save_model
from .eeg_data import (
    InfeasibleLayoutError,
    RecordingFormatError,
    SynthConfig,
    load_recording,
    save_recording,
    spaced_onsets,
    split_seizures,
    synth_generate,
)
from .evaluation import (
    FPR_MODES,
    X_VALUES,
    IMAGE_TYPES,
    EvalSegment,
    MissingNetworkError,
    ProbStream,
    SweepGrid,
    best_timelines,
    classify_alarms,
    compute_stream,
    evaluate_streams,
    held_out_segments,
    read_results_csv,
    report,
    select_best,
    write_results_csv,
)
from .forecast import ForecastParams, run_forecaster, write_alarms_csv, write_timeline_csv
from .imaging import ImageType, NormStats, normalize
from .pipeline import RunConfig, norm_stats_for, train_network
from .preprocess import PreprocessConfig, preprocess_recording

log = logging.getLogger("eegrisk")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


DATA_ERRORS = (DataError, RecordingFormatError, InfeasibleLayoutError, ModelFormatError, MissingNetworkError,
               FileNotFoundError, ValueError)


# ----------------------------------------------------------------- manifest


@dataclass
class RunManifest:
    command: str
    version: str = __version__
    config_path: str | None = None
    arguments: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    timings_s: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def stage(self, name: str, start: float) -> None:
        self.timings_s[name] = round(time.perf_counter() - start, 3)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256_file(path)

    def write(self, directory) -> Path:
        path = Path(directory) / f"{self.command}.manifest.json"
        with atomic_path(path) as tmp:
            Path(tmp).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def recording_files(path) -> list[Path]:
    header = Path(path).with_suffix(".json")
    return [header, header.with_suffix(".f32")]


def recording_digest(path) -> str:
    """Hash of a recording's header and sample file together."""
    return "".join(sha256_file(p) for p in recording_files(path))


def _load_recording(path):
    for p in recording_files(path):
        if not p.exists():
            raise DataError(f"missing input {p}")
    return load_recording(path)


# ------------------------------------------------------------------ parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _image_types(text: str) -> tuple[ImageType, ...]:
    if text == "all":
        return IMAGE_TYPES
    return tuple(ImageType.parse(v.strip()) for v in text.split(","))


def _minutes(text: str) -> tuple[float, ...]:
    if text == "all":
        return tuple(float(x) for x in X_VALUES)
    return _float_list(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eegrisk", description="Seizure-risk forecasting from scalp EEG images.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", help="key = value file; its entries override command-line flags")
        return sp

    s = add("synth", "Generate a synthetic recording with annotated seizures.")
    s.add_argument("--out", required=True, help="recording path (<name>.json plus <name>.f32)")
    s.add_argument("--duration-h", type=float, required=True)
    s.add_argument("--seizures", type=int, default=3)
    s.add_argument("--onsets-h", type=_float_list, default=None, help="comma-separated onsets in hours")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--signature-min", type=float, default=10.0, help="length of the injected pre-ictal signature")
    s.add_argument("--signature-uv", type=float, default=12.0)
    s.add_argument("--seizure-s", type=float, default=60.0)
    s.add_argument("--min-gap-min", type=float, default=60.0)
    s.add_argument("--line-noise-uv", type=float, default=0.0)
    s.add_argument("--patient", default="synthetic")

    s = add("preprocess", "Bandpass, notch and average-reference a recording.")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--band-low-hz", type=float, default=0.5)
    s.add_argument("--band-high-hz", type=float, default=100.0)
    s.add_argument("--band-order", type=int, default=4)
    s.add_argument("--notch-hz", type=float, default=50.0)
    s.add_argument("--notch-q", type=float, default=25.0)
    s.add_argument("--no-bandpass", action="store_true")
    s.add_argument("--no-notch", action="store_true")
    s.add_argument("--no-average-reference", action="store_true")
    s.add_argument("--ica-hook", default=None, help="external command run as '<cmd> <in> <out>'")

    s = add("train", "Train one network per (image type, pre-ictal minutes).")
    s.add_argument("--in", dest="input", required=True, help="preprocessed recording")
    s.add_argument("--models-dir", required=True)
    s.add_argument("--image-type", type=_image_types, default=IMAGE_TYPES, help="1s, 5s, 10s, a list, or 'all'")
    s.add_argument("--preictal-min", type=_minutes, default=tuple(float(x) for x in X_VALUES),
                   help="minutes, a list, or 'all'")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--learning-rate", type=float, default=0.001)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--guard-min", type=float, default=60.0)
    s.add_argument("--norm-mode", choices=("joint", "train-only"), default="joint")
    s.add_argument("--max-per-class", type=int, default=None, help="cap on pre-ictal training images")
    s.add_argument("--workers", type=int, default=1)

    s = add("risk", "Per-second likelihood and alarms of one model over the held-out segments.")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--Z", type=float, required=True)
    s.add_argument("--Y", type=float, required=True)

    s = add("sweep", "Evaluate every (image type, X, Z, Y) cell on the held-out seizures.")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--models-dir", required=True)
    s.add_argument("--patient", default=None, help="defaults to the recording's patient id")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--image-type", type=_image_types, default=IMAGE_TYPES)
    s.add_argument("--preictal-min", type=_minutes, default=tuple(float(x) for x in X_VALUES))
    s.add_argument("--Z-values", type=_float_list, default=None)
    s.add_argument("--Y-values", type=_float_list, default=None)
    s.add_argument("--fpr-mode", choices=FPR_MODES, default=FPR_MODES[0])
    s.add_argument("--guard-min", type=float, default=60.0)

    s = add("report", "Select the best configuration and write the results table.")
    s.add_argument("--sweep-dir", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--patient", default=None)
    return p


def apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> argparse.Namespace:
    """Override parsed flags with ``key = value`` entries from ``--config``.

    Keys are flag names with or without leading dashes (``epochs``,
    ``duration-h``, ``duration_h``).
    """
    if not getattr(args, "config", None):
        return args
    try:
        values = read_keyvalue(Path(args.config).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {args.config}") from exc
    except ValueError as exc:
        raise UsageError(f"{args.config}: {exc}") from exc
    sub = next(a for a in parser._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
    actions = {a.dest: a for a in sub.choices[args.command]._actions}
    for key, raw in values.items():
        dest = key.lstrip("-").replace("-", "_")
        action = actions.get(dest) or next((a for a in actions.values() if f"--{key.lstrip('-')}" in a.option_strings),
                                           None)
        if action is None or dest in ("help", "config"):
            raise UsageError(f"{args.config}: unknown option {key!r} for '{args.command}'")
        try:
            if isinstance(action, argparse._StoreTrueAction):
                value = raw.lower() in ("1", "true", "yes", "on")
                if not value and raw.lower() not in ("0", "false", "no", "off"):
                    raise ValueError(f"not a boolean: {raw!r}")
            elif action.type is not None:
                value = action.type(raw)
            else:
                value = raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{args.config}: bad value for {key!r}: {exc}") from exc
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{args.config}: {key!r} must be one of {list(action.choices)}")
        setattr(args, action.dest, value)
    return args


def _manifest(args) -> RunManifest:
    skip = {"command", "config", "verbose"}
    arguments = {}
    for k, v in vars(args).items():
        if k in skip:
            continue
        if isinstance(v, tuple):
            v = [x.label if isinstance(x, ImageType) else x for x in v]
        arguments[k] = v
    return RunManifest(args.command, config_path=args.config, arguments=arguments)


# ----------------------------------------------------------------- commands


def cmd_synth(args) -> RunManifest:
    m = _manifest(args)
    m.seeds["synth"] = args.seed
    duration = args.duration_h * 3600
    if args.onsets_h is not None:
        onsets = tuple(h * 3600 for h in args.onsets_h)
        if len(onsets) != args.seizures:
            raise UsageError(f"--onsets-h lists {len(onsets)} onsets but --seizures is {args.seizures}")
    else:
        onsets = spaced_onsets(duration, args.seizures, args.seizure_s)
    cfg = SynthConfig(duration, onsets, args.signature_min, args.seed, args.seizure_s, args.min_gap_min,
                      signature_uv=args.signature_uv, line_noise_uv=args.line_noise_uv, patient_id=args.patient)
    t0 = time.perf_counter()
    rec = synth_generate(cfg)
    header = save_recording(rec, args.out)
    m.stage("synth", t0)
    for p in recording_files(header):
        m.add_output(p)
    m.write(Path(header).parent)
    log.info("wrote %s: %.1f h, %d seizures", header, rec.duration_s / 3600, len(rec.annotations))
    return m


def cmd_preprocess(args) -> RunManifest:
    m = _manifest(args)
    rec = _load_recording(args.input)
    for p in recording_files(args.input):
        m.add_input(p)
    cfg = PreprocessConfig(args.band_low_hz, args.band_high_hz, args.band_order, args.notch_hz, args.notch_q,
                           not args.no_bandpass, not args.no_notch, not args.no_average_reference, args.ica_hook)
    t0 = time.perf_counter()
    out = preprocess_recording(rec, cfg)
    del rec
    header = save_recording(out, args.out)
    m.stage("preprocess", t0)
    for p in recording_files(header):
        m.add_output(p)
    m.write(Path(header).parent)
    return m


def model_name(patient_id: str, image_type, X_min: float) -> str:
    return f"{patient_id}_{ImageType.parse(image_type).label}_{X_min:g}.model"


# state shared with forked training workers
_WORKER: dict = {}


def _train_one(job):
    it, X = job
    w = _WORKER
    t0 = time.perf_counter()
    net, history, ds = train_network(w["signal"], w["rec"], w["plan"], it, X, w["cfg"], w["stats"])
    meta = {
        "patient_id": w["rec"].patient_id,
        "image_type": it.label,
        "X_min": X,
        "norm_stats": w["stats"].to_dict(),
        "norm_mode": w["cfg"].norm_mode,
        "guard_minutes": w["cfg"].guard_minutes,
        "max_per_class": w["cfg"].max_per_class,
        "train": asdict(w["cfg"].train),
        "recording_digest": w["digest"],
        "train_seizures": list(w["plan"].train_seizure_indices),
        "test_seizures": list(w["plan"].test_seizure_indices),
        "class_counts": ds.class_counts,
        "final_loss": history.loss[-1],
    }
    path = save_model(net, Path(w["models_dir"]) / model_name(w["rec"].patient_id, it, X), meta)
    return str(path), time.perf_counter() - t0


def cmd_train(args) -> RunManifest:
    m = _manifest(args)
    m.seeds["train"] = args.seed
    rec = _load_recording(args.input)
    for p in recording_files(args.input):
        m.add_input(p)
    t0 = time.perf_counter()
    plan = split_seizures(rec)
    cfg = RunConfig(TrainConfig(args.epochs, args.batch_size, args.learning_rate, args.momentum, args.seed),
                    args.guard_min, args.norm_mode, args.max_per_class)
    stats = norm_stats_for(rec, plan, cfg.norm_mode)
    signal = normalize(rec.samples, stats)
    m.stage("normalize", t0)
    _WORKER.update(signal=signal, rec=rec, plan=plan, cfg=cfg, stats=stats, digest=recording_digest(args.input),
                   models_dir=args.models_dir)
    Path(args.models_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(it, X) for it in args.image_type for X in args.preictal_min]
    try:
        if args.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(min(args.workers, len(jobs)), mp_context=get_context("fork")) as ex:
                done = list(ex.map(_train_one, jobs))
        else:
            done = [_train_one(j) for j in jobs]
    finally:
        _WORKER.clear()
    for (it, X), (path, secs) in zip(jobs, done):
        m.timings_s[f"train_{it.label}_{X:g}"] = round(secs, 3)
        m.add_output(path)
    m.write(args.models_dir)
    return m


def _load_models(models_dir, patient_id, grid: SweepGrid, digest: str):
    networks, stats = {}, None
    missing = [model_name(patient_id, it, X) for it, X in grid.networks
               if not (Path(models_dir) / model_name(patient_id, it, X)).exists()]
    if missing:
        raise MissingNetworkError(f"missing model file(s) in {models_dir}: {', '.join(missing)}")
    meta0 = None
    for it, X in grid.networks:
        path = Path(models_dir) / model_name(patient_id, it, X)
        net, meta = load_model(path, it)
        if meta.get("recording_digest") != digest:
            raise DataError(f"{path} was trained on a different recording (hash mismatch)")
        s = NormStats.from_dict(meta["norm_stats"])
        if stats is not None and s != stats:
            raise DataError(f"{path} uses different normalization statistics from the other models")
        stats, meta0 = s, meta
        networks[(it, X)] = net
    return networks, stats, meta0


def _write_streams(streams: list[ProbStream], path) -> Path:
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image_type", "X_min", "seizure_index", "segment_start_s", "segment_end_s", "onset_s",
                        "t_s", "raw_p"])
            for st in streams:
                sg = st.segment
                for t, p in zip(st.t_s, st.raw_p):
                    w.writerow([st.image_type.label, repr(float(st.X_min)), sg.seizure_index, repr(sg.start_s),
                                repr(sg.end_s), repr(sg.onset_s), repr(float(t)), repr(float(p))])
    return Path(path)


def _read_streams(path) -> list[ProbStream]:
    groups: dict[tuple, dict] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["image_type"], float(row["X_min"]), int(row["seizure_index"]))
            g = groups.setdefault(key, {"seg": EvalSegment(float(row["segment_start_s"]), float(row["segment_end_s"]),
                                                           float(row["onset_s"]), key[2]), "t": [], "p": []})
            g["t"].append(float(row["t_s"]))
            g["p"].append(float(row["raw_p"]))
    return [ProbStream(ImageType.parse(k[0]), k[1], g["seg"], np.array(g["t"]), np.array(g["p"]))
            for k, g in groups.items()]


def cmd_risk(args) -> RunManifest:
    m = _manifest(args)
    rec = _load_recording(args.input)
    for p in recording_files(args.input):
        m.add_input(p)
    m.add_input(args.model)
    if not Path(args.model).exists():
        raise DataError(f"missing model {args.model}")
    net, meta = load_model(args.model)
    if meta.get("recording_digest") != recording_digest(args.input):
        raise DataError(f"{args.model} was trained on a different recording (hash mismatch)")
    it = ImageType.parse(meta["image_type"])
    X = float(meta["X_min"])
    params = ForecastParams(args.Z, args.Y, X)
    t0 = time.perf_counter()
    signal = normalize(rec.samples, NormStats.from_dict(meta["norm_stats"]))
    out = Path(args.out_dir)
    for seg in held_out_segments(rec, split_seizures(rec)):
        st = compute_stream(net, signal, seg, it, X, int(rec.fs))
        tl, alarms = run_forecaster(st.raw_p, params, st.t_s, st.smoothed)
        stem = f"{it.label}_{X:g}_s{seg.seizure_index}"
        m.add_output(write_timeline_csv(tl, out / f"timeline_{stem}.csv"))
        m.add_output(write_alarms_csv(alarms, out / f"alarms_{stem}.csv"))
    m.stage("risk", t0)
    m.write(out)
    return m


def cmd_sweep(args) -> RunManifest:
    m = _manifest(args)
    rec = _load_recording(args.input)
    for p in recording_files(args.input):
        m.add_input(p)
    patient = args.patient or rec.patient_id
    kw = {}
    if args.Z_values is not None:
        kw["Z_values"] = args.Z_values
    if args.Y_values is not None:
        kw["Y_values"] = args.Y_values
    grid = SweepGrid(image_types=args.image_type, X_values=args.preictal_min, **kw)
    networks, stats, _ = _load_models(args.models_dir, patient, grid, recording_digest(args.input))
    for it, X in grid.networks:
        m.add_input(Path(args.models_dir) / model_name(patient, it, X))
    t0 = time.perf_counter()
    signal = normalize(rec.samples, stats)
    segments = held_out_segments(rec, split_seizures(rec))
    streams = [compute_stream(networks[(it, X)], signal, seg, it, X, int(rec.fs))
               for it, X in grid.networks for seg in segments]
    del signal
    m.stage("inference", t0)
    t0 = time.perf_counter()
    results = evaluate_streams(streams, grid, rec.duration_s, rec.annotations, args.fpr_mode, args.guard_min)
    m.stage("evaluate", t0)
    out = Path(args.out_dir)
    m.add_output(write_results_csv(results, out / "results.csv"))
    m.add_output(_write_streams(streams, out / "streams.csv"))
    info = {"patient_id": patient, "fpr_mode": args.fpr_mode, "guard_minutes": args.guard_min,
            "n_results": len(results)}
    with atomic_path(out / "sweep.json") as tmp:
        Path(tmp).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    m.add_output(out / "sweep.json")
    m.write(out)
    log.info("%d results", len(results))
    return m


def cmd_report(args) -> RunManifest:
    m = _manifest(args)
    sweep_dir = Path(args.sweep_dir)
    for name in ("results.csv", "sweep.json", "streams.csv"):
        if not (sweep_dir / name).exists():
            raise DataError(f"missing sweep output {sweep_dir / name}")
        m.add_input(sweep_dir / name)
    info = json.loads((sweep_dir / "sweep.json").read_text())
    results = read_results_csv(sweep_dir / "results.csv")
    best = select_best(results)
    streams = _read_streams(sweep_dir / "streams.csv")
    # the results file carries no alarms; re-derive the best cell's for best.json
    params = ForecastParams(best.Z, best.Y, best.X_min)
    alarms = []
    for st in sorted(streams, key=lambda s: s.segment.onset_s):
        if st.image_type.label == best.image_type and st.X_min == best.X_min:
            _, a = run_forecaster(st.raw_p, params, st.t_s, st.smoothed)
            alarms += classify_alarms(a, [st.segment.onset_s]).alarms
    best = replace(best, alarms=tuple(alarms))
    t0 = time.perf_counter()
    paths = report(results, best, args.out_dir, args.patient or info["patient_id"], best_timelines(streams, best))
    m.stage("report", t0)
    for p in paths.values():
        m.add_output(p)
    m.write(args.out_dir)
    return m


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "risk": cmd_risk,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = apply_config(parser, args)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"eegrisk {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"eegrisk {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"eegrisk {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
