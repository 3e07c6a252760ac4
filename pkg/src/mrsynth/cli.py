"""Config-driven command-line front end.

Every command reads flags (optionally seeded from a JSON config file; flags
win), validates them, runs the mapped operation, and writes one output bundle
atomically: the bundle is assembled in a temporary sibling directory and
renamed into place, so partial outputs are never left behind.  The resolved
run configuration is stored as ``run_config.json`` beside the outputs and a
one-line summary with the bundle's content hash goes to stdout.

Exit codes: 0 success, 1 domain error (the error name is printed), 2 usage
error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import datasets, quantify
from .analytic import dipole_field, field_ppm_to_hz
from .bloch import run_sequence
from .errors import InvalidArgumentError, SynthError
from .phantoms import random_polynomial_field, random_shapes_phantom
from .sequences import build_multi_echo, build_spin_echo, parse_sequence, serialize_sequence


def _pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return float(parts[0]), float(parts[1])


def _int_pair(text: str) -> tuple[int, int]:
    lo, hi = _pair(text)
    return int(lo), int(hi)


def _floats(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p]


def _ints(text: str) -> list[int]:
    return [int(p) for p in text.split(",") if p]


def _grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected START:STEP:STOP, got {text!r}")
    start, step, stop = (float(p) for p in parts)
    if step <= 0:
        raise argparse.ArgumentTypeError("grid step must be > 0")
    return list(np.arange(start, stop + step / 2, step))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrsynth",
                                     description="physics-driven synthetic MR data engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default 1)")
        p.add_argument("--config", type=str, default=None, help="JSON config file; flags override it")
        p.add_argument("--out", type=str, default=None, help="output bundle directory")

    def phantom_flags(p):
        p.add_argument("--width", type=int, default=None)
        p.add_argument("--height", type=int, default=None)
        p.add_argument("--shapes", type=int, default=None)
        p.add_argument("--voxel-size", type=float, default=None)
        p.add_argument("--pd-range", type=_pair, default=None)
        p.add_argument("--t1-range", type=_pair, default=None)
        p.add_argument("--t2-range", type=_pair, default=None)
        p.add_argument("--off-resonance-range", type=_pair, default=None)
        p.add_argument("--chi-range", type=_pair, default=None)

    def sequence_flags(p):
        p.add_argument("--sequence", type=str, default=None, help="sequence file to load")
        p.add_argument("--te", type=float, default=None, help="spin-echo echo time, ms")
        p.add_argument("--echo-times", type=_floats, default=None, help="multi-echo times, ms CSV")
        p.add_argument("--tr", type=float, default=None, help="repetition time, ms")
        p.add_argument("--reps", type=int, default=None, help="repetitions (default 1)")

    p = sub.add_parser("phantom", help="generate a random-shapes parametric phantom")
    common(p)
    phantom_flags(p)

    p = sub.add_parser("simulate", help="run a pulse sequence over a phantom")
    common(p)
    phantom_flags(p)
    sequence_flags(p)
    p.add_argument("--phantom", type=str, default=None, help="existing phantom bundle directory")
    p.add_argument("--mode", choices=["voxelwise", "kspace"], default=None)
    p.add_argument("--isochromats", type=int, default=None)
    p.add_argument("--isochromat-spread-hz", type=float, default=None)
    p.add_argument("--b1-degree", type=int, default=None, help="generate a polynomial B1 map")
    p.add_argument("--b1-range", type=_pair, default=None)

    p = sub.add_parser("mrs", help="generate paired spectra-reconstruction training data")
    common(p)
    p.add_argument("--pairs", type=int, default=None)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--dwell", type=float, default=None, help="seconds")
    p.add_argument("--rate", type=float, default=None, help="sampling rate in (0, 1]")
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--peaks", type=_int_pair, default=None, help="peak count range LO,HI")
    p.add_argument("--amp", type=_pair, default=None)
    p.add_argument("--freq", type=_pair, default=None)
    p.add_argument("--t2", type=_pair, default=None, help="seconds")

    p = sub.add_parser("qsm-forward", help="dipole forward model on a susceptibility map")
    common(p)
    phantom_flags(p)
    p.add_argument("--phantom", type=str, default=None, help="phantom bundle with a chi channel")
    p.add_argument("--chi-raw", type=str, default=None, help="raw float32 susceptibility file")
    p.add_argument("--chi-shape", type=_ints, default=None, help="shape of --chi-raw, CSV")
    p.add_argument("--b0", type=float, default=None, help="tesla (default 3.0)")

    p = sub.add_parser("dataset", help="generate paired parameter-mapping training data")
    common(p)
    phantom_flags(p)
    sequence_flags(p)
    p.add_argument("--phantoms", type=int, default=None, help="number of phantoms")
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--b1-degree", type=int, default=None)
    p.add_argument("--b1-range", type=_pair, default=None)

    p = sub.add_parser("dict-match", help="dictionary matching over a (t1, t2) grid")
    common(p)
    sequence_flags(p)
    p.add_argument("--signals", type=str, default=None, help="bundle with signals to match")
    p.add_argument("--field", type=str, default=None, help="signal field name (default echoes)")
    p.add_argument("--t1-grid", type=_grid, default=None, help="START:STEP:STOP, ms")
    p.add_argument("--t2-grid", type=_grid, default=None, help="START:STEP:STOP, ms")

    p = sub.add_parser("train", help="train the minimal regressor on a bundle")
    common(p)
    p.add_argument("--data", type=str, default=None, help="training bundle directory")
    p.add_argument("--input-field", type=str, default=None)
    p.add_argument("--label-field", type=str, default=None)
    p.add_argument("--hidden", type=_ints, default=None, help="hidden layer sizes, CSV")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)

    return parser


_DEFAULTS = {
    "seed": 0, "threads": 1,
    "width": 64, "height": 64, "shapes": 12, "voxel_size": 1.0,
    "pd_range": (0.0, 1.0), "t1_range": (200.0, 2000.0), "t2_range": (20.0, 700.0),
    "off_resonance_range": None, "chi_range": None,
    "mode": "voxelwise", "isochromats": 1, "isochromat_spread_hz": 0.0,
    "reps": 1, "b1_range": (0.8, 1.2),
    "pairs": 1000, "points": 256, "dwell": 1e-3, "rate": 0.25, "snr_db": math.inf,
    "peaks": (1, 10), "amp": (0.05, 1.0), "freq": (0.01, 0.99), "t2": (0.02, 0.2),
    "b0": 3.0,
    "phantoms": 8,
    "field": "echoes",
    "input_field": "echoes", "label_field": "t2",
    "hidden": [32], "lr": 0.05, "epochs": 50, "batch": 32,
}


def _resolve(args: argparse.Namespace) -> dict:
    """Merge flag values over config-file values over built-in defaults."""
    merged = dict(vars(args))
    config = {}
    if merged.get("config"):
        with open(merged["config"], "r", encoding="utf-8") as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise InvalidArgumentError("config file must hold a JSON object")
    for key, value in merged.items():
        if value is None:
            if key in config:
                cfg_val = config[key]
                merged[key] = tuple(cfg_val) if isinstance(cfg_val, list) and key.endswith("_range") else cfg_val
            elif key in _DEFAULTS:
                merged[key] = _DEFAULTS[key]
    return merged


def _param_ranges(opts: dict) -> dict:
    ranges = {"pd": tuple(opts["pd_range"]), "t1": tuple(opts["t1_range"]), "t2": tuple(opts["t2_range"])}
    if opts.get("off_resonance_range"):
        ranges["off_resonance"] = tuple(opts["off_resonance_range"])
    if opts.get("chi_range"):
        ranges["chi"] = tuple(opts["chi_range"])
    return ranges


def _resolve_sequence(opts: dict, default=None):
    if opts.get("sequence"):
        return parse_sequence(Path(opts["sequence"]).read_text(encoding="utf-8"))
    reps = opts.get("reps") or 1
    if opts.get("echo_times"):
        if opts.get("tr") is None:
            raise InvalidArgumentError("--echo-times requires --tr")
        return build_multi_echo(opts["echo_times"], opts["tr"], n_repetitions=reps)
    if opts.get("te") is not None:
        if opts.get("tr") is None:
            raise InvalidArgumentError("--te requires --tr")
        return build_spin_echo(opts["te"], opts["tr"], n_repetitions=reps)
    if default is not None:
        return default
    raise InvalidArgumentError("no sequence given: use --sequence, --te/--tr, or --echo-times/--tr")


def _load_or_make_phantom(opts: dict):
    if opts.get("phantom"):
        return datasets.load_phantom(opts["phantom"])
    return random_shapes_phantom(opts["width"], opts["height"], opts["shapes"],
                                 param_ranges=_param_ranges(opts), seed=opts["seed"],
                                 voxel_size=opts["voxel_size"])


# ---------------------------------------------------------------------------
# command bodies; each returns a DatasetBundle already written into out_dir

def _cmd_phantom(opts: dict, out_dir: Path):
    phantom = random_shapes_phantom(opts["width"], opts["height"], opts["shapes"],
                                    param_ranges=_param_ranges(opts), seed=opts["seed"],
                                    voxel_size=opts["voxel_size"])
    return datasets.save_phantom(phantom, out_dir, seed=opts["seed"],
                                 extra={"n_shapes": opts["shapes"]})


def _cmd_simulate(opts: dict, out_dir: Path):
    phantom = _load_or_make_phantom(opts)
    seq = _resolve_sequence(opts)
    b1_map = None
    if opts.get("b1_degree") is not None:
        b1_map = random_polynomial_field(phantom.width, phantom.height, opts["b1_degree"],
                                         tuple(opts["b1_range"]), seed=opts["seed"])
    record = run_sequence(phantom, seq, b1_map=b1_map, mode=opts["mode"],
                          isochromats_per_voxel=opts["isochromats"],
                          isochromat_spread_hz=opts["isochromat_spread_hz"])
    fields = {"samples": record.samples, "sample_times": record.sample_times}
    if record.images is not None:
        fields["echoes"] = record.images
    if b1_map is not None:
        fields["b1"] = b1_map.values
    config = {"mode": opts["mode"], "sequence": serialize_sequence(seq),
              "isochromats": opts["isochromats"],
              "isochromat_spread_hz": opts["isochromat_spread_hz"],
              "width": phantom.width, "height": phantom.height}
    bundle = datasets.bundle_from_samples("simulation", opts["seed"], config,
                                          [("signal", fields, {})])
    datasets.write_bundle(bundle, out_dir)
    return bundle


def _cmd_mrs(opts: dict, out_dir: Path):
    config = datasets.MrsPairsConfig(
        n_pairs=opts["pairs"], peak_count_range=tuple(opts["peaks"]),
        amp_range=tuple(opts["amp"]), freq_range=tuple(opts["freq"]),
        t2_range=tuple(opts["t2"]), n_points=opts["points"], dwell=opts["dwell"],
        rate=opts["rate"], snr_db=opts["snr_db"])
    bundle = datasets.make_mrs_pairs(config, seed=opts["seed"], threads=opts["threads"])
    datasets.write_bundle(bundle, out_dir)
    return bundle


def _cmd_qsm_forward(opts: dict, out_dir: Path):
    if opts.get("chi_raw"):
        if not opts.get("chi_shape"):
            raise InvalidArgumentError("--chi-raw requires --chi-shape")
        chi = np.fromfile(opts["chi_raw"], dtype="<f4").astype(np.float64)
        chi = chi.reshape(opts["chi_shape"])
    else:
        if not opts.get("chi_range"):
            opts = {**opts, "chi_range": (-0.2, 0.2)}
        phantom = _load_or_make_phantom(opts)
        chi = phantom.chi
    delta_ppm = dipole_field(chi, b0=opts["b0"])
    fields = {"delta_ppm": delta_ppm, "delta_hz": field_ppm_to_hz(delta_ppm, opts["b0"])}
    config = {"b0": opts["b0"], "shape": list(chi.shape)}
    bundle = datasets.bundle_from_samples("qsm_forward", opts["seed"], config,
                                          [("field", fields, {})])
    datasets.write_bundle(bundle, out_dir)
    return bundle


def _cmd_dataset(opts: dict, out_dir: Path):
    seq = _resolve_sequence(opts)
    phantom_cfg = datasets.PhantomConfig(width=opts["width"], height=opts["height"],
                                         n_shapes=opts["shapes"],
                                         param_ranges=_param_ranges(opts),
                                         voxel_size=opts["voxel_size"])
    b1_cfg = None
    if opts.get("b1_degree") is not None:
        b1_cfg = datasets.B1Config(degree=opts["b1_degree"], out_range=tuple(opts["b1_range"]))
    bundle = datasets.make_mapping_pairs(opts["phantoms"], phantom_cfg, seq, b1_config=b1_cfg,
                                         snr_db=opts["snr_db"], seed=opts["seed"],
                                         threads=opts["threads"])
    datasets.write_bundle(bundle, out_dir)
    return bundle


def _cmd_dict_match(opts: dict, out_dir: Path):
    if not opts.get("signals"):
        raise InvalidArgumentError("dict-match requires --signals")
    if not opts.get("t1_grid") or not opts.get("t2_grid"):
        raise InvalidArgumentError("dict-match requires --t1-grid and --t2-grid")
    seq = _resolve_sequence(opts, default=quantify.saturation_recovery_train())
    dictionary = quantify.build_dictionary(opts["t1_grid"], opts["t2_grid"], seq)
    source = datasets.read_bundle(opts["signals"])

    results = []
    for entry in source.manifest.samples:
        fields = {**entry.inputs, **entry.labels}
        if opts["field"] not in fields:
            raise InvalidArgumentError(
                f"sample {entry.id} has no field {opts['field']!r}; available: {sorted(fields)}")
        arr = source.arrays[entry.id][opts["field"]]
        if arr.ndim == 1:
            signals, out_shape = np.abs(arr)[None, :], ()
        elif arr.ndim == 2:
            signals, out_shape = np.abs(arr), (arr.shape[0],)
        else:
            # voxelwise echo stack (n_echoes, h, w) -> one signal per voxel
            signals = np.abs(arr).reshape(arr.shape[0], -1).T
            out_shape = arr.shape[1:]
        # background voxels carry no signal; report zeros there
        t1 = np.zeros(len(signals))
        t2 = np.zeros(len(signals))
        corr = np.zeros(len(signals))
        live = np.linalg.norm(signals, axis=1) > 0
        if np.any(live):
            t1[live], t2[live], corr[live] = quantify.dictionary_match_batch(
                signals[live], dictionary)
        results.append((entry.id, {
            "t1": t1.reshape(out_shape), "t2": t2.reshape(out_shape),
            "correlation": corr.reshape(out_shape)}, {}))
    config = {"t1_grid": list(opts["t1_grid"]), "t2_grid": list(opts["t2_grid"]),
              "sequence": serialize_sequence(seq), "source": str(opts["signals"]),
              "field": opts["field"]}
    bundle = datasets.bundle_from_samples("dict_match", opts["seed"], config, results)
    datasets.write_bundle(bundle, out_dir)
    return bundle


def _flatten_for_training(arr: np.ndarray) -> np.ndarray:
    flat = arr.reshape(-1)
    if np.iscomplexobj(flat):
        return np.concatenate([flat.real, flat.imag]).astype(np.float64)
    return flat.astype(np.float64)


def _cmd_train(opts: dict, out_dir: Path):
    if not opts.get("data"):
        raise InvalidArgumentError("train requires --data")
    source = datasets.read_bundle(opts["data"])
    xs, ys = [], []
    for entry in source.manifest.samples:
        fields = {**entry.inputs, **entry.labels}
        for name in (opts["input_field"], opts["label_field"]):
            if name not in fields:
                raise InvalidArgumentError(
                    f"sample {entry.id} has no field {name!r}; available: {sorted(fields)}")
        xs.append(_flatten_for_training(source.arrays[entry.id][opts["input_field"]]))
        ys.append(_flatten_for_training(source.arrays[entry.id][opts["label_field"]]))
    x = np.stack(xs)
    y = np.stack(ys)
    layer_sizes = (x.shape[1], *opts["hidden"], y.shape[1])
    model, trace = quantify.mlp_train(x, y, layer_sizes, opts["lr"], opts["epochs"],
                                      opts["batch"], seed=opts["seed"])
    fields = {}
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        fields[f"layer{k}.weight"] = w
        fields[f"layer{k}.bias"] = b
    fields["loss_trace"] = trace
    config = {"layer_sizes": list(model.layer_sizes), "activation": model.activation,
              "input_field": opts["input_field"], "label_field": opts["label_field"],
              "final_loss": float(trace[-1])}
    bundle = datasets.bundle_from_samples("mlp_model", opts["seed"], config, [("model", fields, {})])
    datasets.write_bundle(bundle, out_dir)
    return bundle


_COMMANDS = {
    "phantom": _cmd_phantom,
    "simulate": _cmd_simulate,
    "mrs": _cmd_mrs,
    "qsm-forward": _cmd_qsm_forward,
    "dataset": _cmd_dataset,
    "dict-match": _cmd_dict_match,
    "train": _cmd_train,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _resolve(args)
        if not opts.get("out"):
            raise InvalidArgumentError("--out is required")
        out_dir = Path(opts["out"])
        tmp_dir = out_dir.parent / f"{out_dir.name}.tmp-{os.getpid()}"
        if tmp_dir.exists():
            shutil.rmtree(tmp_dir)
        try:
            bundle = _COMMANDS[args.command](opts, tmp_dir)
            run_config = {"command": args.command, "out": str(out_dir),
                          "params": {k: v for k, v in sorted(opts.items())
                                     if k not in ("config", "out") and _jsonable(v)}}
            (tmp_dir / "run_config.json").write_text(
                json.dumps(run_config, indent=1, sort_keys=True, default=str) + "\n",
                encoding="utf-8")
            if out_dir.exists():
                shutil.rmtree(out_dir)
            os.replace(tmp_dir, out_dir)
        finally:
            if tmp_dir.exists():
                shutil.rmtree(tmp_dir)
        print(f"{args.command}: wrote {out_dir} samples={bundle.n_samples} "
              f"content_hash={bundle.manifest.content_hash}")
        return 0
    except SynthError as exc:
        print(f"error[{exc.name}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


def _jsonable(value) -> bool:
    try:
        json.dumps(value)
        return True
    except (TypeError, ValueError):
        return False


if __name__ == "__main__":
    sys.exit(main())
