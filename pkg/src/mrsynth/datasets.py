"""Paired training corpora and their bit-exact on-disk bundle format.

A bundle is a directory holding one ``manifest`` file (JSON, UTF-8) plus one
headerless raw binary file per array: little-endian IEEE-754 float32,
row-major; complex values are complex64 stored as interleaved (real, imag)
float32 pairs.  The manifest names every file with its shape and dtype and
carries a sha256 digest over all payload bytes in sample order, so
``read_bundle(write_bundle(b))`` round-trips byte-for-byte and two runs with
the same seed produce equal hashes.

Labels are always computed before any degradation operator; noise and
undersampling only ever touch inputs.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analytic import Peak, PeakSet, fid_to_spectrum, mrs_fid
from .bloch import Constants, run_sequence
from .degrade import add_noise, undersample
from .errors import (
    CorruptionError,
    IntegrityError,
    InvalidArgumentError,
    InvalidRangeError,
    VersionError,
)
from .phantoms import FieldMap, PhantomMap, random_polynomial_field, random_shapes_phantom
from .sequences import Sequence

FORMAT_VERSION = 1
HASH_ALGORITHM = "sha256"
MANIFEST_NAME = "manifest"

_DTYPES = {"float32": np.dtype("<f4"), "complex64": np.dtype("<c8")}


@dataclass
class SampleEntry:
    id: str
    inputs: dict[str, str]       # field -> file name
    labels: dict[str, str]
    shapes: dict[str, list[int]]
    dtypes: dict[str, str]

    def fields_in_hash_order(self):
        for name in sorted(self.inputs):
            yield name, self.inputs[name]
        for name in sorted(self.labels):
            yield name, self.labels[name]


@dataclass
class Manifest:
    format_version: int
    kind: str
    seed: int
    generator_config: dict
    samples: list[SampleEntry]
    content_hash: str
    hash_algorithm: str = HASH_ALGORITHM
    byte_order: str = "little"

    def to_json(self) -> str:
        doc = {
            "format_version": self.format_version,
            "kind": self.kind,
            "seed": self.seed,
            "generator_config": self.generator_config,
            "hash_algorithm": self.hash_algorithm,
            "byte_order": self.byte_order,
            "content_hash": self.content_hash,
            "samples": [asdict(s) for s in self.samples],
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        doc = json.loads(text)
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise VersionError(f"unknown format_version {version!r}, expected {FORMAT_VERSION}")
        samples = [SampleEntry(**s) for s in doc["samples"]]
        return cls(
            format_version=version,
            kind=doc.get("kind", ""),
            seed=doc.get("seed", 0),
            generator_config=doc.get("generator_config", {}),
            samples=samples,
            content_hash=doc.get("content_hash", ""),
            hash_algorithm=doc.get("hash_algorithm", HASH_ALGORITHM),
            byte_order=doc.get("byte_order", "little"),
        )


@dataclass
class DatasetBundle:
    manifest: Manifest
    arrays: dict[str, dict[str, np.ndarray]]  # sample id -> field -> array

    def array(self, sample_id: str, fld: str) -> np.ndarray:
        return self.arrays[sample_id][fld]

    @property
    def n_samples(self) -> int:
        return len(self.manifest.samples)


def _to_disk_dtype(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        return np.ascontiguousarray(arr, dtype=_DTYPES["complex64"])
    return np.ascontiguousarray(arr, dtype=_DTYPES["float32"])


def _dtype_name(arr: np.ndarray) -> str:
    return "complex64" if np.iscomplexobj(arr) else "float32"


def bundle_from_samples(
    kind: str,
    seed: int,
    generator_config: dict,
    samples: list[tuple[str, dict[str, np.ndarray], dict[str, np.ndarray]]],
) -> DatasetBundle:
    """Assemble a bundle from (id, inputs, labels) triples, hashing payloads in order."""
    digest = hashlib.sha256()
    entries: list[SampleEntry] = []
    arrays: dict[str, dict[str, np.ndarray]] = {}
    for sample_id, inputs, labels in samples:
        overlap = set(inputs) & set(labels)
        if overlap:
            raise InvalidArgumentError(f"sample {sample_id}: field(s) {sorted(overlap)} in both inputs and labels")
        stored: dict[str, np.ndarray] = {}
        shapes: dict[str, list[int]] = {}
        dtypes: dict[str, str] = {}
        for fld in (*inputs, *labels):
            arr = _to_disk_dtype((inputs | labels)[fld])
            stored[fld] = arr
            shapes[fld] = list(arr.shape)
            dtypes[fld] = _dtype_name(arr)
        entry = SampleEntry(
            id=sample_id,
            inputs={f: f"{sample_id}.{f}.raw" for f in inputs},
            labels={f: f"{sample_id}.{f}.raw" for f in labels},
            shapes=shapes,
            dtypes=dtypes,
        )
        for fld, _ in entry.fields_in_hash_order():
            digest.update(stored[fld].tobytes())
        entries.append(entry)
        arrays[sample_id] = stored
    manifest = Manifest(
        format_version=FORMAT_VERSION,
        kind=kind,
        seed=seed,
        generator_config=generator_config,
        samples=entries,
        content_hash=digest.hexdigest(),
    )
    return DatasetBundle(manifest=manifest, arrays=arrays)


def write_bundle(bundle: DatasetBundle, directory) -> None:
    """Write payload files then the manifest into ``directory`` (created if missing)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for entry in bundle.manifest.samples:
        files = {**entry.inputs, **entry.labels}
        for fld, fname in files.items():
            (directory / fname).write_bytes(bundle.arrays[entry.id][fld].tobytes())
    (directory / MANIFEST_NAME).write_text(bundle.manifest.to_json(), encoding="utf-8")


def read_bundle(directory) -> DatasetBundle:
    """Read and verify a bundle: version gate, per-file shape/size checks, content hash."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise IntegrityError(f"missing manifest in {directory}")
    manifest = Manifest.from_json(manifest_path.read_text(encoding="utf-8"))

    digest = hashlib.sha256()
    arrays: dict[str, dict[str, np.ndarray]] = {}
    for entry in manifest.samples:
        stored: dict[str, np.ndarray] = {}
        for fld, fname in entry.fields_in_hash_order():
            path = directory / fname
            if not path.is_file():
                raise IntegrityError(f"missing payload file {fname}")
            dtype = _DTYPES.get(entry.dtypes[fld])
            if dtype is None:
                raise CorruptionError(f"file {fname}: unknown dtype {entry.dtypes[fld]!r}")
            raw = path.read_bytes()
            expected = int(np.prod(entry.shapes[fld])) * dtype.itemsize
            if len(raw) != expected:
                raise CorruptionError(f"file {fname}: {len(raw)} bytes on disk, expected {expected}")
            digest.update(raw)
            stored[fld] = np.frombuffer(raw, dtype=dtype).reshape(entry.shapes[fld])
        arrays[entry.id] = stored
    if digest.hexdigest() != manifest.content_hash:
        raise CorruptionError(
            f"content_hash mismatch: manifest says {manifest.content_hash}, payload is {digest.hexdigest()}")
    return DatasetBundle(manifest=manifest, arrays=arrays)


# ---------------------------------------------------------------------------
# phantom / field map bundles (single-sample payloads)

_PHANTOM_FIELDS = ("pd", "t1", "t2", "off_resonance", "chi", "region_label")


def save_phantom(phantom: PhantomMap, directory, seed: int = 0, extra: dict | None = None) -> DatasetBundle:
    config = {"width": phantom.width, "height": phantom.height, "voxel_size": phantom.voxel_size}
    config.update(extra or {})
    channels = {name: getattr(phantom, name) for name in _PHANTOM_FIELDS}
    bundle = bundle_from_samples("phantom", seed, config, [("phantom", channels, {})])
    write_bundle(bundle, directory)
    return bundle


def load_phantom(directory) -> PhantomMap:
    bundle = read_bundle(directory)
    cfg = bundle.manifest.generator_config
    arrays = bundle.arrays["phantom"]
    return PhantomMap(
        width=cfg["width"], height=cfg["height"], voxel_size=cfg.get("voxel_size", 1.0),
        pd=arrays["pd"], t1=arrays["t1"], t2=arrays["t2"],
        off_resonance=arrays["off_resonance"], chi=arrays["chi"],
        region_label=np.rint(arrays["region_label"]).astype(np.int32),
    )


def save_field(field_map: FieldMap, directory, seed: int = 0) -> DatasetBundle:
    config = {"width": field_map.width, "height": field_map.height, "units": field_map.units}
    bundle = bundle_from_samples("field", seed, config, [("field", {"values": field_map.values}, {})])
    write_bundle(bundle, directory)
    return bundle


def load_field(directory) -> FieldMap:
    bundle = read_bundle(directory)
    cfg = bundle.manifest.generator_config
    return FieldMap(width=cfg["width"], height=cfg["height"],
                    values=bundle.arrays["field"]["values"], units=cfg.get("units", "unitless"))


# ---------------------------------------------------------------------------
# MRS reconstruction pairs: undersampled FID in, fully sampled spectrum out

@dataclass(frozen=True)
class MrsPairsConfig:
    n_pairs: int
    peak_count_range: tuple[int, int] = (1, 10)
    amp_range: tuple[float, float] = (0.05, 1.0)
    freq_range: tuple[float, float] = (0.01, 0.99)
    t2_range: tuple[float, float] = (0.02, 0.2)   # seconds
    n_points: int = 256
    dwell: float = 1e-3                            # seconds
    rate: float = 0.25
    snr_db: float = math.inf

    def __post_init__(self):
        if self.n_pairs < 1:
            raise InvalidArgumentError(f"n_pairs must be >= 1, got {self.n_pairs}")
        for name, (lo, hi) in (("peak_count_range", self.peak_count_range),
                               ("amp_range", self.amp_range),
                               ("freq_range", self.freq_range),
                               ("t2_range", self.t2_range)):
            if lo > hi:
                raise InvalidRangeError(f"{name}: lo={lo} > hi={hi}")
        if self.peak_count_range[0] < 1:
            raise InvalidRangeError("peak counts must be >= 1")
        if self.amp_range[0] <= 0:
            raise InvalidRangeError("amplitudes must be > 0")
        if not (0.0 <= self.freq_range[0] and self.freq_range[1] < 1.0):
            raise InvalidRangeError("frequencies must lie in [0, 1)")
        if self.t2_range[0] <= 0:
            raise InvalidRangeError("t2 values must be > 0")
        if not 0.0 < self.rate <= 1.0:
            raise InvalidRangeError(f"rate must lie in (0, 1], got {self.rate}")


def mrs_sample_params(config: MrsPairsConfig, seed: int, index: int) -> tuple[PeakSet, int, int]:
    """Regenerate the exact random draw for one sample id: (peaks, noise_seed, mask_seed)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, index)))
    lo, hi = config.peak_count_range
    count = int(rng.integers(lo, hi + 1))
    amps = rng.uniform(*config.amp_range, size=count)
    freqs = rng.uniform(*config.freq_range, size=count)
    phases = rng.uniform(0.0, 2 * np.pi, size=count)
    t2s = rng.uniform(*config.t2_range, size=count)
    peaks = PeakSet(tuple(Peak(amplitude=a, frequency=f, phase=p, t2=s)
                          for a, f, p, s in zip(amps, freqs, phases, t2s)))
    noise_seed = int(rng.integers(0, 2 ** 63))
    mask_seed = int(rng.integers(0, 2 ** 63))
    return peaks, noise_seed, mask_seed


def _mrs_one(config: MrsPairsConfig, seed: int, index: int):
    peaks, noise_seed, mask_seed = mrs_sample_params(config, seed, index)
    fid = mrs_fid(peaks, config.n_points, config.dwell)
    label = fid_to_spectrum(fid).values
    measured = add_noise(fid, config.snr_db, seed=noise_seed)
    mask, zero_filled = undersample(measured, config.rate, seed=mask_seed)
    inputs = {"fid": zero_filled, "mask": mask.kept.astype(np.float32)}
    labels = {"spectrum": label}
    return f"{index:06d}", inputs, labels


def make_mrs_pairs(config: MrsPairsConfig, seed: int = 0, threads: int = 1) -> DatasetBundle:
    """Paired corpus for spectrum reconstruction: undersampled noisy FID -> clean spectrum."""
    ids = range(config.n_pairs)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(lambda i: _mrs_one(config, seed, i), ids))
    else:
        samples = [_mrs_one(config, seed, i) for i in ids]
    gen_cfg = {"generator": "mrs_pairs", **asdict(config)}
    return bundle_from_samples("mrs_pairs", seed, gen_cfg, samples)


# ---------------------------------------------------------------------------
# quantitative mapping pairs: echo-train images in, parameter maps out

@dataclass(frozen=True)
class PhantomConfig:
    width: int = 64
    height: int = 64
    n_shapes: int = 12
    param_ranges: dict | None = None
    voxel_size: float = 1.0

    def ranges(self) -> dict:
        if self.param_ranges is not None:
            return dict(self.param_ranges)
        return {"pd": (0.0, 1.0), "t1": (200.0, 2000.0), "t2": (20.0, 700.0)}


@dataclass(frozen=True)
class B1Config:
    degree: int = 3
    out_range: tuple[float, float] = (0.8, 1.2)
    include_as_input: bool = True


def _mapping_one(phantom_cfg: PhantomConfig, sequence: Sequence, b1_cfg: B1Config | None,
                 snr_db: float, constants: Constants, seed: int, index: int):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, index)))
    phantom_seed = int(rng.integers(0, 2 ** 63))
    b1_seed = int(rng.integers(0, 2 ** 63))
    noise_seed = int(rng.integers(0, 2 ** 63))

    phantom = random_shapes_phantom(
        phantom_cfg.width, phantom_cfg.height, phantom_cfg.n_shapes,
        param_ranges=phantom_cfg.ranges(), seed=phantom_seed, voxel_size=phantom_cfg.voxel_size)
    b1_map = None
    if b1_cfg is not None:
        b1_map = random_polynomial_field(
            phantom_cfg.width, phantom_cfg.height, b1_cfg.degree, b1_cfg.out_range, seed=b1_seed)

    record = run_sequence(phantom, sequence, b1_map=b1_map, constants=constants, mode="voxelwise")
    echoes = record.images
    if not math.isinf(snr_db):
        echoes = add_noise(echoes, snr_db, seed=noise_seed)
    inputs = {"echoes": np.abs(echoes)}
    if b1_cfg is not None and b1_cfg.include_as_input:
        inputs["b1"] = b1_map.values
    labels = {"t2": phantom.t2, "pd": phantom.pd}
    return f"{index:06d}", inputs, labels


def make_mapping_pairs(
    n_phantoms: int,
    phantom_config: PhantomConfig,
    sequence: Sequence,
    b1_config: B1Config | None = None,
    snr_db: float = math.inf,
    seed: int = 0,
    threads: int = 1,
    constants: Constants = Constants(),
) -> DatasetBundle:
    """Paired corpus for parameter mapping: simulated echo magnitudes -> (t2, pd) maps."""
    if n_phantoms < 1:
        raise InvalidArgumentError(f"n_phantoms must be >= 1, got {n_phantoms}")
    if not sequence.has_adc:
        raise InvalidArgumentError("sequence must contain at least one ADC event")
    ids = range(n_phantoms)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(
                lambda i: _mapping_one(phantom_config, sequence, b1_config, snr_db, constants, seed, i), ids))
    else:
        samples = [_mapping_one(phantom_config, sequence, b1_config, snr_db, constants, seed, i)
                   for i in ids]
    gen_cfg = {
        "generator": "mapping_pairs",
        "n_phantoms": n_phantoms,
        "phantom": asdict(phantom_config),
        "b1": asdict(b1_config) if b1_config else None,
        "snr_db": snr_db,
        "echo_times_ms": list(sequence.echo_times),
        "sequence_name": sequence.name,
    }
    return bundle_from_samples("mapping_pairs", seed, gen_cfg, samples)
