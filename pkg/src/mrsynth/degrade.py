"""Experiment-realism operators: noise, undersampling, coil sensitivities, parameter sampling.

Every randomized operation is a pure function of (inputs, seed); calling it
twice yields bit-identical results.

SNR definition used throughout: peak signal magnitude over complex noise
standard deviation, in dB.  The injected noise is circularly symmetric
complex Gaussian with per-component standard deviation sigma / sqrt(2), so
the complex noise std equals sigma = max|signal| / 10^(snr_db / 20).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import InvalidArgumentError, InvalidRangeError, ShapeError


@dataclass(frozen=True)
class SamplingMask:
    length: int
    kept: np.ndarray  # boolean vector; kept[0] is always True
    rate: float       # achieved fraction

    def __post_init__(self):
        object.__setattr__(self, "kept", np.asarray(self.kept, dtype=bool))
        if len(self.kept) != self.length:
            raise ShapeError(f"mask length {len(self.kept)} != declared {self.length}")
        if not self.kept[0]:
            raise InvalidArgumentError("the first time-domain point must always be sampled")

    @property
    def n_kept(self) -> int:
        return int(self.kept.sum())


@dataclass(frozen=True)
class CoilSet:
    n_coils: int
    maps: np.ndarray  # complex, (n_coils, height, width)

    def __post_init__(self):
        object.__setattr__(self, "maps", np.asarray(self.maps, dtype=np.complex128))
        if self.maps.ndim != 3 or self.maps.shape[0] != self.n_coils:
            raise ShapeError(f"maps must have shape (n_coils, h, w), got {self.maps.shape}")


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise InvalidRangeError(f"Uniform lo={self.lo} > hi={self.hi}")


@dataclass(frozen=True)
class Histogram:
    bin_edges: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "bin_edges", tuple(float(e) for e in self.bin_edges))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.bin_edges) < 2 or len(self.weights) != len(self.bin_edges) - 1:
            raise InvalidArgumentError("Histogram needs n+1 bin edges for n weights")
        if any(b <= a for a, b in zip(self.bin_edges, self.bin_edges[1:])):
            raise InvalidArgumentError("Histogram bin edges must be strictly increasing")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise InvalidArgumentError("Histogram weights must be >= 0 with positive sum")


@dataclass(frozen=True)
class Discrete:
    values: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.values or len(self.weights) != len(self.values):
            raise InvalidArgumentError("Discrete needs one weight per value")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise InvalidArgumentError("Discrete weights must be >= 0 with positive sum")


DistributionSpec = Union[Uniform, Histogram, Discrete]


def distribution_from_config(obj: dict) -> DistributionSpec:
    """Build a DistributionSpec from its config-file form, e.g. {"kind": "uniform", ...}."""
    if not isinstance(obj, dict) or "kind" not in obj:
        raise InvalidArgumentError("distribution config must be an object with a 'kind' field")
    kind = obj["kind"]
    if kind == "uniform":
        return Uniform(lo=obj["lo"], hi=obj["hi"])
    if kind == "histogram":
        return Histogram(bin_edges=tuple(obj["bin_edges"]), weights=tuple(obj["weights"]))
    if kind == "discrete":
        return Discrete(values=tuple(obj["values"]), weights=tuple(obj["weights"]))
    raise InvalidArgumentError(f"unknown distribution kind {kind!r}")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed))


def add_noise(signal: np.ndarray, snr_db: float, seed: int = 0) -> np.ndarray:
    """Add complex Gaussian noise at the given peak SNR; ``snr_db=inf`` is the identity.

    Real input is promoted to complex.  The returned array never aliases the
    input.
    """
    signal = np.asarray(signal)
    if signal.size == 0:
        raise InvalidArgumentError("signal must be non-empty")
    if np.isinf(snr_db):
        return signal.copy()
    peak = float(np.max(np.abs(signal)))
    out = np.asarray(signal, dtype=np.complex128).copy()
    if peak == 0.0:
        return out
    sigma = peak / 10.0 ** (snr_db / 20.0)
    rng = _rng(seed)
    noise = rng.normal(size=signal.shape) + 1j * rng.normal(size=signal.shape)
    return out + noise * (sigma / np.sqrt(2.0))


def undersample(signal: np.ndarray, rate: float, scheme: str = "uniform-random",
                seed: int = 0) -> tuple[SamplingMask, np.ndarray]:
    """Keep floor(rate * length) uniform-random indices (index 0 always) and zero the rest."""
    signal = np.asarray(signal)
    if signal.ndim != 1:
        raise ShapeError(f"undersample expects a 1D series, got shape {signal.shape}")
    if not 0.0 < rate <= 1.0:
        raise InvalidArgumentError(f"rate must lie in (0, 1], got {rate}")
    if scheme != "uniform-random":
        raise InvalidArgumentError(f"unknown sampling scheme {scheme!r}")
    n = len(signal)
    n_keep = int(np.floor(rate * n))
    if n_keep < 1:
        raise InvalidArgumentError(f"rate {rate} keeps no samples of a length-{n} series")
    kept = np.zeros(n, dtype=bool)
    kept[0] = True
    if n_keep > 1:
        rng = _rng(seed)
        extra = rng.choice(np.arange(1, n), size=n_keep - 1, replace=False)
        kept[extra] = True
    zero_filled = signal.copy()
    zero_filled[~kept] = 0
    return SamplingMask(length=n, kept=kept, rate=n_keep / n), zero_filled


def apply_coils(image: np.ndarray, coils: CoilSet) -> np.ndarray:
    """Multiply a single-channel image by each coil sensitivity map."""
    image = np.asarray(image)
    if image.shape != coils.maps.shape[1:]:
        raise ShapeError(f"image shape {image.shape} != coil map shape {coils.maps.shape[1:]}")
    return coils.maps * image[None, :, :]


def rss(channels: np.ndarray) -> np.ndarray:
    """Root sum of squares over the leading (channel) axis."""
    return np.sqrt(np.sum(np.abs(np.asarray(channels)) ** 2, axis=0))


def synthesize_coils(width: int, height: int, n_coils: int, seed: int = 0) -> CoilSet:
    """Smooth synthetic sensitivities: boundary Gaussian bumps with linear phase ramps."""
    if n_coils < 1:
        raise InvalidArgumentError(f"n_coils must be >= 1, got {n_coils}")
    rng = _rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cx0, cy0 = (width - 1) / 2.0, (height - 1) / 2.0
    radius = 0.55 * max(width, height)
    sigma = 0.6 * max(width, height)
    maps = np.zeros((n_coils, height, width), dtype=np.complex128)
    for c in range(n_coils):
        ang = 2 * np.pi * c / n_coils + rng.uniform(-0.2, 0.2)
        cx = cx0 + radius * np.cos(ang)
        cy = cy0 + radius * np.sin(ang)
        mag = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma ** 2))
        gx = rng.uniform(-0.5, 0.5) / max(width, 1)
        gy = rng.uniform(-0.5, 0.5) / max(height, 1)
        phase = 2 * np.pi * (gx * xx + gy * yy) + rng.uniform(0, 2 * np.pi)
        maps[c] = mag * np.exp(1j * phase)
    return CoilSet(n_coils=n_coils, maps=maps)


def sample_params(spec: DistributionSpec, n: int, seed: int = 0) -> np.ndarray:
    """Draw ``n`` independent values from a distribution spec."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    rng = _rng(seed)
    if isinstance(spec, Uniform):
        return rng.uniform(spec.lo, spec.hi, size=n)
    if isinstance(spec, Histogram):
        weights = np.asarray(spec.weights, dtype=np.float64)
        probs = weights / weights.sum()
        idx = rng.choice(len(probs), size=n, p=probs)
        edges = np.asarray(spec.bin_edges)
        return rng.uniform(edges[idx], edges[idx + 1])
    if isinstance(spec, Discrete):
        weights = np.asarray(spec.weights, dtype=np.float64)
        probs = weights / weights.sum()
        idx = rng.choice(len(spec.values), size=n, p=probs)
        return np.asarray(spec.values)[idx]
    raise InvalidArgumentError(f"unknown distribution spec {type(spec).__name__}")
