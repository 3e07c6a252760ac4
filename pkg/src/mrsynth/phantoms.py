"""Procedural parametric phantoms and imperfection field maps.

A phantom is a 2D grid of per-voxel tissue parameters (proton density,
relaxation times, off-resonance, susceptibility) plus a region label map.
Objects are built by stamping random geometric shapes (ellipses, rectangles,
triangles) onto a blank grid; smooth imperfection fields (B1 scale, delta-B0)
come from random bivariate polynomials.  All generators are pure functions of
their inputs and an integer seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import InvalidArgumentError, InvalidRangeError, InvalidSizeError, ShapeError

#: channels a phantom carries, in canonical order
CHANNELS = ("pd", "t1", "t2", "off_resonance", "chi")

#: hard value bounds per channel, used when clamping blended values
CHANNEL_BOUNDS = {
    "pd": (0.0, 1.0),
    "t1": (0.0, np.inf),
    "t2": (0.0, np.inf),
    "off_resonance": (-np.inf, np.inf),
    "chi": (-np.inf, np.inf),
}

FIELD_UNITS = ("unitless", "Hz", "ppm")


@dataclass
class PhantomMap:
    """Spatial grid of object parameters.

    Units: ``t1``/``t2`` in ms, ``off_resonance`` in Hz, ``chi`` in ppm,
    ``pd`` unitless in [0, 1].  ``region_label`` 0 marks background; the
    ``t2 == 0`` sentinel there means "no signal" and downstream generators
    emit exactly zero for those voxels.
    """

    width: int
    height: int
    voxel_size: float = 1.0
    pd: np.ndarray = field(default=None)
    t1: np.ndarray = field(default=None)
    t2: np.ndarray = field(default=None)
    off_resonance: np.ndarray = field(default=None)
    chi: np.ndarray = field(default=None)
    region_label: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidSizeError(f"phantom dimensions must be positive, got {self.width}x{self.height}")
        shape = (self.height, self.width)
        for name in CHANNELS:
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(shape))
            else:
                setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.region_label is None:
            self.region_label = np.zeros(shape, dtype=np.int32)
        else:
            self.region_label = np.asarray(self.region_label, dtype=np.int32)
        self.validate()

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def channel(self, name: str) -> np.ndarray:
        if name not in CHANNELS:
            raise InvalidArgumentError(f"unknown channel {name!r}; expected one of {CHANNELS}")
        return getattr(self, name)

    def validate(self) -> None:
        shape = (self.height, self.width)
        for name in (*CHANNELS, "region_label"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeError(f"channel {name!r} has shape {arr.shape}, expected {shape}")
        if np.any(self.pd < 0) or np.any(self.pd > 1):
            raise InvalidRangeError("pd values must lie in [0, 1]")
        if np.any(self.t1 < 0) or np.any(self.t2 < 0):
            raise InvalidRangeError("t1 and t2 must be non-negative")
        if np.any(self.pd[self.region_label == 0] != 0):
            raise InvalidRangeError("background voxels (label 0) must have pd = 0")
        bad = (self.t2 > self.t1) & (self.region_label > 0)
        if np.any(bad):
            warnings.warn(f"t2 exceeds t1 at {int(bad.sum())} voxel(s)", stacklevel=2)

    def copy(self) -> "PhantomMap":
        return replace(
            self,
            pd=self.pd.copy(), t1=self.t1.copy(), t2=self.t2.copy(),
            off_resonance=self.off_resonance.copy(), chi=self.chi.copy(),
            region_label=self.region_label.copy(),
        )


@dataclass
class FieldMap:
    """Per-voxel scalar field: a B1 multiplier (unitless) or a delta-B0 map (Hz or ppm)."""

    width: int
    height: int
    values: np.ndarray
    units: str = "unitless"

    def __post_init__(self):
        if self.units not in FIELD_UNITS:
            raise InvalidArgumentError(f"units must be one of {FIELD_UNITS}, got {self.units!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.height, self.width):
            raise ShapeError(f"values shape {self.values.shape} != {(self.height, self.width)}")
        if self.units == "unitless" and np.any(self.values <= 0):
            raise InvalidRangeError("B1 scale maps must be strictly positive")


def _shape_rng(seed: int, index: int) -> np.random.Generator:
    # one independent stream per shape index, so the shape list for a given
    # seed is a fixed stream and larger n_shapes only appends to it
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _rotated_coords(xx, yy, cx, cy, theta):
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(theta), np.sin(theta)
    return c * dx + s * dy, -s * dx + c * dy


def _shape_mask(kind: int, rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cx = rng.uniform(0, width - 1)
    cy = rng.uniform(0, height - 1)
    # extents 5-40% of the grid size, as half-lengths
    a = rng.uniform(0.05, 0.40) * width / 2
    b = rng.uniform(0.05, 0.40) * height / 2
    theta = rng.uniform(0, np.pi)
    if kind == 0:  # ellipse
        u, v = _rotated_coords(xx, yy, cx, cy, theta)
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    if kind == 1:  # rectangle
        u, v = _rotated_coords(xx, yy, cx, cy, theta)
        return (np.abs(u) <= a) & (np.abs(v) <= b)
    # triangle: three vertices around the centre, inclusion via half-plane signs
    ang = theta + np.array([0.0, 2.0, 4.0]) * np.pi / 3 + rng.uniform(-0.4, 0.4, size=3)
    rad = rng.uniform(0.5, 1.0, size=3)
    vx = cx + rad * 2 * a * np.cos(ang)
    vy = cy + rad * 2 * b * np.sin(ang)
    inside = np.ones((height, width), dtype=bool)
    ref = np.ones((height, width), dtype=bool)
    for i in range(3):
        x1, y1 = vx[i], vy[i]
        x2, y2 = vx[(i + 1) % 3], vy[(i + 1) % 3]
        x3, y3 = vx[(i + 2) % 3], vy[(i + 2) % 3]
        side = (x2 - x1) * (yy - y1) - (y2 - y1) * (xx - x1)
        side3 = (x2 - x1) * (y3 - y1) - (y2 - y1) * (x3 - x1)
        inside &= side * side3 >= 0
        ref &= np.abs(side3) > 1e-12
    return inside & ref


def random_shapes_phantom(
    width: int,
    height: int,
    n_shapes: int,
    param_ranges: Mapping[str, tuple[float, float]] | None = None,
    seed: int = 0,
    voxel_size: float = 1.0,
) -> PhantomMap:
    """Fill a blank template with random geometric shapes.

    Each shape draws one uniform value per channel from ``param_ranges``
    (channel name -> (lo, hi)); later shapes overwrite earlier ones where they
    overlap.  Channels absent from ``param_ranges`` stay zero.  Background
    voxels keep pd = 0 and t2 = 0.  Bit-identical for identical inputs.
    """
    if width <= 0 or height <= 0:
        raise InvalidSizeError(f"dimensions must be positive, got {width}x{height}")
    if n_shapes < 0:
        raise InvalidArgumentError(f"n_shapes must be >= 0, got {n_shapes}")
    if param_ranges is None:
        param_ranges = {"pd": (0.0, 1.0), "t1": (200.0, 2000.0), "t2": (20.0, 700.0)}
    for name, (lo, hi) in param_ranges.items():
        if name not in CHANNELS:
            raise InvalidArgumentError(f"unknown channel {name!r} in param_ranges")
        if lo > hi:
            raise InvalidRangeError(f"channel {name!r}: range lo={lo} > hi={hi}")
    if "pd" in param_ranges:
        lo, hi = param_ranges["pd"]
        if lo < 0 or hi > 1:
            raise InvalidRangeError(f"pd range [{lo}, {hi}] must lie within [0, 1]")

    channels = {name: np.zeros((height, width)) for name in CHANNELS}
    labels = np.zeros((height, width), dtype=np.int32)
    for i in range(n_shapes):
        rng = _shape_rng(seed, i)
        kind = int(rng.integers(0, 3))
        mask = _shape_mask(kind, rng, width, height)
        # draw channel values in canonical order regardless of dict order
        for name in CHANNELS:
            if name in param_ranges:
                lo, hi = param_ranges[name]
                channels[name][mask] = rng.uniform(lo, hi)
        labels[mask] = i + 1

    return PhantomMap(width=width, height=height, voxel_size=voxel_size,
                      region_label=labels, **channels)


def random_polynomial_field(
    width: int,
    height: int,
    degree: int,
    out_range: tuple[float, float],
    seed: int = 0,
    units: str = "unitless",
) -> FieldMap:
    """Smooth random field from a bivariate polynomial, rescaled to ``out_range``.

    Coefficients of all monomials x^a y^b with a + b <= degree are drawn
    uniform in [-1, 1] over normalized coordinates [-1, 1]^2; the result is
    affinely mapped so min = lo and max = hi.  A degenerate (constant)
    polynomial maps to the midpoint of the range.
    """
    if width <= 0 or height <= 0:
        raise InvalidSizeError(f"dimensions must be positive, got {width}x{height}")
    if degree < 0:
        raise InvalidArgumentError(f"degree must be >= 0, got {degree}")
    lo, hi = out_range
    if lo > hi:
        raise InvalidRangeError(f"out_range lo={lo} > hi={hi}")

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    x = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    y = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    xx, yy = np.meshgrid(x, y)
    values = np.zeros((height, width))
    for total in range(degree + 1):
        for a in range(total + 1):
            coeff = rng.uniform(-1.0, 1.0)
            values += coeff * xx ** a * yy ** (total - a)

    vmin, vmax = values.min(), values.max()
    span = vmax - vmin
    if span < 1e-12 * max(1.0, abs(vmax)) or lo == hi:
        values = np.full((height, width), (lo + hi) / 2.0)
    else:
        values = lo + (values - vmin) * ((hi - lo) / span)
    return FieldMap(width=width, height=height, values=values, units=units)


def blend_texture(
    phantom: PhantomMap,
    texture: np.ndarray,
    channel: str,
    strength: float,
) -> PhantomMap:
    """Modulate one channel with a grayscale texture inside the foreground.

    The texture is normalized to [-0.5, 0.5] (a constant texture normalizes
    to zero) and applied multiplicatively: v -> v * (1 + strength * t~),
    clamped to the channel's declared bounds.  Background voxels and all
    other channels are untouched.
    """
    texture = np.asarray(texture, dtype=np.float64)
    if texture.shape != phantom.shape:
        raise ShapeError(f"texture shape {texture.shape} != phantom shape {phantom.shape}")
    if not 0.0 <= strength <= 1.0:
        raise InvalidArgumentError(f"strength must lie in [0, 1], got {strength}")
    values = phantom.channel(channel)  # validates the name

    tmin, tmax = texture.min(), texture.max()
    if tmax - tmin < 1e-12 * max(1.0, abs(tmax)):
        tnorm = np.zeros_like(texture)
    else:
        tnorm = (texture - tmin) / (tmax - tmin) - 0.5

    out = phantom.copy()
    fg = phantom.region_label > 0
    lo, hi = CHANNEL_BOUNDS[channel]
    blended = np.clip(values * (1.0 + strength * tnorm), lo, hi)
    new = values.copy()
    new[fg] = blended[fg]
    setattr(out, channel, new)
    out.validate()
    return out


def widen_region(
    phantom: PhantomMap,
    mask: np.ndarray,
    channel: str,
    factor: float,
) -> PhantomMap:
    """Multiply one channel by ``factor`` inside ``mask``; everything else is untouched.

    Raises if the result would violate the channel's declared bounds (e.g.
    pushing pd above 1), so the returned map always validates.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != phantom.shape:
        raise ShapeError(f"mask shape {mask.shape} != phantom shape {phantom.shape}")
    if factor <= 0:
        raise InvalidArgumentError(f"factor must be > 0, got {factor}")
    values = phantom.channel(channel)

    out = phantom.copy()
    new = values.copy()
    new[mask] = new[mask] * factor
    lo, hi = CHANNEL_BOUNDS[channel]
    if np.any(new < lo) or np.any(new > hi):
        raise InvalidRangeError(
            f"widening channel {channel!r} by {factor} leaves its bounds [{lo}, {hi}]")
    setattr(out, channel, new)
    out.validate()
    return out
