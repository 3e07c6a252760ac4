"""Closed-form signal generators: spin-echo contrast, dipole forward model, MRS synthesis.

Everything here is a pure function; there is no RNG in this module.

Frequency conventions for spectroscopy: peak frequencies are fractions of the
spectral width (unitless in [0, 1)), peak and modulation decay constants are
in seconds, the discrete Fourier transform is unitary (1/sqrt(N) both ways)
so Parseval's identity holds symmetrically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidSizeError, ShapeError
from .phantoms import PhantomMap


# ---------------------------------------------------------------------------
# spectral parameter containers

@dataclass(frozen=True)
class Peak:
    amplitude: float        # > 0, unitless
    frequency: float        # fraction of spectral width, [0, 1)
    phase: float = 0.0      # radians
    t2: float = np.inf      # seconds

    def __post_init__(self):
        if self.amplitude <= 0:
            raise InvalidArgumentError(f"peak amplitude must be > 0, got {self.amplitude}")
        if not 0.0 <= self.frequency < 1.0:
            raise InvalidArgumentError(f"peak frequency must lie in [0, 1), got {self.frequency}")
        if self.t2 <= 0:
            raise InvalidArgumentError(f"peak t2 must be > 0, got {self.t2}")


@dataclass(frozen=True)
class PeakSet:
    peaks: tuple[Peak, ...]

    def __post_init__(self):
        object.__setattr__(self, "peaks", tuple(self.peaks))

    def __len__(self) -> int:
        return len(self.peaks)

    def __or__(self, other: "PeakSet") -> "PeakSet":
        return PeakSet(self.peaks + other.peaks)


@dataclass(frozen=True)
class Modulation:
    """Time-domain modulation: frequency shift plus extra Lorentzian/Gaussian damping."""

    df: float = 0.0        # Hz
    t2p: float = np.inf    # seconds, extra exponential damping
    g: float = 0.0         # Hz, Gaussian damping


@dataclass(frozen=True)
class Molecule:
    name: str
    basis_fid: np.ndarray          # complex series
    concentration: float = 1.0     # >= 0
    modulation: Modulation = Modulation()

    def __post_init__(self):
        object.__setattr__(self, "basis_fid", np.asarray(self.basis_fid, dtype=np.complex128))
        if self.concentration < 0:
            raise InvalidArgumentError(f"concentration must be >= 0, got {self.concentration}")


@dataclass(frozen=True)
class MoleculeBasis:
    molecules: tuple[Molecule, ...]
    dwell: float  # seconds

    def __post_init__(self):
        object.__setattr__(self, "molecules", tuple(self.molecules))
        if self.dwell <= 0:
            raise InvalidArgumentError(f"dwell must be > 0, got {self.dwell}")
        lengths = {len(m.basis_fid) for m in self.molecules}
        if len(lengths) > 1:
            raise ShapeError(f"all basis FIDs must share one length, got {sorted(lengths)}")

    @property
    def n_points(self) -> int:
        return len(self.molecules[0].basis_fid) if self.molecules else 0


@dataclass(frozen=True)
class BaselineComponent:
    amplitude: float
    center: float   # fraction of spectral width, [0, 1)
    width: float    # fraction of spectral width, > 0

    def __post_init__(self):
        if self.width <= 0:
            raise InvalidArgumentError(f"baseline width must be > 0, got {self.width}")
        if not 0.0 <= self.center < 1.0:
            raise InvalidArgumentError(f"baseline center must lie in [0, 1), got {self.center}")


@dataclass(frozen=True)
class BaselineSpec:
    components: tuple[BaselineComponent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))


@dataclass(frozen=True)
class Spectrum:
    """Unitary DFT of an FID; ``n_points`` is the source FID length before zero-filling."""

    values: np.ndarray
    n_points: int
    zero_fill_factor: int = 1
    normalization: str = "unitary"

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.complex128))
        if len(self.values) != self.n_points * self.zero_fill_factor:
            raise ShapeError(
                f"spectrum length {len(self.values)} != n_points {self.n_points} x "
                f"zero_fill_factor {self.zero_fill_factor}")

    def __len__(self) -> int:
        return len(self.values)


# ---------------------------------------------------------------------------
# image-domain models

def spin_echo_contrast(phantom: PhantomMap, te: float, tr: float) -> np.ndarray:
    """Analytic spin-echo image: pd * (1 - exp(-tr/t1)) * exp(-te/t2), per voxel.

    Voxels with the t2 == 0 sentinel emit exactly 0.  te in ms >= 0, tr > 0.
    """
    if te < 0:
        raise InvalidArgumentError(f"te must be >= 0, got {te}")
    if tr <= 0:
        raise InvalidArgumentError(f"tr must be > 0, got {tr}")
    t1, t2, pd = phantom.t1, phantom.t2, phantom.pd
    out = np.zeros(phantom.shape)
    live = t2 > 0
    with np.errstate(divide="ignore"):
        # t1 == 0 means instant recovery, matching the simulation engine
        sat = 1.0 - np.where(t1 > 0, np.exp(-tr / np.where(t1 > 0, t1, 1.0)), 0.0)
        decay = np.exp(-te / np.where(live, t2, 1.0))
    np.copyto(out, pd * sat * decay, where=live)
    return out


def dipole_field(chi: np.ndarray, b0: float = 3.0) -> np.ndarray:
    """Field deviation (ppm) induced by a susceptibility distribution (ppm).

    Circular convolution with the unit dipole response, computed in the
    frequency domain with kernel D(k) = 1/3 - kz^2/|k|^2 and D(0) = 0.
    A 2D input is embedded as a single slice of unit thickness.  ``b0`` does
    not affect the ppm output; use :func:`field_ppm_to_hz` for Hz.
    """
    chi = np.asarray(chi, dtype=np.float64)
    squeeze = chi.ndim == 2
    if squeeze:
        chi = chi[:, :, None]
    if chi.ndim != 3:
        raise InvalidSizeError(f"chi must be a 2D or 3D grid, got ndim={chi.ndim}")
    for n in chi.shape:
        if n > 1 and n % 2 != 0:
            raise InvalidSizeError(f"grid dimensions must be even, got {chi.shape}")
    kernel = dipole_kernel(chi.shape)
    out = np.fft.ifftn(np.fft.fftn(chi) * kernel).real
    return out[:, :, 0] if squeeze else out


def dipole_kernel(shape: tuple[int, int, int]) -> np.ndarray:
    """Frequency-domain unit dipole response on an FFT-ordered grid."""
    ky = np.fft.fftfreq(shape[0])[:, None, None]
    kx = np.fft.fftfreq(shape[1])[None, :, None]
    kz = np.fft.fftfreq(shape[2])[None, None, :]
    k2 = kx ** 2 + ky ** 2 + kz ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        kernel = 1.0 / 3.0 - np.where(k2 > 0, kz ** 2 / np.where(k2 > 0, k2, 1.0), 0.0)
    kernel[0, 0, 0] = 0.0
    return kernel


def field_ppm_to_hz(delta_ppm: np.ndarray, b0: float, gamma: float = 42.6) -> np.ndarray:
    """Convert a ppm field deviation to Hz at field ``b0`` (T); gamma in MHz/T."""
    return np.asarray(delta_ppm) * gamma * b0


# ---------------------------------------------------------------------------
# spectroscopy

def mrs_fid(peaks: PeakSet, n_points: int, dwell: float) -> np.ndarray:
    """Sum-of-damped-exponentials FID.

    S[n] = sum_j a_j exp(i phi_j) exp(i 2 pi f_j n) exp(-n dwell / t2_j),
    with f_j a fraction of the spectral width 1/dwell and dwell in seconds.
    """
    if len(peaks) == 0:
        raise InvalidArgumentError("PeakSet must be non-empty")
    if n_points < 2:
        raise InvalidArgumentError(f"n_points must be >= 2, got {n_points}")
    if dwell <= 0:
        raise InvalidArgumentError(f"dwell must be > 0, got {dwell}")
    n = np.arange(n_points)
    t = n * dwell
    out = np.zeros(n_points, dtype=np.complex128)
    for p in peaks.peaks:
        decay = np.exp(-t / p.t2) if np.isfinite(p.t2) else 1.0
        out += p.amplitude * np.exp(1j * p.phase) * np.exp(1j * 2 * np.pi * p.frequency * n) * decay
    return out


def baseline_fid(baseline: BaselineSpec, n_points: int) -> np.ndarray:
    """Macromolecular baseline: Gaussian lines synthesized in the frequency domain.

    Each component is evaluated on the circular frequency axis (so the line is
    exactly symmetric about its centre bin) and the sum is inverse-transformed.
    """
    spec = np.zeros(n_points, dtype=np.complex128)
    pos = np.arange(n_points) / n_points
    for comp in baseline.components:
        dist = np.abs(pos - comp.center)
        dist = np.minimum(dist, 1.0 - dist)
        spec += comp.amplitude * np.exp(-0.5 * (dist / comp.width) ** 2)
    return np.fft.ifft(spec) * np.sqrt(n_points)


def invivo_mrs(basis: MoleculeBasis, baseline: BaselineSpec, n_points: int, dwell: float) -> np.ndarray:
    """In-vivo style FID: concentration-weighted modulated basis FIDs plus a baseline.

    Each molecule's basis FID is multiplied by
    exp(i 2 pi df t) * exp(-t/t2p) * exp(-(pi g t)^2).
    """
    if basis.molecules and basis.n_points != n_points:
        raise ShapeError(f"basis FID length {basis.n_points} != n_points {n_points}")
    if basis.dwell != dwell:
        raise ShapeError(f"basis dwell {basis.dwell} != requested dwell {dwell}")
    t = np.arange(n_points) * dwell
    out = np.zeros(n_points, dtype=np.complex128)
    for mol in basis.molecules:
        mod = mol.modulation
        env = np.exp(1j * 2 * np.pi * mod.df * t)
        if np.isfinite(mod.t2p):
            env = env * np.exp(-t / mod.t2p)
        if mod.g != 0.0:
            env = env * np.exp(-((np.pi * mod.g * t) ** 2))
        out += mol.concentration * mol.basis_fid * env
    out += baseline_fid(baseline, n_points)
    return out


def fid_to_spectrum(fid: np.ndarray, zero_fill_factor: int = 1) -> Spectrum:
    """Unitary DFT after zero-filling to ``zero_fill_factor`` times the FID length."""
    fid = np.asarray(fid, dtype=np.complex128)
    if fid.size == 0:
        raise InvalidArgumentError("FID must be non-empty")
    if zero_fill_factor < 1:
        raise InvalidArgumentError(f"zero_fill_factor must be >= 1, got {zero_fill_factor}")
    n = len(fid)
    total = n * zero_fill_factor
    padded = np.concatenate([fid, np.zeros(total - n, dtype=np.complex128)])
    values = np.fft.fft(padded) / np.sqrt(total)
    return Spectrum(values=values, n_points=n, zero_fill_factor=zero_fill_factor)


def spectrum_to_fid(spectrum: Spectrum) -> np.ndarray:
    """Inverse unitary DFT; recovers the zero-filled FID."""
    total = len(spectrum.values)
    return np.fft.ifft(spectrum.values) * np.sqrt(total)


def half_power_linewidth(spectrum: Spectrum, dwell: float) -> float:
    """Full width (Hz) of the tallest line at half its peak power.

    Measured on the squared-magnitude spectrum with linear interpolation, so
    the value is phase-insensitive; for a Lorentzian line this equals
    1 / (pi * t2).  ``dwell`` is the source FID dwell time in seconds.
    """
    power = np.abs(spectrum.values) ** 2
    n = len(power)
    peak = int(np.argmax(power))
    half = power[peak] / 2.0

    def _cross(step: int) -> float:
        i = peak
        while power[(i + step) % n] > half:
            i += step
            if abs(i - peak) >= n:
                raise InvalidArgumentError("no half-power crossing found")
        a, b = power[i % n], power[(i + step) % n]
        return i + step * (a - half) / (a - b)

    right = _cross(+1)
    left = _cross(-1)
    df = 1.0 / (dwell * n)
    return (right - left) * df
