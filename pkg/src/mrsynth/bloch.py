"""Magnetization evolution under piecewise-constant fields.

The engine splits every interval into an exact rotation and an exact
relaxation step; there is no generic ODE integration.  Conventions (fixed,
asserted by tests):

* right-handed rotations; a 90 degree pulse of phase 0 takes (0, 0, 1)
  to (0, -1, 0);
* free precession multiplies the transverse value mx + i*my by
  exp(-i * 2*pi * df * t) together with exp(-t/T2) decay;
* t2 == 0 is the "no signal" sentinel: transverse magnetization is forced
  to zero; t1 == 0 pins mz at its equilibrium value.

Sequence execution applies two idealizations, both standard in analytic
contrast modelling and required for echo amplitudes to follow the
closed-form spin-echo equation:

* RF events flagged ``refocus`` act as ideal refocusing: the transverse
  phase is reflected about the pulse axis and mz is untouched;
* perfect crushers: transverse magnetization is zeroed at repetition
  boundaries and immediately before every non-refocusing RF pulse.

Unflagged RF events are otherwise full 3D rotations (a 180 degree pulse
inverts mz), so inversion-recovery style preparations behave physically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from .phantoms import FieldMap, PhantomMap
from .sequences import Adc, Delay, Gradient, RfPulse, Sequence

#: sub-step for finite-duration RF pulses, ms (10 us)
RF_SUBSTEP_MS = 0.01


@dataclass(frozen=True)
class Constants:
    gamma: float = 42.6  # gyromagnetic ratio, MHz/T

    def __post_init__(self):
        if self.gamma <= 0:
            raise InvalidArgumentError(f"gamma must be > 0, got {self.gamma}")


@dataclass
class Magnetization:
    """One spin packet, components relative to unit equilibrium."""

    mx: float = 0.0
    my: float = 0.0
    mz: float = 1.0
    m0: float = 1.0

    def norm(self) -> float:
        return math.sqrt(self.mx ** 2 + self.my ** 2 + self.mz ** 2)


@dataclass
class SignalRecord:
    """Samples produced by one sequence run.

    ``samples`` holds one complex value per ADC sample (the fixed-order sum
    over voxels); in voxelwise mode ``images`` additionally holds the
    per-voxel transverse value at each sample.
    """

    mode: str
    samples: np.ndarray                  # complex128, (n_samples,)
    sample_times: np.ndarray             # float64 ms, (n_samples,)
    images: np.ndarray | None = None     # complex128, (n_samples, height, width)
    grid_shape: tuple[int, int] = field(default=(0, 0))


def rotate_pulse(m: Magnetization, flip: float, phase: float, b1_scale: float = 1.0) -> Magnetization:
    """Rotate by ``flip * b1_scale`` degrees about the transverse axis at ``phase`` degrees."""
    if b1_scale <= 0:
        raise InvalidArgumentError(f"b1_scale must be > 0, got {b1_scale}")
    alpha = math.radians(flip * b1_scale)
    phi = math.radians(phase)
    c, s = math.cos(phi), math.sin(phi)
    ca, sa = math.cos(alpha), math.sin(alpha)
    one = 1.0 - ca
    mx = (c * c * one + ca) * m.mx + (c * s * one) * m.my + (s * sa) * m.mz
    my = (c * s * one) * m.mx + (s * s * one + ca) * m.my + (-c * sa) * m.mz
    mz = (-s * sa) * m.mx + (c * sa) * m.my + ca * m.mz
    return Magnetization(mx=mx, my=my, mz=mz, m0=m.m0)


def free_precess(m: Magnetization, dt: float, df: float, t1: float, t2: float) -> Magnetization:
    """Exact constant-field evolution over ``dt`` ms at off-resonance ``df`` Hz.

    ``t1``/``t2`` in ms; both may be ``inf``.  The ``t2 == 0`` sentinel
    zeroes the transverse components.
    """
    if dt < 0:
        raise InvalidArgumentError(f"dt must be >= 0, got {dt}")
    if t1 <= 0:
        raise InvalidArgumentError(f"t1 must be > 0, got {t1}")
    if t2 < 0:
        raise InvalidArgumentError(f"t2 must be >= 0, got {t2}")
    if t2 == 0.0:
        mxy = 0.0 + 0.0j
    else:
        mxy = (m.mx + 1j * m.my) * np.exp(-1j * 2 * np.pi * df * dt * 1e-3) * math.exp(-dt / t2)
    mz = m.m0 + (m.mz - m.m0) * math.exp(-dt / t1)
    return Magnetization(mx=float(mxy.real), my=float(mxy.imag), mz=mz, m0=m.m0)


def _relax_arrays(mxy, mz, m0, dt, df, t1, t2):
    """Vectorized free precession; sentinel handling mirrors free_precess."""
    with np.errstate(divide="ignore"):
        e2 = np.where(t2 > 0, np.exp(-dt / np.where(t2 > 0, t2, 1.0)), 0.0)
        e1 = np.where(t1 > 0, np.exp(-dt / np.where(t1 > 0, t1, 1.0)), 0.0)
    mxy = mxy * e2 * np.exp(-1j * 2 * np.pi * df * (dt * 1e-3))
    mz = m0 + (mz - m0) * e1
    return mxy, mz


def _rotate_arrays(mxy, mz, alpha, phase_deg):
    """Vectorized right-handed rotation about a transverse axis; alpha in radians per voxel."""
    phi = math.radians(phase_deg)
    c, s = math.cos(phi), math.sin(phi)
    ca, sa = np.cos(alpha), np.sin(alpha)
    one = 1.0 - ca
    mx, my = mxy.real, mxy.imag
    nx = (c * c * one + ca) * mx + (c * s * one) * my + (s * sa) * mz
    ny = (c * s * one) * mx + (s * s * one + ca) * my + (-c * sa) * mz
    nz = (-s * sa) * mx + (c * sa) * my + ca * mz
    return nx + 1j * ny, nz


def _voxel_coords(phantom: PhantomMap) -> tuple[np.ndarray, np.ndarray]:
    """Centered voxel positions in mm, x along width and y along height."""
    x = (np.arange(phantom.width) - (phantom.width - 1) / 2.0) * phantom.voxel_size
    y = (np.arange(phantom.height) - (phantom.height - 1) / 2.0) * phantom.voxel_size
    xx, yy = np.meshgrid(x, y)
    return xx.ravel(), yy.ravel()


def run_sequence(
    phantom: PhantomMap,
    seq: Sequence,
    b1_map: FieldMap | None = None,
    constants: Constants = Constants(),
    mode: str = "voxelwise",
    isochromats_per_voxel: int = 1,
    isochromat_spread_hz: float = 0.0,
) -> SignalRecord:
    """Evolve every voxel of ``phantom`` through ``seq`` and record ADC samples.

    Each voxel starts at (0, 0, pd).  Delays and gradients free-precess with
    df = off_resonance + gamma * G * r; RF events rotate with the local B1
    scale.  In voxelwise mode every sample yields a complex image; in kspace
    mode only the fixed-order voxel sum is kept.  With
    ``isochromats_per_voxel > 1`` each voxel is split into sub-voxels whose
    off-resonance is spread symmetrically over ``isochromat_spread_hz`` and
    the recorded signals are averaged.
    """
    if mode not in ("voxelwise", "kspace"):
        raise InvalidArgumentError(f"mode must be 'voxelwise' or 'kspace', got {mode!r}")
    if isochromats_per_voxel < 1:
        raise InvalidArgumentError(f"isochromats_per_voxel must be >= 1, got {isochromats_per_voxel}")
    if b1_map is not None and (b1_map.height, b1_map.width) != phantom.shape:
        raise ShapeError(f"b1 map shape {(b1_map.height, b1_map.width)} != phantom shape {phantom.shape}")

    n_vox = phantom.height * phantom.width
    pd = phantom.pd.ravel().astype(np.float64)
    t1 = phantom.t1.ravel().astype(np.float64)
    t2 = phantom.t2.ravel().astype(np.float64)
    df0 = phantom.off_resonance.ravel().astype(np.float64)
    b1 = np.ones(n_vox) if b1_map is None else b1_map.values.ravel().astype(np.float64)
    xs, ys = _voxel_coords(phantom)

    n_samples = seq.n_samples
    samples = np.zeros(n_samples, dtype=np.complex128)
    times = np.zeros(n_samples, dtype=np.float64)
    images = np.zeros((n_samples, n_vox), dtype=np.complex128) if mode == "voxelwise" else None

    if isochromats_per_voxel == 1:
        offsets = np.array([0.0])
    else:
        offsets = np.linspace(-0.5, 0.5, isochromats_per_voxel) * isochromat_spread_hz
    weight = 1.0 / len(offsets)

    for offset in offsets:
        mxy = np.zeros(n_vox, dtype=np.complex128)
        mz = pd.copy()
        df_base = df0 + offset
        k = 0
        for rep in range(seq.n_repetitions):
            now = rep * seq.duration
            for event in seq.events:
                if isinstance(event, RfPulse):
                    if event.refocus:
                        # ideal refocusing: reflect transverse phase about the
                        # pulse axis, leave mz alone
                        phi = math.radians(event.phase)
                        mxy = np.exp(2j * phi) * np.conj(mxy)
                    else:
                        mxy[:] = 0.0  # perfect crusher before excitation
                        alpha = np.radians(event.flip * b1)
                        if event.duration > 0:
                            nsub = max(1, int(math.ceil(event.duration / RF_SUBSTEP_MS)))
                            dt_sub = event.duration / nsub
                            # relaxation neglected during the pulse
                            for _ in range(nsub):
                                mxy, mz = _rotate_arrays(mxy, mz, alpha / nsub, event.phase)
                                mxy = mxy * np.exp(-1j * 2 * np.pi * df_base * (dt_sub * 1e-3))
                        else:
                            mxy, mz = _rotate_arrays(mxy, mz, alpha, event.phase)
                    now += event.duration
                elif isinstance(event, (Delay, Gradient)):
                    df = df_base
                    if isinstance(event, Gradient):
                        coord = xs if event.axis == "x" else ys
                        df = df_base + constants.gamma * event.amplitude * coord
                    mxy, mz = _relax_arrays(mxy, mz, pd, event.duration, df, t1, t2)
                    now += event.duration
                else:  # Adc
                    for _ in range(event.n_samples):
                        samples[k] += weight * mxy.sum()
                        if images is not None:
                            images[k] += weight * mxy
                        times[k] = now
                        k += 1
                        mxy, mz = _relax_arrays(mxy, mz, pd, event.dwell, df_base, t1, t2)
                        now += event.dwell
            mxy[:] = 0.0  # repetition boundary crusher

    if images is not None:
        images = images.reshape(n_samples, phantom.height, phantom.width)
    return SignalRecord(mode=mode, samples=samples, sample_times=times,
                        images=images, grid_shape=phantom.shape)
