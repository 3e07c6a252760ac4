import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrsynth.analytic import (
    BaselineComponent,
    BaselineSpec,
    Modulation,
    Molecule,
    MoleculeBasis,
    Peak,
    PeakSet,
    Spectrum,
    baseline_fid,
    dipole_field,
    dipole_kernel,
    fid_to_spectrum,
    field_ppm_to_hz,
    half_power_linewidth,
    invivo_mrs,
    mrs_fid,
    spectrum_to_fid,
    spin_echo_contrast,
)
from mrsynth.errors import InvalidArgumentError, InvalidSizeError, ShapeError
from mrsynth.phantoms import PhantomMap


def uniform_phantom(pd=1.0, t1=1000.0, t2=100.0, shape=(4, 4)):
    h, w = shape
    return PhantomMap(width=w, height=h,
                      pd=np.full(shape, pd), t1=np.full(shape, t1), t2=np.full(shape, t2),
                      region_label=np.ones(shape, dtype=np.int32))


class TestSpinEchoContrast:
    def test_te_zero_long_tr_returns_pd(self):
        ph = uniform_phantom(pd=0.73, t1=2000.0)
        out = spin_echo_contrast(ph, te=0.0, tr=1e9)
        assert np.array_equal(out, ph.pd)

    def test_frozen_value(self):
        # oracle: direct evaluation of the closed form
        expected = (1 - math.exp(-2000 / 1000)) * math.exp(-100 / 100)
        assert expected == pytest.approx(0.318092, abs=5e-7)
        out = spin_echo_contrast(uniform_phantom(), te=100, tr=2000)
        assert np.allclose(out, expected, rtol=1e-12)

    def test_background_sentinel_emits_zero(self):
        ph = PhantomMap(width=2, height=1, pd=[[0.0, 1.0]], t1=[[0.0, 1000.0]],
                        t2=[[0.0, 100.0]], region_label=[[0, 1]])
        out = spin_echo_contrast(ph, te=30, tr=500)
        assert out[0, 0] == 0.0
        assert out[0, 1] > 0.0

    def test_monotone_in_t2(self):
        values = [spin_echo_contrast(uniform_phantom(t2=t2), te=50, tr=1000)[0, 0]
                  for t2 in (20, 50, 100, 400, 700)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_invalid_timings(self):
        with pytest.raises(InvalidArgumentError):
            spin_echo_contrast(uniform_phantom(), te=-1, tr=100)
        with pytest.raises(InvalidArgumentError):
            spin_echo_contrast(uniform_phantom(), te=10, tr=0)


def brute_force_dipole(chi):
    """O(N^2) circular spatial convolution with the inverse-transformed kernel."""
    kernel = np.fft.ifftn(dipole_kernel(chi.shape)).real
    out = np.zeros_like(chi)
    for ix in range(chi.shape[0]):
        for iy in range(chi.shape[1]):
            for iz in range(chi.shape[2]):
                out += chi[ix, iy, iz] * np.roll(kernel, (ix, iy, iz), axis=(0, 1, 2))
    return out


class TestDipoleField:
    def test_uniform_chi_gives_zero(self):
        out = dipole_field(np.full((8, 8, 8), 0.5))
        assert np.max(np.abs(out)) <= 1e-10

    def test_linearity(self):
        chi = np.random.default_rng(1).normal(size=(8, 8, 8))
        assert np.array_equal(dipole_field(2 * chi), 2 * dipole_field(chi))

    def test_matches_brute_force_convolution(self):
        chi = np.random.default_rng(2).normal(size=(8, 8, 8))
        assert np.max(np.abs(dipole_field(chi) - brute_force_dipole(chi))) <= 1e-8

    def test_shift_equivariance(self):
        chi = np.random.default_rng(3).normal(size=(8, 8, 8))
        rolled = dipole_field(np.roll(chi, 1, axis=0))
        assert np.allclose(rolled, np.roll(dipole_field(chi), 1, axis=0), atol=1e-12)

    def test_2d_embedding(self):
        chi = np.random.default_rng(4).normal(size=(8, 8))
        out = dipole_field(chi)
        assert out.shape == (8, 8)
        # single slice of unit thickness: kz == 0, so the kernel is 1/3 - DC
        expected = (chi - chi.mean()) / 3.0
        assert np.allclose(out, expected, atol=1e-12)

    def test_odd_dimensions_rejected(self):
        with pytest.raises(InvalidSizeError):
            dipole_field(np.zeros((7, 8, 8)))

    def test_ppm_to_hz(self):
        assert field_ppm_to_hz(np.array([1.0]), b0=3.0, gamma=42.6)[0] == pytest.approx(127.8)


class TestMrsFid:
    def test_single_peak_constant_signal(self):
        fid = mrs_fid(PeakSet((Peak(amplitude=1.0, frequency=0.0),)), 64, 1e-3)
        assert np.array_equal(fid, np.ones(64, dtype=complex))

    def test_linearity_of_peak_union(self):
        a = PeakSet((Peak(1.0, 0.1, 0.5, 0.05),))
        b = PeakSet((Peak(0.4, 0.7, 1.0, 0.2), Peak(0.2, 0.3, 0.0, 0.1)))
        lhs = mrs_fid(a | b, 128, 1e-3)
        rhs = mrs_fid(a, 128, 1e-3) + mrs_fid(b, 128, 1e-3)
        # linear to within summation-order rounding
        assert np.allclose(lhs, rhs, rtol=1e-14, atol=1e-14)

    def test_quarter_frequency_lands_on_bin_64(self):
        fid = mrs_fid(PeakSet((Peak(1.0, 0.25, t2=10.0),)), 256, 1e-3)
        spec = fid_to_spectrum(fid)
        assert int(np.argmax(np.abs(spec.values))) == 64

    def test_empty_peakset_rejected(self):
        with pytest.raises(InvalidArgumentError):
            mrs_fid(PeakSet(()), 64, 1e-3)

    def test_bad_args(self):
        peaks = PeakSet((Peak(1.0, 0.1),))
        with pytest.raises(InvalidArgumentError):
            mrs_fid(peaks, 1, 1e-3)
        with pytest.raises(InvalidArgumentError):
            mrs_fid(peaks, 64, 0.0)

    @given(amp=st.floats(0.05, 1.0), freq=st.floats(0.0, 0.99),
           phase=st.floats(0, 2 * math.pi), t2=st.floats(0.01, 1.0))
    @settings(max_examples=25)
    def test_first_point_is_amplitude_times_phase(self, amp, freq, phase, t2):
        fid = mrs_fid(PeakSet((Peak(amp, freq, phase, t2),)), 16, 1e-3)
        assert fid[0] == pytest.approx(amp * np.exp(1j * phase), rel=1e-12)


class TestInvivoMrs:
    def _basis(self, n=128, dwell=1e-3):
        v = mrs_fid(PeakSet((Peak(1.0, 0.3, t2=0.08),)), n, dwell)
        return MoleculeBasis((Molecule("naa", v, concentration=1.0),), dwell=dwell)

    def test_zero_concentration_empty_baseline_is_zero(self):
        basis = self._basis()
        basis = MoleculeBasis(
            tuple(Molecule(m.name, m.basis_fid, 0.0, m.modulation) for m in basis.molecules),
            dwell=basis.dwell)
        fid = invivo_mrs(basis, BaselineSpec(), 128, 1e-3)
        assert np.all(fid == 0)

    def test_baseline_component_symmetric_about_center(self):
        fid = baseline_fid(BaselineSpec((BaselineComponent(1.0, 0.25, 0.02),)), 256)
        mag = np.abs(fid_to_spectrum(fid).values)
        c = int(np.argmax(mag))
        assert c == 64
        k = np.arange(1, 60)
        assert np.max(np.abs(mag[(c + k) % 256] - mag[(c - k) % 256])) / mag[c] <= 1e-6

    def test_frequency_shift_moves_spectrum_by_two_bins(self):
        n, dwell = 128, 1e-3
        basis0 = self._basis(n, dwell)
        df = 2.0 / (n * dwell)  # exactly two spectral bins
        shifted = MoleculeBasis(
            (Molecule("naa", basis0.molecules[0].basis_fid, 1.0, Modulation(df=df)),),
            dwell=dwell)
        s0 = np.abs(fid_to_spectrum(invivo_mrs(basis0, BaselineSpec(), n, dwell)).values)
        s1 = np.abs(fid_to_spectrum(invivo_mrs(shifted, BaselineSpec(), n, dwell)).values)
        assert int(np.argmax(s1)) == (int(np.argmax(s0)) + 2) % n

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            invivo_mrs(self._basis(64), BaselineSpec(), 128, 1e-3)
        with pytest.raises(ShapeError):
            invivo_mrs(self._basis(128, 1e-3), BaselineSpec(), 128, 2e-3)

    def test_gaussian_damping_broadens_line(self):
        n, dwell = 256, 1e-3
        basis = self._basis(n, dwell)
        damped = MoleculeBasis(
            (Molecule("naa", basis.molecules[0].basis_fid, 1.0, Modulation(g=20.0)),),
            dwell=dwell)
        s0 = fid_to_spectrum(invivo_mrs(basis, BaselineSpec(), n, dwell), 8)
        s1 = fid_to_spectrum(invivo_mrs(damped, BaselineSpec(), n, dwell), 8)
        assert half_power_linewidth(s1, dwell) > half_power_linewidth(s0, dwell)


class TestFidToSpectrum:
    def test_parseval(self):
        fid = mrs_fid(PeakSet((Peak(1.0, 0.33, 0.2, 0.05),)), 256, 1e-3)
        spec = fid_to_spectrum(fid)
        lhs = np.sum(np.abs(fid) ** 2)
        rhs = np.sum(np.abs(spec.values) ** 2)
        assert abs(lhs - rhs) / lhs <= 1e-10

    def test_delta_fid_flat_spectrum(self):
        fid = np.zeros(64, dtype=complex)
        fid[0] = 1.0
        spec = fid_to_spectrum(fid)
        assert np.allclose(np.abs(spec.values), 1 / math.sqrt(64), atol=1e-14)

    def test_roundtrip(self):
        fid = mrs_fid(PeakSet((Peak(0.7, 0.4, 1.1, 0.03),)), 128, 1e-3)
        spec = fid_to_spectrum(fid, zero_fill_factor=2)
        back = spectrum_to_fid(spec)
        assert np.allclose(back[:128], fid, atol=1e-12)
        assert np.allclose(back[128:], 0.0, atol=1e-12)

    def test_zero_fill_records_factor(self):
        spec = fid_to_spectrum(np.ones(32, dtype=complex), zero_fill_factor=4)
        assert spec.n_points == 32
        assert spec.zero_fill_factor == 4
        assert len(spec.values) == 128

    def test_empty_fid_rejected(self):
        with pytest.raises(InvalidArgumentError):
            fid_to_spectrum(np.array([]))

    def test_spectrum_shape_invariant(self):
        with pytest.raises(ShapeError):
            Spectrum(values=np.ones(10, dtype=complex), n_points=4, zero_fill_factor=2)


@pytest.mark.parametrize("t2", [0.05, 0.2, 1.0])
def test_lorentzian_half_power_linewidth(t2):
    n = 2048
    dwell = 8 * t2 / n
    fid = mrs_fid(PeakSet((Peak(1.0, 0.25, t2=t2),)), n, dwell)
    spec = fid_to_spectrum(fid, zero_fill_factor=8)
    width = half_power_linewidth(spec, dwell)
    assert width == pytest.approx(1 / (math.pi * t2), rel=0.05)
