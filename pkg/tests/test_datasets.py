import json
import math

import numpy as np
import pytest

from mrsynth.analytic import fid_to_spectrum, mrs_fid
from mrsynth.datasets import (
    B1Config,
    Manifest,
    MrsPairsConfig,
    PhantomConfig,
    bundle_from_samples,
    load_field,
    load_phantom,
    make_mapping_pairs,
    make_mrs_pairs,
    mrs_sample_params,
    read_bundle,
    save_field,
    save_phantom,
    write_bundle,
)
from mrsynth.errors import CorruptionError, IntegrityError, InvalidRangeError, VersionError
from mrsynth.phantoms import random_polynomial_field, random_shapes_phantom
from mrsynth.sequences import build_multi_echo


def small_bundle():
    rng = np.random.default_rng(0)
    samples = []
    for i in range(3):
        inputs = {"fid": (rng.normal(size=16) + 1j * rng.normal(size=16))}
        labels = {"spectrum": rng.normal(size=16).astype(np.float32)}
        samples.append((f"{i:06d}", inputs, labels))
    return bundle_from_samples("test", 42, {"note": "unit"}, samples)


class TestBundleIO:
    def test_roundtrip_byte_identical(self, tmp_path):
        bundle = small_bundle()
        write_bundle(bundle, tmp_path / "b")
        again = read_bundle(tmp_path / "b")
        assert again.manifest.content_hash == bundle.manifest.content_hash
        assert again.manifest.to_json() == bundle.manifest.to_json()
        for entry in bundle.manifest.samples:
            for fld in entry.shapes:
                a = bundle.arrays[entry.id][fld]
                b = again.arrays[entry.id][fld]
                assert a.dtype == b.dtype
                assert a.tobytes() == b.tobytes()

    def test_truncated_payload_names_file(self, tmp_path):
        bundle = small_bundle()
        write_bundle(bundle, tmp_path / "b")
        victim = tmp_path / "b" / "000001.fid.raw"
        victim.write_bytes(victim.read_bytes()[:-1])
        with pytest.raises(CorruptionError, match="000001.fid.raw"):
            read_bundle(tmp_path / "b")

    def test_flipped_byte_fails_hash(self, tmp_path):
        bundle = small_bundle()
        write_bundle(bundle, tmp_path / "b")
        victim = tmp_path / "b" / "000000.spectrum.raw"
        raw = bytearray(victim.read_bytes())
        raw[0] ^= 0xFF
        victim.write_bytes(bytes(raw))
        with pytest.raises(CorruptionError, match="content_hash"):
            read_bundle(tmp_path / "b")

    def test_unknown_format_version_gates_read(self, tmp_path):
        bundle = small_bundle()
        write_bundle(bundle, tmp_path / "b")
        manifest_path = tmp_path / "b" / "manifest"
        doc = json.loads(manifest_path.read_text())
        doc["format_version"] = 999
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(VersionError):
            read_bundle(tmp_path / "b")

    def test_missing_payload_file(self, tmp_path):
        bundle = small_bundle()
        write_bundle(bundle, tmp_path / "b")
        (tmp_path / "b" / "000002.fid.raw").unlink()
        with pytest.raises(IntegrityError, match="000002.fid.raw"):
            read_bundle(tmp_path / "b")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(IntegrityError):
            read_bundle(tmp_path)

    def test_manifest_records_hash_algorithm_and_byte_order(self):
        bundle = small_bundle()
        doc = json.loads(bundle.manifest.to_json())
        assert doc["hash_algorithm"] == "sha256"
        assert doc["byte_order"] == "little"

    def test_version_roundtrip(self):
        bundle = small_bundle()
        again = Manifest.from_json(bundle.manifest.to_json())
        assert again.content_hash == bundle.manifest.content_hash


class TestMrsPairs:
    def test_manifest_counts_and_declared_ranges(self):
        cfg = MrsPairsConfig(n_pairs=40, snr_db=25.0)
        bundle = make_mrs_pairs(cfg, seed=3)
        assert bundle.n_samples == 40
        for i in range(40):
            peaks, _, _ = mrs_sample_params(cfg, 3, i)
            assert 1 <= len(peaks) <= 10
            for p in peaks.peaks:
                assert 0.05 <= p.amplitude <= 1.0
                assert 0.01 <= p.frequency <= 0.99
                assert cfg.t2_range[0] <= p.t2 <= cfg.t2_range[1]

    def test_two_runs_same_hash(self):
        cfg = MrsPairsConfig(n_pairs=12, snr_db=20.0)
        a = make_mrs_pairs(cfg, seed=9)
        b = make_mrs_pairs(cfg, seed=9)
        assert a.manifest.content_hash == b.manifest.content_hash
        c = make_mrs_pairs(cfg, seed=10)
        assert c.manifest.content_hash != a.manifest.content_hash

    def test_threads_do_not_change_hash(self):
        cfg = MrsPairsConfig(n_pairs=16)
        a = make_mrs_pairs(cfg, seed=4, threads=1)
        b = make_mrs_pairs(cfg, seed=4, threads=4)
        assert a.manifest.content_hash == b.manifest.content_hash

    def test_label_purity_and_zero_fill(self):
        # labels must be the noise-free full spectrum even when inputs are degraded
        cfg = MrsPairsConfig(n_pairs=5, snr_db=10.0, rate=0.25)
        bundle = make_mrs_pairs(cfg, seed=1)
        for i in range(5):
            peaks, _, _ = mrs_sample_params(cfg, 1, i)
            clean = fid_to_spectrum(mrs_fid(peaks, cfg.n_points, cfg.dwell)).values
            label = bundle.array(f"{i:06d}", "spectrum")
            assert np.array_equal(label, clean.astype(np.complex64))
            mask = bundle.array(f"{i:06d}", "mask").astype(bool)
            fid = bundle.array(f"{i:06d}", "fid")
            assert mask[0]
            assert mask.sum() == int(0.25 * cfg.n_points)
            assert np.all(fid[~mask] == 0)

    def test_samples_independently_regenerable(self):
        # (generator_config, seed, sample id) must reproduce the stored payload
        from mrsynth.degrade import add_noise, undersample

        cfg = MrsPairsConfig(n_pairs=6, snr_db=15.0, rate=0.5)
        bundle = make_mrs_pairs(cfg, seed=21)
        for i in (0, 3, 5):
            peaks, noise_seed, mask_seed = mrs_sample_params(cfg, 21, i)
            fid = mrs_fid(peaks, cfg.n_points, cfg.dwell)
            noisy = add_noise(fid, cfg.snr_db, seed=noise_seed)
            mask, zero_filled = undersample(noisy, cfg.rate, seed=mask_seed)
            stored = bundle.array(f"{i:06d}", "fid")
            assert np.array_equal(stored, zero_filled.astype(np.complex64))
            assert np.array_equal(bundle.array(f"{i:06d}", "mask").astype(bool), mask.kept)

    def test_invalid_config_rejected(self):
        with pytest.raises(InvalidRangeError):
            MrsPairsConfig(n_pairs=1, amp_range=(0.0, 1.0))
        with pytest.raises(InvalidRangeError):
            MrsPairsConfig(n_pairs=1, rate=0.0)
        with pytest.raises(InvalidRangeError):
            MrsPairsConfig(n_pairs=1, freq_range=(0.5, 1.5))


class TestMappingPairs:
    def test_labels_within_configured_ranges_and_echo_count(self):
        seq = build_multi_echo([22, 52, 82, 110], tr=3000)
        cfg = PhantomConfig(width=24, height=24, n_shapes=6)
        bundle = make_mapping_pairs(3, cfg, seq, seed=2)
        assert bundle.n_samples == 3
        for i in range(3):
            echoes = bundle.array(f"{i:06d}", "echoes")
            t2 = bundle.array(f"{i:06d}", "t2")
            pd = bundle.array(f"{i:06d}", "pd")
            assert echoes.shape == (4, 24, 24)
            fg = t2 > 0
            if fg.any():
                assert np.all((t2[fg] >= 20) & (t2[fg] <= 700))
            assert np.all((pd >= 0) & (pd <= 1))

    def test_noiseless_echoes_match_closed_form(self):
        # oracle: pd * exp(-te/t2) per foreground voxel, no B1 map
        seq = build_multi_echo([22, 52, 82, 110], tr=3000)
        cfg = PhantomConfig(width=16, height=16, n_shapes=4)
        bundle = make_mapping_pairs(1, cfg, seq, snr_db=math.inf, seed=6)
        echoes = bundle.array("000000", "echoes").astype(np.float64)
        t2 = bundle.array("000000", "t2").astype(np.float64)
        pd = bundle.array("000000", "pd").astype(np.float64)
        fg = t2 > 0
        assert fg.any()
        for k, te in enumerate([22, 52, 82, 110]):
            want = pd[fg] * np.exp(-te / t2[fg])
            assert np.allclose(echoes[k][fg], want, rtol=1e-4)

    def test_b1_channel_included_when_configured(self):
        seq = build_multi_echo([22, 52], tr=500)
        cfg = PhantomConfig(width=12, height=12, n_shapes=3)
        bundle = make_mapping_pairs(1, cfg, seq, b1_config=B1Config(), seed=1)
        assert "b1" in bundle.arrays["000000"]
        assert bundle.array("000000", "b1").shape == (12, 12)

    def test_determinism_across_thread_counts(self):
        seq = build_multi_echo([30, 90], tr=600)
        cfg = PhantomConfig(width=12, height=12, n_shapes=3)
        a = make_mapping_pairs(4, cfg, seq, snr_db=30.0, seed=5, threads=1)
        b = make_mapping_pairs(4, cfg, seq, snr_db=30.0, seed=5, threads=4)
        assert a.manifest.content_hash == b.manifest.content_hash


class TestPhantomBundles:
    def test_phantom_roundtrip(self, tmp_path):
        ph = random_shapes_phantom(20, 14, 5, seed=8)
        save_phantom(ph, tmp_path / "ph", seed=8)
        back = load_phantom(tmp_path / "ph")
        assert back.width == 20 and back.height == 14
        assert np.allclose(back.pd, ph.pd.astype(np.float32))
        assert np.array_equal(back.region_label, ph.region_label)

    def test_field_roundtrip(self, tmp_path):
        fm = random_polynomial_field(10, 10, 2, (0.9, 1.1), seed=0)
        save_field(fm, tmp_path / "f")
        back = load_field(tmp_path / "f")
        assert back.units == "unitless"
        assert np.allclose(back.values, fm.values.astype(np.float32))
