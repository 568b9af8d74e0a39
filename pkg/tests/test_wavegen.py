import math
import struct

import numpy as np
import pytest

from wavescope.errors import (
    LengthMismatchError,
    MalformedHeaderError,
    SchemaError,
    UnsupportedVersionError,
    ValidationError,
)
from wavescope.wavegen import (
    PRESETS,
    DamageTransform,
    DatasetSplit,
    GenerationConfig,
    Label,
    TimeSeriesRecord,
    WavePacketSpec,
    augment_noise,
    build_dataset,
    load_dataset,
    make_toneburst,
    measured_snr_db,
    save_dataset,
    synth_baseline,
    synth_damaged,
)


def small_cfg(**kw):
    base = dict(n_train=4, n_test_baseline=2, n_test_damaged=2)
    base.update(kw)
    from dataclasses import replace
    return replace(GenerationConfig(), **base)


@pytest.mark.parametrize("cycles,freq,fs,support", [(5, 40e3, 10e6, 1250), (4.5, 60e3, 2e6, 150)])
def test_toneburst_support_and_peak(cycles, freq, fs, support):
    rec = make_toneburst(cycles, freq, 1.0, fs, 2e-3)
    nz = np.flatnonzero(rec.samples)
    assert nz[-1] - nz[0] + 1 == support
    # carrier peak sits at the midpoint of the support
    mid = (nz[0] + nz[-1]) / 2
    assert abs(np.argmax(np.abs(rec.samples)) - mid) <= 0.5
    assert np.max(np.abs(rec.samples)) == pytest.approx(1.0, abs=1e-2)  # centre may fall between samples


def test_toneburst_rejects_undersampling():
    with pytest.raises(ValidationError):
        make_toneburst(5, 150e3, 1.0, 1.2e6, 1e-3)


def test_toneburst_amplitude_is_linear():
    a = make_toneburst(5, 40e3, 1.0, 1e6, 1e-3).samples
    b = make_toneburst(5, 40e3, -2.5, 1e6, 1e-3).samples
    np.testing.assert_allclose(b, -2.5 * a)


def test_packet_validation():
    with pytest.raises(ValidationError):
        WavePacketSpec(0, 60e3, 1e-4)
    with pytest.raises(ValidationError):
        WavePacketSpec(5, 60e3, 1e-4, mode_tag="B2")
    with pytest.raises(ValidationError):
        DamageTransform(amplitude_factor=1.5)
    with pytest.raises(ValidationError):
        DamageTransform(phase_delay=-1e-6)


def test_packet_outside_record_rejected():
    p = WavePacketSpec(4.5, 60e3, 0.99e-3)
    with pytest.raises(ValidationError, match="does not fit"):
        synth_baseline([p], math.inf, 2e6, 1e-3, 0)


def test_noise_hits_target_snr():
    p = WavePacketSpec(4.5, 60e3, 0.5e-3)
    clean = synth_baseline([p], math.inf, 2e6, 1e-3, 0).samples
    noisy = synth_baseline([p], 20.0, 2e6, 1e-3, 0).samples
    assert measured_snr_db(clean, noisy) == pytest.approx(20.0, abs=0.3)


def test_augment_noise_inf_is_copy_and_zero_energy_rejected():
    rec = TimeSeriesRecord(np.arange(1.0, 5.0), 1e3, Label.BASELINE)
    out = augment_noise(rec, math.inf, 0)
    assert out == rec and out.samples is not rec.samples
    with pytest.raises(ValidationError):
        augment_noise(TimeSeriesRecord(np.zeros(4), 1e3), 10.0, 0)


def test_damage_only_touches_selected_modes():
    a0 = WavePacketSpec(4.5, 60e3, 0.2e-3, 1.0, "A0")
    s0 = WavePacketSpec(4.5, 60e3, 0.6e-3, 0.5, "S0")
    dmg = DamageTransform(0.7, 10e-6, ("A0",))
    assert dmg.apply(s0) == s0
    moved = dmg.apply(a0)
    assert moved.amplitude == pytest.approx(0.7)
    assert moved.arrival_time == pytest.approx(0.21e-3)
    rec = synth_damaged([a0, s0], dmg, math.inf, 2e6, 1e-3, 0)
    assert rec.label == Label.DAMAGED
    # identity damage reproduces the baseline exactly
    same = synth_damaged([a0, s0], DamageTransform(), math.inf, 2e6, 1e-3, 0)
    np.testing.assert_array_equal(same.samples, synth_baseline([a0, s0], math.inf, 2e6, 1e-3, 0).samples)


def test_record_validation():
    with pytest.raises(ValidationError):
        TimeSeriesRecord(np.array([1.0, np.nan]), 1e3)
    with pytest.raises(ValidationError):
        TimeSeriesRecord(np.zeros(0), 1e3)
    with pytest.raises(SchemaError):
        Label.parse("broken")


def test_training_split_must_be_baseline():
    bad = TimeSeriesRecord(np.ones(3), 1e3, Label.DAMAGED)
    with pytest.raises(SchemaError):
        DatasetSplit([bad], [], [])


def test_build_dataset_is_deterministic_and_seed_sensitive():
    cfg = small_cfg()
    a, b = build_dataset(cfg, 7), build_dataset(cfg, 7)
    assert a == b
    c = build_dataset(cfg, 8)
    assert not np.array_equal(a.train_baseline[0].samples, c.train_baseline[0].samples)
    assert [len(a.train_baseline), len(a.test_baseline), len(a.test_damaged)] == [4, 2, 2]
    assert all(r.label == Label.DAMAGED for r in a.test_damaged)


def test_presets_counts():
    assert (PRESETS["desk"].n_train, PRESETS["desk"].n_test_baseline, PRESETS["desk"].n_test_damaged) == (200, 100, 100)
    d1 = PRESETS["dataset-1"]
    assert (d1.n_train, d1.n_test_baseline + d1.n_test_damaged) == (2125, 2875)
    for cfg in PRESETS.values():
        for p in cfg.packets:
            assert cfg.sample_rate >= 10 * p.center_freq


def test_dataset_round_trip(tmp_path):
    split = build_dataset(small_cfg(), 3)
    save_dataset(split, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert back == split
    assert back.sample_rate == split.sample_rate


def test_dataset_format_errors(tmp_path):
    split = build_dataset(small_cfg(), 3)
    d = tmp_path / "ds"
    save_dataset(split, d)
    manifest = (d / "manifest").read_text()

    (d / "manifest").write_text(manifest.replace("version=1", "version=9"))
    with pytest.raises(UnsupportedVersionError):
        load_dataset(d)

    (d / "manifest").write_text("this is not a manifest\n")
    with pytest.raises(MalformedHeaderError):
        load_dataset(d)

    (d / "manifest").write_text(manifest)
    raw = (d / "train_baseline.bin").read_bytes()
    (d / "train_baseline.bin").write_bytes(raw[:-5])
    with pytest.raises(LengthMismatchError):
        load_dataset(d)

    # a damaged label in the training file violates the schema
    count, n = struct.unpack_from("<II", raw)
    off = 8 + 8 * n
    patched = bytearray(raw)
    patched[off] = int(Label.DAMAGED)
    (d / "train_baseline.bin").write_bytes(bytes(patched))
    with pytest.raises(SchemaError):
        load_dataset(d)
