"""Synthetic guided-wave records, noise augmentation and dataset persistence.

Signals are superpositions of Hann-windowed tonebursts ("packets"), one per
propagating mode or boundary reflection.  Damage is modelled by its two
observable effects on a packet: an amplitude loss and a time delay.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    LengthMismatchError,
    MalformedHeaderError,
    SchemaError,
    UnsupportedVersionError,
    ValidationError,
)

DATASET_VERSION = 1
SPLITS = ("train_baseline", "test_baseline", "test_damaged")
MODE_TAGS = ("S0", "A0", "reflection")


class Label(IntEnum):
    BASELINE = 0
    DAMAGED = 1
    UNLABELED = 2

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise SchemaError(f"unknown label {value!r}") from None
        try:
            return cls(int(value))
        except ValueError:
            raise SchemaError(f"unknown label code {value!r}") from None


@dataclass
class TimeSeriesRecord:
    samples: np.ndarray
    sample_rate: float
    label: Label = Label.UNLABELED
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.label = Label.parse(self.label)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValidationError("samples must be a non-empty 1-D vector")
        if not self.sample_rate > 0:
            raise ValidationError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def energy(self):
        return float(np.dot(self.samples, self.samples))

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesRecord):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.label == other.label
            and self.meta == other.meta
            and np.array_equal(self.samples, other.samples)
        )


@dataclass(frozen=True)
class WavePacketSpec:
    """One toneburst arrival.  ``arrival_time`` is the burst centre."""

    cycles: float
    center_freq: float
    arrival_time: float
    amplitude: float = 1.0
    mode_tag: str = "A0"

    def __post_init__(self):
        if not self.cycles > 0:
            raise ValidationError("cycles must be positive")
        if not self.center_freq > 0:
            raise ValidationError("center_freq must be positive")
        if not self.arrival_time >= 0:
            raise ValidationError("arrival_time must be non-negative")
        if self.mode_tag not in MODE_TAGS:
            raise ValidationError(f"mode_tag must be one of {MODE_TAGS}")

    @property
    def burst_duration(self):
        return self.cycles / self.center_freq


@dataclass(frozen=True)
class DamageTransform:
    amplitude_factor: float = 1.0
    phase_delay: float = 0.0
    applies_to: tuple | None = None  # mode tags; None means every packet

    def __post_init__(self):
        if not 0 < self.amplitude_factor <= 1:
            raise ValidationError("amplitude_factor must lie in (0, 1]")
        if not self.phase_delay >= 0:
            raise ValidationError("phase_delay must be non-negative")
        if self.applies_to is not None:
            tags = tuple(self.applies_to)
            for tag in tags:
                if tag not in MODE_TAGS:
                    raise ValidationError(f"unknown mode tag {tag!r}")
            object.__setattr__(self, "applies_to", tags)

    def matches(self, packet):
        return self.applies_to is None or packet.mode_tag in self.applies_to

    def apply(self, packet):
        if not self.matches(packet):
            return packet
        return replace(
            packet,
            amplitude=packet.amplitude * self.amplitude_factor,
            arrival_time=packet.arrival_time + self.phase_delay,
        )


@dataclass
class DatasetSplit:
    train_baseline: list
    test_baseline: list
    test_damaged: list
    seed: int = 0
    sample_rate: float | None = None

    def __post_init__(self):
        for rec in self.train_baseline:
            if rec.label != Label.BASELINE:
                raise SchemaError("training split may only hold baseline records")
        if self.sample_rate is None:
            for name in SPLITS:
                recs = getattr(self, name)
                if recs:
                    self.sample_rate = recs[0].sample_rate
                    break

    def __eq__(self, other):
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return self.seed == other.seed and all(
            getattr(self, s) == getattr(other, s) for s in SPLITS
        )

    def test_records(self):
        return list(self.test_baseline) + list(self.test_damaged)


# ---------------------------------------------------------------------------
# signal synthesis


def _hann_burst(t, center, cycles, freq):
    """Analytic Hann-windowed cosine burst evaluated at times ``t``."""
    width = cycles / freq
    u = (t - center) / width + 0.5
    out = np.zeros_like(t)
    inside = (u > 0) & (u < 1)
    tt = t[inside] - center
    out[inside] = np.sin(np.pi * u[inside]) ** 2 * np.cos(2 * np.pi * freq * tt)
    return out


def _check_sampling(center_freq, sample_rate):
    if sample_rate < 10 * center_freq:
        raise ValidationError(
            f"sample_rate {sample_rate:g} Hz is below 10x the centre frequency "
            f"{center_freq:g} Hz"
        )


def _n_samples(sample_rate, duration):
    n = int(round(duration * sample_rate))
    if n < 1:
        raise ValidationError("duration too short for the sample rate")
    return n


def make_toneburst(cycles, center_freq, amplitude, sample_rate, duration):
    """Single Hann-windowed burst centred in a window of ``duration`` seconds.

    The burst occupies ``cycles * sample_rate / center_freq`` samples; the
    carrier peaks at the burst centre.
    """
    if not cycles > 0 or not center_freq > 0:
        raise ValidationError("cycles and center_freq must be positive")
    _check_sampling(center_freq, sample_rate)
    if duration < cycles / center_freq:
        raise ValidationError("duration shorter than the burst")
    n = _n_samples(sample_rate, duration)
    span = cycles * sample_rate / center_freq
    # half-sample centre for even spans so exactly `span` samples are inside
    centre_idx = n // 2 - (0.5 if int(round(span)) % 2 == 0 else 0.0)
    t = np.arange(n) / sample_rate
    x = amplitude * _hann_burst(t, centre_idx / sample_rate, cycles, center_freq)
    return TimeSeriesRecord(x, sample_rate)


def _clean_signal(packets, sample_rate, duration):
    n = _n_samples(sample_rate, duration)
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for p in packets:
        _check_sampling(p.center_freq, sample_rate)
        half = p.burst_duration / 2
        if p.arrival_time - half < -1e-12 or p.arrival_time + half > duration + 1e-12:
            raise ValidationError(
                f"{p.mode_tag} packet at {p.arrival_time:g} s does not fit "
                f"inside the {duration:g} s record"
            )
        x += p.amplitude * _hann_burst(t, p.arrival_time, p.cycles, p.center_freq)
    return x


def _rng(seed):
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(seed))


def _add_noise(x, snr_db, seed):
    if math.isinf(snr_db) and snr_db > 0:
        return x.copy()
    power = np.mean(x**2)
    if power == 0:
        raise ValidationError("SNR is undefined for a zero-energy signal")
    sigma = math.sqrt(power / 10 ** (snr_db / 10))
    return x + sigma * _rng(seed).standard_normal(x.size)


def synth_baseline(packets, noise_snr_db, sample_rate, duration, seed, label=Label.BASELINE):
    """Superpose ``packets`` and add white Gaussian noise at ``noise_snr_db``."""
    x = _clean_signal(packets, sample_rate, duration)
    x = _add_noise(x, noise_snr_db, seed)
    return TimeSeriesRecord(x, sample_rate, label)


def synth_damaged(baseline_spec, dmg, noise_snr_db, sample_rate, duration, seed):
    if not isinstance(dmg, DamageTransform):
        raise ValidationError("dmg must be a DamageTransform")
    packets = [dmg.apply(p) for p in baseline_spec]
    return synth_baseline(packets, noise_snr_db, sample_rate, duration, seed, Label.DAMAGED)


def augment_noise(rec, snr_db, seed):
    """Return a copy of ``rec`` with additive white Gaussian noise.

    ``snr_db = inf`` returns an unchanged copy.
    """
    if rec.energy == 0 and not (math.isinf(snr_db) and snr_db > 0):
        raise ValidationError("cannot augment a zero-energy record")
    x = _add_noise(rec.samples, snr_db, seed)
    return TimeSeriesRecord(x, rec.sample_rate, rec.label, dict(rec.meta))


def measured_snr_db(clean, noisy):
    clean = np.asarray(clean, dtype=float)
    resid = np.asarray(noisy, dtype=float) - clean
    return 10 * math.log10(np.dot(clean, clean) / np.dot(resid, resid))


# ---------------------------------------------------------------------------
# datasets


def _desk_packets():
    return (
        WavePacketSpec(4.5, 60e3, 0.2e-3, 1.0, "A0"),
        WavePacketSpec(4.5, 60e3, 3.5e-3, 0.4, "reflection"),
    )


@dataclass(frozen=True)
class GenerationConfig:
    packets: tuple = field(default_factory=_desk_packets)
    sample_rate: float = 2e6
    duration: float = 5e-3
    noise_snr_db: float = 30.0
    damage: DamageTransform = field(
        default_factory=lambda: DamageTransform(0.7, 10e-6, ("A0",))
    )
    n_train: int = 200
    n_test_baseline: int = 100
    n_test_damaged: int = 100
    amplitude_jitter: float = 0.02
    arrival_jitter: float = 0.5e-6
    common_shift: float = 0.0
    time_stretch: float = 0.04

    def __post_init__(self):
        object.__setattr__(self, "packets", tuple(self.packets))
        if self.n_train <= 0:
            raise ValidationError("n_train must be positive")
        if self.n_test_baseline < 0 or self.n_test_damaged < 0:
            raise ValidationError("test counts must be non-negative")
        if min(self.amplitude_jitter, self.arrival_jitter, self.common_shift, self.time_stretch) < 0:
            raise ValidationError("jitter must be non-negative")
        if not self.sample_rate > 0 or not self.duration > 0:
            raise ValidationError("sample_rate and duration must be positive")


def _scaled_preset(n_train, n_test_b, n_test_d, cycles, freq, fs):
    packets = (
        WavePacketSpec(cycles, freq, 0.2e-3, 1.0, "A0"),
        WavePacketSpec(cycles, freq, 3.5e-3, 0.4, "reflection"),
    )
    return GenerationConfig(
        packets=packets, sample_rate=fs, n_train=n_train,
        n_test_baseline=n_test_b, n_test_damaged=n_test_d,
    )


# Published dataset scales.  Test baseline/damaged shares for dataset-1 are not
# published; an even split is used.
PRESETS = {
    "desk": GenerationConfig(),
    "dataset-1": _scaled_preset(2125, 1437, 1438, 5, 40e3, 10e6),
    "dataset-2": _scaled_preset(857, 151, 252, 5, 150e3, 2.4e6),
    "dataset-3": _scaled_preset(1326, 234, 1560, 4.5, 60e3, 2e6),
}


def _jittered(packets, cfg, rng):
    """Per-record packet perturbations.

    ``time_stretch`` scales every arrival time by one common factor, as a
    change of wave speed would (late arrivals move most); ``common_shift``
    delays all packets equally; the remaining terms are independent per packet.
    """
    stretch = 1 + cfg.time_stretch * rng.standard_normal()
    shift = cfg.common_shift * rng.standard_normal()
    out = []
    for p in packets:
        amp = p.amplitude * (1 + cfg.amplitude_jitter * rng.standard_normal())
        arr = p.arrival_time * stretch + shift + cfg.arrival_jitter * rng.standard_normal()
        out.append(replace(p, amplitude=amp, arrival_time=max(arr, 0.0)))
    return out


def _make_record(cfg, split_idx, i, master_seed, damaged):
    ss = np.random.SeedSequence(master_seed, spawn_key=(split_idx, i))
    jitter_ss, noise_ss = ss.spawn(2)
    packets = _jittered(cfg.packets, cfg, _rng(jitter_ss))
    if damaged:
        rec = synth_damaged(packets, cfg.damage, cfg.noise_snr_db,
                            cfg.sample_rate, cfg.duration, noise_ss)
    else:
        rec = synth_baseline(packets, cfg.noise_snr_db, cfg.sample_rate,
                             cfg.duration, noise_ss)
    rec.meta = {"run_id": f"{SPLITS[split_idx]}-{i}", "sensor": "S1", "actuator": "A1"}
    return rec


def build_dataset(cfg, seed):
    """Generate a train/test split; every record has its own derived seed."""
    if isinstance(cfg, str):
        try:
            cfg = PRESETS[cfg]
        except KeyError:
            raise ValidationError(f"unknown dataset preset {cfg!r}") from None
    counts = (cfg.n_train, cfg.n_test_baseline, cfg.n_test_damaged)
    splits = []
    for split_idx, count in enumerate(counts):
        damaged = split_idx == 2
        splits.append([_make_record(cfg, split_idx, i, seed, damaged) for i in range(count)])
    return DatasetSplit(*splits, seed=int(seed), sample_rate=cfg.sample_rate)


# ---------------------------------------------------------------------------
# persistence
#
# <dir>/manifest           key=value text
# <dir>/<split>.bin        u32 count, then per record:
#                          u32 n, n*f64, u8 label, u16 meta length, meta (UTF-8 JSON)


def _encode_records(records):
    parts = [struct.pack("<I", len(records))]
    for rec in records:
        meta = json.dumps(rec.meta, sort_keys=True, separators=(",", ":")).encode()
        if len(meta) > 0xFFFF:
            raise ValidationError("record metadata too large")
        parts.append(struct.pack("<I", rec.samples.size))
        parts.append(rec.samples.astype("<f8").tobytes())
        parts.append(struct.pack("<BH", int(rec.label), len(meta)))
        parts.append(meta)
    return b"".join(parts)


def _decode_records(buf, sample_rate, expected):
    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise LengthMismatchError(f"file truncated at byte {pos} (needs {n} more)")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    pos = 0
    (count,) = struct.unpack("<I", take(4))
    if expected is not None and count != expected:
        raise LengthMismatchError(f"manifest says {expected} records, file holds {count}")
    records = []
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        samples = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64)
        code, meta_len = struct.unpack("<BH", take(3))
        if code not in (0, 1, 2):
            raise SchemaError(f"label code {code} outside {{0,1,2}}")
        try:
            meta = json.loads(take(meta_len).decode("utf-8")) if meta_len else {}
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SchemaError(f"bad record metadata: {exc}") from None
        records.append(TimeSeriesRecord(samples, sample_rate, Label(code), meta))
    if pos != len(buf):
        raise LengthMismatchError(f"{len(buf) - pos} trailing bytes after last record")
    return records


def write_manifest(path, entries):
    lines = [f"{k}={v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise MalformedHeaderError(f"missing manifest {path}") from None
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MalformedHeaderError(f"manifest line {n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def save_dataset(split, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {
        "version": DATASET_VERSION,
        "sample_rate": repr(float(split.sample_rate or 0.0)),
        "seed": split.seed,
    }
    for name in SPLITS:
        recs = getattr(split, name)
        entries[f"count_{name}"] = len(recs)
        tmp = path / f"{name}.bin.tmp"
        tmp.write_bytes(_encode_records(recs))
        os.replace(tmp, path / f"{name}.bin")
    write_manifest(path / "manifest", entries)


def load_dataset(path):
    path = Path(path)
    man = read_manifest(path / "manifest")
    if "version" not in man:
        raise MalformedHeaderError("manifest lacks a version")
    if man["version"] != str(DATASET_VERSION):
        raise UnsupportedVersionError(f"dataset version {man['version']} not supported")
    try:
        sample_rate = float(man["sample_rate"])
        seed = int(man.get("seed", 0))
        counts = {s: int(man[f"count_{s}"]) for s in SPLITS}
    except (KeyError, ValueError) as exc:
        raise MalformedHeaderError(f"manifest field problem: {exc}") from None
    splits = {}
    for name in SPLITS:
        f = path / f"{name}.bin"
        if not f.exists():
            raise MalformedHeaderError(f"missing split file {f.name}")
        splits[name] = _decode_records(f.read_bytes(), sample_rate, counts[name])
    return DatasetSplit(**splits, seed=seed, sample_rate=sample_rate)
