"""Run configuration: a small line-oriented ``key = value`` format with sections.

Grammar (one construct per line, surrounding whitespace ignored)::

    # comment            (also ';')
    [section]
    key = value          (split at the first '='; lists are comma separated)

Keys outside a section, unknown sections or keys, and duplicated keys are
errors reported with their line number.  Every key has a default, so a file
holding only ``[dataset]`` / ``preset = desk`` is a complete configuration.
:func:`format_config` writes the fully resolved form, which parses back to
an equal :class:`RunConfig`.
"""

from __future__ import annotations

import math
import platform
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .detect import DEFAULT_NUS, METHODS, ThresholdRule
from .errors import ConfigError, ValidationError
from .wavegen import PRESETS, DamageTransform, GenerationConfig, write_manifest

_KEY = re.compile(r"^[a-z_][a-z0-9_]*$")


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _strs(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _opt_float(text):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _opt_str(text):
    return text.strip() or None


def _rules(text):
    return tuple(ThresholdRule.parse(v) for v in _strs(text))


def _fmt(value):
    if value is None:
        return "auto"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def _opt(default, parse, **kw):
    return field(default=default, metadata={"parse": parse, **kw})


@dataclass(frozen=True)
class DatasetSection:
    preset: str = _opt("desk", str)
    path: str | None = _opt(None, _opt_str)
    n_train: int | None = _opt(None, int)
    n_test_baseline: int | None = _opt(None, int)
    n_test_damaged: int | None = _opt(None, int)
    noise_snr_db: float | None = _opt(None, float)
    damage_amplitude: float | None = _opt(None, float)
    damage_delay: float | None = _opt(None, float)
    damage_modes: tuple | None = _opt(None, _strs)
    amplitude_jitter: float | None = _opt(None, float)
    arrival_jitter: float | None = _opt(None, float)
    common_shift: float | None = _opt(None, float)
    time_stretch: float | None = _opt(None, float)


@dataclass(frozen=True)
class RepresentationSection:
    size: int = _opt(64, int)
    channels: int = _opt(1, int)
    beta: float = _opt(20.0, float)
    gamma: float = _opt(3.0, float)
    n_scales: int = _opt(64, int)
    fmin_ratio: float = _opt(1e-3, float)
    fmax_ratio: float = _opt(0.25, float)


@dataclass(frozen=True)
class MethodsSection:
    methods: tuple = _opt(METHODS, _strs)
    components: int = _opt(3, int)
    nu: float = _opt(0.1, float)
    nu_grid: tuple = _opt(DEFAULT_NUS, _floats)
    rbf_gamma: float | None = _opt(None, _opt_float)
    ica_tol: float = _opt(1e-4, float)
    ica_max_iter: int = _opt(500, int)


@dataclass(frozen=True)
class CaeSection:
    preset: str = _opt("desk", str)
    filters: tuple = _opt((8, 16, 32), _ints)
    epochs: int = _opt(500, int)
    lr: float = _opt(1e-3, float)
    batch: int = _opt(32, int)


@dataclass(frozen=True)
class ThresholdSection:
    rules: tuple = _opt((ThresholdRule("quantile", 0.99), ThresholdRule("max", 1.0)), _rules)


@dataclass(frozen=True)
class RunSection:
    seed: int = _opt(0, int)
    repeats: int = _opt(1, int)


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    representation: RepresentationSection = field(default_factory=RepresentationSection)
    methods: MethodsSection = field(default_factory=MethodsSection)
    cae: CaeSection = field(default_factory=CaeSection)
    threshold: ThresholdSection = field(default_factory=ThresholdSection)
    run: RunSection = field(default_factory=RunSection)

    def generation_config(self):
        d = self.dataset
        base = PRESETS[d.preset]
        over = {k: getattr(d, k) for k in ("n_train", "n_test_baseline", "n_test_damaged",
                                            "noise_snr_db", "amplitude_jitter", "arrival_jitter",
                                            "common_shift", "time_stretch")
                if getattr(d, k) is not None}
        if d.damage_amplitude is not None or d.damage_delay is not None or d.damage_modes is not None:
            dm = base.damage
            over["damage"] = DamageTransform(
                dm.amplitude_factor if d.damage_amplitude is None else d.damage_amplitude,
                dm.phase_delay if d.damage_delay is None else d.damage_delay,
                dm.applies_to if d.damage_modes is None else
                (None if d.damage_modes == ("all",) else d.damage_modes),
            )
        return replace(base, **over)


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def _validate(cfg, lines):
    def fail(section, key, msg):
        raise ConfigError(f"[{section}] {key}: {msg}", lines.get((section, key)))

    d = cfg.dataset
    if d.path is None and d.preset not in PRESETS:
        fail("dataset", "preset", f"unknown preset {d.preset!r} (choose from {sorted(PRESETS)})")
    if d.path is None:
        try:
            cfg.generation_config()
        except ValidationError as exc:
            fail("dataset", "preset", str(exc))
    r = cfg.representation
    if r.channels not in (1, 3):
        fail("representation", "channels", "must be 1 or 3")
    if r.size < 8:
        fail("representation", "size", "must be at least 8")
    if r.n_scales < 2:
        fail("representation", "n_scales", "need at least two scales")
    if not 0 < r.fmin_ratio < r.fmax_ratio <= 0.5:
        fail("representation", "fmax_ratio", "need 0 < fmin_ratio < fmax_ratio <= 0.5")
    if r.beta <= 0 or r.gamma <= 0:
        fail("representation", "beta", "Morse parameters must be positive")
    m = cfg.methods
    if not m.methods:
        fail("methods", "methods", "at least one method is required")
    for name in m.methods:
        if name not in METHODS:
            fail("methods", "methods", f"unknown method {name!r} (choose from {METHODS})")
    if not 0 < m.nu <= 1:
        fail("methods", "nu", f"{m.nu} outside (0, 1]")
    for nu in m.nu_grid:
        if not 0 < nu <= 1:
            fail("methods", "nu_grid", f"{nu} outside (0, 1]")
    if m.components < 1:
        fail("methods", "components", "must be >= 1")
    if m.rbf_gamma is not None and not (m.rbf_gamma > 0 and math.isfinite(m.rbf_gamma)):
        fail("methods", "rbf_gamma", "must be positive or 'auto'")
    if m.ica_tol <= 0 or m.ica_max_iter < 1:
        fail("methods", "ica_tol", "tolerance and iteration cap must be positive")
    c = cfg.cae
    if c.preset not in ("desk", "paper-shape"):
        fail("cae", "preset", "must be 'desk' or 'paper-shape'")
    if c.epochs < 0:
        fail("cae", "epochs", "must be >= 0")
    if not c.lr > 0:
        fail("cae", "lr", "must be positive")
    if c.batch < 1:
        fail("cae", "batch", "must be >= 1")
    if c.preset == "desk" and (not c.filters or r.size % (2 ** len(c.filters))):
        fail("cae", "filters", f"image size {r.size} must be divisible by 2^{len(c.filters)}")
    if c.preset == "paper-shape" and (r.size, r.channels) != (256, 3):
        fail("cae", "preset", "paper-shape needs representation size 256 and 3 channels")
    if not cfg.threshold.rules:
        fail("threshold", "rules", "at least one rule is required")
    if cfg.run.repeats < 1:
        fail("run", "repeats", "must be >= 1")


def parse_config(text):
    """Parse and validate configuration text into a :class:`RunConfig`."""
    values = {name: {} for name in SECTIONS}
    lines = {}
    section = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", n)
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", n)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", n)
        if section is None:
            raise ConfigError("key outside of any [section]", n)
        key, value = (part.strip() for part in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"invalid key {key!r}", n)
        schema = {f.name: f for f in fields(SECTIONS[section]())}
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{section}]", n)
        if key in values[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", n)
        try:
            values[section][key] = schema[key].metadata["parse"](value)
        except (ValueError, ValidationError) as exc:
            raise ConfigError(f"[{section}] {key}: cannot parse {value!r} ({exc})", n) from None
        lines[(section, key)] = n
    kwargs = {}
    for name, factory in SECTIONS.items():
        kwargs[name] = replace(factory(), **values[name])
    cfg = RunConfig(**kwargs)
    _validate(cfg, lines)
    return cfg


def load_config(path):
    return parse_config(Path(path).read_text())


def format_config(cfg):
    """Fully resolved configuration text (round-trips through parse_config)."""
    out = []
    for name in SECTIONS:
        sec = getattr(cfg, name)
        out.append(f"[{name}]")
        for f in fields(sec):
            value = getattr(sec, f.name)
            if value is None and f.name in ("path",):
                out.append(f"{f.name} =")
                continue
            if value is None and f.metadata["parse"] is not _opt_float:
                continue
            out.append(f"{f.name} = {_fmt(value)}")
        out.append("")
    return "\n".join(out)


def write_run_manifest(out, extra=None):
    entries = {
        "wavescope_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    entries.update(extra or {})
    path = Path(out) / "run.manifest"
    if path.exists():
        from .wavegen import read_manifest
        old = read_manifest(path)
        old.update({k: str(v) for k, v in entries.items()})
        entries = old
    write_manifest(path, entries)


def default_generation_config():
    return GenerationConfig()
