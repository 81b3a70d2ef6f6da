"""Synthetic chirp spectrogram generation.

A sample is built in five stages: start from a zero frequency-by-time matrix,
pick chirp parameters, paint the chirp's time-frequency track with a Gaussian
intensity spread, add white Gaussian noise at a uniformly drawn level, then
smooth with a small Gaussian filter.  The matrix is exported as an 8-bit
grayscale PNG (per-image min-max scaled) next to a ``labels.csv`` row holding
the ground truth.

Bin mapping conventions (isolated here so they are swappable):

* time bins use the ceiling of ``(t / T) * n_t`` for both ends,
* the start frequency bin uses the ceiling, the end frequency bin uses
  round-half-even,
* results are clamped to ``[0, n_t - 1]`` and ``[1, n_f - 1]``.

In-memory row ``i`` is frequency bin ``i`` (low frequencies at low indices);
the exported PNG is flipped vertically so the top row is the highest bin.

Every random draw flows through a per-sample ``numpy`` generator derived from
``(seed, sample_index)``, so generation order (or parallelism) cannot change
the output.  Draw order per sample: chirp type, t0, dt, f0, f1, noise level,
noise matrix.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .errors import ConfigurationError, DomainError, GenerationError

CHIRP_LINEAR = "linear"
CHIRP_EXPONENTIAL = "exponential"
CHIRP_TYPES = (CHIRP_LINEAR, CHIRP_EXPONENTIAL)

# relative tolerance below which an exponential chirp degenerates to a pure tone
PURE_TONE_RTOL = 1e-9


@dataclass(frozen=True)
class SynthConfig:
    """Geometry, noise, and smoothing settings for spectrogram synthesis."""

    n_f: int = 128
    n_t: int = 128
    T: float = 60.0
    f_max: float = 100.0
    sigma_spread: float = 0.5
    noise_range: tuple[float, float] = (0.09, 0.3)
    sigma_filter: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_f < 2:
            raise ConfigurationError(f"n_f must be >= 2, got {self.n_f}")
        if self.n_t < 2:
            raise ConfigurationError(f"n_t must be >= 2, got {self.n_t}")
        if self.T <= 0:
            raise ConfigurationError(f"T must be > 0, got {self.T}")
        if self.f_max <= 0:
            raise ConfigurationError(f"f_max must be > 0, got {self.f_max}")
        if self.sigma_spread <= 0:
            raise ConfigurationError(f"sigma_spread must be > 0, got {self.sigma_spread}")
        if self.sigma_filter < 0:
            raise ConfigurationError(f"sigma_filter must be >= 0, got {self.sigma_filter}")
        lo, hi = self.noise_range
        if lo < 0 or hi < lo:
            raise ConfigurationError(
                f"noise_range must satisfy 0 <= low <= high, got {self.noise_range}")


@dataclass(frozen=True)
class ChirpParams:
    """Ground truth for one chirp: onset time, frequency sweep, duration, type."""

    t0: float
    f0: float
    f1: float
    dt: float
    chirp_type: str

    def validate(self, config: SynthConfig) -> None:
        if self.chirp_type not in CHIRP_TYPES:
            raise ConfigurationError(f"unknown chirp_type {self.chirp_type!r}")
        if self.t0 < 0 or self.t0 + self.dt > config.T:
            raise DomainError(
                f"chirp [{self.t0}, {self.t0 + self.dt}] must lie within [0, {config.T}]")
        if self.dt <= 0:
            raise DomainError(f"dt must be > 0, got {self.dt}")
        for name, f in (("f0", self.f0), ("f1", self.f1)):
            if f <= 0 or f > config.f_max:
                raise DomainError(f"{name} must be in (0, {config.f_max}], got {f}")


@dataclass
class Spectrogram:
    """Frequency-by-time intensity matrix; row i is frequency bin i."""

    data: np.ndarray
    config: SynthConfig

    def __post_init__(self):
        if self.data.shape != (self.config.n_f, self.config.n_t):
            raise ConfigurationError(
                f"matrix shape {self.data.shape} does not match config "
                f"({self.config.n_f}, {self.config.n_t})")
        if not np.isfinite(self.data).all():
            raise ConfigurationError("spectrogram contains non-finite entries")


@dataclass
class GenerationManifest:
    output_dir: str
    labels_path: str
    image_pattern: str
    count: int
    seed: int
    config: SynthConfig
    version: str = field(default="")

    def to_dict(self) -> dict:
        cfg = dict(vars(self.config))
        cfg["noise_range"] = list(self.config.noise_range)
        return {
            "output_dir": self.output_dir,
            "labels_path": self.labels_path,
            "image_pattern": self.image_pattern,
            "count": self.count,
            "seed": self.seed,
            "config": cfg,
            "version": self.version,
            "image_convention": "8-bit grayscale, width=n_t, height=n_f, "
                                "top row = highest frequency bin",
        }


def init_spectrogram(config: SynthConfig) -> Spectrogram:
    """All-zero spectrogram matrix for the given geometry."""
    config.validate()
    return Spectrogram(np.zeros((config.n_f, config.n_t)), config)


def sample_chirp_params(config: SynthConfig, rng: np.random.Generator) -> ChirpParams:
    """Draw one chirp's parameters.

    Type is uniform over linear/exponential; t0 ~ U[0, 0.75T];
    dt ~ U[0.1T, min(0.5T, T - t0)]; f0, f1 ~ U[0.05 f_max, f_max].
    """
    config.validate()
    chirp_type = CHIRP_TYPES[int(rng.integers(0, 2))]
    t0 = rng.uniform(0.0, 0.75 * config.T)
    dt = rng.uniform(0.1 * config.T, min(0.5 * config.T, config.T - t0))
    f0 = rng.uniform(0.05 * config.f_max, config.f_max)
    f1 = rng.uniform(0.05 * config.f_max, config.f_max)
    params = ChirpParams(t0=t0, f0=f0, f1=f1, dt=dt, chirp_type=chirp_type)
    params.validate(config)
    return params


def _check_time_domain(t, T_c):
    t = np.asarray(t, dtype=np.float64)
    if T_c <= 0:
        raise DomainError(f"chirp duration must be > 0, got {T_c}")
    if np.any(t < 0) or np.any(t > T_c):
        raise DomainError(f"t must lie in [0, {T_c}]")
    return t


def linear_chirp_value(t, f0: float, f1: float, T_c: float):
    """Linearly swept sinusoid sin(2pi*(f0*t + (f1-f0)*t^2/(2*T_c)))."""
    t = _check_time_domain(t, T_c)
    phase = 2.0 * np.pi * (f0 * t + (f1 - f0) * t * t / (2.0 * T_c))
    out = np.sin(phase)
    return float(out) if out.ndim == 0 else out


def exponential_chirp_value(t, f0: float, f1: float, T_c: float):
    """Exponentially swept sinusoid sin(2pi*f0*(k^t - 1)/ln k), k = (f1/f0)^(1/T_c).

    Near f0 == f1 the growth factor k tends to 1 and the expression has a
    removable singularity; the analytic limit is the pure tone sin(2pi*f0*t).
    """
    t = _check_time_domain(t, T_c)
    if f0 <= 0 or f1 <= 0:
        raise DomainError(f"exponential chirp requires f0 > 0 and f1 > 0, got {f0}, {f1}")
    if abs(f1 / f0 - 1.0) < PURE_TONE_RTOL:
        out = np.sin(2.0 * np.pi * f0 * t)
    else:
        k = (f1 / f0) ** (1.0 / T_c)
        out = np.sin(2.0 * np.pi * f0 * (np.power(k, t) - 1.0) / np.log(k))
    return float(out) if out.ndim == 0 else out


def map_time_bins(t0: float, dt: float, config: SynthConfig) -> tuple[int, int]:
    """Ceiling-mapped start/end time bins, clamped to [0, n_t - 1]."""
    if t0 < 0 or dt <= 0 or t0 + dt > config.T:
        raise DomainError(
            f"chirp window [{t0}, {t0 + dt}] must lie within [0, {config.T}] with dt > 0")
    t_start = math.ceil(t0 / config.T * config.n_t)
    t_end = math.ceil((t0 + dt) / config.T * config.n_t)
    clamp = lambda b: min(max(b, 0), config.n_t - 1)
    return clamp(t_start), clamp(t_end)


def map_freq_bins(f0: float, f1: float, config: SynthConfig) -> tuple[int, int]:
    """Start bin by ceiling, end bin by round-half-even, clamped to [1, n_f - 1]."""
    for name, f in (("f0", f0), ("f1", f1)):
        if f <= 0 or f > config.f_max:
            raise DomainError(f"{name} must be in (0, {config.f_max}], got {f}")
    f_start = math.ceil(f0 / config.f_max * config.n_f)
    f_end = int(np.rint(f1 / config.f_max * config.n_f))
    clamp = lambda b: min(max(b, 1), config.n_f - 1)
    return clamp(f_start), clamp(f_end)


def render_chirp(spec: Spectrogram, params: ChirpParams, config: SynthConfig) -> Spectrogram:
    """Add the chirp's Gaussian-spread track to a copy of ``spec``.

    For each time bin in the track the center frequency bin is interpolated
    (linearly or geometrically) between the mapped start and end bins, and
    every frequency row receives exp(-(row - center)^2 / (2 sigma^2)).
    """
    params.validate(config)
    t_start, t_end = map_time_bins(params.t0, params.dt, config)
    f_start, f_end = map_freq_bins(params.f0, params.f1, config)
    out = spec.data.copy()
    kernels.add_chirp_track(out, t_start, t_end, f_start, f_end,
                            params.chirp_type == CHIRP_EXPONENTIAL,
                            config.sigma_spread)
    return Spectrogram(out, config)


def add_noise(spec: Spectrogram, rng: np.random.Generator,
              config: SynthConfig) -> tuple[Spectrogram, float]:
    """Add eta * N(0,1) elementwise, eta drawn uniformly from ``noise_range``."""
    lo, hi = config.noise_range
    eta = float(rng.uniform(lo, hi))
    if eta == 0.0:
        return Spectrogram(spec.data.copy(), config), 0.0
    noisy = spec.data + eta * rng.standard_normal(spec.data.shape)
    return Spectrogram(noisy, config), eta


def gaussian_smooth(spec: Spectrogram, sigma_filter: float) -> Spectrogram:
    """Convolve with a unit-sum Gaussian kernel (radius ceil(3 sigma), reflect pad)."""
    if sigma_filter < 0:
        raise ConfigurationError(f"sigma_filter must be >= 0, got {sigma_filter}")
    return Spectrogram(kernels.gaussian_smooth2d(spec.data, sigma_filter), spec.config)


def spectrogram_to_image(spec: Spectrogram) -> np.ndarray:
    """8-bit grayscale pixels: clip negatives, min-max scale to [0, 255], flip rows."""
    clipped = np.maximum(spec.data, 0.0)
    lo = clipped.min()
    hi = clipped.max()
    if hi > lo:
        scaled = (clipped - lo) / (hi - lo) * 255.0
    else:
        scaled = np.zeros_like(clipped)
    return np.flipud(np.rint(scaled).astype(np.uint8))


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent per-sample generator; a pure function of (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def synthesize_sample(config: SynthConfig, index: int) -> tuple[Spectrogram, ChirpParams, float]:
    """Full pipeline for sample ``index``: params, track, noise, smoothing."""
    rng = sample_rng(config.seed, index)
    params = sample_chirp_params(config, rng)
    spec = init_spectrogram(config)
    spec = render_chirp(spec, params, config)
    spec, eta = add_noise(spec, rng, config)
    spec = gaussian_smooth(spec, config.sigma_filter)
    return spec, params, eta


LABELS_HEADER = ("t0", "f0", "f1", "dt", "chirp_type")


def generate_dataset(config: SynthConfig, count: int, output_dir) -> GenerationManifest:
    """Write ``count`` PNGs plus ``labels.csv`` and ``manifest.json``.

    Row i of the CSV corresponds to ``spectrogram_{i}.png``.  Identical
    (config, count) reproduce identical bytes.
    """
    from . import __version__

    config.validate()
    if count < 1:
        raise ConfigurationError(f"count must be >= 1, got {count}")
    out = Path(output_dir)
    written = 0
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for i in range(count):
            spec, params, _ = synthesize_sample(config, i)
            Image.fromarray(spectrogram_to_image(spec), mode="L").save(
                out / f"spectrogram_{i}.png")
            rows.append(params)
            written += 1
        labels_path = out / "labels.csv"
        with open(labels_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LABELS_HEADER)
            for p in rows:
                writer.writerow([repr(p.t0), repr(p.f0), repr(p.f1), repr(p.dt),
                                 p.chirp_type])
        manifest = GenerationManifest(
            output_dir=str(out), labels_path=str(labels_path),
            image_pattern="spectrogram_{i}.png", count=count, seed=config.seed,
            config=config, version=__version__)
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest.to_dict(), fh, indent=2)
        return manifest
    except OSError as exc:
        raise GenerationError(
            f"dataset generation failed after {written}/{count} samples: {exc}",
            written=written) from exc
