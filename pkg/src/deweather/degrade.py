"""Deterministic synthetic scenes and parameterized weather degradations.

Clean images are procedural (gradients, rectangles, sinusoidal texture).
Degradations are seeded and severity-parameterized; severity 0 is the
identity bit-exactly, and for a fixed seed the overlay pixel set only grows
with severity, so degraded PSNR never increases as severity rises.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError

WEATHER_TYPES = ("rain", "snow", "haze", "mixed")

HAZE_AIRLIGHT = 0.9
HAZE_BETA_MAX = 3.0  # beta = HAZE_BETA_MAX * severity
OVERLAY_COVERAGE = 0.15  # target covered fraction at severity 1

# rng stream tags, so each consumer of a sample seed gets an independent stream
_STREAM_CLEAN = 1
_STREAM_RAIN = 2
_STREAM_SNOW = 3
_STREAM_DATASET = 4


@dataclass(frozen=True)
class DegradationSpec:
    """One weather condition: type, strength in [0, 1], and overlay seed."""

    weather: str
    severity: float
    seed: int

    def validate(self) -> None:
        if self.weather not in WEATHER_TYPES:
            raise ValidationError(
                f"unknown weather {self.weather!r}, expected one of {WEATHER_TYPES}"
            )
        if not 0.0 <= self.severity <= 1.0:
            raise ValidationError(f"severity {self.severity} outside [0, 1]")


def gen_clean(seed: int, size: tuple[int, int]) -> np.ndarray:
    """Deterministic procedural scene in [0, 1] with std >= 0.05."""
    h, w = size
    if h < 8 or w < 8:
        raise ValidationError(f"image size {size} below the 8 x 8 minimum")
    rng = np.random.default_rng([_STREAM_CLEAN, seed])
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")

    theta = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(theta) * xx + np.sin(theta) * yy
    img = np.empty((h, w, 3))
    for c in range(3):
        img[:, :, c] = rng.uniform(0.25, 0.75) + rng.uniform(-0.35, 0.35) * ramp

    freq = rng.uniform(2.0, 6.0)
    phi = rng.uniform(0, 2 * np.pi)
    alpha = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * freq * (np.cos(alpha) * xx + np.sin(alpha) * yy) + phi)
    img += rng.uniform(0.05, 0.15) * wave[:, :, None]

    for _ in range(rng.integers(3, 7)):
        y0, y1 = np.sort(rng.integers(0, h, 2))
        x0, x1 = np.sort(rng.integers(0, w, 2))
        color = rng.uniform(0, 1, 3)
        blend = rng.uniform(0.5, 1.0)
        img[y0 : y1 + 1, x0 : x1 + 1] = (
            (1 - blend) * img[y0 : y1 + 1, x0 : x1 + 1] + blend * color
        )

    img = np.clip(img, 0.0, 1.0)
    # degenerate-content guard; essentially never triggers
    for _ in range(5):
        if img.std() >= 0.05:
            break
        img = np.clip(0.5 + (img - img.mean()) * 2.0 + 0.05 * wave[:, :, None], 0.0, 1.0)
    return img


def apply_haze(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Atmospheric scattering: I = J*t + A*(1-t), t = exp(-beta*d).

    Depth is a linear per-row ramp, d = 1 at the top row and 0 at the bottom.
    """
    spec.validate()
    if spec.weather not in ("haze", "mixed"):
        raise ValidationError(f"apply_haze called with weather {spec.weather!r}")
    if spec.severity == 0.0:
        return img.copy()
    h = img.shape[0]
    depth = 1.0 - np.arange(h) / (h - 1) if h > 1 else np.ones(1)
    t = np.exp(-HAZE_BETA_MAX * spec.severity * depth)[:, None, None]
    return img * t + HAZE_AIRLIGHT * (1.0 - t)


def _rain_mask(shape: tuple[int, int], spec: DegradationSpec) -> np.ndarray:
    h, w = shape
    rng = np.random.default_rng([_STREAM_RAIN, spec.seed])
    angle = rng.uniform(-0.6, 0.6)  # radians off vertical, fixed per seed
    dy, dx = np.cos(angle), np.sin(angle)
    # streak pool drawn independently of severity so masks nest as it grows
    max_len = 4.0 + 16.0
    pool = max(1, int(OVERLAY_COVERAGE * h * w / max_len + 0.5))
    starts = rng.uniform(0, 1, (pool, 2)) * [h, w]
    length = 4.0 + 16.0 * spec.severity
    count = max(1, int(OVERLAY_COVERAGE * spec.severity * h * w / length + 0.5))
    mask = np.zeros((h, w), dtype=bool)
    steps = np.arange(0.0, length, 0.5)
    for y0, x0 in starts[:count]:
        ys = np.rint(y0 + steps * dy).astype(int)
        xs = np.rint(x0 + steps * dx).astype(int)
        ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        mask[ys[ok], xs[ok]] = True
    return mask


def _snow_mask(shape: tuple[int, int], spec: DegradationSpec) -> np.ndarray:
    h, w = shape
    rng = np.random.default_rng([_STREAM_SNOW, spec.seed])
    # pool sized for the smallest possible fleck so count never exceeds it
    pool = max(1, int(OVERLAY_COVERAGE * h * w / np.pi + 0.5))
    centers = rng.uniform(0, 1, (pool, 2)) * [h, w]
    radii = rng.uniform(1.0, 2.5, (pool, 2))
    mean_area = np.pi * radii[:, 0].mean() * radii[:, 1].mean()
    count = min(
        pool, max(1, int(OVERLAY_COVERAGE * spec.severity * h * w / mean_area + 0.5))
    )
    mask = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    for (cy, cx), (ry, rx) in zip(centers[:count], radii[:count]):
        mask |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return mask


def _blend_overlay(img: np.ndarray, mask: np.ndarray, rng_seed: list[int]) -> np.ndarray:
    # one brightness/opacity per seed: repainted overlap pixels keep the same
    # value, so error vs. the clean image is monotone in the covered set
    rng = np.random.default_rng(rng_seed)
    bright = rng.uniform(0.85, 1.0)
    opacity = rng.uniform(0.55, 0.85)
    out = img.copy()
    out[mask] = (1.0 - opacity) * out[mask] + opacity * bright
    return out


def apply_rain(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Oriented bright streaks, alpha-blended; count and length grow with severity."""
    spec.validate()
    if spec.weather not in ("rain", "mixed"):
        raise ValidationError(f"apply_rain called with weather {spec.weather!r}")
    if spec.severity == 0.0:
        return img.copy()
    mask = _rain_mask(img.shape[:2], spec)
    return _blend_overlay(img, mask, [_STREAM_RAIN, spec.seed, 1])


def apply_snow(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Elliptical bright flecks; count grows with severity."""
    spec.validate()
    if spec.weather != "snow":
        raise ValidationError(f"apply_snow called with weather {spec.weather!r}")
    if spec.severity == 0.0:
        return img.copy()
    mask = _snow_mask(img.shape[:2], spec)
    return _blend_overlay(img, mask, [_STREAM_SNOW, spec.seed, 1])


def apply_degradation(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Dispatch on weather type; mixed composes haze then rain."""
    spec.validate()
    if spec.weather == "rain":
        return apply_rain(img, spec)
    if spec.weather == "snow":
        return apply_snow(img, spec)
    if spec.weather == "haze":
        return apply_haze(img, spec)
    return apply_rain(apply_haze(img, spec), spec)


@dataclass(frozen=True)
class SampleRecord:
    """Manifest row for one generated pair."""

    index: int
    seed: int
    weather: str
    severity: float


def make_dataset(
    n: int,
    mix: dict[str, float],
    size: tuple[int, int],
    seed: int,
    severity: float | tuple[float, float] = (0.3, 0.9),
) -> tuple[list[tuple[np.ndarray, np.ndarray, DegradationSpec]], list[SampleRecord]]:
    """Generate ``n`` deterministic (clean, degraded, spec) pairs plus a manifest.

    ``mix`` maps weather type to sampling weight; ``severity`` is either a
    fixed value or a uniform (low, high) range. Samples are keyed by
    per-sample seeds, so generation order does not matter.
    """
    if n < 1:
        raise ValidationError(f"dataset size {n} must be >= 1")
    if not mix or any(wt < 0 for wt in mix.values()) or sum(mix.values()) <= 0:
        raise ValidationError(f"weather mix {mix!r} must have positive total weight")
    for weather in mix:
        if weather not in WEATHER_TYPES:
            raise ValidationError(
                f"unknown weather {weather!r} in mix, expected one of {WEATHER_TYPES}"
            )
    names = sorted(mix)
    weights = np.array([mix[name] for name in names], dtype=np.float64)
    weights /= weights.sum()

    samples = []
    manifest = []
    for i in range(n):
        rng = np.random.default_rng([_STREAM_DATASET, seed, i])
        weather = names[rng.choice(len(names), p=weights)]
        if isinstance(severity, tuple):
            sev = float(rng.uniform(severity[0], severity[1]))
        else:
            sev = float(severity)
        sample_seed = int(rng.integers(0, 2**31 - 1))
        spec = DegradationSpec(weather, sev, sample_seed)
        clean = gen_clean(sample_seed, size)
        samples.append((clean, apply_degradation(clean, spec), spec))
        manifest.append(SampleRecord(i, sample_seed, weather, sev))
    return samples, manifest
