"""Signal-dependent sensor noise for short exposures.

Noise variance follows an affine law in the clean intensity i:

    var(n) = i * alpha + beta

with per-gain coefficients (alpha, beta). Corruption draws independent
zero-mean Gaussians at that variance and clamps back to [0,1]. Calibration
fits the same line to per-pixel temporal statistics of static-scene bursts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import DataError, IllPosedError
from .imaging import FrameClip, Image, validate_image


@dataclass(frozen=True)
class NoiseParams:
    """Affine noise-variance coefficients for one gain setting."""

    alpha: float  # variance per unit intensity
    beta: float  # signal-independent variance floor
    gain_label: str = "default"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"noise coefficients must be >= 0, got alpha={self.alpha}, beta={self.beta}")

    def variance(self, intensity: np.ndarray) -> np.ndarray:
        return intensity * self.alpha + self.beta


def add_noise(img: Image, params: NoiseParams, seed: int) -> Image:
    """Corrupt an image with zero-mean Gaussian noise of variance i*alpha + beta.

    The variance is driven by the clean intensity. Output is clamped to
    [0,1]; a fixed seed gives a bit-identical result.
    """
    validate_image(img)
    rng = np.random.default_rng(seed)
    sigma = np.sqrt(params.variance(img.astype(np.float64)))
    noisy = img + rng.standard_normal(img.shape) * sigma
    return np.clip(noisy, 0.0, 1.0)


def estimate_noise_params(
    bursts: Sequence[FrameClip],
    gain_label: str = "default",
    min_frames: int = 8,
    min_level_spread: float = 0.05,
) -> NoiseParams:
    """Fit the affine variance law to static-scene bursts.

    Pools per-pixel temporal (mean, variance) pairs over all bursts and
    channels, then least-squares fits variance against mean. Coefficients
    are clipped at zero. Bursts must span at least two distinct intensity
    levels (mean spread >= min_level_spread), otherwise the line is not
    identifiable and IllPosedError is raised.
    """
    if not bursts:
        raise DataError("need at least one burst")
    means, variances = [], []
    for burst in bursts:
        if len(burst) < min_frames:
            raise DataError(f"burst '{burst.clip_id}' has {len(burst)} frames, need >= {min_frames}")
        stack = burst.stack.astype(np.float64)
        means.append(stack.mean(axis=0).ravel())
        variances.append(stack.var(axis=0, ddof=1).ravel())
    mean_all = np.concatenate(means)
    var_all = np.concatenate(variances)
    if float(mean_all.max() - mean_all.min()) < min_level_spread:
        raise IllPosedError(
            "bursts cover a single intensity level; the variance line is not identifiable"
        )
    slope, intercept = np.polyfit(mean_all, var_all, 1)
    return NoiseParams(alpha=max(float(slope), 0.0), beta=max(float(intercept), 0.0), gain_label=gain_label)


def save_noise_params(path: str | Path, params: NoiseParams) -> None:
    payload = {"alpha": float(params.alpha), "beta": float(params.beta), "gain_label": params.gain_label}
    Path(path).write_text(yaml.safe_dump(payload, sort_keys=True))


def load_noise_params(path: str | Path) -> NoiseParams:
    payload = yaml.safe_load(Path(path).read_text())
    if not isinstance(payload, dict) or not {"alpha", "beta"} <= payload.keys():
        raise DataError(f"malformed noise parameter file: {path}")
    return NoiseParams(
        alpha=float(payload["alpha"]),
        beta=float(payload["beta"]),
        gain_label=str(payload.get("gain_label", "default")),
    )
