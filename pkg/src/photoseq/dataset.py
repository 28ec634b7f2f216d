"""Training-sample production from high-frame-rate video corpora.

A sample is a random spatio-temporal crop: the blur frame count N is chosen
from the temporal luma variance of the cropped window (more motion, longer
blur), the triplet and target are synthesized by temporal averaging, and
sensor noise is injected into the shorts only. Static crops are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .imaging import (
    DecompositionTriple,
    ExposureTriplet,
    FrameClip,
    Image,
    load_image,
    make_triplet,
    recomposition_residual,
    save_image,
)
from .noise import NoiseParams, add_noise

DEFAULT_VARIANCE_TO_N: tuple[tuple[float, int], ...] = (
    (1e-4, 11),
    (1e-3, 17),
    (3e-3, 23),
    (1e-2, 31),
    (3e-2, 39),
)


@dataclass(frozen=True)
class BuilderConfig:
    """Knobs for sample synthesis.

    variance_to_n maps temporal-variance cutoffs to blur frame counts: a
    window gets the largest N whose cutoff it reaches. noisy_short_count
    selects how many shorts are corrupted (2 default; 1 picks a random
    side; 0 leaves both clean).
    """

    n_min: int = 11
    n_max: int = 39
    crop_size: int = 128
    variance_reject_threshold: float = 1e-4
    variance_to_n: tuple[tuple[float, int], ...] = DEFAULT_VARIANCE_TO_N
    h_flip: bool = True
    rot90: bool = True
    temporal_flip: bool = True
    noisy_short_count: int = 2

    def __post_init__(self):
        if self.n_min % 2 == 0 or self.n_max % 2 == 0 or not 3 <= self.n_min <= self.n_max:
            raise ValueError(f"n_min/n_max must be odd with 3 <= n_min <= n_max, got {self.n_min}/{self.n_max}")
        if self.crop_size < 1:
            raise ValueError("crop_size must be positive")
        if self.noisy_short_count not in (0, 1, 2):
            raise ValueError(f"noisy_short_count must be 0, 1 or 2, got {self.noisy_short_count}")
        cutoffs = [c for c, _ in self.variance_to_n]
        if not self.variance_to_n or any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
            raise ValueError("variance_to_n cutoffs must be strictly increasing and non-empty")
        for _, n in self.variance_to_n:
            if n % 2 == 0 or not self.n_min <= n <= self.n_max:
                raise ValueError(f"mapped N={n} must be odd within [{self.n_min}, {self.n_max}]")

    @property
    def window_length(self) -> int:
        return self.n_max + 2


@dataclass
class TrainingSample:
    """One network input/target pair: noisy triplet, clean decomposition."""

    triplet: ExposureTriplet
    target: DecompositionTriple
    crop_origin: tuple[int, int]
    source_id: str


def luma(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luma; accepts a frame or a frame stack (channel axis last)."""
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def temporal_variance(stack: np.ndarray) -> float:
    """Mean over pixels of per-pixel temporal luma variance for a TxHxWx3 window."""
    return float(luma(stack.astype(np.float64)).var(axis=0).mean())


def select_blur_length(frames, cfg: BuilderConfig) -> int | None:
    """Pick the blur frame count for a window, or None to reject it as static."""
    stack = frames.stack if isinstance(frames, FrameClip) else np.stack(list(frames))
    if stack.shape[0] < cfg.window_length:
        raise IndexError(f"window has {stack.shape[0]} frames, need >= {cfg.window_length}")
    variance = temporal_variance(stack)
    if variance < cfg.variance_reject_threshold:
        return None
    chosen = cfg.n_min
    for cutoff, n in cfg.variance_to_n:
        if variance >= cutoff:
            chosen = n
    return chosen


def build_sample(
    clip: FrameClip,
    seed: int,
    cfg: BuilderConfig,
    noise: NoiseParams,
) -> TrainingSample | None:
    """Draw one sample from a clip, or None when the crop shows no motion.

    Deterministic for a fixed seed: window position, crop origin, noise
    realizations and (for noisy_short_count=1) the corrupted side all come
    from one generator.
    """
    rng = np.random.default_rng(seed)
    n_frames, height, width = len(clip), clip.stack.shape[1], clip.stack.shape[2]
    win = cfg.window_length
    if n_frames < win:
        raise IndexError(f"clip '{clip.clip_id}' has {n_frames} frames, need >= {win}")
    if height < cfg.crop_size or width < cfg.crop_size:
        raise DataError(f"clip '{clip.clip_id}' frames {height}x{width} smaller than crop {cfg.crop_size}")

    t0 = int(rng.integers(0, n_frames - win + 1))
    row = int(rng.integers(0, height - cfg.crop_size + 1))
    col = int(rng.integers(0, width - cfg.crop_size + 1))
    window = np.ascontiguousarray(
        clip.stack[t0 : t0 + win, row : row + cfg.crop_size, col : col + cfg.crop_size, :]
    )
    window_clip = FrameClip(window, nominal_fps=clip.nominal_fps, clip_id=clip.clip_id)

    n = select_blur_length(window_clip, cfg)
    if n is None:
        return None

    # center the blur interval inside the window; shorts stay adjacent
    start = 1 + (cfg.n_max - n) // 2
    triplet, target = make_triplet(window_clip, start=start, n=n)

    noisy_sides: tuple[bool, bool]
    if cfg.noisy_short_count == 2:
        noisy_sides = (True, True)
    elif cfg.noisy_short_count == 1:
        noisy_sides = (True, False) if rng.random() < 0.5 else (False, True)
    else:
        noisy_sides = (False, False)
    pre, post = triplet.short_pre, triplet.short_post
    seed_pre, seed_post = int(rng.integers(0, 2**63)), int(rng.integers(0, 2**63))
    if noisy_sides[0]:
        pre = add_noise(pre, noise, seed_pre)
    if noisy_sides[1]:
        post = add_noise(post, noise, seed_post)
    triplet = ExposureTriplet(
        short_pre=pre,
        long=triplet.long,
        short_post=post,
        n_frames_long=n,
        short_is_noisy=noisy_sides,
    )
    return TrainingSample(triplet=triplet, target=target, crop_origin=(row, col), source_id=clip.clip_id)


# --- augmentation -------------------------------------------------------------


def temporal_flip(sample: TrainingSample) -> TrainingSample:
    """Reverse time: swap the shorts and swap the halves; mid and long are unchanged."""
    t = sample.triplet
    triplet = ExposureTriplet(
        short_pre=t.short_post,
        long=t.long,
        short_post=t.short_pre,
        n_frames_long=t.n_frames_long,
        short_is_noisy=(t.short_is_noisy[1], t.short_is_noisy[0]),
    )
    g = sample.target
    target = DecompositionTriple(
        first_half=g.second_half,
        mid_sharp=g.mid_sharp,
        second_half=g.first_half,
        n1=g.n2,
        n2=g.n1,
    )
    return TrainingSample(triplet, target, sample.crop_origin, sample.source_id)


def _spatial_map(sample: TrainingSample, op) -> TrainingSample:
    t, g = sample.triplet, sample.target
    triplet = ExposureTriplet(
        short_pre=op(t.short_pre),
        long=op(t.long),
        short_post=op(t.short_post),
        n_frames_long=t.n_frames_long,
        short_is_noisy=t.short_is_noisy,
    )
    target = DecompositionTriple(
        first_half=op(g.first_half),
        mid_sharp=op(g.mid_sharp),
        second_half=op(g.second_half),
        n1=g.n1,
        n2=g.n2,
    )
    return TrainingSample(triplet, target, sample.crop_origin, sample.source_id)


def horizontal_flip(sample: TrainingSample) -> TrainingSample:
    return _spatial_map(sample, lambda img: np.ascontiguousarray(img[:, ::-1, :]))


def rotate90(sample: TrainingSample, k: int) -> TrainingSample:
    """Rotate all images by k quarter turns (k = 1 or -1)."""
    return _spatial_map(sample, lambda img: np.ascontiguousarray(np.rot90(img, k=k, axes=(0, 1))))


def augment(sample: TrainingSample, seed: int, cfg: BuilderConfig) -> TrainingSample:
    """Apply each enabled augmentation independently with probability 0.5."""
    rng = np.random.default_rng(seed)
    if cfg.h_flip and rng.random() < 0.5:
        sample = horizontal_flip(sample)
    if cfg.rot90 and rng.random() < 0.5:
        sample = rotate90(sample, 1 if rng.random() < 0.5 else -1)
    if cfg.temporal_flip and rng.random() < 0.5:
        sample = temporal_flip(sample)
    return sample


# --- corpus-level machinery ----------------------------------------------------


class SampleBuilder:
    """Stateless sample source over one or more corpora.

    generate(seed) picks a clip uniformly at random and retries rejected
    (static) crops with derived seeds, so worker pools can partition seeds
    freely. Augmentation is applied here when enabled.
    """

    def __init__(
        self,
        clips: Sequence[FrameClip],
        cfg: BuilderConfig,
        noise: NoiseParams,
        augment_samples: bool = True,
        max_tries: int = 25,
    ):
        if not clips:
            raise DataError("empty corpus")
        self.clips = list(clips)
        self.cfg = cfg
        self.noise = noise
        self.augment_samples = augment_samples
        self.max_tries = max_tries

    def generate(self, seed: int) -> TrainingSample:
        rng = np.random.default_rng(seed)
        for _ in range(self.max_tries):
            clip = self.clips[int(rng.integers(0, len(self.clips)))]
            sample = build_sample(clip, int(rng.integers(0, 2**63)), self.cfg, self.noise)
            if sample is None:
                continue
            if self.augment_samples:
                sample = augment(sample, int(rng.integers(0, 2**63)), self.cfg)
            return sample
        raise DataError(f"no motion found in {self.max_tries} draws; corpus looks static")


def calibrate_variance_buckets(
    clips: Sequence[FrameClip],
    cfg: BuilderConfig,
    seed: int = 0,
    n_probe: int = 200,
) -> BuilderConfig:
    """Recompute variance cutoffs as corpus quantiles, keeping the mapped Ns.

    Probes random windows/crops, drops rejected ones, and spreads the
    existing N levels over equal-mass variance buckets.
    """
    rng = np.random.default_rng(seed)
    variances = []
    for _ in range(n_probe):
        clip = clips[int(rng.integers(0, len(clips)))]
        win = cfg.window_length
        if len(clip) < win:
            raise IndexError(f"clip '{clip.clip_id}' too short for window {win}")
        t0 = int(rng.integers(0, len(clip) - win + 1))
        h, w = clip.stack.shape[1:3]
        row = int(rng.integers(0, h - cfg.crop_size + 1))
        col = int(rng.integers(0, w - cfg.crop_size + 1))
        v = temporal_variance(clip.stack[t0 : t0 + win, row : row + cfg.crop_size, col : col + cfg.crop_size])
        if v >= cfg.variance_reject_threshold:
            variances.append(v)
    if len(variances) < 2 * len(cfg.variance_to_n):
        raise DataError("not enough moving crops to calibrate variance buckets")
    ns = [n for _, n in cfg.variance_to_n]
    qs = np.quantile(variances, np.linspace(0.0, 1.0, len(ns), endpoint=False))
    qs[0] = cfg.variance_reject_threshold
    cutoffs = np.maximum.accumulate(qs)  # guard against ties collapsing order
    mapping = []
    prev = None
    for c, n in zip(cutoffs, ns):
        c = float(c) if prev is None or c > prev else prev * (1.0 + 1e-9)
        mapping.append((c, n))
        prev = c
    return replace(cfg, variance_to_n=tuple(mapping))


# --- on-disk sample cache -------------------------------------------------------

_SAMPLE_IMAGES = ("short_pre", "long", "short_post", "first_half", "mid_sharp", "second_half")

# 16-bit quantization perturbs each stored image by <= 2^-17, so the exact
# recomposition identity relaxes to ~1e-5 after a disk round trip.
CACHE_IDENTITY_TOL = 5e-5


def write_sample_cache(
    directory: str | Path,
    samples: Sequence[TrainingSample],
    seed: int,
    verify: bool = True,
) -> Path:
    """Write samples as per-sample PNG directories plus a manifest.

    The manifest is deterministic for a fixed seed/sample list. With
    verify=True each sample is re-read and its recomposition identity is
    checked at the quantization-aware tolerance.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(samples):
        sub = directory / f"sample_{i:05d}"
        sub.mkdir(exist_ok=True)
        images = {
            "short_pre": sample.triplet.short_pre,
            "long": sample.triplet.long,
            "short_post": sample.triplet.short_post,
            "first_half": sample.target.first_half,
            "mid_sharp": sample.target.mid_sharp,
            "second_half": sample.target.second_half,
        }
        for name in _SAMPLE_IMAGES:
            save_image(sub / f"{name}.png", images[name], bit_depth=16)
        entries.append(
            {
                "index": i,
                "dir": sub.name,
                "n": sample.triplet.n_frames_long,
                "n1": sample.target.n1,
                "n2": sample.target.n2,
                "short_is_noisy": list(sample.triplet.short_is_noisy),
                "crop_origin": list(sample.crop_origin),
                "source_id": sample.source_id,
            }
        )
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"seed": seed, "samples": entries}, indent=2, sort_keys=True))
    if verify:
        verify_sample_cache(directory)
    return manifest


def verify_sample_cache(directory: str | Path, tol: float = CACHE_IDENTITY_TOL) -> int:
    """Re-read every cached sample and check the recomposition identity."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    for entry in manifest["samples"]:
        sub = directory / entry["dir"]
        images = {name: load_image(sub / f"{name}.png") for name in _SAMPLE_IMAGES}
        triple = DecompositionTriple(
            first_half=images["first_half"].astype(np.float64),
            mid_sharp=images["mid_sharp"].astype(np.float64),
            second_half=images["second_half"].astype(np.float64),
            n1=entry["n1"],
            n2=entry["n2"],
        )
        residual = recomposition_residual(triple, images["long"].astype(np.float64))
        if residual > tol:
            raise DataError(f"cached sample {entry['index']} violates the recomposition identity: {residual:.2e}")
    return len(manifest["samples"])
