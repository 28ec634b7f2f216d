"""Exposure synthesis by temporal averaging of video frames.

An observed exposure is modelled as the average of the latent sharp frames
covering its time interval. A long exposure over an odd number of frames N
splits exactly into two half exposures of (N-1)/2 frames each plus the
middle sharp frame:

    long = (n1 * first_half + mid_sharp + n2 * second_half) / (n1 + n2 + 1)

All pixel data lives in [0, 1]. Clips are kept as float32 stacks; every
derived exposure is accumulated in float64 so the identity above holds to
~1e-12 per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from .errors import DataError

Image = np.ndarray  # H x W x 3, float, values in [0, 1]


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the HxWx3 [0,1] contract and return the array unchanged."""
    if not isinstance(img, np.ndarray):
        raise ValueError(f"{name} must be an ndarray, got {type(img).__name__}")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name} must be HxWx3, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} has empty spatial dims {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        raise ValueError(f"{name} must be float, got dtype {img.dtype}")
    lo, hi = float(img.min()), float(img.max())
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo < 0.0 or hi > 1.0:
        raise ValueError(f"{name} values outside [0, 1]: min={lo}, max={hi}")
    return img


@dataclass
class FrameClip:
    """An ordered stack of same-sized frames from one video clip."""

    stack: np.ndarray  # T x H x W x 3
    nominal_fps: float = 240.0
    clip_id: str = ""

    def __init__(self, frames, nominal_fps: float = 240.0, clip_id: str = ""):
        if isinstance(frames, np.ndarray) and frames.ndim == 4:
            stack = frames
        else:
            frames = list(frames)
            if not frames:
                raise ValueError("a clip needs at least one frame")
            shapes = {f.shape for f in frames}
            if len(shapes) != 1:
                raise ValueError(f"frames have mixed shapes: {sorted(shapes)}")
            stack = np.stack(frames)
        if stack.shape[0] < 1 or stack.ndim != 4 or stack.shape[3] != 3:
            raise ValueError(f"clip stack must be TxHxWx3, got {stack.shape}")
        validate_image(stack[0], "frame 0")
        self.stack = stack
        self.nominal_fps = float(nominal_fps)
        self.clip_id = clip_id

    def __len__(self) -> int:
        return self.stack.shape[0]

    @property
    def frames(self) -> list[Image]:
        return list(self.stack)

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return self.stack.shape[1:]

    def crop(self, row: int, col: int, size: int) -> "FrameClip":
        """Spatial crop of every frame (view-backed copy)."""
        h, w = self.stack.shape[1:3]
        if row < 0 or col < 0 or row + size > h or col + size > w:
            raise ValueError(f"crop {size}x{size} at ({row},{col}) exceeds {h}x{w}")
        return FrameClip(
            np.ascontiguousarray(self.stack[:, row : row + size, col : col + size, :]),
            nominal_fps=self.nominal_fps,
            clip_id=self.clip_id,
        )

    def reversed(self) -> "FrameClip":
        return FrameClip(self.stack[::-1].copy(), self.nominal_fps, self.clip_id)


@dataclass
class ExposureTriplet:
    """Short-long-short observations of one long-exposure interval.

    The long exposure spans n_frames_long latent frames; each short is the
    single frame immediately before / after that window. short_is_noisy
    records which shorts carry injected sensor noise.
    """

    short_pre: Image
    long: Image
    short_post: Image
    n_frames_long: int
    short_is_noisy: tuple[bool, bool] = (False, False)

    def __post_init__(self):
        if self.n_frames_long < 3 or self.n_frames_long % 2 == 0:
            raise ValueError(f"n_frames_long must be odd and >= 3, got {self.n_frames_long}")
        validate_image(self.long, "long")
        for name in ("short_pre", "short_post"):
            img = getattr(self, name)
            validate_image(img, name)
            if img.shape != self.long.shape:
                raise ValueError(f"{name} shape {img.shape} != long shape {self.long.shape}")


@dataclass
class DecompositionTriple:
    """One decomposition step's output: two half exposures and the midpoint frame.

    n1 and n2 are the latent frame counts of the two halves; for a long
    exposure of N frames both equal (N - 1) / 2.
    """

    first_half: Image
    mid_sharp: Image
    second_half: Image
    n1: int
    n2: int

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError(f"half frame counts must be positive, got {self.n1}, {self.n2}")
        validate_image(self.mid_sharp, "mid_sharp")
        for name in ("first_half", "second_half"):
            img = getattr(self, name)
            validate_image(img, name)
            if img.shape != self.mid_sharp.shape:
                raise ValueError(f"{name} shape {img.shape} != mid shape {self.mid_sharp.shape}")

    @property
    def n(self) -> int:
        return self.n1 + self.n2 + 1


def average_frames(frames: Sequence[Image] | np.ndarray) -> Image:
    """Pixelwise arithmetic mean of same-sized frames (float64 accumulation)."""
    if isinstance(frames, np.ndarray) and frames.ndim == 4:
        stack = frames
    else:
        frames = list(frames)
        if len(frames) == 0:
            raise ValueError("cannot average an empty frame list")
        shapes = {f.shape for f in frames}
        if len(shapes) != 1:
            raise ValueError(f"frames have mixed shapes: {sorted(shapes)}")
        stack = np.stack(frames)
    if stack.shape[0] == 0:
        raise ValueError("cannot average an empty frame list")
    return np.mean(stack, axis=0, dtype=np.float64)


def make_triplet(clip: FrameClip, start: int, n: int) -> tuple[ExposureTriplet, DecompositionTriple]:
    """Synthesize a short-long-short triplet and its decomposition target.

    The long exposure averages clip frames [start, start+n); the shorts are
    the single frames at start-1 and start+n. Both returned shorts are
    noise-free; noise is injected downstream.
    """
    if n < 3 or n % 2 == 0:
        raise ValueError(f"blur frame count must be odd and >= 3, got {n}")
    if start < 1 or start + n > len(clip) - 1:
        raise IndexError(
            f"triplet needs frames [{start - 1}, {start + n}] but clip has {len(clip)} frames"
        )
    half = (n - 1) // 2
    window = clip.stack[start : start + n]
    long = average_frames(window)
    triplet = ExposureTriplet(
        short_pre=clip.stack[start - 1].astype(np.float64),
        long=long,
        short_post=clip.stack[start + n].astype(np.float64),
        n_frames_long=n,
    )
    target = DecompositionTriple(
        first_half=average_frames(window[:half]),
        mid_sharp=window[half].astype(np.float64),
        second_half=average_frames(window[half + 1 :]),
        n1=half,
        n2=half,
    )
    return triplet, target


def recomposition_residual(triple: DecompositionTriple, long: Image) -> float:
    """Max per-pixel deviation of the weighted half/mid recomposition from the long exposure."""
    recomposed = (
        triple.n1 * triple.first_half + triple.mid_sharp + triple.n2 * triple.second_half
    ) / triple.n
    return float(np.abs(recomposed - long).max())


# --- PNG I/O -----------------------------------------------------------------
#
# Files are 8- or 16-bit PNGs; pixel data is decoded to [0,1] floats and
# quantization happens only here.


def load_image(path: str | Path) -> Image:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f"cannot read image: {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None].repeat(3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return rgb.astype(np.float32) / scale


def save_image(path: str | Path, img: Image, bit_depth: int = 16) -> None:
    validate_image(img)
    if bit_depth == 16:
        quantized = np.round(img * 65535.0).astype(np.uint16)
    elif bit_depth == 8:
        quantized = np.round(img * 255.0).astype(np.uint8)
    else:
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    bgr = cv2.cvtColor(quantized, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), bgr):
        raise DataError(f"cannot write image: {path}")


def load_clip(directory: str | Path, nominal_fps: float = 240.0) -> FrameClip:
    """Load a clip from a directory of lexicographically ordered PNG frames."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise DataError(f"no PNG frames in {directory}")
    frames = [load_image(p) for p in paths]
    return FrameClip(frames, nominal_fps=nominal_fps, clip_id=directory.name)


def save_clip(directory: str | Path, clip: FrameClip, bit_depth: int = 16) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.stack):
        save_image(directory / f"{i:05d}.png", np.asarray(frame, dtype=np.float64), bit_depth)
