"""Synthetic motion clips for demos, calibration drills, and desk-scale runs.

Each clip is a smooth random texture translating at constant velocity with a
contrasting disk moving against it, so long exposures produced by temporal
averaging carry genuine directional blur.
"""

from __future__ import annotations

import math

import cv2
import numpy as np

from .imaging import FrameClip


def _smooth_texture(height: int, width: int, rng: np.random.Generator, blur_sigma: float = 2.5) -> np.ndarray:
    tex = rng.uniform(0.0, 1.0, size=(height, width, 3)).astype(np.float32)
    tex = cv2.GaussianBlur(tex, ksize=(0, 0), sigmaX=blur_sigma)
    lo, hi = tex.min(), tex.max()
    return 0.05 + 0.9 * (tex - lo) / max(hi - lo, 1e-6)


def make_motion_clip(
    n_frames: int = 48,
    height: int = 96,
    width: int = 128,
    seed: int = 0,
    speed: tuple[float, float] | None = None,
    nominal_fps: float = 240.0,
    clip_id: str | None = None,
) -> FrameClip:
    """A clip of a translating textured background plus a counter-moving disk.

    speed is (rows, cols) per frame; when omitted it is drawn from the seed
    with magnitude in [0.4, 2.2] px/frame.
    """
    rng = np.random.default_rng(seed)
    if speed is None:
        magnitude = rng.uniform(0.4, 2.2)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        speed = (magnitude * math.sin(angle), magnitude * math.cos(angle))
    vy, vx = speed

    margin = int(math.ceil(max(abs(vy), abs(vx)) * n_frames)) + 8
    tex = _smooth_texture(height + 2 * margin, width + 2 * margin, rng)

    radius = min(height, width) / 6.0
    disk_color = rng.uniform(0.1, 0.9, size=3).astype(np.float32)
    disk_start = np.array([height * 0.5 + rng.uniform(-8, 8), width * 0.5 + rng.uniform(-8, 8)])
    rows = np.arange(height)[:, None].astype(np.float32)
    cols = np.arange(width)[None, :].astype(np.float32)

    frames = []
    for t in range(n_frames):
        shift = np.float32([[1, 0, -(margin + vx * t)], [0, 1, -(margin + vy * t)]])
        frame = cv2.warpAffine(
            tex, shift, (width, height), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT
        )
        # disk moves against the background so the two layers shear apart
        cy, cx = disk_start[0] - vy * t, disk_start[1] - vx * t
        dist = np.sqrt((rows - cy) ** 2 + (cols - cx) ** 2)
        mask = np.clip(radius + 0.5 - dist, 0.0, 1.0)[:, :, None]
        frame = frame * (1.0 - mask) + disk_color[None, None, :] * mask
        frames.append(np.clip(frame, 0.0, 1.0).astype(np.float32))

    return FrameClip(
        np.stack(frames),
        nominal_fps=nominal_fps,
        clip_id=clip_id if clip_id is not None else f"synthetic-{seed}",
    )


def make_corpus(
    n_clips: int,
    n_frames: int = 48,
    height: int = 96,
    width: int = 128,
    seed: int = 0,
) -> list[FrameClip]:
    """Independent motion clips with per-clip speeds drawn from the seed."""
    return [
        make_motion_clip(n_frames=n_frames, height=height, width=width, seed=seed * 1000 + i)
        for i in range(n_clips)
    ]


def make_constant_burst(intensity: float, n_frames: int = 16, size: int = 32) -> FrameClip:
    """Noise-free static-scene burst at one intensity (calibration fixture)."""
    frame = np.full((size, size, 3), intensity, dtype=np.float32)
    return FrameClip([frame] * n_frames, clip_id=f"burst-{intensity:.2f}")
