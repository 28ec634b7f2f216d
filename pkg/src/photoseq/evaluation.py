"""Measurement protocols for trained decomposition weights.

Test triplets are synthesized from held-out clips the same way training
samples are: the long exposure averages N frames, the shorts are the
adjacent single frames with sensor noise added. Reconstruction quality is
PSNR on [0,1] floats over all three channels jointly, capped at a 99 dB
sentinel when the MSE underflows (identical images).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .imaging import ExposureTriplet, FrameClip, Image, make_triplet
from .noise import NoiseParams, add_noise
from .sequencer import PhotoSequence, build_plan, sequence

PSNR_SENTINEL = 99.0


def psnr(a: Image, b: Image) -> float:
    """10*log10(1/MSE) for [0,1] images; zero MSE hits the 99 dB sentinel."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(10.0 * np.log10(1.0 / mse), PSNR_SENTINEL)


def relative_psnr(seq_a: PhotoSequence, seq_b: PhotoSequence) -> list[float]:
    """Per-frame PSNR between two reconstructions of the same plan."""
    if len(seq_a) != len(seq_b) or seq_a.timepoints != seq_b.timepoints:
        raise ValueError("sequences follow different plans (frame counts or timepoints differ)")
    return [psnr(fa, fb) for fa, fb in zip(seq_a.frames, seq_b.frames)]


def slice_xt_yt(frames: Sequence[Image], row: int, col: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack one pixel row (XT, TxWx3) and one column (YT, HxTx3) across time."""
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    h, w = frames[0].shape[:2]
    if not (0 <= row < h) or not (0 <= col < w):
        raise IndexError(f"slice position ({row}, {col}) outside {h}x{w}")
    xt = np.stack([f[row] for f in frames])
    yt = np.stack([f[:, col] for f in frames], axis=1)
    return xt, yt


def crop_to_multiple(clip: FrameClip, multiple: int) -> FrameClip:
    """Center-crop every frame so both spatial dims divide `multiple`."""
    h, w = clip.stack.shape[1:3]
    nh, nw = (h // multiple) * multiple, (w // multiple) * multiple
    if nh < multiple or nw < multiple:
        raise DataError(f"clip '{clip.clip_id}' frames {h}x{w} too small for multiple {multiple}")
    r0, c0 = (h - nh) // 2, (w - nw) // 2
    return FrameClip(
        np.ascontiguousarray(clip.stack[:, r0 : r0 + nh, c0 : c0 + nw, :]),
        nominal_fps=clip.nominal_fps,
        clip_id=clip.clip_id,
    )


@dataclass
class EvalReport:
    """Rows of one measurement protocol plus run metadata."""

    protocol: str
    rows: list[dict]
    metadata: dict = field(default_factory=dict)

    def summary(self) -> dict:
        """Mean PSNR keyed by the protocol's sweep variable."""
        key = {"timepoints": "t", "blur-sweep": "n", "relative": "t"}.get(self.protocol)
        out: dict = {}
        if key is None:
            return out
        values = sorted({row[key] for row in self.rows})
        for v in values:
            vals = [row["psnr"] for row in self.rows if row[key] == v]
            out[v] = float(np.mean(vals))
        return out

    def write(self, directory: str | Path, stem: str | None = None) -> tuple[Path, Path]:
        """CSV of all rows plus a human-readable text summary."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or self.protocol
        csv_path = directory / f"{stem}.csv"
        columns = sorted({k for row in self.rows for k in row})
        with csv_path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns)
            writer.writeheader()
            writer.writerows(self.rows)
        txt_path = directory / f"{stem}.txt"
        lines = [f"protocol: {self.protocol}"]
        for k, v in sorted(self.metadata.items()):
            lines.append(f"{k}: {v}")
        lines.append("")
        lines.append("mean PSNR (dB) over examples (99 dB = zero-error sentinel):")
        for k, v in self.summary().items():
            lines.append(f"  {k}: {v:.2f}")
        txt_path.write_text("\n".join(lines) + "\n")
        return csv_path, txt_path


def _noisy_test_triplet(
    clip: FrameClip, n: int, noise: NoiseParams, rng: np.random.Generator
) -> tuple[ExposureTriplet, int]:
    """Centered triplet with noisy shorts; returns it plus the long-window start."""
    start = 1 + (len(clip) - (n + 2)) // 2
    triplet, _ = make_triplet(clip, start=start, n=n)
    noisy = ExposureTriplet(
        short_pre=add_noise(triplet.short_pre, noise, int(rng.integers(0, 2**63))),
        long=triplet.long,
        short_post=add_noise(triplet.short_post, noise, int(rng.integers(0, 2**63))),
        n_frames_long=n,
        short_is_noisy=(True, True),
    )
    return noisy, start


def eval_timepoints(
    weights,
    corpus: Sequence[FrameClip],
    noise: NoiseParams,
    n: int = 11,
    levels: int = 2,
    seed: int = 0,
    oracle: bool = False,
) -> EvalReport:
    """Two-level reconstruction quality at the dyadic timepoints.

    One centered test triplet is synthesized per clip; predictions are
    compared against the ground-truth frames at t * (n + 1) inside the
    long window. Per-clip baseline rows record psnr(long, ground truth) at
    each timepoint. oracle=True scores the ground-truth frames themselves
    (pipeline self-test; every PSNR hits the sentinel).
    """
    plan = build_plan(levels)
    for node in plan.nodes:
        if (node.t_mid * (n + 1)).denominator != 1:
            raise ValueError(f"blur length n={n} has no frame at timepoint {node.t_mid}")
    rng = np.random.default_rng(seed)
    rows = []
    divisor = 16 if isinstance(weights, dict) or not hasattr(weights, "config") else weights.config.divisor
    for clip in corpus:
        if len(clip) < n + 2:
            raise IndexError(f"clip '{clip.clip_id}' has {len(clip)} frames, need >= {n + 2}")
        clip16 = crop_to_multiple(clip, divisor)
        triplet, start = _noisy_test_triplet(clip16, n, noise, rng)
        if oracle:
            predictions = None
        else:
            predictions = sequence(triplet, weights, plan)
        ordered = sorted(plan.nodes, key=lambda nd: nd.t_mid)
        for j, node in enumerate(ordered):
            t = float(node.t_mid)
            frame_1based = int(node.t_mid * (n + 1))
            gt = clip16.stack[start + frame_1based - 1].astype(np.float64)
            pred = gt if oracle else predictions.frames[j]
            rows.append(
                {
                    "clip": clip.clip_id,
                    "t": t,
                    "psnr": round(psnr(pred, gt), 4),
                    "baseline_long_psnr": round(psnr(triplet.long, gt), 4),
                }
            )
    return EvalReport(
        protocol="timepoints",
        rows=rows,
        metadata={"n": n, "levels": levels, "seed": seed, "examples": len(corpus), "oracle": oracle},
    )


def eval_relative(
    weights_single,
    weights_by_count: dict,
    corpus: Sequence[FrameClip],
    noise: NoiseParams,
    n: int = 11,
    levels: int = 2,
    seed: int = 0,
) -> EvalReport:
    """Per-frame agreement between single-model and three-model sequencing.

    Both modes decompose the same noisy test triplet per clip; rows hold the
    per-timepoint PSNR between the two reconstructions.
    """
    plan = build_plan(levels)
    rng = np.random.default_rng(seed)
    rows = []
    divisor = weights_single.config.divisor if hasattr(weights_single, "config") else 16
    for clip in corpus:
        if len(clip) < n + 2:
            raise IndexError(f"clip '{clip.clip_id}' has {len(clip)} frames, need >= {n + 2}")
        clip16 = crop_to_multiple(clip, divisor)
        triplet, _ = _noisy_test_triplet(clip16, n, noise, rng)
        seq_single = sequence(triplet, weights_single, plan)
        seq_three = sequence(triplet, weights_by_count, plan)
        for t, value in zip(seq_single.timepoints, relative_psnr(seq_single, seq_three)):
            rows.append({"clip": clip.clip_id, "t": t, "psnr": round(value, 4)})
    return EvalReport(
        protocol="relative",
        rows=rows,
        metadata={"n": n, "levels": levels, "seed": seed, "examples": len(corpus)},
    )


def eval_blur_sweep(
    weights,
    corpus: Sequence[FrameClip],
    noise: NoiseParams,
    n_list: Sequence[int] = (9, 11, 15, 19),
    seed: int = 0,
    oracle: bool = False,
) -> EvalReport:
    """Midpoint-frame quality as a function of the blur frame length."""
    plan = build_plan(1)
    rng = np.random.default_rng(seed)
    rows = []
    divisor = 16 if isinstance(weights, dict) or not hasattr(weights, "config") else weights.config.divisor
    for n in n_list:
        if n % 2 == 0 or n < 3:
            raise ValueError(f"blur lengths must be odd >= 3, got {n}")
        for clip in corpus:
            if len(clip) < n + 2:
                raise IndexError(f"clip '{clip.clip_id}' has {len(clip)} frames, need >= {n + 2}")
            clip16 = crop_to_multiple(clip, divisor)
            triplet, start = _noisy_test_triplet(clip16, n, noise, rng)
            gt = clip16.stack[start + (n + 1) // 2 - 1].astype(np.float64)
            if oracle:
                pred = gt
            else:
                pred = sequence(triplet, weights, plan).frames[0]
            rows.append(
                {
                    "clip": clip.clip_id,
                    "n": n,
                    "psnr": round(psnr(pred, gt), 4),
                    "baseline_long_psnr": round(psnr(triplet.long, gt), 4),
                }
            )
    return EvalReport(
        protocol="blur-sweep",
        rows=rows,
        metadata={"n_list": list(n_list), "seed": seed, "examples": len(corpus), "oracle": oracle},
    )
