"""Recursive blur decomposition into a sharp photosequence.

Level 1 splits the captured long exposure into two half exposures and the
midpoint frame; each further level re-applies the same network to a half
exposure, flanked by its two adjacent sharp images: a captured short on the
outer side, a previously estimated frame on the inner side. After L levels
the midpoints enumerate 2**L - 1 dyadic timepoints.

Each tree node knows how many of its flanking sharp inputs are captured
(noisy) shorts: 2 at the root, 1 on the outermost node of each deeper
level, 0 in the interior. Three-model sequencing picks a weight set per
node by that count; single-model sequencing uses one set everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .imaging import ExposureTriplet, Image, save_image
from .network import DecomposerNet, Weights, build_net, run_decomposition


@dataclass
class PlanNode:
    """One decomposition step over the exposure interval [t_start, t_end]."""

    index: int
    level: int
    t_start: Fraction
    t_end: Fraction
    parent: int | None
    left_child: int | None = None
    right_child: int | None = None
    frame_index: int | None = None

    @property
    def t_mid(self) -> Fraction:
        return (self.t_start + self.t_end) / 2

    @property
    def noisy_inputs(self) -> int:
        """How many flanking sharp inputs are captured shorts (vs estimates)."""
        return int(self.t_start == 0) + int(self.t_end == 1)


@dataclass
class RecursionPlan:
    """Level-major binary decomposition tree."""

    levels: int
    n_frames: int | None
    nodes: list[PlanNode]

    @property
    def sharp_count(self) -> int:
        return 2**self.levels - 1

    def frame_map(self) -> dict[int, int]:
        """Node index -> 1-based latent frame index (declared-N plans only)."""
        if self.n_frames is None:
            raise ConfigError("plan has no declared frame count")
        return {node.index: node.frame_index for node in self.nodes}

    def level_frames(self, level: int) -> list[int]:
        return [n.frame_index for n in self.nodes if n.level == level]


def build_plan(levels: int, n_frames: int | None = None) -> RecursionPlan:
    """Enumerate the decomposition tree for a level count.

    With a declared n_frames (which must equal 2**levels - 1) every node
    midpoint maps to a distinct latent frame in 1..n_frames.
    """
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if n_frames is not None and n_frames != 2**levels - 1:
        raise ValueError(f"n_frames must be 2**levels - 1 = {2**levels - 1}, got {n_frames}")

    nodes = [PlanNode(index=0, level=1, t_start=Fraction(0), t_end=Fraction(1), parent=None)]
    frontier = [nodes[0]]
    for level in range(2, levels + 1):
        next_frontier = []
        for parent in frontier:
            mid = parent.t_mid
            left = PlanNode(len(nodes), level, parent.t_start, mid, parent.index)
            nodes.append(left)
            right = PlanNode(len(nodes), level, mid, parent.t_end, parent.index)
            nodes.append(right)
            parent.left_child, parent.right_child = left.index, right.index
            next_frontier += [left, right]
        frontier = next_frontier

    if n_frames is not None:
        for node in nodes:
            frame = node.t_mid * (n_frames + 1)
            node.frame_index = int(frame)  # exact: dyadic midpoint times power of two
    return RecursionPlan(levels=levels, n_frames=n_frames, nodes=nodes)


@dataclass
class PhotoSequence:
    """Recovered sharp frames at strictly increasing timepoints in (0, 1)."""

    frames: list[Image]
    timepoints: list[float]
    plan: RecursionPlan

    def __post_init__(self):
        if len(self.frames) != len(self.timepoints):
            raise ValueError("frames and timepoints disagree in length")
        if len(self.frames) != self.plan.sharp_count:
            raise ValueError(
                f"expected {self.plan.sharp_count} frames for {self.plan.levels} levels, got {len(self.frames)}"
            )
        if any(b <= a for a, b in zip(self.timepoints, self.timepoints[1:])):
            raise ValueError("timepoints must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)


def _nets_by_count(weights, plan: RecursionPlan) -> dict[int, DecomposerNet]:
    needed = {node.noisy_inputs for node in plan.nodes}
    if isinstance(weights, Weights):
        net = build_net(weights)
        return {count: net for count in needed}
    if isinstance(weights, Mapping):
        missing = needed - set(weights.keys())
        if missing:
            raise ConfigError(
                f"three-model sequencing needs weights for noisy-input counts {sorted(needed)}; missing {sorted(missing)}"
            )
        built: dict[int, DecomposerNet] = {}
        by_identity: dict[int, DecomposerNet] = {}
        for count in needed:
            w = weights[count]
            key = id(w)
            if key not in by_identity:
                by_identity[key] = build_net(w)
            built[count] = by_identity[key]
        return built
    raise ConfigError(f"weights must be a Weights or a mapping by noisy-input count, got {type(weights).__name__}")


def sequence(triplet: ExposureTriplet, weights, plan: RecursionPlan) -> PhotoSequence:
    """Recursively decompose a triplet into its sharp photosequence.

    weights is a single Weights (single-model mode) or a mapping from
    noisy-input count to Weights (three-model mode).
    """
    nets = _nets_by_count(weights, plan)
    pending: dict[int, tuple[Image, Image, Image]] = {
        0: (triplet.long, triplet.short_pre, triplet.short_post)
    }
    mids: dict[int, Image] = {}
    for node in plan.nodes:
        long_img, left_sharp, right_sharp = pending.pop(node.index)
        first, mid, second = run_decomposition(
            nets[node.noisy_inputs], left_sharp, long_img, right_sharp
        )
        mids[node.index] = mid
        if node.left_child is not None:
            pending[node.left_child] = (first, left_sharp, mid)
            pending[node.right_child] = (second, mid, right_sharp)

    ordered = sorted(plan.nodes, key=lambda n: n.t_mid)
    return PhotoSequence(
        frames=[mids[n.index] for n in ordered],
        timepoints=[float(n.t_mid) for n in ordered],
        plan=plan,
    )


def sequence_stream(
    captures: Sequence[Image],
    tags: Sequence[str],
    weights,
    levels: int,
    n_frames: int | None = None,
) -> list[PhotoSequence]:
    """Sequence every long exposure in an alternating short/long capture run.

    tags must alternate short, long, short, ..., short. Consecutive triplets
    share their middle short; each long yields one independent sequence
    (tiling artifacts between triplets are not corrected).
    """
    if len(captures) != len(tags):
        raise ValueError(f"{len(captures)} captures but {len(tags)} tags")
    if len(captures) < 3 or len(captures) % 2 == 0:
        raise ValueError(f"need an odd number >= 3 of alternating captures, got {len(captures)}")
    normalized = [t.strip().lower() for t in tags]
    for i, tag in enumerate(normalized):
        expected = "short" if i % 2 == 0 else "long"
        if tag != expected:
            raise ValueError(f"capture {i} tagged '{tag}' but the alternation requires '{expected}'")

    plan = build_plan(levels, n_frames)
    nominal_n = n_frames if n_frames is not None else 3
    sequences = []
    for i in range(1, len(captures), 2):
        triplet = ExposureTriplet(
            short_pre=captures[i - 1],
            long=captures[i],
            short_post=captures[i + 1],
            n_frames_long=nominal_n,
            short_is_noisy=(True, True),
        )
        sequences.append(sequence(triplet, weights, plan))
    return sequences


def write_sequence(
    directory: str | Path,
    seq: PhotoSequence,
    weight_fingerprints: dict | str,
    extra_metadata: dict | None = None,
) -> Path:
    """Export frames as numbered PNGs plus a manifest with provenance."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(seq.frames):
        name = f"frame_{i:04d}.png"
        save_image(directory / name, np.asarray(frame, dtype=np.float64))
        names.append(name)
    manifest = {
        "frames": names,
        "timepoints": seq.timepoints,
        "levels": seq.plan.levels,
        "n_frames": seq.plan.n_frames,
        "weights": weight_fingerprints,
    }
    if extra_metadata:
        manifest.update(extra_metadata)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path
