"""Objective terms and the optimization loop.

The total cost is

    supervised + lambda_sum * recomposition + lambda_perc * perceptual
               + lambda_grad * tv + lambda_adv * adversarial

where the supervised term is the summed per-image MSE of the three outputs,
the recomposition term penalizes disagreement between the long exposure and
the weighted half/mid average, the TV and perceptual and adversarial terms
act on the midpoint sharp image alone. Optimization is Adam with a
staircase learning rate: initial_lr scaled by lr_decay_factor every
lr_decay_every iterations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataset import SampleBuilder, TrainingSample
from .errors import ConfigError, NumericalError
from .imaging import DecompositionTriple
from .network import (
    DecomposerNet,
    NetworkConfig,
    Weights,
    build_net,
    image_to_tensor,
    init_weights,
    weights_from_net,
)

TV_EPSILON = 1e-6


@dataclass(frozen=True)
class LossWeights:
    """Relative weights of the objective terms."""

    lambda_sum: float = 1e-2
    lambda_perc: float = 3e-4
    lambda_adv: float = 1e-4
    lambda_grad: float = 1e-4

    def __post_init__(self):
        for name in ("lambda_sum", "lambda_perc", "lambda_adv", "lambda_grad"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class TrainSchedule:
    """Iteration budget, optimizer settings, and the staircase decay."""

    total_iterations: int = 100_000
    initial_lr: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 25_000
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be >= 0")
        if self.initial_lr <= 0 or self.lr_decay_factor <= 0 or self.lr_decay_every <= 0:
            raise ValueError("learning-rate settings must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_iterations > 0 and self.lr_decay_every > self.total_iterations:
            raise ValueError("lr_decay_every must not exceed total_iterations")


def learning_rate_at(schedule: TrainSchedule, iteration: int) -> float:
    return schedule.initial_lr * schedule.lr_decay_factor ** (iteration // schedule.lr_decay_every)


# --- cost terms -------------------------------------------------------------------


def _as_tensor_triple(x) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    if isinstance(x, DecompositionTriple):
        return (
            image_to_tensor(x.first_half),
            image_to_tensor(x.mid_sharp),
            image_to_tensor(x.second_half),
        )
    a, b, c = x
    return a, b, c


def _as_tensor(img) -> torch.Tensor:
    if isinstance(img, torch.Tensor):
        return img
    return image_to_tensor(img)


def supervised_cost(pred, target) -> torch.Tensor:
    """Sum of the three per-image mean squared errors."""
    preds, targets = _as_tensor_triple(pred), _as_tensor_triple(target)
    total = preds[0].new_zeros(())
    for p, t in zip(preds, targets):
        if p.shape != t.shape:
            raise ValueError(f"prediction shape {tuple(p.shape)} != target shape {tuple(t.shape)}")
        total = total + F.mse_loss(p, t)
    return total


def sum_cost(pred, long, n1, n2) -> torch.Tensor:
    """MSE between the long exposure and the weighted half/mid recomposition."""
    first, mid, second = _as_tensor_triple(pred)
    long = _as_tensor(long)
    if long.shape != mid.shape:
        raise ValueError(f"long shape {tuple(long.shape)} != prediction shape {tuple(mid.shape)}")
    n1 = torch.as_tensor(n1, dtype=first.dtype).reshape(-1, 1, 1, 1) if first.dim() == 4 else torch.as_tensor(float(n1))
    n2 = torch.as_tensor(n2, dtype=first.dtype).reshape(-1, 1, 1, 1) if first.dim() == 4 else torch.as_tensor(float(n2))
    recomposed = (n1 * first + mid + n2 * second) / (n1 + n2 + 1.0)
    return F.mse_loss(long, recomposed)


def tv_cost(img) -> torch.Tensor:
    """Isotropic total variation with forward differences.

    Per pixel and channel: sqrt(dx^2 + dy^2 + eps^2) with eps = 1e-6 for a
    smooth gradient at flat regions; differences past the last row/column
    are omitted (treated as zero). Summed over pixels and channels; batched
    inputs return the per-image mean.
    """
    if not isinstance(img, torch.Tensor):
        img = image_to_tensor(img).squeeze(0)
    batched = img.dim() == 4
    x = img if batched else img.unsqueeze(0)
    dx = x.new_zeros(x.shape)
    dy = x.new_zeros(x.shape)
    dx[..., :, :-1] = x[..., :, 1:] - x[..., :, :-1]
    dy[..., :-1, :] = x[..., 1:, :] - x[..., :-1, :]
    per_pixel = torch.sqrt(dx * dx + dy * dy + TV_EPSILON**2)
    per_image = per_pixel.sum(dim=(1, 2, 3))
    return per_image.mean() if batched else per_image[0]


_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)

# Conv plan of the classic 19-layer VGG feature stack; "M" is a 2x2 max pool.
_VGG19_PLAN = (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M", 512, 512, 512, 512, "M", 512, 512, 512, 512, "M")
# Sequential index of the 4th convolution in the 5th block (pre-activation).
_CONV54_INDEX = 34


class VGGFeatures(nn.Module):
    """Fixed deep-feature extractor for the perceptual cost.

    Rebuilds the VGG19 feature stack up to the 4th convolution of the 5th
    stage (pre-activation) with torchvision-compatible layer indexing, so a
    standard vgg19 checkpoint can be loaded from weights_path. Without a
    checkpoint the filters are seeded random; the extractor is still a
    fixed deterministic embedding, just not a pretrained one. Inputs in
    [0,1] are normalized with the ImageNet channel statistics.
    """

    def __init__(self, weights_path: str | Path | None = None, seed: int = 0, end_index: int = _CONV54_INDEX):
        super().__init__()
        layers: list[nn.Module] = []
        in_ch = 3
        for item in _VGG19_PLAN:
            if item == "M":
                layers.append(nn.MaxPool2d(2, 2))
            else:
                layers.append(nn.Conv2d(in_ch, item, 3, padding=1))
                layers.append(nn.ReLU(inplace=False))
                in_ch = item
        self.features = nn.Sequential(*layers[: end_index + 1])
        if weights_path is not None:
            path = Path(weights_path)
            if not path.exists():
                raise ConfigError(f"perceptual extractor weights not found: {path}")
            state = torch.load(path, map_location="cpu", weights_only=True)
            self.load_state_dict(state, strict=False)
        else:
            gen = torch.Generator().manual_seed(seed)
            with torch.no_grad():
                for m in self.features:
                    if isinstance(m, nn.Conv2d):
                        fan_in = m.weight.shape[1] * 9
                        bound = (2.0 / fan_in) ** 0.5
                        m.weight.normal_(0.0, bound, generator=gen)
                        m.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        mean = torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1)
        self.register_buffer("mean", mean)
        self.register_buffer("std", std)

    def forward(self, x):
        return self.features((x - self.mean) / self.std)


def perceptual_cost(pred, target, feature_extractor: nn.Module) -> torch.Tensor:
    """MSE between fixed deep-feature maps of prediction and target."""
    if feature_extractor is None:
        raise ConfigError("perceptual cost requires a feature extractor (or set lambda_perc=0)")
    p, t = _as_tensor(pred), _as_tensor(target)
    if p.dim() == 3:
        p, t = p.unsqueeze(0), t.unsqueeze(0)
    return F.mse_loss(feature_extractor(p), feature_extractor(t))


# --- adversarial branch -------------------------------------------------------------


class Discriminator(nn.Module):
    """Five stride-2 convolutions, global average pool, scalar logit."""

    def __init__(self, base: int = 32, slope: float = 0.2):
        super().__init__()
        chans = [3, base, base * 2, base * 4, base * 8, base * 16]
        self.convs = nn.ModuleList(
            nn.Conv2d(cin, cout, 3, stride=2, padding=1) for cin, cout in zip(chans, chans[1:])
        )
        self.slope = slope
        self.fc = nn.Linear(chans[-1], 1)

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), self.slope)
        pooled = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.fc(pooled).squeeze(1)


@dataclass
class DiscriminatorState:
    model: Discriminator
    optimizer: torch.optim.Optimizer
    steps: int = 0
    last_loss: float = 0.0


def make_discriminator(seed: int = 0, lr: float = 1e-4) -> DiscriminatorState:
    torch.manual_seed(seed)
    model = Discriminator()
    return DiscriminatorState(model=model, optimizer=torch.optim.Adam(model.parameters(), lr=lr))


def adversarial_step(state: DiscriminatorState, sharp_pred, sharp_real):
    """One discriminator update, then the non-saturating generator cost.

    The discriminator sees the predicted sharp image (detached) as fake and
    the reference sharp image as real. The returned cost keeps its graph
    attached to sharp_pred so generator gradients flow.
    """
    pred, real = _as_tensor(sharp_pred), _as_tensor(sharp_real)
    if pred.dim() == 3:
        pred, real = pred.unsqueeze(0), real.unsqueeze(0)
    if pred.shape != real.shape:
        raise ValueError(f"pred shape {tuple(pred.shape)} != real shape {tuple(real.shape)}")
    model, opt = state.model, state.optimizer
    model.train()
    d_loss = F.softplus(-model(real)).mean() + F.softplus(model(pred.detach())).mean()
    opt.zero_grad()
    d_loss.backward()
    opt.step()
    state.steps += 1
    state.last_loss = float(d_loss.detach())
    p_adv = F.softplus(-model(pred)).mean()
    return p_adv, state


# --- batching ------------------------------------------------------------------------


def batch_from_samples(samples: Sequence[TrainingSample]):
    """Stack samples into network-ready tensors.

    Returns (inputs, targets, long_clean, n1, n2): inputs and targets are
    (pre, long, post) and (first, mid, second) stacks of shape (B,3,H,W);
    the recomposition weights are per-sample float tensors.
    """

    def stack(images):
        return torch.stack([image_to_tensor(img).squeeze(0) for img in images])

    inputs = (
        stack([s.triplet.short_pre for s in samples]),
        stack([s.triplet.long for s in samples]),
        stack([s.triplet.short_post for s in samples]),
    )
    targets = (
        stack([s.target.first_half for s in samples]),
        stack([s.target.mid_sharp for s in samples]),
        stack([s.target.second_half for s in samples]),
    )
    n1 = torch.tensor([float(s.target.n1) for s in samples])
    n2 = torch.tensor([float(s.target.n2) for s in samples])
    return inputs, targets, inputs[1], n1, n2


LOG_COLUMNS = ("iteration", "supervised", "sum", "tv", "perceptual", "adversarial", "total", "lr")


class _TrainLog:
    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("w", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(LOG_COLUMNS)

    def row(self, iteration: int, terms: dict, lr: float):
        if not self.path:
            return
        self._writer.writerow(
            [
                iteration,
                f"{terms.get('supervised', 0.0):.8e}",
                f"{terms.get('sum', 0.0):.8e}",
                f"{terms.get('tv', 0.0):.8e}",
                f"{terms.get('perceptual', 0.0):.8e}",
                f"{terms.get('adversarial', 0.0):.8e}",
                f"{terms.get('total', 0.0):.8e}",
                f"{lr:.8e}",
            ]
        )

    def close(self):
        if self.path:
            self._fh.close()


def _save_checkpoint(path: Path, net: DecomposerNet, optimizer, iteration: int):
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "iteration": iteration,
            "model_state": net.state_dict(),
            "optimizer_state": optimizer.state_dict(),
            "fingerprint": net.config.fingerprint(),
        },
        path,
    )


def train(
    builder,
    config: NetworkConfig,
    schedule: TrainSchedule,
    loss_weights: LossWeights = LossWeights(),
    weights: Weights | None = None,
    *,
    perceptual_extractor: nn.Module | None = None,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    checkpoint_every: int = 5000,
    log_every: int = 100,
    dry_run: bool = False,
    should_stop: Callable[[int, dict], bool] | None = None,
) -> Weights:
    """Run the optimization loop and return the trained parameters.

    builder must expose generate(seed) -> TrainingSample. A zero-iteration
    schedule returns the input (or freshly initialized) weights unchanged.
    dry_run exercises the schedule and logging without touching data or
    parameters. A non-finite total cost saves a diagnostic checkpoint and
    raises NumericalError.
    """
    if loss_weights.lambda_perc > 0 and perceptual_extractor is None and not dry_run:
        raise ConfigError("lambda_perc > 0 needs a perceptual extractor (or set lambda_perc=0)")

    torch.manual_seed(schedule.seed)
    if weights is None:
        weights = init_weights(config, seed=schedule.seed)
    elif weights.config.fingerprint() != config.fingerprint():
        raise ConfigError("starting weights were built for a different network configuration")

    if schedule.total_iterations == 0:
        return weights

    net = build_net(weights)
    net.train()
    optimizer = torch.optim.Adam(net.parameters(), lr=schedule.initial_lr)
    disc = make_discriminator(seed=schedule.seed + 1) if loss_weights.lambda_adv > 0 and not dry_run else None
    rng = np.random.default_rng(schedule.seed)
    log = _TrainLog(log_path)
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None

    try:
        for it in range(schedule.total_iterations):
            lr = learning_rate_at(schedule, it)
            for group in optimizer.param_groups:
                group["lr"] = lr

            if dry_run:
                if it % log_every == 0 or it == schedule.total_iterations - 1:
                    log.row(it, {}, lr)
                continue

            samples = [builder.generate(int(rng.integers(0, 2**63))) for _ in range(schedule.batch_size)]
            (pre, long, post), (t_first, t_mid, t_second), long_clean, n1, n2 = batch_from_samples(samples)

            first, mid, second = net(pre, long, post)
            terms = {}
            sup = supervised_cost((first, mid, second), (t_first, t_mid, t_second))
            sumc = sum_cost((first, mid, second), long_clean, n1, n2)
            tv = tv_cost(mid)
            total = sup + loss_weights.lambda_sum * sumc + loss_weights.lambda_grad * tv
            terms["supervised"], terms["sum"], terms["tv"] = float(sup), float(sumc), float(tv)
            if loss_weights.lambda_perc > 0:
                perc = perceptual_cost(mid, t_mid, perceptual_extractor)
                total = total + loss_weights.lambda_perc * perc
                terms["perceptual"] = float(perc)
            if disc is not None:
                p_adv, disc = adversarial_step(disc, mid, t_mid)
                total = total + loss_weights.lambda_adv * p_adv
                terms["adversarial"] = float(p_adv)
            terms["total"] = float(total)

            if not torch.isfinite(total):
                if checkpoint_dir:
                    _save_checkpoint(checkpoint_dir / "nan_diagnostic.pt", net, optimizer, it)
                raise NumericalError(f"non-finite cost at iteration {it}: {terms}")

            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            if it % log_every == 0 or it == schedule.total_iterations - 1:
                log.row(it, terms, lr)
            if checkpoint_dir and checkpoint_every > 0 and (it + 1) % checkpoint_every == 0:
                _save_checkpoint(checkpoint_dir / f"checkpoint_{it + 1:07d}.pt", net, optimizer, it + 1)
            if should_stop is not None and should_stop(it, terms):
                break
    finally:
        log.close()

    net.eval()
    return weights_from_net(net)


def train_three_models(
    builder: SampleBuilder,
    config: NetworkConfig,
    schedule: TrainSchedule,
    loss_weights: LossWeights = LossWeights(),
    **train_kwargs,
) -> dict[int, Weights]:
    """Train specialized models for two, one, and zero noisy short inputs.

    Returns weights keyed by the noisy-input count the model was trained
    for; the recursion selects among them by each node's own count.
    """
    out: dict[int, Weights] = {}
    for offset, count in enumerate((2, 1, 0)):
        variant = SampleBuilder(
            builder.clips,
            replace(builder.cfg, noisy_short_count=count),
            builder.noise,
            augment_samples=builder.augment_samples,
            max_tries=builder.max_tries,
        )
        sched = replace(schedule, seed=schedule.seed + offset)
        kwargs = dict(train_kwargs)
        if "log_path" in kwargs and kwargs["log_path"]:
            base = Path(kwargs["log_path"])
            kwargs["log_path"] = base.with_name(f"{base.stem}-noisy{count}{base.suffix}")
        out[count] = train(variant, config, sched, loss_weights, **kwargs)
    return out
