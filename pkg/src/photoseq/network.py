"""Blur-decomposition network.

An encoder-decoder over the concatenated features of the three observations.
The two shorts pass through one shared input convolution, the long exposure
through its own wider one; their features are fused as
[short_pre | short_post | long] and flow through four stride-2 encoder
stages of dense residual blocks, then back up through transpose
convolutions with carry-on convolutions on the skip paths. One output
convolution produces the midpoint sharp image; a second, applied twice with
shared weights, produces the two half exposures. Every convolution is
followed by a leaky rectifier except the output convolutions, which use
(tanh + 1) / 2 to pin results to [0, 1].

The two applications of the shared half-exposure tail must see different
features: the second application reads the final feature map with its first
two channel groups (the slots fed by the short-exposure heads at the input
fusion) swapped. The swap is parameter-free, so the tail weights stay fully
shared while the halves remain distinct functions of the input.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError, WeightError
from .imaging import DecompositionTriple, ExposureTriplet, Image

WEIGHTS_VERSION = "1"


@dataclass(frozen=True)
class NetworkConfig:
    """Channel plan and activation settings.

    head_channels are the widths of the short/long input convolutions;
    trunk_channels the per-stage encoder widths. The fusion width
    (2 * short + long) must equal the first trunk width. Spatial inputs
    must be divisible by 2**(stages - 1).
    """

    head_channels: tuple[int, int] = (16, 32)
    trunk_channels: tuple[int, ...] = (64, 128, 256, 512, 1024)
    resblock_convs: int = 4
    head_kernel: int = 7
    trunk_kernel: int = 3
    leaky_slope: float = 0.2

    def __post_init__(self):
        short, long = self.head_channels
        if len(self.trunk_channels) < 2:
            raise ValueError("need at least two trunk stages")
        if 2 * short + long != self.trunk_channels[0]:
            raise ValueError(
                f"head fusion width {2 * short + long} != first trunk width {self.trunk_channels[0]}"
            )
        if any(c % 2 for c in self.trunk_channels):
            raise ValueError("trunk widths must be even (transpose convs halve them)")
        if self.resblock_convs < 1 or self.head_kernel % 2 == 0 or self.trunk_kernel % 2 == 0:
            raise ValueError("kernels must be odd and resblock_convs >= 1")

    @property
    def divisor(self) -> int:
        return 2 ** (len(self.trunk_channels) - 1)

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class DenseResidualBlock(nn.Module):
    """Channel-preserving block of densely connected convolutions.

    Convolution k reads the elementwise sum of the block input and all
    previous convolution outputs; the block adds its input to the last
    convolution's output.
    """

    def __init__(self, channels: int, n_convs: int = 4, kernel: int = 3, slope: float = 0.2):
        super().__init__()
        self.slope = slope
        self.convs = nn.ModuleList(
            nn.Conv2d(channels, channels, kernel, padding=kernel // 2) for _ in range(n_convs)
        )

    def forward(self, x):
        acc = x
        h = x
        for conv in self.convs:
            h = F.leaky_relu(conv(acc), self.slope)
            acc = acc + h
        return x + h


class DecomposerNet(nn.Module):
    """Short-long-short triplet in, (first_half, mid_sharp, second_half) out."""

    def __init__(self, config: NetworkConfig | None = None):
        super().__init__()
        self.config = config or NetworkConfig()
        cfg = self.config
        short_ch, long_ch = cfg.head_channels
        trunk = cfg.trunk_channels
        k, hk, slope = cfg.trunk_kernel, cfg.head_kernel, cfg.leaky_slope

        self.head_short = nn.Conv2d(3, short_ch, hk, padding=hk // 2)
        self.head_long = nn.Conv2d(3, long_ch, hk, padding=hk // 2)

        def block(ch):
            return DenseResidualBlock(ch, cfg.resblock_convs, k, slope)

        n_stages = len(trunk) - 1
        self.enc_blocks = nn.ModuleList(
            nn.ModuleList([block(trunk[i]), block(trunk[i])]) for i in range(n_stages)
        )
        self.downs = nn.ModuleList(
            nn.Conv2d(trunk[i], trunk[i + 1], k, stride=2, padding=k // 2) for i in range(n_stages)
        )
        self.bottom = block(trunk[-1])

        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(trunk[i + 1], trunk[i] // 2, 4, stride=2, padding=1)
            for i in reversed(range(n_stages))
        )
        self.carries = nn.ModuleList(
            nn.Conv2d(trunk[i], trunk[i] // 2, k, padding=k // 2) for i in reversed(range(n_stages))
        )
        self.dec_blocks = nn.ModuleList(
            nn.ModuleList([block(trunk[i]), block(trunk[i])]) for i in reversed(range(n_stages))
        )

        self.op_mid = nn.Conv2d(trunk[0], 3, k, padding=k // 2)
        self.op_half = nn.Conv2d(trunk[0], 3, k, padding=k // 2)

    def _swap_short_groups(self, feat):
        """Swap the two channel groups mirroring the short-head slots of the fusion."""
        s = self.config.head_channels[0]
        return torch.cat([feat[:, s : 2 * s], feat[:, :s], feat[:, 2 * s :]], dim=1)

    def forward(self, short_pre, long, short_post):
        h, w = long.shape[-2], long.shape[-1]
        d = self.config.divisor
        if h % d or w % d:
            raise ShapeError(f"spatial dims {h}x{w} must be divisible by {d}")
        if short_pre.shape != long.shape or short_post.shape != long.shape:
            raise ShapeError("triplet images must share one shape")
        slope = self.config.leaky_slope

        fused = torch.cat(
            [
                F.leaky_relu(self.head_short(short_pre), slope),
                F.leaky_relu(self.head_short(short_post), slope),
                F.leaky_relu(self.head_long(long), slope),
            ],
            dim=1,
        )

        skips = []
        x = fused
        for i, (blocks, down) in enumerate(zip(self.enc_blocks, self.downs)):
            x = blocks[1](blocks[0](x))
            # the full-resolution skip carries the raw fusion, not the block output
            skips.append(fused if i == 0 else x)
            x = F.leaky_relu(down(x), slope)
        x = self.bottom(x)

        for up, carry, blocks, skip in zip(self.ups, self.carries, self.dec_blocks, reversed(skips)):
            x = F.leaky_relu(up(x), slope)
            x = torch.cat([x, F.leaky_relu(carry(skip), slope)], dim=1)
            x = blocks[1](blocks[0](x))

        mid = (torch.tanh(self.op_mid(x)) + 1.0) / 2.0
        first = (torch.tanh(self.op_half(x)) + 1.0) / 2.0
        second = (torch.tanh(self.op_half(self._swap_short_groups(x))) + 1.0) / 2.0
        return first, mid, second


# --- weight container -----------------------------------------------------------


@dataclass
class Weights:
    """Named parameters plus the config they belong to."""

    state: "OrderedDict[str, torch.Tensor]"
    config: NetworkConfig
    version: str = WEIGHTS_VERSION

    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def allclose(self, other: "Weights") -> bool:
        if self.state.keys() != other.state.keys():
            return False
        return all(torch.equal(self.state[k], other.state[k]) for k in self.state)


def init_weights(config: NetworkConfig | None = None, seed: int = 0) -> Weights:
    """Deterministic fan-in-scaled uniform initialization.

    Every convolution weight draws from U(-b, b) with
    b = sqrt(6 / ((1 + slope^2) * fan_in)) and fan_in = input channels *
    kernel area; biases start at zero.
    """
    config = config or NetworkConfig()
    net = DecomposerNet(config)
    gen = torch.Generator().manual_seed(seed)
    slope = config.leaky_slope
    with torch.no_grad():
        for name, module in net.named_modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.weight.shape[1] * module.weight.shape[2] * module.weight.shape[3]
            elif isinstance(module, nn.ConvTranspose2d):
                fan_in = module.weight.shape[0] * module.weight.shape[2] * module.weight.shape[3]
            else:
                continue
            bound = (6.0 / ((1.0 + slope**2) * fan_in)) ** 0.5
            module.weight.uniform_(-bound, bound, generator=gen)
            if module.bias is not None:
                module.bias.zero_()
    state = OrderedDict((k, v.clone()) for k, v in net.state_dict().items())
    return Weights(state=state, config=config)


def build_net(weights: Weights) -> DecomposerNet:
    """Instantiate an inference-ready network holding the given parameters."""
    net = DecomposerNet(weights.config)
    try:
        net.load_state_dict(weights.state)
    except RuntimeError as exc:
        raise WeightError(f"parameters do not fit the configuration: {exc}") from exc
    net.eval()
    return net


def weights_from_net(net: DecomposerNet) -> Weights:
    state = OrderedDict((k, v.detach().clone()) for k, v in net.state_dict().items())
    return Weights(state=state, config=net.config)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_weights(weights: Weights, path: str | Path) -> None:
    """Binary parameter container plus a text sidecar with config + fingerprint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {"version": weights.version, "fingerprint": weights.fingerprint(), "state": weights.state},
        path,
    )
    sidecar = {
        "version": weights.version,
        "fingerprint": weights.fingerprint(),
        "config": asdict(weights.config),
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_weights(path: str | Path, config: NetworkConfig | None = None) -> Weights:
    """Load a weight container, verifying the config fingerprint and shapes."""
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise WeightError(f"cannot read weight file {path}: {exc}") from exc
    sidecar_file = _sidecar_path(path)
    if not sidecar_file.exists():
        raise WeightError(f"missing weight sidecar {sidecar_file}")
    sidecar = json.loads(sidecar_file.read_text())
    stored = sidecar["config"]
    stored_config = NetworkConfig(
        head_channels=tuple(stored["head_channels"]),
        trunk_channels=tuple(stored["trunk_channels"]),
        resblock_convs=stored["resblock_convs"],
        head_kernel=stored["head_kernel"],
        trunk_kernel=stored["trunk_kernel"],
        leaky_slope=stored["leaky_slope"],
    )
    if payload.get("fingerprint") != stored_config.fingerprint():
        raise WeightError(f"weight file {path} does not match its sidecar config")
    if config is not None and config.fingerprint() != stored_config.fingerprint():
        raise WeightError(
            f"weight file {path} was trained with a different configuration "
            f"({stored_config.fingerprint()} != {config.fingerprint()})"
        )
    weights = Weights(
        state=OrderedDict(payload["state"]),
        config=stored_config,
        version=str(payload.get("version", "?")),
    )
    build_net(weights)  # shape verification
    return weights


# --- inference ------------------------------------------------------------------


def image_to_tensor(img: Image) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)


def tensor_to_image(t: torch.Tensor) -> Image:
    arr = t.detach().squeeze(0).permute(1, 2, 0).numpy().astype(np.float64)
    return np.clip(arr, 0.0, 1.0)


def run_decomposition(net: DecomposerNet, short_pre: Image, long: Image, short_post: Image):
    """Raw three-image forward pass returning numpy images."""
    with torch.no_grad():
        first, mid, second = net(
            image_to_tensor(short_pre), image_to_tensor(long), image_to_tensor(short_post)
        )
    return tensor_to_image(first), tensor_to_image(mid), tensor_to_image(second)


def decompose(triplet: ExposureTriplet, weights: Weights | DecomposerNet) -> DecompositionTriple:
    """Apply the network to a triplet; halves inherit (N - 1) / 2 frame counts."""
    net = weights if isinstance(weights, DecomposerNet) else build_net(weights)
    first, mid, second = run_decomposition(net, triplet.short_pre, triplet.long, triplet.short_post)
    half = (triplet.n_frames_long - 1) // 2
    return DecompositionTriple(first_half=first, mid_sharp=mid, second_half=second, n1=half, n2=half)


# --- introspection ---------------------------------------------------------------


def describe_layers(net: DecomposerNet) -> list[dict]:
    """Canonical layer walk used by the architecture audit.

    Rows appear in processing order: input heads, encoder, decoder,
    output convolutions, then the carry-on convolutions, mirroring the
    reference layer table. Residual blocks report their preserved width.
    """

    def conv_row(name, m, activation="leaky_relu"):
        stride = m.stride[0] if isinstance(m.stride, tuple) else m.stride
        pad = m.padding[0] if isinstance(m.padding, tuple) else m.padding
        kind = "ConvT" if isinstance(m, nn.ConvTranspose2d) else "Conv"
        cin, cout = (m.in_channels, m.out_channels)
        return {
            "layer": name,
            "type": kind,
            "chan_in": cin,
            "chan_out": cout,
            "filter": m.kernel_size[0],
            "pad": pad,
            "stride": stride,
            "activation": activation,
        }

    def resb_row(name, block):
        ch = block.convs[0].in_channels
        return {
            "layer": name,
            "type": "ResB",
            "chan_in": ch,
            "chan_out": ch,
            "filter": block.convs[0].kernel_size[0],
            "pad": block.convs[0].padding[0],
            "stride": 1,
            "activation": "leaky_relu",
        }

    rows = [conv_row("ip1", net.head_short), conv_row("ip2", net.head_long)]
    idx = 1
    for blocks, down in zip(net.enc_blocks, net.downs):
        for b in blocks:
            rows.append(resb_row(str(idx), b))
            idx += 1
        rows.append(conv_row(str(idx), down))
        idx += 1
    rows.append(resb_row(str(idx), net.bottom))
    idx += 1
    for up, blocks in zip(net.ups, net.dec_blocks):
        rows.append(conv_row(str(idx), up))
        idx += 1
        for b in blocks:
            rows.append(resb_row(str(idx), b))
            idx += 1
    rows.append(conv_row("op1", net.op_mid, activation="(tanh+1)/2"))
    rows.append(conv_row("op2", net.op_half, activation="(tanh+1)/2"))
    for carry in net.carries:
        rows.append(conv_row(str(idx), carry))
        idx += 1
    return rows


def parameter_count(net_or_weights) -> int:
    if isinstance(net_or_weights, Weights):
        return sum(int(t.numel()) for t in net_or_weights.state.values())
    return sum(int(p.numel()) for p in net_or_weights.parameters())
