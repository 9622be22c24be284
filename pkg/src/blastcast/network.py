"""Multi-scale ConvGRU encoder-decoder for next-frame pressure prediction.

Encoder: two multi-scale modules interleaved with stride-2 reduction blocks
(H -> H/4). Temporal core: a ConvGRU cell over the T encoded frames. Decoder:
two nearest-neighbor upsampling stages with long-range skip connections from
the final input frame's encoder features, finished by a 1x1 convolution.
Ablation switches bypass the recurrence, the multi-scale branches, the whole
encoder-decoder, or individual input channels.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError

CHANNEL_NAMES = ("pressure", "time", "distance", "layout")


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 4
    window: int = 10
    widths: tuple[int, int] = (32, 64)
    gru_width: int = 64
    reduction_ratio: int = 8
    spatial_kernel: int = 7
    use_multiscale: bool = True
    use_gru: bool = True
    use_encoder_decoder: bool = True
    channel_mask: tuple[bool, bool, bool, bool] = (True, True, True, True)

    def __post_init__(self):
        if len(self.channel_mask) != self.in_channels:
            raise ConfigError("channel_mask length must match in_channels")
        if not any(self.channel_mask):
            raise ConfigError("channel_mask disables every input channel")
        if min(self.widths) < 1 or self.gru_width < 1:
            raise ConfigError("channel widths must be positive")

    def active_channels(self) -> list[int]:
        return [i for i, keep in enumerate(self.channel_mask) if keep]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["widths"] = tuple(d["widths"])
        d["channel_mask"] = tuple(bool(b) for b in d["channel_mask"])
        return cls(**d)


def _conv(in_ch, out_ch, k, stride=1, padding=0, dilation=1):
    return nn.Conv2d(in_ch, out_ch, k, stride=stride, padding=padding,
                     dilation=dilation, bias=True)


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int):
        super().__init__()
        if channels < reduction:
            raise ConfigError(
                f"channel count {channels} below attention reduction {reduction}")
        self.fc1 = _conv(channels, channels // reduction, 1)
        self.fc2 = _conv(channels // reduction, channels, 1)

    def forward(self, x):
        avg = self.fc2(torch.relu(self.fc1(
            torch.nn.functional.adaptive_avg_pool2d(x, 1))))
        mx = self.fc2(torch.relu(self.fc1(
            torch.nn.functional.adaptive_max_pool2d(x, 1))))
        return torch.sigmoid(avg + mx)


class SpatialAttention(nn.Module):
    def __init__(self, kernel: int):
        super().__init__()
        self.conv = _conv(2, 1, kernel, padding=kernel // 2)

    def forward(self, x):
        stacked = torch.cat([x.mean(dim=1, keepdim=True),
                             x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(stacked))


class CBAM(nn.Module):
    """Sequential channel then spatial multiplicative attention."""

    def __init__(self, channels: int, reduction: int = 8, spatial_kernel: int = 7):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(spatial_kernel)

    def forward(self, x):
        x = x * self.channel(x)
        return x * self.spatial(x)


class MultiScaleModule(nn.Module):
    """Three receptive-field branches, concatenated and fused to the stage width."""

    def __init__(self, in_ch: int, out_ch: int, reduction: int, spatial_kernel: int):
        super().__init__()
        b = max(1, out_ch // 3)
        self.b1 = nn.Sequential(_conv(in_ch, b, 1), nn.BatchNorm2d(b))
        self.b2 = nn.Sequential(_conv(in_ch, b, 1),
                                _conv(b, b, 3, padding=2, dilation=2),
                                nn.BatchNorm2d(b))
        self.b3 = nn.Sequential(_conv(in_ch, b, 1),
                                _conv(b, b, 3, padding=1),
                                _conv(b, b, 3, padding=2, dilation=2),
                                nn.BatchNorm2d(b))
        self.fuse = _conv(3 * b, out_ch, 1)
        self.act = nn.Mish()
        self.attn = CBAM(out_ch, reduction, spatial_kernel)

    def forward(self, x):
        if x.shape[-1] < 5 or x.shape[-2] < 5:
            raise ConfigError(
                f"spatial size {tuple(x.shape[-2:])} too small for the dilated branch")
        y = torch.cat([self.b1(x), self.b2(x), self.b3(x)], dim=1)
        return self.attn(self.act(self.fuse(y)))


class PlainScaleModule(nn.Module):
    """Ablation stand-in: a standard 3x3 convolution in place of the branches."""

    def __init__(self, in_ch: int, out_ch: int, reduction: int, spatial_kernel: int):
        super().__init__()
        self.conv = _conv(in_ch, out_ch, 3, padding=1)
        self.bn = nn.BatchNorm2d(out_ch)
        self.act = nn.Mish()
        self.attn = CBAM(out_ch, reduction, spatial_kernel)

    def forward(self, x):
        return self.attn(self.act(self.bn(self.conv(x))))


class ReductionBlock(nn.Module):
    """Three stride-2 branches fused by element-wise summation."""

    def __init__(self, channels: int):
        super().__init__()
        self.pool = nn.MaxPool2d(2, 2)
        self.conv_a = _conv(channels, channels, 3, stride=2, padding=1)
        self.bn_a = nn.BatchNorm2d(channels)
        self.conv_b1 = _conv(channels, channels, 3, stride=2, padding=1)
        self.conv_b2 = _conv(channels, channels, 1)
        self.conv_b3 = _conv(channels, channels, 1)
        self.bn_b = nn.BatchNorm2d(channels)

    def forward(self, x):
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ConfigError(f"reduction block needs even spatial dims, "
                              f"got {tuple(x.shape[-2:])}")
        a = self.bn_a(self.conv_a(x))
        b = self.bn_b(self.conv_b3(self.conv_b2(self.conv_b1(x))))
        return self.pool(x) + a + b


class ConvGRUCell(nn.Module):
    """Convolutional GRU: 3x3 gate and candidate transforms with bias."""

    def __init__(self, in_ch: int, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.wxz = _conv(in_ch, hidden, 3, padding=1)
        self.whz = _conv(hidden, hidden, 3, padding=1)
        self.wxr = _conv(in_ch, hidden, 3, padding=1)
        self.whr = _conv(hidden, hidden, 3, padding=1)
        self.wxh = _conv(in_ch, hidden, 3, padding=1)
        self.whh = _conv(hidden, hidden, 3, padding=1)

    def gates(self, x, h):
        z = torch.sigmoid(self.wxz(x) + self.whz(h))
        r = torch.sigmoid(self.wxr(x) + self.whr(h))
        return z, r

    def forward(self, x, h):
        z, r = self.gates(x, h)
        h_cand = torch.tanh(self.wxh(x) + self.whh(r * h))
        return (1.0 - z) * h + z * h_cand

    def init_state(self, batch, height, width, like: torch.Tensor):
        return torch.zeros(batch, self.hidden, height, width,
                           dtype=like.dtype, device=like.device)


class DecoderBlock(nn.Module):
    """Post-upsample refinement: 3x3 conv + batch norm + Mish + CBAM."""

    def __init__(self, in_ch: int, out_ch: int, reduction: int, spatial_kernel: int):
        super().__init__()
        self.conv = _conv(in_ch, out_ch, 3, padding=1)
        self.bn = nn.BatchNorm2d(out_ch)
        self.act = nn.Mish()
        self.attn = CBAM(out_ch, reduction, spatial_kernel)

    def forward(self, x):
        return self.attn(self.act(self.bn(self.conv(x))))


class BlastNet(nn.Module):
    """The full forecaster; see module docstring for the dataflow."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c_in = len(config.active_channels())
        w1, w2 = config.widths
        r, sk = config.reduction_ratio, config.spatial_kernel
        scale = MultiScaleModule if config.use_multiscale else PlainScaleModule
        if config.use_encoder_decoder:
            self.enc1 = scale(c_in, w1, r, sk)
            self.red1 = ReductionBlock(w1)
            self.enc2 = scale(w1, w2, r, sk)
            self.red2 = ReductionBlock(w2)
            if config.use_gru:
                self.gru = ConvGRUCell(w2, config.gru_width)
                dec_in = config.gru_width
            else:
                dec_in = w2
            self.up = nn.Upsample(scale_factor=2, mode="nearest")
            self.dec1 = DecoderBlock(dec_in + w2, w2, r, sk)
            self.dec2 = DecoderBlock(w2 + w1, w1, r, sk)
            self.head = _conv(w1, 1, 1)
        else:
            self.enc_lin = _conv(c_in, config.gru_width, 1)
            if config.use_gru:
                self.gru = ConvGRUCell(config.gru_width, config.gru_width)
            self.head = _conv(config.gru_width, 1, 1)
        self.apply(_init_module)

    def select_channels(self, x: torch.Tensor) -> torch.Tensor:
        return x[:, :, self.config.active_channels()]

    def encode(self, frames: torch.Tensor):
        """frames: (N, C_active, H, W) -> (f1, f2, latent)."""
        if self.config.use_encoder_decoder:
            f1 = self.enc1(frames)
            f2 = self.enc2(self.red1(f1))
            return f1, f2, self.red2(f2)
        z = self.enc_lin(frames)
        return None, None, z

    def temporal(self, latents: torch.Tensor) -> torch.Tensor:
        """latents: (B, T, C, h, w) -> final hidden state (B, C_gru, h, w)."""
        if not self.config.use_gru:
            return latents[:, -1]
        B, T, _, h, w = latents.shape
        state = self.gru.init_state(B, h, w, latents)
        for t in range(T):
            state = self.gru(latents[:, t], state)
        return state

    def decode(self, hidden: torch.Tensor, f1, f2) -> torch.Tensor:
        if not self.config.use_encoder_decoder:
            return self.head(hidden)
        y = self.dec1(torch.cat([self.up(hidden), f2], dim=1))
        y = self.dec2(torch.cat([self.up(y), f1], dim=1))
        return self.head(y)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if x.dim() != 5:
            raise ConfigError(f"expected a 5-d (B,T,C,H,W) window, got {x.dim()}-d")
        B, T, C, H, W = x.shape
        if T != cfg.window:
            raise ConfigError(f"window length {T} != configured {cfg.window}")
        if C != cfg.in_channels:
            raise ConfigError(f"channel count {C} != configured {cfg.in_channels}")
        if cfg.use_encoder_decoder and (H % 4 or W % 4):
            raise ConfigError(f"H and W must be divisible by 4, got {(H, W)}")
        x = self.select_channels(x)
        flat = x.reshape(B * T, x.shape[2], H, W)
        f1, f2, z = self.encode(flat)
        latents = z.reshape(B, T, *z.shape[1:])
        hidden = self.temporal(latents)
        if cfg.use_encoder_decoder:
            # skip connections from the encoder features of the last frame
            f1 = f1.reshape(B, T, *f1.shape[1:])[:, -1]
            f2 = f2.reshape(B, T, *f2.shape[1:])[:, -1]
        return self.decode(hidden, f1, f2)


def _init_module(m: nn.Module) -> None:
    """Fan-in-scaled uniform conv weights, zero biases, identity norms."""
    if isinstance(m, nn.Conv2d):
        nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5.0))
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.BatchNorm2d):
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_weights(model: BlastNet, path) -> None:
    """Checkpoint archive: config JSON + every state tensor, little-endian."""
    arrays = {"__config__": np.frombuffer(
        model.config.to_json().encode("utf-8"), dtype=np.uint8)}
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype == np.float32:
            arr = arr.astype("<f4")
        elif arr.dtype == np.int64:
            arr = arr.astype("<i8")
        else:
            arr = arr.astype("<f4")
        arrays[f"w/{name}"] = arr
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_weights(path) -> BlastNet:
    """Rebuild the model from a checkpoint, validating every tensor shape."""
    with np.load(path) as z:
        if "__config__" not in z:
            raise ConfigError(f"{path}: not a checkpoint archive")
        config = ModelConfig.from_json(bytes(z["__config__"]).decode("utf-8"))
        model = BlastNet(config)
        state = model.state_dict()
        loaded = {}
        for name, tensor in state.items():
            key = f"w/{name}"
            if key not in z:
                raise ConfigError(f"{path}: missing tensor {name}")
            arr = z[key]
            if tuple(arr.shape) != tuple(tensor.shape):
                raise ConfigError(
                    f"{path}: shape mismatch for {name}: "
                    f"stored {tuple(arr.shape)}, expected {tuple(tensor.shape)}")
            loaded[name] = torch.from_numpy(arr.copy()).to(tensor.dtype)
        extra = {k for k in z.files if k.startswith("w/")} - \
            {f"w/{n}" for n in state}
        if extra:
            raise ConfigError(f"{path}: unexpected tensors {sorted(extra)}")
    model.load_state_dict(loaded, strict=True)
    return model
