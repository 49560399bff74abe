"""Synthesis-based separator: strided convolutional U-net with a BiLSTM bottleneck.

Encoder layer i: conv(K, S) -> ReLU -> 1x1 conv (x2 channels) -> GLU.
Bottleneck: 2-layer BiLSTM then a linear map from 2*C back to C channels.
Decoder layer i (reverse order): add skip -> conv(3, pad 1) (x2) -> GLU ->
transposed conv(K, S) -> ReLU, except the last layer which emits the
sources linearly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import Tensor, init
from .separator import Separator

STD_EPS = 1e-5


@dataclass
class DemucsConfig:
    depth: int = 3
    channels: int = 8            # output channels of the first encoder layer
    growth: int = 2
    kernel: int = 8
    stride: int = 4
    audio_channels: int = 1
    n_sources: int = 2
    lstm_layers: int = 2
    context: int = 3

    def __post_init__(self):
        for name in ("depth", "channels", "growth", "kernel", "stride", "audio_channels", "lstm_layers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"DemucsConfig.{name} must be positive")
        if self.n_sources != 2:
            raise ValueError("this separator produces exactly 2 sources (fish, background)")
        if self.context % 2 == 0:
            raise ValueError("decoder context must be odd")

    def layer_channels(self) -> list:
        return [self.channels * self.growth ** i for i in range(self.depth)]

    @property
    def lstm_hidden(self) -> int:
        return self.layer_channels()[-1]


def encoder_lengths(length: int, config: DemucsConfig) -> list:
    """Time length after each encoder layer (``floor((L-K)/S)+1``)."""
    out = []
    for _ in range(config.depth):
        if length < config.kernel:
            raise ValueError(f"length {length} shorter than kernel {config.kernel}")
        length = (length - config.kernel) // config.stride + 1
        out.append(length)
    return out


def valid_length(length: int, config: DemucsConfig) -> int:
    """Smallest length >= ``length`` that the encoder/decoder maps back to itself."""
    k, s = config.kernel, config.stride
    for _ in range(config.depth):
        length = max(1, -(-(length - k) // s) + 1)
    for _ in range(config.depth):
        length = (length - 1) * s + k
    return length


class Demucs(Separator):
    arch = "demucs"
    config_cls = DemucsConfig

    def _build(self, rng, dtype):
        c = self.config
        chans = c.layer_channels()
        k, ctx = c.kernel, c.context
        u = lambda name, shape, fan: self._add(name, init.uniform_fan_in(rng, shape, fan, dtype))
        prev = c.audio_channels
        for i, ch in enumerate(chans):
            u(f"enc{i}.conv.w", (ch, prev, k), prev * k)
            u(f"enc{i}.conv.b", (ch,), prev * k)
            u(f"enc{i}.rewrite.w", (2 * ch, ch, 1), ch)
            u(f"enc{i}.rewrite.b", (2 * ch,), ch)
            prev = ch
        hid = c.lstm_hidden
        n_in = hid
        for layer in range(c.lstm_layers):
            for direction in ("fwd", "bwd"):
                pre = f"lstm{layer}.{direction}"
                w_ih, w_hh, b = init.lstm_params(rng, n_in, hid, dtype, pre)
                self._add(f"{pre}.w_ih", w_ih)
                self._add(f"{pre}.w_hh", w_hh)
                self._add(f"{pre}.bias", b)
            n_in = 2 * hid
        u("linear.w", (hid, 2 * hid), 2 * hid)
        u("linear.b", (hid,), 2 * hid)
        for i in reversed(range(c.depth)):
            ch = chans[i]
            out = chans[i - 1] if i > 0 else c.n_sources * c.audio_channels
            u(f"dec{i}.rewrite.w", (2 * ch, ch, ctx), ch * ctx)
            u(f"dec{i}.rewrite.b", (2 * ch,), ch * ctx)
            u(f"dec{i}.convtr.w", (ch, out, k), out * k)
            u(f"dec{i}.convtr.b", (out,), out * k)

    # -- tensor graph -----------------------------------------------------
    def encode_tensor(self, x: Tensor):
        """``x[B, A, L] -> (latent, skips)``; ``skips[i]`` is encoder layer i's output."""
        c, pr = self.config, self.params
        if x.shape[-1] < c.kernel:
            raise ValueError(f"input length {x.shape[-1]} shorter than kernel {c.kernel}")
        skips = []
        for i in range(c.depth):
            x = nc.relu(nc.conv1d(x, pr[f"enc{i}.conv.w"], pr[f"enc{i}.conv.b"], stride=c.stride))
            x = nc.glu(nc.conv1d(x, pr[f"enc{i}.rewrite.w"], pr[f"enc{i}.rewrite.b"]), axis=1)
            skips.append(x)
        return x, skips

    def bottleneck_tensor(self, latent: Tensor) -> Tensor:
        c, pr = self.config, self.params
        if latent.shape[1] != c.lstm_hidden:
            raise ValueError(f"latent has {latent.shape[1]} channels, LSTM expects {c.lstm_hidden}")
        layers = []
        for layer in range(c.lstm_layers):
            layers.append(tuple(
                (pr[f"lstm{layer}.{d}.w_ih"], pr[f"lstm{layer}.{d}.w_hh"], pr[f"lstm{layer}.{d}.bias"])
                for d in ("fwd", "bwd")))
        y = nc.bilstm(latent, layers)
        return nc.linear(y, pr["linear.w"], pr["linear.b"])

    def decode_tensor(self, x: Tensor, skips) -> Tensor:
        c, pr = self.config, self.params
        for i in reversed(range(c.depth)):
            skip = skips[i]
            if skip.shape != x.shape:
                raise ValueError(f"decoder layer {i}: input {x.shape} does not match skip {skip.shape}")
            x = x + skip
            x = nc.glu(nc.conv1d(x, pr[f"dec{i}.rewrite.w"], pr[f"dec{i}.rewrite.b"],
                                 padding=(c.context - 1) // 2), axis=1)
            x = nc.conv1d_transpose(x, pr[f"dec{i}.convtr.w"], pr[f"dec{i}.convtr.b"], stride=c.stride)
            if i > 0:
                x = nc.relu(x)
        return x

    def separate_tensor(self, mix: Tensor) -> Tensor:
        """``mix[B, T] -> sources[B, 2, T]`` (mono audio)."""
        c = self.config
        bsz, t = mix.shape
        lp = valid_length(t, c)
        # per-item standardization; scale treated as a constant
        std = mix.data.std(axis=1) + STD_EPS
        inv = Tensor(np.broadcast_to((1.0 / std)[:, None], mix.shape).astype(self.dtype))
        x = nc.mul(mix, inv)
        x = nc.pad_time(nc.reshape(x, (bsz, c.audio_channels, t)), 0, lp - t)
        latent, skips = self.encode_tensor(x)
        y = nc.narrow(self.decode_tensor(self.bottleneck_tensor(latent), skips), 2, 0, t)
        back = np.broadcast_to(std[:, None, None], y.shape).astype(self.dtype)
        return nc.mul(y, Tensor(back))


# ---------------------------------------------------------------------------
# numpy-level API
# ---------------------------------------------------------------------------

def encode(x, model: Demucs):
    with nc.no_grad():
        latent, skips = model.encode_tensor(Tensor(np.asarray(x, dtype=model.dtype)))
    return latent.data, [s.data for s in skips]


def bottleneck(latent, model: Demucs):
    with nc.no_grad():
        return model.bottleneck_tensor(Tensor(np.asarray(latent, dtype=model.dtype))).data


def decode(latent, skip_list, model: Demucs):
    with nc.no_grad():
        return model.decode_tensor(Tensor(np.asarray(latent, dtype=model.dtype)),
                                   [Tensor(np.asarray(s, dtype=model.dtype)) for s in skip_list]).data


def forward(mixture, model: Demucs, chunk_spec=None):
    from .audio import ChunkSpec
    return model.forward(mixture, chunk_spec or ChunkSpec())
