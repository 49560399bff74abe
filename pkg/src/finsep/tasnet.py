"""Mask-based time-domain separator.

Encoder: learned basis over 50%-overlapping frames followed by ReLU.
Separator: temporal convolutional network of dilated depthwise blocks whose
summed skip outputs produce one sigmoid mask per source. Decoder: transposed
convolution of the masked features back to waveform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import Tensor, init
from .separator import Separator


@dataclass
class TasNetConfig:
    frame_len: int = 40          # L, samples per encoder frame
    basis_size: int = 128        # M
    bottleneck: int = 64
    block_channels: int = 128
    kernel: int = 3              # P
    blocks: int = 6              # X, dilations 1, 2, ..., 2**(X-1)
    repeats: int = 2             # R
    n_sources: int = 2
    mask_nonlinearity: str = "sigmoid"
    norm: str = "gln"            # "gln" or "none"

    def __post_init__(self):
        for name in ("frame_len", "basis_size", "bottleneck", "block_channels", "kernel", "blocks", "repeats"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TasNetConfig.{name} must be positive")
        if self.frame_len % 2:
            raise ValueError("frame_len must be even (encoder hop is frame_len/2)")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd so dilated convolutions keep the length")
        if self.n_sources != 2:
            raise ValueError("this separator produces exactly 2 sources (fish, background)")
        if self.mask_nonlinearity != "sigmoid":
            raise ValueError(f"unsupported mask nonlinearity {self.mask_nonlinearity!r}")
        if self.norm not in ("gln", "none"):
            raise ValueError(f"norm must be 'gln' or 'none', got {self.norm!r}")

    @property
    def hop(self) -> int:
        return self.frame_len // 2

    @property
    def receptive_field(self) -> int:
        """Span of encoder frames that can influence one mask frame."""
        return 1 + self.repeats * sum((self.kernel - 1) * 2 ** x for x in range(self.blocks))


class TasNet(Separator):
    arch = "tasnet"
    config_cls = TasNetConfig

    def _build(self, rng, dtype):
        c = self.config
        m, b, h, p = c.basis_size, c.bottleneck, c.block_channels, c.kernel
        u = lambda name, shape, fan: self._add(name, init.uniform_fan_in(rng, shape, fan, dtype))
        k = lambda name, shape, val: self._add(name, init.constant(shape, val, dtype))
        u("encoder.w", (m, 1, c.frame_len), c.frame_len)
        k("tcn.norm.gain", (m,), 1.0)
        k("tcn.norm.bias", (m,), 0.0)
        u("tcn.bottleneck.w", (b, m, 1), m)
        u("tcn.bottleneck.b", (b,), m)
        for i in range(c.repeats * c.blocks):
            pre = f"tcn.block{i}"
            u(f"{pre}.in.w", (h, b, 1), b)
            u(f"{pre}.in.b", (h,), b)
            k(f"{pre}.prelu1", (1,), 0.25)
            k(f"{pre}.norm1.gain", (h,), 1.0)
            k(f"{pre}.norm1.bias", (h,), 0.0)
            u(f"{pre}.dw.w", (h, 1, p), p)
            u(f"{pre}.dw.b", (h,), p)
            k(f"{pre}.prelu2", (1,), 0.25)
            k(f"{pre}.norm2.gain", (h,), 1.0)
            k(f"{pre}.norm2.bias", (h,), 0.0)
            u(f"{pre}.res.w", (b, h, 1), h)
            u(f"{pre}.res.b", (b,), h)
            u(f"{pre}.skip.w", (b, h, 1), h)
            u(f"{pre}.skip.b", (b,), h)
        k("tcn.out.prelu", (1,), 0.25)
        u("tcn.out.w", (c.n_sources * m, b, 1), b)
        u("tcn.out.b", (c.n_sources * m,), b)
        u("decoder.w", (m, 1, c.frame_len), m)

    # -- bases as the matrices of the frame-level equations ---------------
    @property
    def encoder_basis(self) -> np.ndarray:
        """``S`` with shape ``[L, M]``: frame features are ``relu(x @ S)``."""
        return self.params["encoder.w"].data[:, 0, :].T

    def set_encoder_basis(self, s):
        s = np.asarray(s, dtype=self.dtype)
        self.params["encoder.w"].data = s.T[:, None, :].copy()

    @property
    def decoder_basis(self) -> np.ndarray:
        """``T`` with shape ``[M, L]``: a frame is reconstructed as ``b @ T``."""
        return self.params["decoder.w"].data[:, 0, :]

    def set_decoder_basis(self, t):
        self.params["decoder.w"].data = np.asarray(t, dtype=self.dtype)[:, None, :].copy()

    def zero_tcn(self):
        for name, p in self.params.items():
            if name.startswith("tcn."):
                p.data[...] = 0.0

    # -- tensor graph -----------------------------------------------------
    def _norm(self, x, prefix):
        if self.config.norm == "none":
            return x
        return nc.global_layer_norm(x, self.params[f"{prefix}.gain"], self.params[f"{prefix}.bias"])

    def encode_tensor(self, wav: Tensor) -> Tensor:
        """``wav[B, 1, T] -> z[B, M, N]``."""
        return nc.relu(nc.conv1d(wav, self.params["encoder.w"], stride=self.config.hop))

    def mask_logits_tensor(self, z: Tensor) -> Tensor:
        """``z[B, M, N] -> logits[B, n*M, N]`` through the TCN."""
        c, pr = self.config, self.params
        y = self._norm(z, "tcn.norm")
        y = nc.conv1d(y, pr["tcn.bottleneck.w"], pr["tcn.bottleneck.b"])
        skip_sum = None
        for i in range(c.repeats * c.blocks):
            pre = f"tcn.block{i}"
            d = 2 ** (i % c.blocks)
            h = nc.conv1d(y, pr[f"{pre}.in.w"], pr[f"{pre}.in.b"])
            h = self._norm(nc.prelu(h, pr[f"{pre}.prelu1"]), f"{pre}.norm1")
            h = nc.conv1d(h, pr[f"{pre}.dw.w"], pr[f"{pre}.dw.b"], dilation=d,
                          groups=c.block_channels, padding=d * (c.kernel - 1) // 2)
            h = self._norm(nc.prelu(h, pr[f"{pre}.prelu2"]), f"{pre}.norm2")
            y = y + nc.conv1d(h, pr[f"{pre}.res.w"], pr[f"{pre}.res.b"])
            s = nc.conv1d(h, pr[f"{pre}.skip.w"], pr[f"{pre}.skip.b"])
            skip_sum = s if skip_sum is None else skip_sum + s
        y = nc.prelu(skip_sum, pr["tcn.out.prelu"])
        return nc.conv1d(y, pr["tcn.out.w"], pr["tcn.out.b"])

    def masks_tensor(self, z: Tensor) -> Tensor:
        return nc.sigmoid(self.mask_logits_tensor(z))

    def decode_tensor(self, b: Tensor) -> Tensor:
        """``b[B, M, N] -> wav[B, 1, (N-1)*hop + L]``."""
        return nc.conv1d_transpose(b, self.params["decoder.w"], stride=self.config.hop)

    def separate_tensor(self, mix: Tensor) -> Tensor:
        """``mix[B, T] -> sources[B, 2, T]``."""
        c = self.config
        bsz, t = mix.shape
        hop, big_l = c.hop, c.frame_len
        n_frames = max(1, -(-(t + 2 * hop - big_l) // hop) + 1)
        padded = (n_frames - 1) * hop + big_l
        x = nc.pad_time(nc.reshape(mix, (bsz, 1, t)), hop, padded - t - hop)
        z = self.encode_tensor(x)
        masks = self.masks_tensor(z)
        m = c.basis_size
        outs = []
        for i in range(c.n_sources):
            bi = nc.mul(z, nc.narrow(masks, 1, i * m, (i + 1) * m))
            outs.append(nc.narrow(self.decode_tensor(bi), 2, hop, hop + t))
        return nc.concat(outs, axis=1)


# ---------------------------------------------------------------------------
# frame-level API (numpy in, numpy out)
# ---------------------------------------------------------------------------

def encode(x, model: TasNet) -> np.ndarray:
    """One frame ``x[L] -> z[M] = relu(x @ S)``."""
    x = np.asarray(x, dtype=model.dtype)
    if x.shape != (model.config.frame_len,):
        raise ValueError(f"encode expects a frame of {model.config.frame_len} samples, got {x.shape}")
    return np.maximum(x @ model.encoder_basis, 0.0)


def estimate_masks(z_sequence, model: TasNet) -> np.ndarray:
    """``z[N, M] -> masks[n_sources, N, M]``, each value in (0, 1)."""
    z = np.asarray(z_sequence, dtype=model.dtype)
    if z.ndim != 2 or z.shape[1] != model.config.basis_size or z.shape[0] == 0:
        raise ValueError(f"estimate_masks expects [N, {model.config.basis_size}] features, got {z.shape}")
    with nc.no_grad():
        m = model.masks_tensor(Tensor(z.T[None])).data[0]
    n, mm = model.config.n_sources, model.config.basis_size
    return m.reshape(n, mm, -1).transpose(0, 2, 1)


def apply_mask(z, m) -> np.ndarray:
    z, m = np.asarray(z), np.asarray(m)
    if z.shape != m.shape:
        raise ValueError(f"apply_mask: shape mismatch {z.shape} vs {m.shape}")
    return z * m


def decode(b, model: TasNet) -> np.ndarray:
    """One frame of features ``b[M] -> x_hat[L] = b @ T``."""
    b = np.asarray(b, dtype=model.dtype)
    if b.shape != (model.config.basis_size,):
        raise ValueError(f"decode expects {model.config.basis_size} features, got {b.shape}")
    return b @ model.decoder_basis


def forward(mixture, model: TasNet, chunk_spec=None):
    from .audio import ChunkSpec
    return model.forward(mixture, chunk_spec or ChunkSpec())
