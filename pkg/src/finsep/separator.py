"""Shared plumbing for the two separators: parameter storage, checkpoints and
chunked full-length inference."""

from __future__ import annotations

import dataclasses

import numpy as np

from .audio import ChunkSpec, Waveform, chunk, overlap_add
from .numcore import Checkpoint, CheckpointError, Tensor, load_checkpoint, no_grad, save_checkpoint


class Separator:
    """Base class: subclasses set ``arch``/``config_cls`` and implement
    ``_build(rng, dtype)`` and ``separate_tensor(mix[B, T]) -> [B, n_sources, T]``."""

    arch = ""
    config_cls = None

    def __init__(self, config=None, seed: int = 0, dtype=np.float64):
        self.config = config if config is not None else self.config_cls()
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._build(np.random.default_rng(self.seed), self.dtype)

    def _build(self, rng, dtype):
        raise NotImplementedError

    def separate_tensor(self, mix: Tensor) -> Tensor:
        raise NotImplementedError

    # -- parameters -------------------------------------------------------
    def _add(self, name, tensor: Tensor) -> Tensor:
        tensor.name = name
        self.params[name] = tensor
        return tensor

    def parameters(self) -> list:
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def zero_biases(self):
        for name, p in self.params.items():
            if name.endswith(".b") or name.endswith(".bias"):
                p.data[...] = 0.0

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, arrays: dict):
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise CheckpointError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            a = np.asarray(arrays[k])
            if a.shape != p.shape:
                raise CheckpointError(f"parameter {k}: shape {a.shape} != expected {p.shape}")
            p.data = a.astype(self.dtype).copy()
        return self

    # -- checkpoints ------------------------------------------------------
    def to_checkpoint(self, meta=None) -> Checkpoint:
        return Checkpoint(self.arch, self.seed, dataclasses.asdict(self.config), self.state(), dict(meta or {}))

    def save(self, path, meta=None, dtype="f4"):
        save_checkpoint(path, self.to_checkpoint(meta), dtype=dtype)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, dtype=np.float64):
        if ckpt.arch != cls.arch:
            raise CheckpointError(f"checkpoint is for {ckpt.arch!r}, not {cls.arch!r}")
        try:
            config = cls.config_cls(**ckpt.hparams)
        except TypeError as exc:
            raise CheckpointError(f"bad {cls.arch} hyperparameters: {exc}") from exc
        model = cls(config, ckpt.seed, dtype)
        params = {k: v for k, v in ckpt.arrays.items() if not k.startswith("adam.")}
        return model.load_state(params)

    # -- inference --------------------------------------------------------
    def separate_frames(self, frames: np.ndarray, batch: int = 4) -> np.ndarray:
        """``frames[F, T] -> sources[F, n_sources, T]`` without recording a tape."""
        outs = []
        with no_grad():
            for i in range(0, len(frames), batch):
                x = Tensor(np.asarray(frames[i:i + batch], dtype=self.dtype))
                outs.append(self.separate_tensor(x).data)
        return np.concatenate(outs, axis=0)

    def forward(self, mixture: Waveform, chunk_spec: ChunkSpec = ChunkSpec()):
        """Separate a full-length mixture into (fish, background) waveforms."""
        n = len(mixture)
        if n == 0:
            empty = Waveform(np.zeros(0), mixture.sample_rate)
            return empty, Waveform(np.zeros(0), mixture.sample_rate)
        frames = np.stack(chunk(mixture, chunk_spec))
        est = self.separate_frames(frames)
        fish = overlap_add(list(est[:, 0]), chunk_spec, n, mixture.sample_rate)
        bg = overlap_add(list(est[:, 1]), chunk_spec, n, mixture.sample_rate)
        return fish, bg


def model_classes():
    from .demucs import Demucs
    from .tasnet import TasNet
    return {TasNet.arch: TasNet, Demucs.arch: Demucs}


def build_model(arch: str, config=None, seed: int = 0, dtype=np.float64) -> Separator:
    classes = model_classes()
    if arch not in classes:
        raise ValueError(f"unknown architecture {arch!r} (expected one of {sorted(classes)})")
    cls = classes[arch]
    return cls(config if config is not None else cls.config_cls(), seed, dtype)


def load_model(path, dtype=np.float64) -> Separator:
    ckpt = load_checkpoint(path)
    classes = model_classes()
    if ckpt.arch not in classes:
        raise CheckpointError(f"{path}: unknown architecture {ckpt.arch!r}")
    return classes[ckpt.arch].from_checkpoint(ckpt, dtype)
