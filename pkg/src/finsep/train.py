"""Supervised training on the synthetic mixture stream.

Each epoch visits every fish chunk once, in an order keyed on (seed, epoch).
A chunk is remixed with a freshly drawn background and gains every epoch.
Output channel 0 is trained against the fish source and channel 1 against
the background; the pairing is fixed.
"""

from __future__ import annotations

import csv
import glob
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .mixgen import DEFAULT_ALPHA_F, DEFAULT_K_RANGE, epoch_sample
from .numcore import Tensor, load_checkpoint

log = logging.getLogger(__name__)

LOSSES = ("si_snr", "l1")
DEFAULT_LOSS = {"tasnet": "si_snr", "demucs": "l1"}
SI_SNR_CLAMP_DB = 60.0


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# losses (numpy-facing wrappers around the differentiable ops)
# ---------------------------------------------------------------------------

def si_snr_loss(estimate, target) -> float:
    """Negated SI-SNR in dB, clamped to [-60, 60]."""
    est = np.asarray(estimate, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if est.shape != tgt.shape:
        raise ValueError(f"si_snr_loss: length mismatch {est.shape} vs {tgt.shape}")
    return float(nc.neg_si_snr(Tensor(est), tgt, SI_SNR_CLAMP_DB).data)


def si_snr(estimate, target) -> float:
    return -si_snr_loss(estimate, target)


def l1_loss(estimate, target) -> float:
    est = np.asarray(estimate, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if est.shape != tgt.shape:
        raise ValueError(f"l1_loss: length mismatch {est.shape} vs {tgt.shape}")
    return float(np.mean(np.abs(est - tgt)))


def channel_loss(kind: str, estimate: Tensor, target) -> Tensor:
    if kind == "si_snr":
        return nc.neg_si_snr(estimate, target, SI_SNR_CLAMP_DB)
    if kind == "l1":
        return nc.l1(estimate, target)
    raise ValueError(f"unknown loss {kind!r} (expected one of {LOSSES})")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamMoments:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, moments: AdamMoments, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_moments)``; inputs are not mutated."""
    t = moments.t + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        m = moments.m.get(name, np.zeros_like(p))
        v = moments.v.get(name, np.zeros_like(p))
        if g is None:
            g = np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_p[name] = (p - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
        new_m[name], new_v[name] = m.astype(p.dtype), v.astype(p.dtype)
    return new_p, AdamMoments(new_m, new_v, t)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 200
    batch_size: int = 4
    seed: int = 0
    arch: str = "tasnet"
    loss: str = ""                 # empty: per-architecture default
    checkpoint_every: int = 1      # epochs; 0 disables periodic checkpoints
    k_range: tuple = DEFAULT_K_RANGE
    alpha_f: float = DEFAULT_ALPHA_F
    max_steps: int = 0             # 0 = no cap; otherwise stop after this many steps

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.loss:
            self.loss = DEFAULT_LOSS.get(self.arch, "si_snr")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class TrainState:
    moments: AdamMoments = field(default_factory=AdamMoments)
    epoch: int = 0                 # completed epochs
    step: int = 0
    history: list = field(default_factory=list)  # dicts: step, epoch, loss, loss_fish, loss_background, wall


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed), int(epoch) + 1], spawn_key=(7,))
    return np.random.default_rng(ss).permutation(n)


def train_step(model, mixture, fish, background, loss_kind: str):
    """Forward + backward on one batch; returns (total, fish, background) loss values and grads."""
    model.zero_grad()
    x = Tensor(np.asarray(mixture, dtype=model.dtype))
    est = model.separate_tensor(x)
    b, _, t = est.shape
    lf = channel_loss(loss_kind, nc.reshape(nc.narrow(est, 1, 0, 1), (b, t)), fish)
    lb = channel_loss(loss_kind, nc.reshape(nc.narrow(est, 1, 1, 2), (b, t)), background)
    total = lf + lb
    nc.backward(total)
    grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
    return float(total.data), float(lf.data), float(lb.data), grads


def batch_samples(epoch, indices, fish_chunks, bg_chunks, cfg: TrainConfig):
    samples = [epoch_sample(epoch, int(i), fish_chunks, bg_chunks, cfg.seed, cfg.k_range, cfg.alpha_f)
               for i in indices]
    return (np.stack([s.mixture for s in samples]), np.stack([s.source_fish for s in samples]),
            np.stack([s.source_background for s in samples]), samples)


def train(model, fish_chunks, bg_chunks, cfg: TrainConfig, state: TrainState | None = None,
          out_dir: str | None = None, log_path: str | None = None, meta: dict | None = None) -> TrainState:
    """Run epochs ``state.epoch .. cfg.epochs - 1``; resumes when ``state`` is given."""
    if not all(np.all(np.isfinite(p.data)) for p in model.params.values()):
        raise TrainingError("initial parameters are not finite")
    state = state or TrainState()
    precision = "f8" if model.dtype == np.float64 else "f4"
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        if state.epoch == 0 and state.step == 0:
            save_train_checkpoint(model, state, cfg, out_dir, precision, meta)
    logf = _open_log(log_path, append=state.step > 0)
    try:
        for epoch in range(state.epoch, cfg.epochs):
            order = epoch_order(cfg.seed, epoch, len(fish_chunks))
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps and state.step >= cfg.max_steps:
                    break
                idx = order[start:start + cfg.batch_size]
                mix, s0, s1, _ = batch_samples(epoch, idx, fish_chunks, bg_chunks, cfg)
                t0 = time.perf_counter()
                total, lf, lb, grads = train_step(model, mix, s0, s1, cfg.loss)
                if not math.isfinite(total):
                    raise TrainingError(f"non-finite loss at step {state.step} (epoch {epoch}, "
                                        f"fish chunks {idx.tolist()})")
                new_p, state.moments = adam_step(model.state(), grads, state.moments, cfg.learning_rate)
                for k, p in model.params.items():
                    p.data = new_p[k]
                    if not np.all(np.isfinite(p.data)):
                        raise TrainingError(f"parameter {k} became non-finite at step {state.step}")
                rec = {"step": state.step, "epoch": epoch, "loss": total, "loss_fish": lf,
                       "loss_background": lb, "wall": time.perf_counter() - t0}
                state.history.append(rec)
                state.step += 1
                if logf:
                    logf.writerow(rec)
            state.epoch = epoch + 1
            log.info("epoch %d done: step %d, last loss %.4f", epoch, state.step,
                     state.history[-1]["loss"] if state.history else float("nan"))
            if out_dir and cfg.checkpoint_every and (state.epoch % cfg.checkpoint_every == 0
                                                     or state.epoch == cfg.epochs):
                save_train_checkpoint(model, state, cfg, out_dir, precision, meta)
            if cfg.max_steps and state.step >= cfg.max_steps:
                break
    finally:
        if logf:
            logf.close()
    return state


class _CsvLog:
    FIELDS = ["step", "epoch", "loss", "loss_fish", "loss_background", "wall"]

    def __init__(self, path, append):
        new = not (append and os.path.exists(path))
        self.fh = open(path, "a" if not new else "w", newline="")
        self.w = csv.DictWriter(self.fh, fieldnames=self.FIELDS)
        if new:
            self.w.writeheader()

    def writerow(self, rec):
        self.w.writerow(rec)
        self.fh.flush()

    def close(self):
        self.fh.close()


def _open_log(path, append):
    return _CsvLog(path, append) if path else None


# ---------------------------------------------------------------------------
# checkpoints with optimizer state
# ---------------------------------------------------------------------------

def checkpoint_path(out_dir, epoch: int) -> str:
    return os.path.join(out_dir, f"ckpt_epoch{epoch:04d}.ckpt")


def save_train_checkpoint(model, state: TrainState, cfg: TrainConfig, out_dir, precision="f4", meta=None) -> str:
    ckpt = model.to_checkpoint({
        **(meta or {}),
        "epoch": state.epoch, "step": state.step, "adam_t": state.moments.t,
        "learning_rate": cfg.learning_rate, "loss": cfg.loss, "train_seed": cfg.seed,
        "history": [[r["step"], r["epoch"], r["loss"], r["loss_fish"], r["loss_background"]]
                    for r in state.history],
    })
    for k in model.params:
        if k in state.moments.m:
            ckpt.arrays[f"adam.m.{k}"] = state.moments.m[k]
            ckpt.arrays[f"adam.v.{k}"] = state.moments.v[k]
    path = checkpoint_path(out_dir, state.epoch)
    nc.save_checkpoint(path, ckpt, dtype=precision)
    return path


def latest_checkpoint(out_dir) -> str | None:
    found = sorted(glob.glob(os.path.join(out_dir, "ckpt_epoch*.ckpt")))
    return found[-1] if found else None


def resume(path, dtype=np.float64):
    """Load ``(model, state)`` from a training checkpoint."""
    from .separator import model_classes
    ckpt = load_checkpoint(path)
    model = model_classes()[ckpt.arch].from_checkpoint(ckpt, dtype)
    m = {k[len("adam.m."):]: v.astype(dtype) for k, v in ckpt.arrays.items() if k.startswith("adam.m.")}
    v = {k[len("adam.v."):]: a.astype(dtype) for k, a in ckpt.arrays.items() if k.startswith("adam.v.")}
    meta = ckpt.meta
    history = [{"step": int(h[0]), "epoch": int(h[1]), "loss": h[2], "loss_fish": h[3],
                "loss_background": h[4], "wall": 0.0} for h in meta.get("history", [])]
    state = TrainState(AdamMoments(m, v, int(meta.get("adam_t", 0))), int(meta.get("epoch", 0)),
                       int(meta.get("step", 0)), history)
    return model, state
