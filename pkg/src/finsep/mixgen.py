"""Synthetic fish + sea-background mixtures and dataset splits.

Sources are built as ``s0 = k_f * alpha_f * fish`` and ``s1 = (1 + k_b) * bg``
and the mixture is their plain sum. Random draws are keyed on
``(seed, epoch, item)`` so any sample can be regenerated on its own.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .audio import ChunkSpec, Waveform, chunk, read_wav, resample, write_wav

DEFAULT_ALPHA_F = 0.1
DEFAULT_K_RANGE = (0.0, 1.0)
TESTSET_EPOCH = -1


class MixError(ValueError):
    pass


class ManifestError(MixError):
    """Malformed manifest or test-set index."""


@dataclass(frozen=True)
class MixCoefficients:
    k_f: float
    k_b: float
    alpha_f: float = DEFAULT_ALPHA_F

    def __post_init__(self):
        if self.k_f < 0 or self.k_b < 0:
            raise MixError(f"mixing coefficients must be >= 0, got k_f={self.k_f}, k_b={self.k_b}")
        if self.alpha_f <= 0:
            raise MixError(f"alpha_f must be positive, got {self.alpha_f}")


@dataclass
class MixtureSample:
    mixture: np.ndarray
    source_fish: np.ndarray
    source_background: np.ndarray
    coeffs: MixCoefficients
    fish_id: int = 0
    background_id: int = 0
    epoch: int = 0


@dataclass
class DatasetSplit:
    train_ids: list
    test_ids: list
    ratio: float
    seed: int


def make_sample(fish_chunk, bg_chunk, coeffs: MixCoefficients, fish_id=0, background_id=0, epoch=0) -> MixtureSample:
    """Scale both sources and sum them in the chunks' own precision."""
    fish = np.asarray(fish_chunk)
    bg = np.asarray(bg_chunk)
    if fish.shape != bg.shape or fish.ndim != 1:
        raise MixError(f"fish and background chunks must be equal-length 1-d frames, got {fish.shape} and {bg.shape}")
    dtype = np.result_type(fish.dtype, bg.dtype, np.float32)
    s0 = (fish.astype(dtype) * dtype.type(coeffs.k_f * coeffs.alpha_f)).astype(dtype)
    s1 = (bg.astype(dtype) * dtype.type(1.0 + coeffs.k_b)).astype(dtype)
    return MixtureSample(s0 + s1, s0, s1, coeffs, fish_id, background_id, epoch)


def split_dataset(item_count: int, ratio: float = 0.8, seed: int = 0) -> DatasetSplit:
    if item_count <= 0:
        raise MixError("cannot split an empty dataset")
    if not 0.0 < ratio <= 1.0:
        raise MixError(f"split ratio must be in (0, 1], got {ratio}")
    perm = np.random.default_rng(seed).permutation(item_count)
    n_train = int(round(ratio * item_count))
    return DatasetSplit(sorted(perm[:n_train].tolist()), sorted(perm[n_train:].tolist()), ratio, seed)


def keyed_rng(seed: int, epoch: int, item: int) -> np.random.Generator:
    # SeedSequence needs non-negative words; shift so the test-set epoch (-1) stays distinct.
    return np.random.default_rng([int(seed), int(epoch) + 1, int(item)])


def draw_coefficients(rng: np.random.Generator, k_range=DEFAULT_K_RANGE, alpha_f=DEFAULT_ALPHA_F) -> MixCoefficients:
    lo, hi = k_range
    if not 0.0 <= lo <= hi:
        raise MixError(f"invalid k range {k_range}")
    k_f, k_b = rng.uniform(lo, hi, size=2)
    return MixCoefficients(float(k_f), float(k_b), alpha_f)


def epoch_sample(epoch: int, fish_index: int, fish_chunks, bg_chunks, rng_seed: int,
                 k_range=DEFAULT_K_RANGE, alpha_f: float = DEFAULT_ALPHA_F) -> MixtureSample:
    """Mixture for one fish chunk in one epoch, independent of call order."""
    if len(fish_chunks) == 0:
        raise MixError("empty fish pool")
    if len(bg_chunks) == 0:
        raise MixError("empty background pool")
    rng = keyed_rng(rng_seed, epoch, fish_index)
    bg_index = int(rng.integers(len(bg_chunks)))
    coeffs = draw_coefficients(rng, k_range, alpha_f)
    return make_sample(fish_chunks[fish_index], bg_chunks[bg_index], coeffs, fish_index, bg_index, epoch)


def build_testset(test_fish_chunks, held_out_backgrounds, count: int, seed: int,
                  k_range=DEFAULT_K_RANGE, alpha_f: float = DEFAULT_ALPHA_F) -> list:
    """``count`` samples cycling through the fish chunks, each with a random background."""
    if count == 0:
        return []
    if len(test_fish_chunks) == 0 or len(held_out_backgrounds) == 0:
        raise MixError("test set needs non-empty fish and background pools")
    out = []
    for i in range(count):
        rng = keyed_rng(seed, TESTSET_EPOCH, i)
        fi = i % len(test_fish_chunks)
        bi = int(rng.integers(len(held_out_backgrounds)))
        coeffs = draw_coefficients(rng, k_range, alpha_f)
        out.append(make_sample(test_fish_chunks[fi], held_out_backgrounds[bi], coeffs, fi, bi, TESTSET_EPOCH))
    return out


# ---------------------------------------------------------------------------
# manifests and on-disk test sets
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    fish: str | None
    background: str | None
    split: str


@dataclass
class Pools:
    fish: list = field(default_factory=list)        # chunk arrays
    fish_file: list = field(default_factory=list)   # source file index per chunk
    background: list = field(default_factory=list)


def read_manifest(path) -> list:
    """Parse a manifest: ``fish_path <TAB> background_path <TAB> split`` per line.

    ``-`` leaves a path column empty. Split is ``train``, ``test`` or
    ``auto`` (assigned by :func:`resolve_splits`). Relative paths resolve
    against the manifest's directory; ``#`` starts a comment.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            cols = line.split("\t") if "\t" in line else line.split()
            if len(cols) != 3:
                raise ManifestError(f"{path}:{lineno}: expected 3 columns, got {len(cols)}")
            fish, bg, split = (c.strip() for c in cols)
            if split not in ("train", "test", "auto"):
                raise ManifestError(f"{path}:{lineno}: split must be train, test or auto, got {split!r}")
            entries.append(ManifestEntry(
                None if fish == "-" else os.path.join(base, fish),
                None if bg == "-" else os.path.join(base, bg),
                split,
            ))
    return entries


def resolve_splits(entries, ratio: float = 0.8, seed: int = 0) -> list:
    """Replace ``auto`` fish tags with a seeded train/test assignment.

    Backgrounds tagged ``auto`` go to training: held-out backgrounds must be
    named explicitly.
    """
    auto = [i for i, e in enumerate(entries) if e.split == "auto" and e.fish]
    out = [ManifestEntry(e.fish, e.background, e.split if e.split != "auto" else "train") for e in entries]
    if auto:
        sp = split_dataset(len(auto), ratio, seed)
        for j in sp.test_ids:
            out[auto[j]].split = "test"
    return out


def load_pools(entries, split: str, spec: ChunkSpec, sample_rate: int) -> Pools:
    pools = Pools()
    fish_files = [e.fish for e in entries if e.split == split and e.fish]
    bg_files = [e.background for e in entries if e.split == split and e.background]
    for fi, p in enumerate(fish_files):
        for c in chunk(_load_at(p, sample_rate), spec):
            pools.fish.append(c)
            pools.fish_file.append(fi)
    for p in bg_files:
        pools.background.extend(chunk(_load_at(p, sample_rate), spec))
    return pools


def _load_at(path, rate) -> Waveform:
    w = read_wav(path)
    if w.sample_rate != rate:
        w = Waveform(resample(w, rate).samples.astype(np.float32), rate)
    return w


INDEX_FIELDS = ["id", "mixture", "fish", "background", "fish_id", "background_id", "k_f", "k_b", "alpha_f"]


def write_testset(samples, out_dir, sample_rate: int) -> str:
    """WAV triples (float32) plus ``index.csv``; returns the index path."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        names = {k: f"{i:05d}.{k}.wav" for k in ("mixture", "fish", "background")}
        write_wav(Waveform(s.mixture, sample_rate), os.path.join(out_dir, names["mixture"]))
        write_wav(Waveform(s.source_fish, sample_rate), os.path.join(out_dir, names["fish"]))
        write_wav(Waveform(s.source_background, sample_rate), os.path.join(out_dir, names["background"]))
        rows.append({"id": i, **names, "fish_id": s.fish_id, "background_id": s.background_id,
                     "k_f": repr(s.coeffs.k_f), "k_b": repr(s.coeffs.k_b), "alpha_f": repr(s.coeffs.alpha_f)})
    index = os.path.join(out_dir, "index.csv")
    with open(index, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=INDEX_FIELDS)
        wr.writeheader()
        wr.writerows(rows)
    return index


def read_testset(test_dir) -> list:
    index = os.path.join(test_dir, "index.csv")
    if not os.path.exists(index):
        raise ManifestError(f"{test_dir}: no index.csv")
    out = []
    with open(index, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                paths = {k: os.path.join(test_dir, row[k]) for k in ("mixture", "fish", "background")}
            except KeyError as exc:
                raise ManifestError(f"{index}: missing column {exc}") from exc
            for k, p in paths.items():
                if not os.path.exists(p):
                    raise ManifestError(f"{index}: missing ground truth file {p}")
            mix = read_wav(paths["mixture"])
            coeffs = MixCoefficients(float(row["k_f"]), float(row["k_b"]), float(row["alpha_f"]))
            out.append((MixtureSample(mix.samples, read_wav(paths["fish"]).samples,
                                      read_wav(paths["background"]).samples, coeffs,
                                      int(row["fish_id"]), int(row["background_id"]), TESTSET_EPOCH),
                        mix.sample_rate))
    return out
