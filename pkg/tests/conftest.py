import numpy as np
import pytest

from finsep.audio import Waveform, write_wav
from finsep.synthetic import fish_call, sea_background


def write_corpus(root, n_files=6, n_test=2, seconds=1.5, sample_rate=8000, seed=0):
    """Synthetic fish calls and sea backgrounds plus a manifest; the last ``n_test`` rows are test."""
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n = int(seconds * sample_rate)
    lines = []
    for i in range(n_files):
        write_wav(Waveform(fish_call(rng, n, sample_rate), sample_rate), root / f"fish{i}.wav")
        write_wav(Waveform(sea_background(rng, n, sample_rate), sample_rate), root / f"bg{i}.wav")
        split = "test" if i >= n_files - n_test else "train"
        lines.append(f"fish{i}.wav\tbg{i}.wav\t{split}")
    manifest = root / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


@pytest.fixture
def corpus(tmp_path):
    return write_corpus(tmp_path / "corpus")
