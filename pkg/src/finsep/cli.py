"""``finsep`` command line: preprocess, synth, train, separate, eval, spectro.

Exit status is 0 on success, 1 when a computation fails (silent input,
diverged training, empty pools) and 2 for usage or I/O problems (missing
files, malformed configs, manifests, WAVs or checkpoints).
"""

from __future__ import annotations

import argparse
import glob
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .audio import (AudioError, ChunkSpec, Waveform, WavFormatError, denoise, estimate_noise_profile,
                    peak_normalize, read_wav, resample, spectrogram, spectrogram_to_csv,
                    spectrogram_to_pgm, write_wav)
from .bsseval import EvalError, evaluate
from .config import ConfigError, load_run_config
from .mixgen import (ManifestError, MixError, build_testset, load_pools, read_manifest, read_testset,
                     resolve_splits, write_testset)
from .numcore import CheckpointError, load_checkpoint
from .separator import build_model, model_classes
from .train import TrainingError, latest_checkpoint, resume, train

log = logging.getLogger("finsep")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
LABELS = {"tasnet": "TasNet", "demucs": "Demucs"}


class UsageError(Exception):
    pass


def worker_count() -> int:
    """Thread pool size: ``FINSEP_THREADS`` if set, else the CPU count."""
    cpus = os.cpu_count() or 1
    raw = os.environ.get("FINSEP_THREADS", "")
    if not raw:
        return cpus
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"FINSEP_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError(f"FINSEP_THREADS must be >= 1, got {n}")
    return n


def _write_atomic(path, data: bytes) -> None:
    try:
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".finsep-")
    except OSError as exc:
        raise OSError(exc.errno, exc.strerror, str(path)) from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    w = read_wav(args.input)
    if args.rate is not None and args.rate != w.sample_rate:
        w = resample(w, args.rate)
    if args.noise_profile:
        noise = read_wav(args.noise_profile)
        if noise.sample_rate != w.sample_rate:
            noise = resample(noise, w.sample_rate)
        w = denoise(w, estimate_noise_profile(noise), threshold_sigmas=args.threshold_sigmas,
                    reduction_db=args.reduction_db)
    w = peak_normalize(w, args.target_db)
    write_wav(w, args.output, args.encoding)
    log.info("wrote %s (%d samples at %d Hz)", args.output, len(w), w.sample_rate)
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = ChunkSpec(args.chunk_length, args.overlap)
    entries = resolve_splits(read_manifest(args.manifest), args.ratio, args.split_seed)
    pools = load_pools(entries, "test", spec, args.rate)
    if not pools.fish:
        raise MixError(f"{args.manifest}: no test fish chunks")
    if not pools.background:
        raise MixError(f"{args.manifest}: no held-out background chunks")
    samples = build_testset(pools.fish, pools.background, args.count, args.seed,
                            (args.k_min, args.k_max), args.alpha_f)
    index = write_testset(samples, args.out_dir, args.rate)
    log.info("wrote %d test items to %s", len(samples), index)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.arch:
        out["arch"] = args.arch
    if args.epochs is not None:
        out["epochs"] = str(args.epochs)
    return out


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    dtype = np.float64 if cfg.precision == "float64" else np.float32
    tcfg = cfg.train_config()
    entries = resolve_splits(read_manifest(cfg.manifest), cfg.split_ratio, cfg.split_seed)
    pools = load_pools(entries, "train", cfg.chunk_spec, cfg.sample_rate)
    if not pools.fish:
        raise MixError(f"{cfg.manifest}: no training fish chunks")
    if not pools.background:
        raise MixError(f"{cfg.manifest}: no training background chunks")

    os.makedirs(cfg.out_dir, exist_ok=True)
    log_path = os.path.join(cfg.out_dir, "train_log.csv")
    if args.fresh:
        for old in glob.glob(os.path.join(cfg.out_dir, "ckpt_epoch*.ckpt")) + [log_path]:
            if os.path.exists(old):
                os.unlink(old)
    latest = latest_checkpoint(cfg.out_dir)
    if latest:
        model, state = resume(latest, dtype)
        if model.arch != cfg.arch:
            raise ConfigError(f"{latest}: checkpoint is {model.arch}, config asks for {cfg.arch}")
        log.info("resuming from %s (epoch %d, step %d)", latest, state.epoch, state.step)
    else:
        model, state = build_model(cfg.arch, cfg.model_config(), cfg.seed, dtype), None
    meta = {"sample_rate": cfg.sample_rate, "chunk_length": cfg.chunk_length,
            "chunk_overlap": cfg.chunk_overlap}
    state = train(model, pools.fish, pools.background, tcfg, state, cfg.out_dir, log_path, meta)
    log.info("trained %s to epoch %d (%d steps); checkpoints in %s", cfg.arch, state.epoch,
             state.step, cfg.out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# separate / eval
# ---------------------------------------------------------------------------

def _load_separator(path):
    ckpt = load_checkpoint(path)
    classes = model_classes()
    if ckpt.arch not in classes:
        raise CheckpointError(f"{path}: unknown architecture {ckpt.arch!r}")
    model = classes[ckpt.arch].from_checkpoint(ckpt, np.float64)
    spec = ChunkSpec(int(ckpt.meta.get("chunk_length", ChunkSpec.length)),
                     float(ckpt.meta.get("chunk_overlap", ChunkSpec.overlap)))
    return model, spec, ckpt.meta.get("sample_rate")


def separate_waveform(model, spec: ChunkSpec, model_rate, w: Waveform, name: str = "input"):
    """Run the model at its training rate and return both sources at ``w``'s rate."""
    x = w
    if model_rate and int(model_rate) != w.sample_rate:
        log.warning("%s is %d Hz but the model was trained at %d Hz; resampling", name,
                    w.sample_rate, int(model_rate))
        x = resample(w, int(model_rate))
    outs = []
    for src in model.forward(x, spec):
        y = src if src.sample_rate == w.sample_rate else resample(src, w.sample_rate)
        s = y.samples[:len(w)]
        if len(s) < len(w):
            s = np.pad(s, (0, len(w) - len(s)))
        outs.append(Waveform(s, w.sample_rate))
    return tuple(outs)


def cmd_separate(args) -> int:
    model, spec, rate = _load_separator(args.checkpoint)
    w = read_wav(args.input)
    fish, bg = separate_waveform(model, spec, rate, w, args.input)
    for kind, out in (("fish", fish), ("background", bg)):
        write_wav(out, f"{args.out_prefix}.{kind}.wav", args.encoding)
    log.info("wrote %s.fish.wav and %s.background.wav", args.out_prefix, args.out_prefix)
    return EXIT_OK


def cmd_eval(args) -> int:
    if bool(args.checkpoint) == bool(args.ground_truth):
        raise UsageError("eval needs either a checkpoint or --ground-truth (not both)")
    items = read_testset(args.testset)
    samples = [s for s, _ in items]
    if args.ground_truth:
        label = "ground truth"
        outputs = [(s.source_fish, s.source_background) for s in samples]
    else:
        model, spec, rate = _load_separator(args.checkpoint)
        label = LABELS.get(model.arch, model.arch)

        def run(item):
            s, sr = item
            fish, bg = separate_waveform(model, spec, rate, Waveform(s.mixture, sr))
            return fish.samples, bg.samples

        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            outputs = list(pool.map(run, items))
    report = evaluate(outputs, samples, label)
    text = report.to_text()
    prefix = args.out or os.path.join(args.testset, "report")
    _write_atomic(prefix + ".txt", text.encode())
    report.to_csv(prefix + ".csv")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# spectro
# ---------------------------------------------------------------------------

def cmd_spectro(args) -> int:
    ext = os.path.splitext(args.output)[1].lower()
    if ext not in (".pgm", ".csv"):
        raise UsageError(f"{args.output}: output must end in .pgm or .csv")
    spec = spectrogram(read_wav(args.input), args.window, args.hop, args.floor_db)
    data = spectrogram_to_pgm(spec) if ext == ".pgm" else spectrogram_to_csv(spec).encode()
    _write_atomic(args.output, data)
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="finsep", description="Fish vocalization / sea background separation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="resample, denoise and peak-normalize a recording")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--target-db", type=float, default=-1.0)
    s.add_argument("--noise-profile", help="noise-only WAV used to fit the spectral gate")
    s.add_argument("--rate", type=int, help="resample to this rate first")
    s.add_argument("--threshold-sigmas", type=float, default=1.5)
    s.add_argument("--reduction-db", type=float, default=12.0)
    s.add_argument("--encoding", choices=["float32", "pcm16"], default="float32")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("synth", help="materialize a synthetic test set from a manifest")
    s.add_argument("manifest")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--ratio", type=float, default=0.8)
    s.add_argument("--rate", type=int, default=44100)
    s.add_argument("--chunk-length", type=int, default=ChunkSpec.length)
    s.add_argument("--overlap", type=float, default=ChunkSpec.overlap)
    s.add_argument("--k-min", type=float, default=0.0)
    s.add_argument("--k-max", type=float, default=1.0)
    s.add_argument("--alpha-f", type=float, default=0.1)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a separator from a key = value config file")
    s.add_argument("config")
    s.add_argument("--arch", choices=sorted(LABELS))
    s.add_argument("--epochs", type=int)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    s.add_argument("--fresh", action="store_true", help="discard existing checkpoints instead of resuming")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("separate", help="split a recording into fish and background")
    s.add_argument("input")
    s.add_argument("checkpoint")
    s.add_argument("out_prefix")
    s.add_argument("--encoding", choices=["float32", "pcm16"], default="float32")
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("eval", help="SDR report on a synthetic test set")
    s.add_argument("testset")
    s.add_argument("checkpoint", nargs="?")
    s.add_argument("--ground-truth", action="store_true", help="score the reference sources themselves")
    s.add_argument("--out", help="report prefix (default TESTSET/report)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("spectro", help="render a dBFS spectrogram as PGM or CSV")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--window", type=int, default=1024)
    s.add_argument("--hop", type=int, default=256)
    s.add_argument("--floor-db", type=float, default=-120.0)
    s.set_defaults(func=cmd_spectro)
    return p


def exit_code(exc: BaseException) -> int:
    """Map an exception to the CLI exit status."""
    usage = (UsageError, ConfigError, CheckpointError, WavFormatError, ManifestError, OSError)
    if isinstance(exc, usage):
        return EXIT_USAGE
    if isinstance(exc, (AudioError, MixError, TrainingError, EvalError)):
        return EXIT_FAILURE
    if isinstance(exc, ValueError):
        return EXIT_USAGE
    return EXIT_FAILURE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an exit status
        code = exit_code(exc)
        msg = str(exc)
        if isinstance(exc, OSError) and exc.filename and str(exc.filename) not in msg:
            msg = f"{exc.filename}: {msg}"
        print(f"finsep {args.command}: error: {msg}", file=sys.stderr)
        if code == EXIT_FAILURE and not isinstance(exc, (AudioError, MixError, TrainingError, EvalError)):
            log.debug("traceback", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
