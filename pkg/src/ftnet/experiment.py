"""Training runs driven by an :class:`ExperimentConfig`.

A run writes into one output directory:

- ``config.yaml``: the normalized config that was actually run
- ``metrics.ndjson``: one JSON object per line, training losses every
  ``log_interval`` iterations and an evaluation record at iteration 0 and
  at every sample iteration
- ``checkpoint_%06d.ftck``: generator and discriminator weights, at
  iteration 0 and at every checkpoint iteration
- ``samples_%06d.csv`` (synthetic) or ``samples_%06d.pgm`` (MNIST)

Randomness comes from four independent streams spawned from the seed:
initialization, data, training noise and evaluation. Nothing else (clock,
paths) feeds the outputs, so equal seeds give byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ExperimentConfig, dump_config
from .data import Dataset, batches, gmm_sample, load_mnist_idx, write_points_csv
from .gan import GanModel, TrainState, generate, mode_coverage, train_step
from .network import build_network, loss_and_grad
from .serialization import save_checkpoint

MNIST_SIDE = 28


@dataclass
class Streams:
    init: np.random.Generator
    data: np.random.Generator
    noise: np.random.Generator
    eval: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        return cls(*(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)))


def build_gan(cfg: ExperimentConfig, rng: np.random.Generator) -> GanModel:
    generator = build_network(cfg.generator, rng)
    discriminator = build_network(cfg.discriminator, rng)
    return GanModel(generator, discriminator, cfg.prior)


def load_data(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[Dataset, Dataset | None]:
    """Training set and (MNIST only) the held-out tail of the image file."""
    if cfg.data["kind"] == "gmm":
        return gmm_sample(cfg.gmm_spec(), rng), None
    d = cfg.data
    labels = cfg.resolve(d["labels"]) if d.get("labels") else None
    ds = load_mnist_idx(cfg.resolve(d["images"]), labels, limit=d.get("limit"))
    holdout = d.get("holdout", 0)
    if holdout <= 0:
        return ds, None
    if holdout >= len(ds):
        raise ValueError(f"holdout of {holdout} leaves no training images out of {len(ds)}")
    n = len(ds) - holdout
    return ds.subset(n), ds.subset(slice(n, None))


def checkpoint_meta(cfg: ExperimentConfig, iteration: int) -> dict:
    return {
        "name": cfg.name,
        "task": cfg.task,
        "seed": cfg.train.seed,
        "iteration": iteration,
        "prior": cfg.prior.to_dict(),
    }


def real_loss(gan: GanModel, images: np.ndarray) -> float:
    """Discriminator cross-entropy on real images alone (all labelled real)."""
    x = np.reshape(images, gan.discriminator.in_shape + (images.shape[-1],), order="F")
    logits, _ = gan.discriminator.forward(x)
    flat = logits.reshape(-1)
    return loss_and_grad("bce_logits", flat, np.ones_like(flat))[0]


def as_images(samples: np.ndarray) -> np.ndarray:
    """``(..., n)`` generator output viewed as ``(28, 28, n)`` images."""
    return np.reshape(samples, (MNIST_SIDE, MNIST_SIDE, samples.shape[-1]), order="F")


def image_stats(images: np.ndarray) -> dict:
    flat = images.reshape(-1, images.shape[-1])
    var = flat.var(axis=0)
    return {
        "mean_intensity": float(flat.mean()),
        "frac_varied": float(np.mean(var > 0.01)),
    }


def pgm_grid(images: np.ndarray) -> bytes:
    """Binary P5 PGM tiling ``(h, w, n)`` images row by row; empty tiles are black."""
    h, w, n = images.shape
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    canvas = np.zeros((rows * h, cols * w), dtype=np.uint8)
    pixels = np.rint(255.0 * np.clip(images, 0.0, 1.0)).astype(np.uint8)
    for k in range(n):
        r, c = divmod(k, cols)
        canvas[r * h:(r + 1) * h, c * w:(c + 1) * w] = pixels[:, :, k]
    header = f"P5\n{cols * w} {rows * h}\n255\n".encode("ascii")
    return header + canvas.tobytes()


def write_samples(path: Path, samples: np.ndarray) -> Path:
    """CSV for 2-D points, PGM grid for anything with 784 values per sample."""
    per_sample = math.prod(samples.shape[:-1])
    if per_sample == 2:
        path = path.with_suffix(".csv")
        write_points_csv(path, samples.reshape(2, -1))
    elif per_sample == MNIST_SIDE * MNIST_SIDE:
        path = path.with_suffix(".pgm")
        path.write_bytes(pgm_grid(as_images(samples)))
    else:
        raise ValueError(f"cannot render samples with {per_sample} values each")
    return path


@dataclass
class RunResult:
    out_dir: Path
    iterations: int
    evals: list[dict]


def run_experiment(cfg: ExperimentConfig, out_dir: Path | str | None = None,
                   progress: Callable[[dict], None] | None = None) -> RunResult:
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))

    streams = Streams.from_seed(cfg.train.seed)
    gan = build_gan(cfg, streams.init)
    train_set, holdout = load_data(cfg, streams.data)
    if train_set.sample_shape != gan.discriminator.in_shape and \
            math.prod(train_set.sample_shape) != math.prod(gan.discriminator.in_shape):
        raise ValueError(f"data samples of shape {train_set.sample_shape} do not fit the "
                         f"discriminator input {gan.discriminator.in_shape}")
    state = TrainState.fresh(cfg.train, streams.noise)
    data = batches(train_set, cfg.train.batch_size, streams.data, epochs=None)

    total = cfg.train.iterations
    sample_at = {i for i in cfg.sample_iterations if i <= total}
    ckpt_at = {i for i in cfg.checkpoint_iterations if i <= total} | {0}
    evals = []

    def evaluate(it: int) -> dict:
        samples = generate(gan, cfg.num_samples, streams.eval)
        rec = {"kind": "eval", "iter": it}
        if cfg.task == "synthetic":
            covered, hist = mode_coverage(samples.reshape(2, -1), cfg.gmm_spec().means(),
                                          cfg.coverage_radius)
            rec.update(covered_modes=covered, mode_hist=hist.tolist())
        else:
            rec.update(image_stats(as_images(samples)))
            if holdout is not None:
                rec["holdout_d_loss"] = real_loss(gan, holdout.samples)
        if it in sample_at:
            write_samples(out / f"samples_{it:06d}", samples)
        return rec

    with open(out / "metrics.ndjson", "w") as log:
        def emit(rec: dict):
            log.write(json.dumps(rec, sort_keys=True) + "\n")
            if progress is not None:
                progress(rec)

        def after(it: int):
            if it == 0 or it in sample_at:
                rec = evaluate(it)
                evals.append(rec)
                emit(rec)
            if it in ckpt_at:
                save_checkpoint(out / f"checkpoint_{it:06d}.ftck", gan.generator,
                                gan.discriminator, checkpoint_meta(cfg, it))

        after(0)
        for it in range(1, total + 1):
            losses = train_step(gan, next(data), cfg.train, state)
            if it % cfg.log_interval == 0 or it == total:
                emit({"kind": "train", "iter": it, **losses})
            after(it)
    return RunResult(out, total, evals)
