"""Adversarial training of a generator/discriminator pair.

The discriminator's last layer emits logits; the sigmoid ``D(x)`` lives
inside the cross-entropy so saturated discriminators stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import ShapeError
from .network import Network, Optimizer, loss_and_grad, make_optimizer

DEFAULT_COVERAGE_RADIUS = 0.2


@dataclass(frozen=True)
class PriorSpec:
    """Latent distribution ``p_z``; ``shape`` is one draw without the batch mode."""

    shape: tuple[int, ...]
    kind: str = "uniform"
    low: float = -1.0
    high: float = 1.0
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if self.kind == "uniform" and not self.low < self.high:
            raise ValueError("uniform prior needs low < high")
        if self.kind == "gaussian" and not self.std > 0:
            raise ValueError("gaussian prior needs std > 0")
        if self.kind not in ("uniform", "gaussian"):
            raise ValueError(f"unknown prior kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "shape": list(self.shape)}
        if self.kind == "uniform":
            d.update(low=self.low, high=self.high)
        else:
            d.update(mean=self.mean, std=self.std)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        d = dict(d)
        return cls(shape=tuple(d.pop("shape")), **d)


def sample_prior(prior: PriorSpec, c: int, rng: np.random.Generator) -> np.ndarray:
    """``prior.shape + (c,)`` i.i.d. draws."""
    if c < 1:
        raise ValueError("batch size must be >= 1")
    size = prior.shape + (c,)
    if prior.kind == "uniform":
        return rng.uniform(prior.low, prior.high, size=size)
    return prior.mean + prior.std * rng.standard_normal(size)


@dataclass
class GanModel:
    generator: Network
    discriminator: Network
    prior: PriorSpec

    def __post_init__(self):
        if math.prod(self.generator.out_shape) != math.prod(self.discriminator.in_shape):
            raise ShapeError(f"generator emits {self.generator.out_shape}, "
                             f"discriminator reads {self.discriminator.in_shape}")
        if math.prod(self.discriminator.out_shape) != 1:
            raise ShapeError("discriminator must emit one logit per sample")
        if math.prod(self.prior.shape) != math.prod(self.generator.in_shape):
            raise ShapeError(f"prior draws {self.prior.shape}, generator reads "
                             f"{self.generator.in_shape}")

    def num_params(self) -> int:
        return self.generator.num_params() + self.discriminator.num_params()


@dataclass
class TrainConfig:
    iterations: int = 10_000
    batch_size: int = 64
    d_steps_per_g_step: int = 1
    d_optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 2e-4,
                                                       "beta1": 0.5, "beta2": 0.999, "eps": 1e-8})
    g_optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 2e-4,
                                                       "beta1": 0.5, "beta2": 0.999, "eps": 1e-8})
    seed: int = 0
    generator_loss: str = "nonsaturating"

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1 or self.d_steps_per_g_step < 1:
            raise ValueError("batch_size and d_steps_per_g_step must be >= 1")
        if self.generator_loss not in ("nonsaturating", "minimax"):
            raise ValueError(f"unknown generator loss {self.generator_loss!r}")


@dataclass
class TrainState:
    d_opt: Optimizer
    g_opt: Optimizer
    rng: np.random.Generator
    iteration: int = 0

    @classmethod
    def fresh(cls, cfg: TrainConfig, rng: np.random.Generator) -> "TrainState":
        return cls(make_optimizer(cfg.d_optimizer), make_optimizer(cfg.g_optimizer), rng)


def _as_disc_input(gan: GanModel, x: np.ndarray) -> np.ndarray:
    return np.reshape(x, gan.discriminator.in_shape + (x.shape[-1],), order="F")


def discriminator_loss(gan: GanModel, real: np.ndarray, fake: np.ndarray):
    """Cross-entropy with real labelled 1 and fake labelled 0.

    Real and fake batches go through the discriminator together; the loss is
    the sum of the two per-batch means. Returns ``(loss, caches, d_logits)``.
    """
    c_real, c_fake = real.shape[-1], fake.shape[-1]
    both = np.concatenate([_as_disc_input(gan, real), _as_disc_input(gan, fake)], axis=-1)
    logits, caches = gan.discriminator.forward(both)
    flat = logits.reshape(-1)
    targets = np.concatenate([np.ones(c_real), np.zeros(c_fake)])
    loss_r, g_r = loss_and_grad("bce_logits", flat[:c_real], targets[:c_real])
    loss_f, g_f = loss_and_grad("bce_logits", flat[c_real:], targets[c_real:])
    return loss_r + loss_f, caches, np.concatenate([g_r, g_f]).reshape(logits.shape)


def train_step(gan: GanModel, real_batch: np.ndarray, cfg: TrainConfig, state: TrainState) -> dict:
    """One round of discriminator updates followed by one generator update.

    Each update draws fresh prior noise. The returned losses are evaluated
    after all updates, on ``real_batch`` and the generator step's noise, so
    with a zero learning rate they equal the pre-update evaluation.
    """
    real_batch = np.asarray(real_batch, dtype=np.float64)
    if math.prod(real_batch.shape[:-1]) != math.prod(gan.discriminator.in_shape):
        raise ShapeError(f"real batch {real_batch.shape} does not fit the discriminator "
                         f"input {gan.discriminator.in_shape}")
    c = real_batch.shape[-1]
    gen, disc = gan.generator, gan.discriminator

    for _ in range(cfg.d_steps_per_g_step):
        fake, _ = gen.forward(sample_prior(gan.prior, c, state.rng))
        _, caches, d_logits = discriminator_loss(gan, real_batch, fake)
        state.d_opt.step(disc, disc.backward(caches, d_logits))

    z = sample_prior(gan.prior, c, state.rng)
    fake, g_caches = gen.forward(z)
    logits, d_caches = disc.forward(_as_disc_input(gan, fake))
    _, d_logits = loss_and_grad(f"gan_generator_{cfg.generator_loss}", logits)
    d_fake = disc.backward(d_caches, d_logits)[0].d_input
    state.g_opt.step(gen, gen.backward(g_caches, d_fake))

    state.iteration += 1
    return evaluate_losses(gan, real_batch, z, cfg.generator_loss)


def evaluate_losses(gan: GanModel, real_batch: np.ndarray, z: np.ndarray,
                    generator_loss: str = "nonsaturating") -> dict:
    """Discriminator and generator losses at the current parameters."""
    fake, _ = gan.generator.forward(z)
    c = real_batch.shape[-1]
    both = np.concatenate([_as_disc_input(gan, real_batch), _as_disc_input(gan, fake)], axis=-1)
    logits = gan.discriminator.forward(both)[0].reshape(-1)
    loss_r, _ = loss_and_grad("bce_logits", logits[:c], np.ones(c))
    loss_f, _ = loss_and_grad("bce_logits", logits[c:], np.zeros(len(logits) - c))
    g_loss, _ = loss_and_grad(f"gan_generator_{generator_loss}", logits[c:])
    return {"d_loss": loss_r + loss_f, "g_loss": g_loss}


def generator_input_grad(gan: GanModel, z: np.ndarray, loss: str = "nonsaturating"):
    """Gradient reaching the generator output through the discriminator."""
    fake, _ = gan.generator.forward(z)
    logits, caches = gan.discriminator.forward(_as_disc_input(gan, fake))
    _, d_logits = loss_and_grad(f"gan_generator_{loss}", logits)
    return gan.discriminator.backward(caches, d_logits)[0].d_input


def generate(gan: GanModel, n: int, rng: np.random.Generator, chunk: int = 4096) -> np.ndarray:
    """``n`` generator samples, shaped ``generator.out_shape + (n,)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = sample_prior(gan.prior, n, rng)
    parts = [gan.generator.forward(z[..., k:k + chunk])[0] for k in range(0, n, chunk)]
    return np.concatenate(parts, axis=-1)


def mode_coverage(samples: np.ndarray, centers: np.ndarray,
                  radius: float = DEFAULT_COVERAGE_RADIUS) -> tuple[int, np.ndarray]:
    """Count mixture modes that received a fair share of samples.

    ``samples`` is ``(2, n)``. Each sample is assigned to its nearest
    center; a mode is covered when at least ``1 / (2K)`` of all samples are
    assigned to it *and* lie within ``radius`` of it. Returns the covered
    count and the per-mode counts of such samples.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if len(centers) == 0:
        raise ValueError("need at least one center")
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = np.asarray(samples, dtype=np.float64).reshape(2, -1).T
    dist = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=-1)
    nearest = dist.argmin(axis=1)
    close = dist[np.arange(len(pts)), nearest] <= radius
    hist = np.bincount(nearest[close], minlength=len(centers))
    covered = int(np.sum(hist >= len(pts) / (2 * len(centers))))
    return covered, hist


def train(gan: GanModel, data: Iterator[np.ndarray], cfg: TrainConfig, state: TrainState,
          on_step: Callable[[int, dict], None] | None = None) -> TrainState:
    """Run ``cfg.iterations`` train steps, drawing real batches from ``data``."""
    for _ in range(cfg.iterations):
        metrics = train_step(gan, next(data), cfg, state)
        if on_step is not None:
            on_step(state.iteration, metrics)
    return state
