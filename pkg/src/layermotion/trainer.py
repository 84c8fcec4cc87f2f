"""Base optimization and test-time refinement of the layered field.

Training runs Adam with a cosine-annealed learning rate over random pixel
batches. Refinement restricts the pixel pool to a chosen frame set (plus an
optional symmetric neighbor window per frame), optimizes only the
semi-static and dynamic partitions while the static partition stays
bit-identical, and guards the objective with step-halving: every
`guard_every` steps the refinement loss is probed on a fixed batch and a
round that raised it is rolled back at half the learning rate, so the
accepted probe losses form a non-increasing sequence.

Everything is deterministic given the seed; gradient reductions are
chunk-ordered, so the worker count never changes the math.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .fields import PARTITION, LayeredFieldParams
from .losses import LossConfig, LossReport, total_loss_and_gradients

# Per-block multipliers on the base learning rate. Grids need far larger
# steps than heads and codes to reach opaque pre-activations within a
# desk-scale step budget; the dynamic grid is deliberately slower so the
# camera-frame layer does not win every transient by default and the
# motion-fusion losses have observable work to do.
DEFAULT_BLOCK_LR: dict[str, float] = {
    "st_grid": 50.0,
    "phi0": 50.0,
    "ss_grids": 50.0,
    "dy_grids": 15.0,
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 5e-4
    rays_per_step: int = 2048
    n_samples: int = 24
    steps_per_epoch: int | None = None  # None: one full sweep over all pixels
    losses: tuple[str, ...] = ("rgb", "pmf", "nmf")
    lambda_pmf: float = 1.1
    lambda_nmf: float = 1.0
    threshold: float = 0.5
    stratified: bool = True
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.rays_per_step < 1:
            raise ConfigError("rays_per_step must be positive")

    def loss_config(self) -> LossConfig:
        return LossConfig.from_names(
            self.losses, self.lambda_pmf, self.lambda_nmf, self.threshold
        )


@dataclass(frozen=True)
class RefineConfig:
    frames: tuple[int, ...]
    neighbors: int = 0
    steps: int = 300
    learning_rate: float = 5e-4
    rays_per_step: int = 2048
    n_samples: int = 24
    losses: tuple[str, ...] = ("rgb", "pmf", "nmf")
    lambda_pmf: float = 1.1
    lambda_nmf: float = 1.0
    threshold: float = 0.5
    stratified: bool = True
    seed: int = 0
    workers: int = 1
    guard_every: int = 25
    probe_rays: int = 4096

    def loss_config(self) -> LossConfig:
        return LossConfig.from_names(
            self.losses, self.lambda_pmf, self.lambda_nmf, self.threshold
        )


def neighbor_frames(t_i: int, window: int, n_frames: int) -> list[int]:
    """{t_i - N, ..., t_i + N} clipped to [0, T), ascending."""
    if not 0 <= t_i < n_frames:
        raise DomainError(f"frame {t_i} outside [0, {n_frames})")
    if window < 0:
        raise DomainError("window must be non-negative")
    return list(range(max(t_i - window, 0), min(t_i + window, n_frames - 1) + 1))


def refinement_set(frames, window: int, n_frames: int) -> list[int]:
    """Union of neighbor windows over the requested frames, deduplicated."""
    frames = list(frames)
    if not frames:
        raise ConfigError("refinement needs a nonempty frame set")
    out: set[int] = set()
    for t_i in frames:
        out.update(neighbor_frames(int(t_i), window, n_frames))
    return sorted(out)


class Adam:
    """Per-parameter moment estimation over named blocks.

    `block_lr` holds optional per-block multipliers on the base rate; blocks
    not listed use 1.0.
    """

    def __init__(self, names, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, block_lr=None):
        self.names = tuple(names)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.block_lr = dict(block_lr or {})
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, blocks: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr_scale: float = 1.0):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name in self.names:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            rate = self.lr * lr_scale * self.block_lr.get(name, 1.0)
            blocks[name] -= rate * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def snapshot(self):
        return (
            self.t,
            {k: v.copy() for k, v in self.m.items()},
            {k: v.copy() for k, v in self.v.items()},
        )

    def restore(self, snap):
        self.t, m, v = snap[0], snap[1], snap[2]
        self.m = {k: v_.copy() for k, v_ in m.items()}
        self.v = {k: v_.copy() for k, v_ in v.items()}


def cosine_lr(step: int, total_steps: int) -> float:
    """Cosine annealing factor from 1 at step 0 toward 0 at the final step."""
    if total_steps <= 1:
        return 1.0
    return 0.5 * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


def partition_digest(params: LayeredFieldParams, part: str) -> str:
    """SHA-256 over one partition's raw parameter bytes (freeze checks)."""
    h = hashlib.sha256()
    for name in PARTITION[part]:
        h.update(np.ascontiguousarray(params.blocks[name], dtype="<f8").tobytes())
    return h.hexdigest()


def train(params: LayeredFieldParams, dataset, cfg: TrainConfig):
    """Optimize all partitions on the dataset; returns (new params, log rows).

    Log rows are dicts matching the training-log CSV columns. With
    epochs == 0 the parameters are returned unchanged.
    """
    loss_cfg = cfg.loss_config()
    if (loss_cfg.use_pmf or loss_cfg.use_nmf) and dataset.pseudo is None:
        raise ConfigError("motion fusion enabled but the dataset has no pseudo-masks")
    params = params.copy()
    log: list[dict] = []
    if cfg.epochs == 0:
        return params, log
    n_pixels = dataset.n_pixels
    steps_per_epoch = cfg.steps_per_epoch or max(n_pixels // cfg.rays_per_step, 1)
    steps_per_epoch = min(steps_per_epoch, max(n_pixels // cfg.rays_per_step, 1))
    total_steps = cfg.epochs * steps_per_epoch
    opt = Adam(list(params.blocks), cfg.learning_rate, block_lr=DEFAULT_BLOCK_LR)
    k = 0
    for epoch in range(cfg.epochs):
        perm = np.random.default_rng([cfg.seed, 11, epoch]).permutation(n_pixels)
        for step in range(steps_per_epoch):
            ids = perm[step * cfg.rays_per_step : (step + 1) * cfg.rays_per_step]
            batch = dataset.ray_batch(
                ids, cfg.n_samples, cfg.stratified, seed=[cfg.seed, 13, epoch, step]
            )
            report, grads = total_loss_and_gradients(
                params, batch, loss_cfg, workers=cfg.workers
            )
            opt.step(params.blocks, grads, cosine_lr(k, total_steps))
            log.append(_log_row(epoch, k, report))
            k += 1
    return params, log


def _log_row(epoch: int, step: int, report: LossReport) -> dict:
    return {
        "epoch": epoch,
        "step": step,
        "l_rgb": report.l_rgb,
        "l_pmf": report.l_pmf,
        "l_nmf": report.l_nmf,
        "l_total": report.l_total,
        "grad_norm_st": report.grad_norms["st"],
        "grad_norm_ss": report.grad_norms["ss"],
        "grad_norm_dy": report.grad_norms["dy"],
    }


def refine(params: LayeredFieldParams, dataset, cfg: RefineConfig):
    """Test-time refinement of the semi-static and dynamic partitions only.

    Returns (refined params, log rows, accepted probe losses). The static
    partition of the result is bit-identical to the input.
    """
    loss_cfg = cfg.loss_config()
    if (loss_cfg.use_pmf or loss_cfg.use_nmf) and dataset.pseudo is None:
        raise ConfigError("motion fusion enabled but the dataset has no pseudo-masks")
    frames = refinement_set(cfg.frames, cfg.neighbors, dataset.n_frames)
    params = params.copy()
    log: list[dict] = []
    if cfg.steps == 0:
        return params, log, []
    pool = dataset.pixel_ids_for_frames(frames)
    trainable = list(PARTITION["ss"]) + list(PARTITION["dy"])
    opt = Adam(trainable, cfg.learning_rate, block_lr=DEFAULT_BLOCK_LR)

    probe_rng = np.random.default_rng([cfg.seed, 17])
    probe_ids = probe_rng.choice(pool, size=min(cfg.probe_rays, pool.size), replace=False)
    probe_batch = dataset.ray_batch(probe_ids, cfg.n_samples, False, seed=[cfg.seed, 19])

    def probe_loss() -> float:
        report, _ = total_loss_and_gradients(params, probe_batch, loss_cfg, cfg.workers)
        return report.l_total

    def snapshot():
        return (
            {name: params.blocks[name].copy() for name in trainable},
            opt.snapshot(),
        )

    accepted = [probe_loss()]
    lr_scale = 1.0
    snap = snapshot()
    step = 0
    while step < cfg.steps:
        round_steps = min(cfg.guard_every, cfg.steps - step)
        for _ in range(round_steps):
            rng = np.random.default_rng([cfg.seed, 23, step])
            ids = rng.choice(pool, size=min(cfg.rays_per_step, pool.size), replace=False)
            batch = dataset.ray_batch(
                ids, cfg.n_samples, cfg.stratified, seed=[cfg.seed, 29, step]
            )
            report, grads = total_loss_and_gradients(params, batch, loss_cfg, cfg.workers)
            opt.step(params.blocks, grads, lr_scale)
            log.append(_log_row(-1, step, report))
            step += 1
        new_loss = probe_loss()
        if new_loss <= accepted[-1] + 1e-12:
            accepted.append(new_loss)
            snap = snapshot()
        else:
            # Roll the round back and retry more cautiously.
            for name, saved in snap[0].items():
                params.blocks[name][...] = saved
            opt.restore(snap[1])
            lr_scale *= 0.5
            accepted.append(accepted[-1])
    return params, log, accepted
