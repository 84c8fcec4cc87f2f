"""Training objective and exact analytic gradients.

Three terms, reported separately and summed without extra weights (the
lambda factors live inside the fusion terms):

  rgb   uncertainty-weighted reconstruction,
        mean_u [ ||pred - target||^2 / (2 B^2) + log B^2 ]
  pmf   positive motion fusion: mean_u lambda_pmf * (mask_dy - M)^2,
        pulling the dynamic layer's rendered mask toward the soft 2D label,
  nmf   negative motion fusion: lambda_nmf * mean over labeled-dynamic
        pixels of mask_ss^2, silencing the semi-static layer there. The
        pixel set comes from binarizing M at `threshold` and is normalized
        per minibatch; an empty set gives zero loss.

Gradients are hand-derived end to end (quadrature, density-share mixing,
activations, trilinear interpolation, temporal-code factors) and validated
against central finite differences. Per-ray contributions are accumulated
chunk by chunk in a fixed order, so results are bit-identical for any
worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .fields import PARTITION, LayeredFieldParams, backward_eval_layers
from .renderer import ForwardCache, render_batch

GRAD_CHUNK = 512  # rays per reduction chunk; fixed so workers cannot reorder math


@dataclass(frozen=True)
class LossConfig:
    use_rgb: bool = True
    use_pmf: bool = True
    use_nmf: bool = True
    lambda_pmf: float = 1.1
    lambda_nmf: float = 1.0
    threshold: float = 0.5

    @staticmethod
    def from_names(names, lambda_pmf=1.1, lambda_nmf=1.0, threshold=0.5) -> "LossConfig":
        names = set(names)
        unknown = names - {"rgb", "pmf", "nmf"}
        if unknown:
            raise ConfigError(f"unknown loss names: {sorted(unknown)}")
        return LossConfig(
            use_rgb="rgb" in names,
            use_pmf="pmf" in names,
            use_nmf="nmf" in names,
            lambda_pmf=lambda_pmf,
            lambda_nmf=lambda_nmf,
            threshold=threshold,
        )

    def names(self) -> tuple[str, ...]:
        out = []
        if self.use_rgb:
            out.append("rgb")
        if self.use_pmf:
            out.append("pmf")
        if self.use_nmf:
            out.append("nmf")
        return tuple(out)


@dataclass(frozen=True)
class LossReport:
    l_rgb: float
    l_pmf: float
    l_nmf: float
    l_total: float
    grad_norms: dict[str, float]
    n_pixels: int
    n_fused: int  # |Omega-bar|, pixels the binarized label marks dynamic


@dataclass(frozen=True)
class RayBatch:
    """A flat batch of rays with quadrature nodes and supervision targets."""

    origins: np.ndarray  # (N, 3)
    nus: np.ndarray  # (N, 3), ray marches origin - nu * depth
    rot: np.ndarray  # (N, 3, 3) world->camera per ray
    trans: np.ndarray  # (N, 3)
    t_idx: np.ndarray  # (N,)
    depths: np.ndarray  # (N, K)
    deltas: np.ndarray  # (N, K)
    target_rgb: np.ndarray | None = None  # (N, 3)
    mask_values: np.ndarray | None = None  # (N,) soft labels in [0, 1]

    @property
    def n_rays(self) -> int:
        return self.origins.shape[0]

    def points(self, sl: slice):
        pts = (
            self.origins[sl, None, :]
            - self.nus[sl, None, :] * self.depths[sl, :, None]
        )
        pts_cam = (
            np.einsum("nij,nkj->nki", self.rot[sl], pts) + self.trans[sl, None, :]
        )
        return pts, pts_cam


def rgb_loss(pred: np.ndarray, target: np.ndarray, uncertainty: np.ndarray) -> float:
    """Self-calibrated reconstruction loss, averaged over the pixel batch."""
    uncertainty = np.asarray(uncertainty, dtype=np.float64)
    if np.any(uncertainty <= 0.0):
        raise DomainError("uncertainty must be positive (beta floor missing?)")
    err = np.sum((np.asarray(pred) - np.asarray(target)) ** 2, axis=-1)
    return float(np.mean(err / (2.0 * uncertainty**2) + np.log(uncertainty**2)))


def pmf_loss(pred_mask_dy, mask_values, lambda_pmf: float = 1.1) -> float:
    """Squared pull of the rendered dynamic mask toward the soft 2D label."""
    d = np.asarray(pred_mask_dy, dtype=np.float64) - np.asarray(mask_values)
    return float(lambda_pmf * np.mean(d**2))


def nmf_loss(pred_mask_ss, mask_binary, lambda_nmf: float = 1.0) -> float:
    """Penalty on the semi-static mask over labeled-dynamic pixels; 0 if none."""
    mask_binary = np.asarray(mask_binary, dtype=bool)
    count = int(mask_binary.sum())
    if count == 0:
        return 0.0
    v = np.asarray(pred_mask_ss, dtype=np.float64)[mask_binary]
    return float(lambda_nmf * np.sum(v**2) / count)


def _integrate_backward(cache: ForwardCache, dout: np.ndarray):
    """Adjoint of the quadrature + density-share mixing for one chunk.

    `dout` is (N, 6) over channels (rgb x3, uncertainty, mask_ss, mask_dy).
    Returns per-sample, per-layer gradients (d_sigma, d_color, d_beta).
    """
    w, trans, alpha = cache.weights, cache.trans, cache.alpha
    deltas, t_bg, values = cache.deltas, cache.t_bg, cache.values
    # dL/d(values at sample) and the projection needed for dL/dsigma.
    dvalues = w[:, :, None] * dout[:, None, :]
    proj = np.einsum("nc,nkc->nk", dout, values)
    wproj = w * proj
    suffix = np.sum(wproj, axis=1, keepdims=True) - np.cumsum(wproj, axis=1)
    t_incl = trans * (1.0 - alpha)  # transmittance just past each sample
    d_bg = dout @ cache.bg  # (N,)
    d_sigma_tot = deltas * (t_incl * proj - suffix - (t_bg * d_bg)[:, None])

    # Density-share mixing: value channel q_c = sum_l share_l * v_{l,c}.
    n, k, _ = cache.sigma_layers.shape
    v = np.empty((n, k, 3, 6))
    v[..., 0:3] = cache.color_layers
    v[..., 3] = cache.beta_layers
    v[..., 4] = 0.0
    v[..., 5] = 0.0
    v[..., 1, 4] = 1.0  # semi-static pseudo-color
    v[..., 2, 5] = 1.0  # dynamic pseudo-color
    sig_tot = cache.sigma_layers.sum(axis=-1)
    safe = np.where(cache.live, sig_tot, 1.0)
    diff = v - values[:, :, None, :]
    ratio = np.einsum("nkc,nklc->nkl", dvalues, diff) / safe[:, :, None]
    ratio *= cache.live[:, :, None]
    d_sigma = d_sigma_tot[:, :, None] + ratio
    shared = cache.share * cache.live[:, :, None]
    d_color = dvalues[:, :, None, 0:3] * shared[:, :, :, None]
    d_beta = dvalues[:, :, None, 3] * shared
    return d_sigma, d_color, d_beta


def _add_into(total: dict[str, np.ndarray], part: dict[str, np.ndarray]) -> None:
    for name, g in part.items():
        if name in total:
            total[name] += g
        else:
            total[name] = g


def total_loss_and_gradients(
    params: LayeredFieldParams,
    batch: RayBatch,
    cfg: LossConfig = LossConfig(),
    workers: int = 1,
):
    """Evaluate the enabled loss terms and exact gradients for every block.

    Returns (LossReport, grads) where grads maps each parameter block name
    to an array of matching shape. Duplicating every ray in the batch leaves
    both the losses and the gradients unchanged.
    """
    n = batch.n_rays
    if n == 0:
        raise DomainError("empty ray batch")
    if cfg.use_rgb and batch.target_rgb is None:
        raise ConfigError("rgb loss enabled but the batch has no color targets")
    if (cfg.use_pmf or cfg.use_nmf) and batch.mask_values is None:
        raise ConfigError("motion-fusion loss enabled but the batch has no masks")

    fused = None
    n_fused = 0
    if batch.mask_values is not None:
        fused = np.asarray(batch.mask_values) >= cfg.threshold
        n_fused = int(fused.sum())

    chunks = list(range(0, n, GRAD_CHUNK))
    results: list[tuple] = [None] * len(chunks)

    def run(ci: int) -> None:
        sl = slice(chunks[ci], min(chunks[ci] + GRAD_CHUNK, n))
        pts, pts_cam = batch.points(sl)
        bundle, cache = render_batch(
            params, pts, pts_cam, batch.deltas[sl], batch.t_idx[sl], want_cache=True
        )
        m = pts.shape[0]
        dout = np.zeros((m, 6))
        sums = np.zeros(3)  # per-term sums of per-ray contributions
        if cfg.use_rgb:
            resid = bundle.color - batch.target_rgb[sl]
            err = np.sum(resid**2, axis=-1)
            bsq = bundle.uncertainty**2
            sums[0] = np.sum(err / (2.0 * bsq) + np.log(bsq))
            dout[:, 0:3] = resid / bsq[:, None] / n
            dout[:, 3] = (-err / bundle.uncertainty**3 + 2.0 / bundle.uncertainty) / n
        if cfg.use_pmf:
            d = bundle.mask_dy - batch.mask_values[sl]
            sums[1] = cfg.lambda_pmf * np.sum(d**2)
            dout[:, 5] = 2.0 * cfg.lambda_pmf * d / n
        if cfg.use_nmf and n_fused > 0:
            sel = fused[sl]
            sums[2] = cfg.lambda_nmf * np.sum((bundle.mask_ss * sel) ** 2)
            dout[:, 4] = 2.0 * cfg.lambda_nmf * bundle.mask_ss * sel / n_fused
        d_sigma, d_color, d_beta = _integrate_backward(cache, dout)
        grads = backward_eval_layers(
            params,
            cache.eval_cache,
            d_sigma.reshape(-1, 3),
            d_color.reshape(-1, 3, 3),
            d_beta.reshape(-1, 3),
        )
        results[ci] = (sums, grads)

    if workers <= 1 or len(chunks) == 1:
        for ci in range(len(chunks)):
            run(ci)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(chunks))))

    total_sums = np.zeros(3)
    grads: dict[str, np.ndarray] = {}
    for sums, part in results:  # fixed chunk order: deterministic reduction
        total_sums += sums
        _add_into(grads, part)

    l_rgb = float(total_sums[0] / n) if cfg.use_rgb else 0.0
    l_pmf = float(total_sums[1] / n) if cfg.use_pmf else 0.0
    l_nmf = float(total_sums[2] / n_fused) if (cfg.use_nmf and n_fused > 0) else 0.0
    l_total = l_rgb + l_pmf + l_nmf
    if not np.isfinite(l_total):
        raise NumericalError("non-finite training loss")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter block '{name}'")

    norms = {
        part: float(
            np.sqrt(sum(float(np.sum(grads[b] ** 2)) for b in names))
        )
        for part, names in PARTITION.items()
    }
    report = LossReport(
        l_rgb=l_rgb,
        l_pmf=l_pmf,
        l_nmf=l_nmf,
        l_total=l_total,
        grad_norms=norms,
        n_pixels=n,
        n_fused=n_fused,
    )
    return report, grads
