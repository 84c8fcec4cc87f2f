"""The learnable three-layer radiance field.

Layers and their parameter partitions:

  static      (W_st): a world-frame feature grid `phi0` shared with the
                      semi-static head, plus a grid `st_grid` and linear head
                      `st_head` emitting (density, color, uncertainty)
                      pre-activations. Time-independent by construction.
  semi-static (W_ss): K world-frame grids mixed by coefficients that are a
                      learned linear function of the frame's temporal code,
                      plus its own linear head on `phi0`.
  dynamic     (W_dy): K grids over normalized camera-frustum coordinates
                      (image plane in [-1, 1], disparity-mapped depth), mixed
                      by its own temporal-code map. Depends only on the
                      camera-frame point and t.

The temporal code matrix factors as (T x P) coefficients times a fixed
(P x D) bank of unit-norm sinusoid rows. The coefficient columns split into
two disjoint blocks, one consumed by each time-dependent layer, so the
parameter partition is exact. A config switch (`learn_basis`) swaps the
roles: coefficients become fixed sinusoids of normalized time and the bank
is learned, which enforces temporal smoothness.

Activations: density and uncertainty use softplus (uncertainty gets a
`beta_min` floor), color uses sigmoid. Colors are currently
view-independent; direction arguments are accepted for interface stability.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DomainError, NumericalError

BETA_MIN_DEFAULT = 0.03

# Block name -> partition. `phi0` is shared by the static and semi-static
# heads but belongs to the static partition.
PARTITION: dict[str, tuple[str, ...]] = {
    "st": ("phi0", "st_grid", "st_head"),
    "ss": ("ss_grids", "ss_head", "ss_zmap_w", "ss_zmap_b", "code_ss"),
    "dy": ("dy_grids", "dy_zmap_w", "dy_zmap_b", "code_dy"),
}
BLOCK_NAMES = tuple(n for names in PARTITION.values() for n in names)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(p):
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-4, 1.0 - 1e-4)
    return np.log(p) - np.log1p(-p)


def fourier_rows(n_rows: int, n_cols: int) -> np.ndarray:
    """Unit-norm sinusoid rows: row p has frequency ceil(p/2), sin/cos alternating."""
    j = np.arange(n_cols)
    rows = np.empty((n_rows, n_cols))
    for p in range(n_rows):
        f = (p + 1) // 2
        phase = 2.0 * np.pi * f * j / n_cols
        rows[p] = np.sin(phase) if p % 2 == 1 else np.cos(phase)
        norm = np.linalg.norm(rows[p])
        if norm < 1e-12:
            raise ConfigError(
                f"sinusoid row {p} vanishes for length {n_cols}; increase the code dim"
            )
        rows[p] /= norm
    return rows


@dataclass(frozen=True)
class TemporalCode:
    """Per-frame code vectors z_t as rows of coeffs @ basis."""

    coeffs: np.ndarray  # (T, P)
    basis: np.ndarray  # (P, D), immutable
    split: int  # coeff columns [:split] drive the semi-static layer

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        b = np.asarray(self.basis, dtype=np.float64)
        if c.ndim != 2 or b.ndim != 2 or c.shape[1] != b.shape[0]:
            raise DomainError("temporal code factor shapes are inconsistent")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "basis", b)

    @property
    def n_frames(self) -> int:
        return self.coeffs.shape[0]

    def row(self, t: int) -> np.ndarray:
        if not 0 <= t < self.n_frames:
            raise DomainError(f"frame index {t} outside [0, {self.n_frames})")
        return self.coeffs[t] @ self.basis


@dataclass(frozen=True)
class FrustumSpec:
    """Reference camera geometry for normalized frustum coordinates."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.05
    far: float = 6.0
    margin: float = 0.2


@dataclass(frozen=True)
class FieldConfig:
    n_frames: int
    frustum: FrustumSpec
    world_lo: tuple[float, float, float] = (-1.25, -1.25, -1.25)
    world_hi: tuple[float, float, float] = (1.25, 1.25, 1.25)
    grid_res: int = 24
    feat_channels: int = 4
    mix_k: int = 3
    # Time-dependent layers get coarser grids on purpose: fine texture is
    # only cheap for the static layer, so transient content cannot park in
    # the semi-static or dynamic layer without a reconstruction penalty.
    ss_grid_res: int = 12
    dyn_grid_res: int = 12
    dyn_mix_k: int = 3
    code_rank: int = 4  # P per time-dependent layer
    code_dim: int = 8  # D
    beta_min: float = BETA_MIN_DEFAULT
    learn_basis: bool = False
    init_sigma_static: float = 0.10
    init_sigma_semi_static: float = 0.02
    init_sigma_dynamic: float = 0.01
    init_noise: float = 0.01

    def __post_init__(self):
        if self.n_frames < 1:
            raise ConfigError("need at least one frame")
        if self.code_rank < 1 or self.code_dim < 2 * self.code_rank - 1:
            raise ConfigError("code_dim too small for the requested code_rank")
        if self.beta_min <= 0:
            raise ConfigError("beta_min must be positive")


class LayeredFieldParams:
    """Named parameter blocks plus the fixed temporal-code factors."""

    def __init__(self, config: FieldConfig, blocks: dict[str, np.ndarray]):
        missing = set(BLOCK_NAMES) - set(blocks)
        if missing:
            raise ConfigError(f"missing parameter blocks: {sorted(missing)}")
        self.config = config
        self.blocks = {k: np.asarray(v, dtype=np.float64) for k, v in blocks.items()}
        p, d, t = config.code_rank, config.code_dim, config.n_frames
        if config.learn_basis:
            self._fixed_ss = fourier_rows(p, t).T  # (T, P) sinusoids of t/T
            self._fixed_dy = self._fixed_ss
        else:
            self._fixed_ss = fourier_rows(p, d)  # (P, D)
            self._fixed_dy = self._fixed_ss

    def copy(self) -> "LayeredFieldParams":
        return LayeredFieldParams(
            self.config, {k: v.copy() for k, v in self.blocks.items()}
        )

    def code_table(self, which: str) -> np.ndarray:
        """(T, D) table of per-frame codes for one consumer ('ss' or 'dy')."""
        learned = self.blocks[f"code_{which}"]
        fixed = self._fixed_ss if which == "ss" else self._fixed_dy
        if self.config.learn_basis:
            return fixed @ learned  # (T,P) @ (P,D)
        return learned @ fixed  # (T,P) @ (P,D)

    def code_fixed_factor(self, which: str) -> np.ndarray:
        return self._fixed_ss if which == "ss" else self._fixed_dy

    @property
    def temporal_code(self) -> TemporalCode:
        """The combined (T, 2P) x (2P, D) factorization across both consumers."""
        cfg = self.config
        if cfg.learn_basis:
            coeffs = np.concatenate([self._fixed_ss, self._fixed_dy], axis=1)
            basis = np.concatenate([self.blocks["code_ss"], self.blocks["code_dy"]], axis=0)
        else:
            coeffs = np.concatenate([self.blocks["code_ss"], self.blocks["code_dy"]], axis=1)
            basis = np.concatenate([self._fixed_ss, self._fixed_dy], axis=0)
        return TemporalCode(coeffs=coeffs, basis=basis, split=cfg.code_rank)

    def n_parameters(self) -> int:
        return sum(v.size for v in self.blocks.values())


def init_params(config: FieldConfig, seed: int = 0) -> LayeredFieldParams:
    """Fresh parameters: near-constant layers at the configured base densities.

    Mixing-coefficient biases start at (1, 0, ...) so the first grid of each
    time-dependent layer is live from step zero; the codes and maps carry
    small noise for symmetry breaking.
    """
    cfg = config
    rng = np.random.default_rng(seed)
    r, c0, k = cfg.grid_res, cfg.feat_channels, cfg.mix_k
    rs, rd, kd = cfg.ss_grid_res, cfg.dyn_grid_res, cfg.dyn_mix_k
    p, d, t = cfg.code_rank, cfg.code_dim, cfg.n_frames
    noise = cfg.init_noise

    def g(*shape):
        return noise * rng.standard_normal(shape)

    st_grid = g(r, r, r, 5)
    st_grid[..., 0] += softplus_inv(cfg.init_sigma_static)
    ss_grids = g(rs, rs, rs, k, 5)
    ss_grids[..., 0, 0] += softplus_inv(cfg.init_sigma_semi_static)
    dy_grids = g(rd, rd, rd, kd, 5)
    dy_grids[..., 0, 0] += softplus_inv(cfg.init_sigma_dynamic)
    ss_zmap_b = np.zeros(k)
    ss_zmap_b[0] = 1.0
    dy_zmap_b = np.zeros(kd)
    dy_zmap_b[0] = 1.0
    if cfg.learn_basis:
        code_ss = 0.3 * rng.standard_normal((p, d))
        code_dy = 0.3 * rng.standard_normal((p, d))
    else:
        # Start the per-frame coefficients as smooth sinusoids of normalized
        # time (plus noise): the gates then vary over t from step one, which
        # is what lets the grids specialize to "before" and "after" phases.
        # Sinusoid columns that alias to zero at this frame count fall back
        # to noise.
        frames = np.arange(t)
        zt = np.empty((t, p))
        for col in range(p):
            f = (col + 1) // 2
            phase = 2.0 * np.pi * f * frames / t
            wave = np.sin(phase) if col % 2 == 1 else np.cos(phase)
            norm = np.linalg.norm(wave)
            zt[:, col] = wave / norm * np.sqrt(t) if norm > 1e-9 else rng.standard_normal(t)
        code_ss = zt + 0.02 * rng.standard_normal((t, p))
        code_dy = zt + 0.02 * rng.standard_normal((t, p))
    blocks = {
        "phi0": g(r, r, r, c0),
        "st_grid": st_grid,
        "st_head": g(5, c0),
        "ss_grids": ss_grids,
        "ss_head": g(5, c0),
        "ss_zmap_w": 0.05 * rng.standard_normal((k, d)),
        "ss_zmap_b": ss_zmap_b,
        "code_ss": code_ss,
        "dy_grids": dy_grids,
        "dy_zmap_w": 0.05 * rng.standard_normal((kd, d)),
        "dy_zmap_b": dy_zmap_b,
        "code_dy": code_dy,
    }
    return LayeredFieldParams(cfg, blocks)


def zero_params(config: FieldConfig) -> LayeredFieldParams:
    """All-zero parameters (constant softplus(0) density everywhere in support)."""
    cfg = config
    r, c0, k = cfg.grid_res, cfg.feat_channels, cfg.mix_k
    rs, rd, kd = cfg.ss_grid_res, cfg.dyn_grid_res, cfg.dyn_mix_k
    p, d, t = cfg.code_rank, cfg.code_dim, cfg.n_frames
    code_shape = (p, d) if cfg.learn_basis else (t, p)
    blocks = {
        "phi0": np.zeros((r, r, r, c0)),
        "st_grid": np.zeros((r, r, r, 5)),
        "st_head": np.zeros((5, c0)),
        "ss_grids": np.zeros((rs, rs, rs, k, 5)),
        "ss_head": np.zeros((5, c0)),
        "ss_zmap_w": np.zeros((k, d)),
        "ss_zmap_b": np.zeros(k),
        "code_ss": np.zeros(code_shape),
        "dy_grids": np.zeros((rd, rd, rd, kd, 5)),
        "dy_zmap_w": np.zeros((kd, d)),
        "dy_zmap_b": np.zeros(kd),
        "code_dy": np.zeros(code_shape),
    }
    return LayeredFieldParams(cfg, blocks)


def time_code(params: LayeredFieldParams, t: int) -> np.ndarray:
    """Row t of the full coefficient/basis product (both consumers' blocks)."""
    tc = params.temporal_code
    return tc.row(int(t))


def parameter_partition(params: LayeredFieldParams):
    """Disjoint, exhaustive split of the blocks into (W_st, W_ss, W_dy) views."""
    return tuple(
        {name: params.blocks[name] for name in PARTITION[part]}
        for part in ("st", "ss", "dy")
    )


# ---------------------------------------------------------------------------
# Trilinear interpolation
# ---------------------------------------------------------------------------

_CORNERS = np.array(
    [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64
)


def _corner_weights(pts: np.ndarray, lo, hi, res: int):
    """Flat corner indices (B, 8), weights (B, 8), and the in-bounds mask (B,)."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    inb = np.all((pts >= lo) & (pts <= hi), axis=-1)
    g = (pts - lo) / (hi - lo) * (res - 1)
    g = np.clip(g, 0.0, res - 1.0)
    i0 = np.minimum(g.astype(np.int64), res - 2)
    f = g - i0
    base = (i0[:, 0] * res + i0[:, 1]) * res + i0[:, 2]
    offsets = (_CORNERS[:, 0] * res + _CORNERS[:, 1]) * res + _CORNERS[:, 2]
    flat = base[:, None] + offsets[None, :]
    fx, fy, fz = f[:, 0:1], f[:, 1:2], f[:, 2:3]
    wx = np.concatenate([1.0 - fx, fx], axis=1)  # (B, 2)
    wy = np.concatenate([1.0 - fy, fy], axis=1)
    wz = np.concatenate([1.0 - fz, fz], axis=1)
    w = (wx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :]).reshape(-1, 8)
    return flat, w, inb


def _gather(grid: np.ndarray, flat_idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Trilinear read; `grid` is (R, R, R, ...channels) -> (B, ...channels)."""
    res3 = grid.shape[0] * grid.shape[1] * grid.shape[2]
    gf = grid.reshape(res3, -1)
    vals = gf[flat_idx]  # (B, 8, C)
    out = np.einsum("bo,boc->bc", w, vals)
    return out.reshape((flat_idx.shape[0],) + grid.shape[3:])


def _scatter(shape, flat_idx: np.ndarray, w: np.ndarray, dvals: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`_gather`; returns a dense gradient array of `shape`."""
    res3 = shape[0] * shape[1] * shape[2]
    c = int(np.prod(shape[3:])) if len(shape) > 3 else 1
    dv = dvals.reshape(dvals.shape[0], c)
    out = np.zeros((res3, c))
    for o in range(8):
        np.add.at(out, flat_idx[:, o], w[:, o, None] * dv)
    return out.reshape(shape)


def _frustum_points(x_cam: np.ndarray, fr: FrustumSpec):
    """Map camera points to [0, 1]^3 frustum-box coordinates plus validity mask."""
    d = -x_cam[:, 2]
    safe_d = np.where(d > 1e-9, d, 1.0)
    span = 1.0 + fr.margin
    sx = fr.fx * (x_cam[:, 0] / safe_d) / (fr.width / 2.0)
    sy = fr.fy * (x_cam[:, 1] / safe_d) / (fr.height / 2.0)
    inv_n, inv_f = 1.0 / fr.near, 1.0 / fr.far
    q = (inv_n - 1.0 / np.where(d > 1e-9, d, fr.near)) / (inv_n - inv_f)
    ok = (
        (d >= fr.near)
        & (d <= fr.far)
        & (np.abs(sx) <= span)
        & (np.abs(sy) <= span)
    )
    u = np.stack(
        [(sx / span + 1.0) / 2.0, (sy / span + 1.0) / 2.0, np.clip(q, 0.0, 1.0)],
        axis=-1,
    )
    return u, ok


# ---------------------------------------------------------------------------
# Layer evaluation
# ---------------------------------------------------------------------------


@dataclass
class LayerEvalCache:
    """Intermediates retained for the hand-written backward pass."""

    n_points: int
    t_idx: np.ndarray  # (B,)
    # world-domain interpolation (static resolution)
    widx: np.ndarray
    ww: np.ndarray
    inb_w: np.ndarray
    phi0: np.ndarray  # (B, C0)
    # world-domain interpolation at the semi-static resolution
    sidx: np.ndarray
    sw: np.ndarray
    g_ss: np.ndarray  # (B, K, 5)
    a_ss: np.ndarray  # (B, K)
    z_ss: np.ndarray  # (B, D)
    # frustum-domain interpolation
    didx: np.ndarray
    dw: np.ndarray
    inb_d: np.ndarray
    g_dy: np.ndarray
    a_dy: np.ndarray
    z_dy: np.ndarray
    # pre-activation derivative factors, per layer
    dsig: np.ndarray  # (B, 3) softplus' at density pre-activations
    dcol: np.ndarray  # (B, 3, 3) sigmoid' at color pre-activations
    dbet: np.ndarray  # (B, 3) softplus' at uncertainty pre-activations


def eval_layers_batch(
    params: LayeredFieldParams,
    pts_world: np.ndarray,
    pts_cam: np.ndarray,
    t_idx: np.ndarray,
    want_cache: bool = False,
):
    """Evaluate all three layers at a flat batch of points.

    Returns (sigma (B, 3), color (B, 3, 3), beta (B, 3)[, cache]) with the
    layer axis ordered (static, semi-static, dynamic). Density is zero
    outside a layer's spatial support.
    """
    if not (np.all(np.isfinite(pts_world)) and np.all(np.isfinite(pts_cam))):
        raise NumericalError("non-finite point coordinates passed to eval_layers")
    cfg = params.config
    b = params.blocks
    n = pts_world.shape[0]
    t_idx = np.asarray(t_idx, dtype=np.int64)
    if np.any((t_idx < 0) | (t_idx >= cfg.n_frames)):
        raise DomainError("frame index outside [0, T)")

    widx, ww, inb_w = _corner_weights(pts_world, cfg.world_lo, cfg.world_hi, cfg.grid_res)
    phi0 = _gather(b["phi0"], widx, ww)
    pre_st = _gather(b["st_grid"], widx, ww) + phi0 @ b["st_head"].T

    if cfg.ss_grid_res == cfg.grid_res:
        sidx, sw = widx, ww
    else:
        sidx, sw, _ = _corner_weights(pts_world, cfg.world_lo, cfg.world_hi, cfg.ss_grid_res)
    g_ss = _gather(b["ss_grids"], sidx, sw)  # (B, K, 5)
    z_ss = params.code_table("ss")[t_idx]  # (B, D)
    a_ss = z_ss @ b["ss_zmap_w"].T + b["ss_zmap_b"]
    pre_ss = np.einsum("bk,bkc->bc", a_ss, g_ss) + phi0 @ b["ss_head"].T

    upts, inb_d = _frustum_points(pts_cam, cfg.frustum)
    didx, dw, inb_box = _corner_weights(upts, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), cfg.dyn_grid_res)
    inb_d = inb_d & inb_box
    g_dy = _gather(b["dy_grids"], didx, dw)
    z_dy = params.code_table("dy")[t_idx]
    a_dy = z_dy @ b["dy_zmap_w"].T + b["dy_zmap_b"]
    pre_dy = np.einsum("bk,bkc->bc", a_dy, g_dy)

    pre_sig = np.stack([pre_st[:, 0], pre_ss[:, 0], pre_dy[:, 0]], axis=1)
    pre_col = np.stack([pre_st[:, 1:4], pre_ss[:, 1:4], pre_dy[:, 1:4]], axis=1)
    pre_bet = np.stack([pre_st[:, 4], pre_ss[:, 4], pre_dy[:, 4]], axis=1)

    support = np.stack([inb_w, inb_w, inb_d], axis=1).astype(np.float64)
    sigma = softplus(pre_sig) * support
    color = sigmoid(pre_col)
    beta = softplus(pre_bet) + cfg.beta_min

    if not want_cache:
        return sigma, color, beta
    cache = LayerEvalCache(
        n_points=n,
        t_idx=t_idx,
        widx=widx,
        ww=ww,
        inb_w=inb_w,
        phi0=phi0,
        sidx=sidx,
        sw=sw,
        g_ss=g_ss,
        a_ss=a_ss,
        z_ss=z_ss,
        didx=didx,
        dw=dw,
        inb_d=inb_d,
        g_dy=g_dy,
        a_dy=a_dy,
        z_dy=z_dy,
        dsig=sigmoid(pre_sig) * support,
        dcol=color * (1.0 - color),
        dbet=sigmoid(pre_bet),
    )
    return sigma, color, beta, cache


def backward_eval_layers(
    params: LayeredFieldParams,
    cache: LayerEvalCache,
    d_sigma: np.ndarray,
    d_color: np.ndarray,
    d_beta: np.ndarray,
) -> dict[str, np.ndarray]:
    """Exact adjoint of :func:`eval_layers_batch` for all parameter blocks."""
    cfg = params.config
    b = params.blocks
    dpre_sig = d_sigma * cache.dsig
    dpre_col = d_color * cache.dcol
    dpre_bet = d_beta * cache.dbet
    # (B, 3 layers, 5 channels) pre-activation gradients
    dpre = np.concatenate(
        [dpre_sig[:, :, None], dpre_col, dpre_bet[:, :, None]], axis=2
    )
    dpre_st, dpre_ss, dpre_dy = dpre[:, 0], dpre[:, 1], dpre[:, 2]

    grads: dict[str, np.ndarray] = {}
    grads["st_grid"] = _scatter(b["st_grid"].shape, cache.widx, cache.ww, dpre_st)
    grads["st_head"] = dpre_st.T @ cache.phi0
    grads["ss_head"] = dpre_ss.T @ cache.phi0
    dphi0 = dpre_st @ b["st_head"] + dpre_ss @ b["ss_head"]
    grads["phi0"] = _scatter(b["phi0"].shape, cache.widx, cache.ww, dphi0)

    dg_ss = cache.a_ss[:, :, None] * dpre_ss[:, None, :]  # (B, K, 5)
    grads["ss_grids"] = _scatter(b["ss_grids"].shape, cache.sidx, cache.sw, dg_ss)
    da_ss = np.einsum("bkc,bc->bk", cache.g_ss, dpre_ss)
    grads["ss_zmap_w"] = da_ss.T @ cache.z_ss
    grads["ss_zmap_b"] = da_ss.sum(axis=0)
    dz_ss = da_ss @ b["ss_zmap_w"]

    dg_dy = cache.a_dy[:, :, None] * dpre_dy[:, None, :]
    grads["dy_grids"] = _scatter(b["dy_grids"].shape, cache.didx, cache.dw, dg_dy)
    da_dy = np.einsum("bkc,bc->bk", cache.g_dy, dpre_dy)
    grads["dy_zmap_w"] = da_dy.T @ cache.z_dy
    grads["dy_zmap_b"] = da_dy.sum(axis=0)
    dz_dy = da_dy @ b["dy_zmap_w"]

    for which, dz in (("ss", dz_ss), ("dy", dz_dy)):
        fixed = params.code_fixed_factor(which)
        name = f"code_{which}"
        if cfg.learn_basis:
            # z = fixed[t] @ learned -> dL/dlearned = fixed[t]^T dz
            grads[name] = fixed[cache.t_idx].T @ dz
        else:
            # z = learned[t] @ fixed -> accumulate dz @ fixed^T into row t
            rows = dz @ fixed.T  # (B, P)
            acc = np.zeros_like(b[name])
            np.add.at(acc, cache.t_idx, rows)
            grads[name] = acc
    return grads


def eval_layers(params: LayeredFieldParams, x, x_cam, view, t: int):
    """Per-layer (sigma, color, beta) triples at world point x / camera point x_cam.

    `view` is accepted for interface stability; colors are view-independent.
    Returns a dict keyed 'static' / 'semi_static' / 'dynamic'.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_cam = np.atleast_2d(np.asarray(x_cam, dtype=np.float64))
    t_idx = np.full(x.shape[0], int(t), dtype=np.int64)
    sigma, color, beta = eval_layers_batch(params, x, x_cam, t_idx)
    out = {}
    for i, key in enumerate(("static", "semi_static", "dynamic")):
        out[key] = (sigma[:, i].squeeze(), color[:, i].squeeze(), beta[:, i].squeeze())
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"LMF1"


def save_checkpoint(params: LayeredFieldParams, path, meta: dict | None = None) -> None:
    """Binary container: magic 'LMF1', little-endian block headers, raw float64.

    Hyperparameters and run metadata go to a JSON sidecar at `path + '.json'`.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(BLOCK_NAMES)))
        for name in BLOCK_NAMES:
            arr = params.blocks[name]
            nb = name.encode("ascii")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    cfg = asdict(params.config)
    cfg["frustum"] = asdict(params.config.frustum)
    sidecar = {"format": "LMF1", "config": cfg, "meta": meta or {}}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns (params, meta)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise DataError(f"checkpoint sidecar not found: {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    cfg_d = dict(sidecar["config"])
    cfg_d["frustum"] = FrustumSpec(**cfg_d["frustum"])
    for key in ("world_lo", "world_hi"):
        cfg_d[key] = tuple(cfg_d[key])
    config = FieldConfig(**cfg_d)
    blocks: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataError(f"{path}: bad magic, not an LMF1 checkpoint")
        (n_blocks,) = struct.unpack("<I", fh.read(4))
        for _ in range(n_blocks):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("ascii")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            blocks[name] = data.astype(np.float64)
    return LayeredFieldParams(config, blocks), sidecar.get("meta", {})
