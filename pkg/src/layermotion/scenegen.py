"""Procedural dynamic scenes with analytic ground truth.

A scene is a closed textured room plus three object categories:

  * static     -- fixed world-frame primitives,
  * semi_static -- world-frame primitives that relocate once at frame t_star,
  * dynamic    -- primitives pinned to the camera frame (they follow the
                  observer exactly, like a hand-held object).

Ground truth is rendered by exact ray/primitive intersection: the front-most
surface per pixel decides color and category, so the masks are exact.
Pseudo-masks emulate a 2D motion-segmentation model with an
incomplete-but-precise error profile: high-confidence interiors, eroded
low-confidence boundaries, random dropout, and a few small false-positive
blobs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .geometry import CameraPose, look_at

STATIC = "static"
SEMI_STATIC = "semi_static"
DYNAMIC = "dynamic"
_CATEGORIES = (STATIC, SEMI_STATIC, DYNAMIC)


# ---------------------------------------------------------------------------
# Primitives and textures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColorRamp:
    """Volumetric color: clip(base + gain @ (x - ref) + checker term, 0, 1).

    Defined on points rather than surfaces so the same function serves both
    surface shading and field baking.
    """

    base: tuple[float, float, float]
    gain: tuple[float, ...] = (0.0,) * 9  # row-major 3x3
    ref: tuple[float, float, float] = (0.0, 0.0, 0.0)
    checker_amp: float = 0.0
    checker_cell: float = 0.5

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        g = np.asarray(self.gain, dtype=np.float64).reshape(3, 3)
        c = np.asarray(self.base) + (x - np.asarray(self.ref)) @ g.T
        if self.checker_amp != 0.0:
            cells = np.floor(x / self.checker_cell).sum(axis=-1)
            c = c + self.checker_amp * (2.0 * np.mod(cells, 2.0) - 1.0)[..., None]
        return np.clip(c, 0.0, 1.0)


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]


@dataclass(frozen=True)
class RoomShell:
    """Hollow box; wall material fills the gap between inner and outer faces."""

    lo: tuple[float, float, float]  # inner cavity
    hi: tuple[float, float, float]
    thickness: float = 0.2


Primitive = Sphere | Box | RoomShell


@dataclass(frozen=True)
class SceneObject:
    """A primitive with a category, a texture, and (for semi-static) a schedule.

    Coordinates are world-frame for static/semi-static objects and
    camera-frame for dynamic ones. A semi-static object sits at
    `offset_a` for t < t_star and at `offset_b` afterwards.
    """

    primitive: Primitive
    color: ColorRamp
    category: str
    offset_a: tuple[float, float, float] = (0.0, 0.0, 0.0)
    offset_b: tuple[float, float, float] = (0.0, 0.0, 0.0)
    t_star: int = 0

    def __post_init__(self):
        if self.category not in _CATEGORIES:
            raise ConfigError(f"unknown object category '{self.category}'")

    def offset_at(self, t: int) -> np.ndarray:
        if self.category != SEMI_STATIC:
            return np.asarray(self.offset_a, dtype=np.float64)
        return np.asarray(
            self.offset_a if t < self.t_star else self.offset_b, dtype=np.float64
        )


@dataclass(frozen=True)
class SceneSpec:
    """Fully instantiated analytic scene: objects plus a camera trajectory."""

    name: str
    n_frames: int
    height: int
    width: int
    seed: int
    objects: tuple[SceneObject, ...]
    cameras: tuple[CameraPose, ...]
    background: tuple[float, float, float] = (0.5, 0.5, 0.5)
    world_lo: tuple[float, float, float] = (-1.25, -1.25, -1.25)
    world_hi: tuple[float, float, float] = (1.25, 1.25, 1.25)

    def __post_init__(self):
        if len(self.cameras) != self.n_frames:
            raise ConfigError("camera trajectory length must equal n_frames")
        for obj in self.objects:
            if obj.category == SEMI_STATIC and not (0 < obj.t_star < self.n_frames):
                raise ConfigError("semi-static relocation time must be in (0, T)")


@dataclass(frozen=True)
class GroundTruth:
    """Exact renders and per-category masks for every frame."""

    rgb: np.ndarray  # (T, H, W, 3) in [0, 1]
    mask_dyn: np.ndarray  # (T, H, W) bool
    mask_ss: np.ndarray  # (T, H, W) bool

    def __post_init__(self):
        if np.any(self.mask_dyn & self.mask_ss):
            raise DomainError("a pixel cannot be both dynamic and semi-static")


@dataclass(frozen=True)
class MotionMask:
    """Soft pseudo-label for one frame with its binarization threshold."""

    values: np.ndarray  # (H, W) in [0, 1]
    frame_index: int
    threshold: float = 0.5

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.min() < 0.0 or v.max() > 1.0:
            raise DomainError("mask values must lie in [0, 1]")
        if not (0.0 < self.threshold < 1.0):
            raise DomainError("threshold must lie in (0, 1)")
        object.__setattr__(self, "values", v)

    @property
    def binary(self) -> np.ndarray:
        return self.values >= self.threshold


# ---------------------------------------------------------------------------
# Scene configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneConfig:
    name: str = "custom"
    n_frames: int = 60
    height: int = 64
    width: int = 64
    seed: int = 0
    n_static: int = 1
    n_semi_static: int = 1
    n_dynamic: int = 1
    fov_degrees: float = 64.0
    recall: float = 0.6
    fpr: float = 0.002
    threshold: float = 0.5
    eval_stride: int = 6

    def eval_frames(self) -> tuple[int, ...]:
        return tuple(range(0, self.n_frames, self.eval_stride))


BENCH_V1 = "lmf-bench-v1"


def benchmark_config(name: str, seed: int = 0) -> SceneConfig:
    """Named benchmark presets; only 'lmf-bench-v1' is defined."""
    if name == BENCH_V1:
        return SceneConfig(name=BENCH_V1, n_frames=60, height=64, width=64, seed=seed)
    raise ConfigError(f"unknown benchmark '{name}'")


def generate_scene(config: SceneConfig) -> SceneSpec:
    """Instantiate the procedural scene for `config`, deterministically.

    The camera sweeps an arc inside a closed room (nonzero baseline) while a
    camera-attached sphere stays fixed in its view; a semi-static cube jumps
    between two shelf positions at t_star = T // 2.
    """
    t_total, h, w = config.n_frames, config.height, config.width
    if t_total < 2:
        raise ConfigError("need at least two frames")
    if h < 8 or w < 8:
        raise ConfigError("image must be at least 8x8")
    if config.n_static < 0 or config.n_semi_static < 0 or config.n_dynamic < 0:
        raise ConfigError("object counts must be non-negative")
    rng = np.random.default_rng(config.seed)

    objects: list[SceneObject] = [
        SceneObject(
            primitive=RoomShell(lo=(-1.0, -1.0, -1.0), hi=(1.0, 1.0, 1.0)),
            color=ColorRamp(
                base=(0.52, 0.48, 0.55),
                gain=(0.22, 0, 0, 0, 0.18, 0, 0, 0, 0.15),
                checker_amp=0.08,
                checker_cell=0.5,
            ),
            category=STATIC,
        )
    ]
    for i in range(config.n_static):
        c = np.array([-0.62, -0.30, -0.45]) + 0.12 * rng.uniform(-1, 1, 3) * (i > 0)
        half = np.array([0.22, 0.18, 0.22])
        objects.append(
            SceneObject(
                primitive=Box(lo=tuple(c - half), hi=tuple(c + half)),
                color=ColorRamp(
                    base=(0.75, 0.45, 0.2),
                    gain=(0, 0.3, 0, 0, 0, 0.3, 0.3, 0, 0),
                    ref=tuple(c),
                ),
                category=STATIC,
            )
        )
    t_star = t_total // 2
    for i in range(config.n_semi_static):
        # Both shelf positions sit above the camera axis, clear of the
        # camera-pinned sphere in the lower half of the frame, so the
        # negative-fusion pixel set never overlaps the relocating object.
        jitter = 0.1 * rng.uniform(-1, 1, 3) * (i > 0)
        objects.append(
            SceneObject(
                primitive=Box(lo=(-0.14, -0.14, -0.14), hi=(0.14, 0.14, 0.14)),
                color=ColorRamp(
                    base=(0.2, 0.72, 0.35),
                    gain=(0, 0, 0.4, 0.4, 0, 0, 0, 0.4, 0),
                ),
                category=SEMI_STATIC,
                offset_a=tuple(np.array([-0.62, 0.38, 0.3]) + jitter),
                offset_b=tuple(np.array([-0.55, -0.02, 0.55]) + jitter),
                t_star=t_star,
            )
        )
    for i in range(config.n_dynamic):
        # Pinned slightly right of and below the optical axis, at arm's length.
        # Sized so its projected disk covers roughly 8% of the frame: large
        # enough that the default false-positive rate keeps pseudo-label
        # precision above 0.95.
        off = np.array([0.125, -0.095, -0.5]) + 0.05 * rng.uniform(-1, 1, 3) * (i > 0)
        objects.append(
            SceneObject(
                primitive=Sphere(center=tuple(off), radius=0.1),
                color=ColorRamp(
                    base=(0.85, 0.2, 0.25),
                    gain=(0, 0, 2.0, 0, 0, 0, 0, 0, 0),
                    ref=tuple(off),
                ),
                category=DYNAMIC,
            )
        )

    fx = 0.5 * w / math.tan(math.radians(config.fov_degrees) / 2.0)
    intr = dict(fx=fx, fy=fx, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0)
    cameras = []
    for t in range(t_total):
        s = t / max(t_total - 1, 1)
        phi = math.radians(-42.0 + 84.0 * s)
        pos = np.array(
            [0.52 * math.cos(phi), 0.52 * math.sin(phi), 0.12 + 0.05 * math.sin(2 * math.pi * s)]
        )
        target = np.array([-0.62, 0.12 * math.sin(math.pi * s), 0.05])
        cameras.append(look_at(pos, target, frame_index=t, **intr))

    return SceneSpec(
        name=config.name,
        n_frames=t_total,
        height=h,
        width=w,
        seed=config.seed,
        objects=tuple(objects),
        cameras=tuple(cameras),
    )


# ---------------------------------------------------------------------------
# Analytic ray intersection
# ---------------------------------------------------------------------------


def _ray_sphere(origins, dirs, center, radius):
    """First positive hit distance per ray, inf where missed."""
    oc = origins - center
    b = np.einsum("...i,...i->...", oc, dirs)
    c = np.einsum("...i,...i->...", oc, oc) - radius * radius
    disc = b * b - c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, np.inf))
    return np.where(hit, t, np.inf)


def _ray_box(origins, dirs, lo, hi):
    """(entry, exit) distances of the slab overlap, (inf, -inf) where missed."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t0 = (lo - origins) * inv
    t1 = (hi - origins) * inv
    swap = dirs < 0
    t_lo = np.where(swap, t1, t0)
    t_hi = np.where(swap, t0, t1)
    on_axis = dirs == 0.0
    inside = (origins >= lo) & (origins <= hi)
    t_lo = np.where(on_axis, np.where(inside, -np.inf, np.inf), t_lo)
    t_hi = np.where(on_axis, np.where(inside, np.inf, -np.inf), t_hi)
    return t_lo.max(axis=-1), t_hi.min(axis=-1)


def _hit_distance(obj: SceneObject, origins, dirs, t: int):
    """Distance to `obj` along rays expressed in the object's frame."""
    prim = obj.primitive
    if isinstance(prim, RoomShell):
        # Cameras live inside the cavity; the visible surface is the cavity exit.
        _, exit_ = _ray_box(origins, dirs, np.asarray(prim.lo), np.asarray(prim.hi))
        return np.where(np.isfinite(exit_) & (exit_ > 1e-9), exit_, np.inf)
    off = obj.offset_at(t)
    if isinstance(prim, Sphere):
        return _ray_sphere(origins, dirs, np.asarray(prim.center) + off, prim.radius)
    lo = np.asarray(prim.lo) + off
    hi = np.asarray(prim.hi) + off
    enter, exit_ = _ray_box(origins, dirs, lo, hi)
    ok = (exit_ >= enter) & (exit_ > 1e-9)
    t_hit = np.where(enter > 1e-9, enter, exit_)
    return np.where(ok, t_hit, np.inf)


def _pixel_directions(pose: CameraPose, h: int, w: int) -> np.ndarray:
    """Unit viewing directions (world frame, marching sense) per pixel."""
    uy, ux = np.mgrid[0:h, 0:w].astype(np.float64)
    d = np.stack(
        [(ux - pose.cx) / pose.fx, (uy - pose.cy) / pose.fy, -np.ones_like(ux)], axis=-1
    )
    d = d @ pose.rotation  # rows of R are camera axes: R^T @ d per pixel
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def render_ground_truth(scene: SceneSpec) -> GroundTruth:
    """Exact per-pixel front-surface render of all frames.

    Pure function: identical SceneSpec gives bit-identical output.
    """
    t_total, h, w = scene.n_frames, scene.height, scene.width
    rgb = np.empty((t_total, h, w, 3))
    mask_dyn = np.zeros((t_total, h, w), dtype=bool)
    mask_ss = np.zeros((t_total, h, w), dtype=bool)
    for t, pose in enumerate(scene.cameras):
        dirs_w = _pixel_directions(pose, h, w)
        origin_w = pose.center
        dirs_c = dirs_w @ pose.rotation.T
        best = np.full((h, w), np.inf)
        winner = np.full((h, w), -1, dtype=np.int64)
        hits = []
        for k, obj in enumerate(scene.objects):
            if obj.category == DYNAMIC:
                # Camera-frame object: intersect in camera coordinates.
                d = _hit_distance(obj, np.zeros(3), dirs_c, t)
            else:
                d = _hit_distance(obj, origin_w, dirs_w, t)
            hits.append(d)
            closer = d < best
            best = np.where(closer, d, best)
            winner = np.where(closer, k, winner)
        frame = np.broadcast_to(np.asarray(scene.background), (h, w, 3)).copy()
        for k, obj in enumerate(scene.objects):
            sel = winner == k
            if not np.any(sel):
                continue
            tau = hits[k][sel][:, None]
            if obj.category == DYNAMIC:
                pts = tau * dirs_c[sel]
            else:
                pts = origin_w + tau * dirs_w[sel] - obj.offset_at(t)
            frame[sel] = obj.color(pts)
            if obj.category == DYNAMIC:
                mask_dyn[t][sel] = True
            elif obj.category == SEMI_STATIC:
                mask_ss[t][sel] = True
        rgb[t] = frame
    return GroundTruth(rgb=rgb, mask_dyn=mask_dyn, mask_ss=mask_ss)


# ---------------------------------------------------------------------------
# Point queries (used for baking scenes into field grids)
# ---------------------------------------------------------------------------


def static_occupancy(scene: SceneSpec, pts: np.ndarray):
    """(inside, color) of the union of static material at world points."""
    inside = np.zeros(pts.shape[:-1], dtype=bool)
    color = np.zeros(pts.shape[:-1] + (3,))
    for obj in scene.objects:
        if obj.category != STATIC:
            continue
        prim = obj.primitive
        if isinstance(prim, RoomShell):
            lo_i, hi_i = np.asarray(prim.lo), np.asarray(prim.hi)
            lo_o, hi_o = lo_i - prim.thickness, hi_i + prim.thickness
            in_outer = np.all((pts >= lo_o) & (pts <= hi_o), axis=-1)
            in_inner = np.all((pts > lo_i) & (pts < hi_i), axis=-1)
            sel = in_outer & ~in_inner
        elif isinstance(prim, Box):
            sel = np.all((pts >= np.asarray(prim.lo)) & (pts <= np.asarray(prim.hi)), axis=-1)
        else:
            sel = np.linalg.norm(pts - np.asarray(prim.center), axis=-1) <= prim.radius
        new = sel & ~inside
        if np.any(new):
            color[new] = obj.color(pts[new])
        inside |= sel
    return inside, color


def object_occupancy(obj: SceneObject, pts: np.ndarray, offset=None):
    """(inside, color) for one primitive; `pts` in the object's own frame."""
    prim = obj.primitive
    off = np.zeros(3) if offset is None else np.asarray(offset)
    local = pts - off
    if isinstance(prim, Sphere):
        inside = np.linalg.norm(local - np.asarray(prim.center), axis=-1) <= prim.radius
    elif isinstance(prim, Box):
        inside = np.all((local >= np.asarray(prim.lo)) & (local <= np.asarray(prim.hi)), axis=-1)
    else:
        raise DomainError("room shells are static-only")
    color = np.zeros(pts.shape[:-1] + (3,))
    if np.any(inside):
        color[inside] = obj.color(local[inside])
    return inside, color


def object_distance(obj: SceneObject, pts: np.ndarray, offset=None) -> np.ndarray:
    """Distance from points to the primitive's material region (0 inside)."""
    prim = obj.primitive
    off = np.zeros(3) if offset is None else np.asarray(offset)
    local = pts - off
    if isinstance(prim, Sphere):
        return np.maximum(
            np.linalg.norm(local - np.asarray(prim.center), axis=-1) - prim.radius, 0.0
        )
    if isinstance(prim, Box):
        lo, hi = np.asarray(prim.lo), np.asarray(prim.hi)
        gap = np.maximum(np.maximum(lo - local, local - hi), 0.0)
        return np.linalg.norm(gap, axis=-1)
    # Room shell: inside the cavity, distance to the nearest inner face;
    # inside or beyond the wall material, zero.
    lo, hi = np.asarray(prim.lo), np.asarray(prim.hi)
    in_cavity = np.all((local > lo) & (local < hi), axis=-1)
    face_gap = np.minimum(local - lo, hi - local).min(axis=-1)
    return np.where(in_cavity, np.maximum(face_gap, 0.0), 0.0)


def nearest_color(objects: Sequence[SceneObject], pts: np.ndarray, offsets=None):
    """Color of the nearest primitive among `objects`, evaluated volumetrically.

    Used when baking fields: empty grid nodes take the color of the closest
    surface so trilinear interpolation does not bleed gray into boundaries.
    """
    if not objects:
        return np.full(pts.shape[:-1] + (3,), 0.5)
    best = np.full(pts.shape[:-1], np.inf)
    color = np.empty(pts.shape[:-1] + (3,))
    for i, obj in enumerate(objects):
        off = None if offsets is None else offsets[i]
        d = object_distance(obj, pts, offset=off)
        closer = d < best
        if np.any(closer):
            local = pts[closer] - (np.zeros(3) if off is None else np.asarray(off))
            color[closer] = obj.color(local)
            best = np.where(closer, d, best)
    return color


# ---------------------------------------------------------------------------
# Pseudo-mask degradation
# ---------------------------------------------------------------------------


def _erode4(mask: np.ndarray) -> np.ndarray:
    """4-neighborhood binary erosion; outside the image counts as background."""
    out = mask.copy()
    out[1:, :] &= mask[:-1, :]
    out[:-1, :] &= mask[1:, :]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    return out


_BLOB_OFFSETS = np.array([(0, 0), (0, 1), (0, -1), (1, 0), (-1, 0), (1, 1)])


def degrade_to_pseudo_masks(
    gt: GroundTruth,
    recall: float,
    fpr: float,
    seed: int = 0,
    threshold: float = 0.5,
) -> list[MotionMask]:
    """Emulate an incomplete-but-precise 2D motion-segmentation model.

    Per frame the requested recall is met exactly (up to rounding) by keeping
    a random subset of the eroded true-dynamic region at full confidence;
    eroded-away boundary pixels keep a sub-threshold confidence and dropped
    interior pixels go to zero. False positives are small blobs placed on
    true-negative pixels until the frame's share of `fpr` is met exactly.

    recall == 1.0 and fpr == 0.0 reproduce the ground-truth mask verbatim.
    """
    if not (0.0 < recall <= 1.0):
        raise DomainError("recall must lie in (0, 1]")
    if not (0.0 <= fpr < 1.0):
        raise DomainError("fpr must lie in [0, 1)")
    t_total, h, w = gt.mask_dyn.shape
    out = []
    for t in range(t_total):
        rng = np.random.default_rng([seed, t])
        pos = gt.mask_dyn[t]
        values = np.zeros((h, w))
        n_pos = int(pos.sum())
        if recall >= 1.0:
            values[pos] = 1.0
        elif n_pos > 0:
            target_tp = int(round(recall * n_pos))
            eroded = _erode4(pos)
            core = np.flatnonzero(eroded.ravel())
            ring = np.flatnonzero((pos & ~eroded).ravel())
            if core.size >= target_tp:
                kept = rng.choice(core, size=target_tp, replace=False)
            else:
                extra = rng.choice(ring, size=target_tp - core.size, replace=False)
                kept = np.concatenate([core, extra])
            flat = values.ravel()
            boundary = np.setdiff1d(ring, kept, assume_unique=False)
            flat[boundary] = rng.uniform(0.15, 0.45, size=boundary.size)
            flat[kept] = 1.0
        if fpr > 0.0:
            neg = np.flatnonzero((~pos).ravel())
            target_fp = int(round(fpr * neg.size))
            flat = values.ravel()
            placed: list[np.ndarray] = []
            n_placed = 0
            free = np.zeros(h * w, dtype=bool)
            free[neg] = True
            order = rng.permutation(neg)
            for center in order:
                if n_placed >= target_fp:
                    break
                cy, cx = divmod(int(center), w)
                yy = cy + _BLOB_OFFSETS[:, 0]
                xx = cx + _BLOB_OFFSETS[:, 1]
                ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
                idx = yy[ok] * w + xx[ok]
                idx = idx[free[idx]]
                if idx.size == 0:
                    continue
                idx = idx[: target_fp - n_placed]
                free[idx] = False
                placed.append(idx)
                n_placed += idx.size
            if placed:
                all_idx = np.concatenate(placed)
                flat[all_idx] = rng.uniform(0.55, 0.9, size=all_idx.size)
        out.append(MotionMask(values=values, frame_index=t, threshold=threshold))
    return out
