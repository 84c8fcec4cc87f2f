"""On-disk and in-memory dataset: frames, masks, pseudo-labels, cameras.

Disk layout under a dataset directory:

    frames/frame_0000.ppm      RGB frames (P6)
    masks/dyn_0000.pgm         binary dynamic ground truth (255 = foreground)
    masks/ss_0000.pgm          binary semi-static ground truth
    pseudo/pseudo_0000.pgm     soft pseudo-labels, linear 0-255
    cameras.csv                trajectory (see geometry.save_cameras)
    manifest.csv               per-frame artifact paths
    meta.json                  scene name, sizes, world box, eval protocol
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imgio
from .errors import DataError, MissingArtifactError
from .fields import FieldConfig, FrustumSpec
from .geometry import CameraPose, load_cameras, save_cameras
from .losses import RayBatch
from .renderer import camera_rays, sample_depths
from .scenegen import GroundTruth, MotionMask, SceneConfig, SceneSpec


@dataclass
class Dataset:
    rgb: np.ndarray  # (T, H, W, 3)
    mask_dyn: np.ndarray  # (T, H, W) bool
    mask_ss: np.ndarray  # (T, H, W) bool
    pseudo: np.ndarray | None  # (T, H, W) soft labels
    poses: list[CameraPose]
    meta: dict

    def __post_init__(self):
        t, h, w, _ = self.rgb.shape
        if len(self.poses) != t:
            raise DataError("camera count does not match frame count")
        self._rays = None

    @property
    def n_frames(self) -> int:
        return self.rgb.shape[0]

    @property
    def height(self) -> int:
        return self.rgb.shape[1]

    @property
    def width(self) -> int:
        return self.rgb.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.n_frames * self.height * self.width

    @property
    def eval_frames(self) -> tuple[int, ...]:
        return tuple(self.meta.get("eval_frames", range(self.n_frames)))

    def _ray_tables(self):
        """Per-frame ray geometry, built once: nu, origins, near/far, poses."""
        if self._rays is None:
            t, h, w = self.n_frames, self.height, self.width
            lo, hi = self.meta["world_lo"], self.meta["world_hi"]
            nu = np.empty((t, h * w, 3))
            near = np.empty((t, h * w))
            far = np.empty((t, h * w))
            origins = np.empty((t, 3))
            rot = np.empty((t, 3, 3))
            trans = np.empty((t, 3))
            for i, pose in enumerate(self.poses):
                origins[i], nu[i], near[i], far[i] = camera_rays(pose, w, h, lo, hi)
                rot[i] = pose.rotation
                trans[i] = pose.translation
            self._rays = (nu, near, far, origins, rot, trans)
        return self._rays

    def pixel_ids_for_frames(self, frames) -> np.ndarray:
        per = self.height * self.width
        return np.concatenate(
            [np.arange(per, dtype=np.int64) + int(t) * per for t in frames]
        )

    def ray_batch(
        self, pixel_ids, n_samples: int, stratified: bool = False, seed=0
    ) -> RayBatch:
        """Assemble a supervision batch for flat pixel ids over (T, H, W)."""
        nu, near, far, origins, rot, trans = self._ray_tables()
        ids = np.asarray(pixel_ids, dtype=np.int64)
        per = self.height * self.width
        t_idx = ids // per
        pix = ids % per
        depths, deltas = sample_depths(
            near[t_idx, pix], far[t_idx, pix], n_samples, stratified, seed
        )
        flat_rgb = self.rgb.reshape(self.n_frames, per, 3)
        pseudo = None
        if self.pseudo is not None:
            pseudo = self.pseudo.reshape(self.n_frames, per)[t_idx, pix]
        return RayBatch(
            origins=origins[t_idx],
            nus=nu[t_idx, pix],
            rot=rot[t_idx],
            trans=trans[t_idx],
            t_idx=t_idx,
            depths=depths,
            deltas=deltas,
            target_rgb=flat_rgb[t_idx, pix],
            mask_values=pseudo,
        )

    def field_config(self, **overrides) -> FieldConfig:
        p0 = self.poses[0]
        frustum = FrustumSpec(
            fx=p0.fx, fy=p0.fy, cx=p0.cx, cy=p0.cy, width=self.width, height=self.height
        )
        kw = dict(
            n_frames=self.n_frames,
            frustum=frustum,
            world_lo=tuple(self.meta["world_lo"]),
            world_hi=tuple(self.meta["world_hi"]),
        )
        kw.update(overrides)
        return FieldConfig(**kw)


def dataset_from_scene(
    scene: SceneSpec,
    gt: GroundTruth,
    pseudo_masks: list[MotionMask] | None,
    config: SceneConfig | None = None,
) -> Dataset:
    """In-memory dataset straight from generation (no disk round trip)."""
    pseudo = None
    if pseudo_masks is not None:
        pseudo = np.stack([m.values for m in pseudo_masks])
    meta = {
        "name": scene.name,
        "seed": scene.seed,
        "world_lo": list(scene.world_lo),
        "world_hi": list(scene.world_hi),
        "eval_frames": list(config.eval_frames()) if config else list(range(scene.n_frames)),
    }
    if config is not None:
        meta.update(recall=config.recall, fpr=config.fpr, threshold=config.threshold)
    return Dataset(
        rgb=gt.rgb.copy(),
        mask_dyn=gt.mask_dyn.copy(),
        mask_ss=gt.mask_ss.copy(),
        pseudo=pseudo,
        poses=list(scene.cameras),
        meta=meta,
    )


def write_dataset(
    root,
    scene: SceneSpec,
    gt: GroundTruth,
    pseudo_masks: list[MotionMask],
    config: SceneConfig,
) -> list[Path]:
    """Write the full dataset tree; returns the created file paths."""
    root = Path(root)
    created: list[Path] = []
    for sub in ("frames", "masks", "pseudo"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rows = []
    for t in range(scene.n_frames):
        paths = {
            "frame": root / "frames" / f"frame_{t:04d}.ppm",
            "mask_dyn": root / "masks" / f"dyn_{t:04d}.pgm",
            "mask_ss": root / "masks" / f"ss_{t:04d}.pgm",
            "pseudo": root / "pseudo" / f"pseudo_{t:04d}.pgm",
        }
        imgio.write_ppm(paths["frame"], gt.rgb[t])
        imgio.write_pgm(paths["mask_dyn"], gt.mask_dyn[t].astype(np.float64))
        imgio.write_pgm(paths["mask_ss"], gt.mask_ss[t].astype(np.float64))
        imgio.write_pgm(paths["pseudo"], pseudo_masks[t].values)
        created.extend(paths.values())
        rows.append([t] + [str(p.relative_to(root)) for p in paths.values()])
    cam_path = root / "cameras.csv"
    save_cameras(cam_path, scene.cameras)
    created.append(cam_path)
    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "frame", "mask_dyn", "mask_ss", "pseudo"])
        w.writerows(rows)
    created.append(manifest)
    meta = {
        "name": scene.name,
        "seed": scene.seed,
        "n_frames": scene.n_frames,
        "height": scene.height,
        "width": scene.width,
        "world_lo": list(scene.world_lo),
        "world_hi": list(scene.world_hi),
        "eval_frames": list(config.eval_frames()),
        "recall": config.recall,
        "fpr": config.fpr,
        "threshold": config.threshold,
    }
    meta_path = root / "meta.json"
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True))
    created.append(meta_path)
    return created


def load_dataset(root) -> Dataset:
    root = Path(root)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise MissingArtifactError(f"dataset meta not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    t_total = meta["n_frames"]
    rgb = []
    mask_dyn = []
    mask_ss = []
    pseudo = []
    for t in range(t_total):
        for kind, store in (
            (root / "frames" / f"frame_{t:04d}.ppm", rgb),
            (root / "masks" / f"dyn_{t:04d}.pgm", mask_dyn),
            (root / "masks" / f"ss_{t:04d}.pgm", mask_ss),
            (root / "pseudo" / f"pseudo_{t:04d}.pgm", pseudo),
        ):
            if not kind.exists():
                raise MissingArtifactError(f"dataset file not found: {kind}")
            store.append(imgio.read_ppm(kind) if kind.suffix == ".ppm" else imgio.read_pgm(kind))
    poses = load_cameras(root / "cameras.csv")
    return Dataset(
        rgb=np.stack(rgb),
        mask_dyn=np.stack(mask_dyn) >= 0.5,
        mask_ss=np.stack(mask_ss) >= 0.5,
        pseudo=np.stack(pseudo),
        poses=poses,
        meta=meta,
    )
