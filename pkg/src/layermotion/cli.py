"""Command-line pipeline: generate -> train -> refine -> render -> eval.

One binary with subcommands, a flat key=value config file, and CLI flag
overrides (flags win). Every subcommand appends its artifacts to
`<workspace>/manifest.csv` (subcommand, kind, relative path, sha256), so a
successful pipeline is reproducible and checkable from the manifest plus
the seed alone; nothing written contains timestamps.

Exit codes: 0 success, 2 configuration error, 3 missing upstream artifact,
4 numerical failure during optimization or rendering.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import imgio
from .dataset import Dataset, load_dataset, write_dataset
from .errors import ConfigError, EngineError, MissingArtifactError, NumericalError
from .evalkit import EvalReport, analyze_pseudo_masks, evaluate
from .fields import init_params, load_checkpoint, save_checkpoint
from .renderer import render_frame
from .scenegen import (
    SceneConfig,
    benchmark_config,
    degrade_to_pseudo_masks,
    generate_scene,
    render_ground_truth,
)
from .trainer import RefineConfig, TrainConfig, refine, train

# Keys accepted in config files and their parsers.
_CONFIG_KEYS = {
    "scene": str,
    "seed": int,
    "workers": int,
    "epochs": int,
    "steps_per_epoch": int,
    "rays_per_step": int,
    "n_samples": int,
    "lr": float,
    "losses": str,
    "lambda_pmf": float,
    "lambda_nmf": float,
    "threshold": float,
    "recall": float,
    "fpr": float,
    "frames": str,
    "neighbors": int,
    "refine_steps": int,
    "refine_lr": float,
    "render_samples": int,
    "grid_res": int,
    "ss_grid_res": int,
    "dyn_grid_res": int,
    "label": str,
}

_DEFAULTS = {
    "scene": "lmf-bench-v1",
    "seed": 0,
    "epochs": 20,
    "rays_per_step": 2048,
    "n_samples": 24,
    "lr": 5e-4,
    "losses": "rgb,pmf,nmf",
    "lambda_pmf": 1.1,
    "lambda_nmf": 1.0,
    "threshold": 0.5,
    "recall": 0.6,
    "fpr": 0.002,
    "neighbors": 0,
    "refine_steps": 300,
    "refine_lr": 1e-3,
    "render_samples": 64,
}


def read_config_file(path) -> dict:
    """Parse a flat key=value file; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"config file not found: {path}")
    out = {}
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{ln}: unknown config key '{key}'")
        try:
            out[key] = _CONFIG_KEYS[key](value)
        except ValueError as e:
            raise ConfigError(f"{path}:{ln}: bad value for '{key}': {value!r}") from e
    return out


def _settings(args) -> dict:
    cfg = dict(_DEFAULTS)
    if args.config:
        cfg.update(read_config_file(args.config))
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    if "workers" not in cfg or cfg.get("workers") is None:
        cfg["workers"] = os.cpu_count() or 1
    return cfg


def _parse_frames(text: str | None, fallback) -> tuple[int, ...]:
    if not text:
        return tuple(fallback)
    try:
        return tuple(int(s) for s in str(text).split(",") if s.strip() != "")
    except ValueError as e:
        raise ConfigError(f"bad frame list: {text!r}") from e


def _loss_names(text: str) -> tuple[str, ...]:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    unknown = set(names) - {"rgb", "pmf", "nmf"}
    if unknown:
        raise ConfigError(f"unknown loss names: {sorted(unknown)}")
    return names


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


class Workspace:
    """Directory layout plus the append-only run manifest."""

    def __init__(self, root):
        self.root = Path(root)

    def dir(self, name: str) -> Path:
        p = self.root / name
        p.mkdir(parents=True, exist_ok=True)
        return p

    @property
    def dataset_dir(self) -> Path:
        return self.root / "dataset"

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.csv"

    def record(self, subcommand: str, kind: str, paths) -> None:
        new = not self.manifest_path.exists()
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.manifest_path, "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(["subcommand", "kind", "path", "sha256"])
            for p in paths:
                rel = os.path.relpath(p, self.root)
                w.writerow([subcommand, kind, rel, sha256_file(p)])


def _scene_config(cfg: dict) -> SceneConfig:
    name = cfg["scene"]
    if name == "lmf-bench-v1":
        base = benchmark_config(name, seed=cfg["seed"])
    elif name.startswith("mini:"):
        # mini:TxHxW, reduced smoke scenes
        try:
            t, h, w = (int(v) for v in name.split(":", 1)[1].split("x"))
        except ValueError as e:
            raise ConfigError(f"bad mini scene spec '{name}', want mini:TxHxW") from e
        base = SceneConfig(name=name, n_frames=t, height=h, width=w, seed=cfg["seed"], eval_stride=max(t // 8, 1))
    else:
        raise ConfigError(f"unknown scene '{name}'")
    return SceneConfig(
        **{
            **base.__dict__,
            "recall": cfg["recall"],
            "fpr": cfg["fpr"],
            "threshold": cfg["threshold"],
        }
    )


def _load_dataset(ws: Workspace) -> Dataset:
    return load_dataset(ws.dataset_dir)


def _field_config(ds: Dataset, cfg: dict):
    overrides = {}
    for key in ("grid_res", "ss_grid_res", "dyn_grid_res"):
        if key in cfg:
            overrides[key] = cfg[key]
    return ds.field_config(**overrides)


def _label(meta: dict) -> str:
    names = meta.get("losses", ["rgb"])
    label = "ND"
    if meta.get("refined"):
        label += "+TR"
    if "pmf" in names:
        label += "+PMF"
    if "nmf" in names:
        label += "+NMF"
    return label


def cmd_generate(args) -> int:
    cfg = _settings(args)
    ws = Workspace(args.workspace)
    scene_cfg = _scene_config(cfg)
    scene = generate_scene(scene_cfg)
    gt = render_ground_truth(scene)
    pseudo = degrade_to_pseudo_masks(
        gt, recall=scene_cfg.recall, fpr=scene_cfg.fpr, seed=scene_cfg.seed,
        threshold=scene_cfg.threshold,
    )
    created = write_dataset(ws.dataset_dir, scene, gt, pseudo, scene_cfg)
    ws.record("generate", "dataset", created)
    print(f"dataset: {scene.n_frames} frames {scene.height}x{scene.width} -> {ws.dataset_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _settings(args)
    ws = Workspace(args.workspace)
    ds = _load_dataset(ws)
    tc = TrainConfig(
        epochs=cfg["epochs"],
        learning_rate=cfg["lr"],
        rays_per_step=cfg["rays_per_step"],
        n_samples=cfg["n_samples"],
        steps_per_epoch=cfg.get("steps_per_epoch"),
        losses=_loss_names(cfg["losses"]),
        lambda_pmf=cfg["lambda_pmf"],
        lambda_nmf=cfg["lambda_nmf"],
        threshold=cfg["threshold"],
        seed=cfg["seed"],
        workers=cfg["workers"],
    )
    if tc.epochs < 1:
        raise ConfigError("epochs must be >= 1")
    params = init_params(_field_config(ds, cfg), seed=cfg["seed"])
    log_path = ws.dir("reports") / "training_log.csv"
    try:
        params, log = train(params, ds, tc)
    except NumericalError as e:
        raise NumericalError(f"{e} (see log at {log_path})") from e
    _write_log(log_path, log)
    ckpt = ws.dir("checkpoints") / "model.lmf"
    meta = {"losses": list(tc.losses), "refined": False, "seed": cfg["seed"], "scene": ds.meta.get("name")}
    save_checkpoint(params, ckpt, meta)
    ws.record("train", "checkpoint", [ckpt, Path(str(ckpt) + ".json"), log_path])
    print(f"trained {tc.epochs} epochs ({len(log)} steps) -> {ckpt}")
    return 0


def _write_log(path, log_rows) -> None:
    cols = ["epoch", "step", "l_rgb", "l_pmf", "l_nmf", "l_total",
            "grad_norm_st", "grad_norm_ss", "grad_norm_dy"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in log_rows:
            w.writerow([row[c] for c in cols])


def cmd_refine(args) -> int:
    cfg = _settings(args)
    ws = Workspace(args.workspace)
    ds = _load_dataset(ws)
    ckpt_in = ws.root / "checkpoints" / "model.lmf"
    if not ckpt_in.exists():
        raise MissingArtifactError(f"checkpoint not found: {ckpt_in} (run train first)")
    params, meta = load_checkpoint(ckpt_in)
    frames = _parse_frames(cfg.get("frames"), ds.eval_frames)
    rc = RefineConfig(
        frames=frames,
        neighbors=cfg["neighbors"],
        steps=cfg["refine_steps"],
        learning_rate=cfg["refine_lr"],
        rays_per_step=cfg["rays_per_step"],
        n_samples=cfg["n_samples"],
        losses=_loss_names(cfg["losses"]),
        lambda_pmf=cfg["lambda_pmf"],
        lambda_nmf=cfg["lambda_nmf"],
        threshold=cfg["threshold"],
        seed=cfg["seed"],
        workers=cfg["workers"],
    )
    log_path = ws.dir("reports") / "refine_log.csv"
    params, log, _ = refine(params, ds, rc)
    _write_log(log_path, log)
    ckpt_out = ws.dir("checkpoints") / "model_refined.lmf"
    meta = dict(meta)
    meta.update(refined=True, refine_frames=list(frames), neighbors=rc.neighbors)
    save_checkpoint(params, ckpt_out, meta)
    ws.record("refine", "checkpoint", [ckpt_out, Path(str(ckpt_out) + ".json"), log_path])
    print(f"refined on frames {list(frames)} (N={rc.neighbors}) -> {ckpt_out}")
    return 0


def _pick_checkpoint(ws: Workspace) -> Path:
    for name in ("model_refined.lmf", "model.lmf"):
        p = ws.root / "checkpoints" / name
        if p.exists():
            return p
    raise MissingArtifactError(f"no checkpoint under {ws.root / 'checkpoints'} (run train first)")


def cmd_render(args) -> int:
    cfg = _settings(args)
    ws = Workspace(args.workspace)
    ds = _load_dataset(ws)
    ckpt = _pick_checkpoint(ws)
    params, meta = load_checkpoint(ckpt)
    frames = _parse_frames(cfg.get("frames"), ds.eval_frames)
    out_dir = ws.dir("renders")
    created = []
    for t in frames:
        out = render_frame(
            params, ds.poses[t], t=t, n_samples=cfg["render_samples"], workers=cfg["workers"]
        )
        paths = {
            "color": out_dir / f"color_{t:04d}.ppm",
            "uncertainty": out_dir / f"b_{t:04d}.pgm",
            "mask_ss": out_dir / f"mask_ss_{t:04d}.pgm",
            "mask_dy": out_dir / f"mask_dy_{t:04d}.pgm",
        }
        imgio.write_ppm(paths["color"], out["color"])
        imgio.write_pgm(paths["uncertainty"], np.clip(out["uncertainty"], 0.0, 1.0))
        imgio.write_pgm(paths["mask_ss"], out["mask_ss"])
        imgio.write_pgm(paths["mask_dy"], out["mask_dy"])
        for key in ("color", "mask_ss", "mask_dy", "uncertainty"):
            raw = out_dir / f"{key}_{t:04d}.f64"
            imgio.write_f64(raw, out[key])
            created.append(raw)
        created.extend(paths.values())
    ws.record("render", "render", created)
    print(f"rendered {len(frames)} frames -> {out_dir}")
    return 0


def _predictions_from_pgm_dir(pred_dir: Path, frames, shape):
    """Load external per-frame mask predictions from PGM files.

    Accepts mask_dy_%04d.pgm / mask_ss_%04d.pgm pairs, or single-channel
    dynamic predictions named pseudo_%04d.pgm (semi-static scored as zero).
    """
    preds = {}
    for t in frames:
        dy_p = pred_dir / f"mask_dy_{t:04d}.pgm"
        ss_p = pred_dir / f"mask_ss_{t:04d}.pgm"
        alt = pred_dir / f"pseudo_{t:04d}.pgm"
        if dy_p.exists():
            dy = imgio.read_pgm(dy_p)
            ss = imgio.read_pgm(ss_p) if ss_p.exists() else np.zeros(shape)
        elif alt.exists():
            dy = imgio.read_pgm(alt)
            ss = np.zeros(shape)
        else:
            raise MissingArtifactError(f"prediction for frame {t} not found in {pred_dir}")
        preds[t] = (ss, dy)
    return preds


def cmd_eval(args) -> int:
    cfg = _settings(args)
    ws = Workspace(args.workspace)
    ds = _load_dataset(ws)
    frames = _parse_frames(cfg.get("frames"), ds.eval_frames)
    label = cfg.get("label") or ""
    if args.pred_dir:
        preds = _predictions_from_pgm_dir(Path(args.pred_dir), frames, (ds.height, ds.width))
        label = label or "external"
    else:
        render_dir = ws.root / "renders"
        have_renders = all(
            (render_dir / f"mask_dy_{t:04d}.f64").exists()
            and (render_dir / f"mask_ss_{t:04d}.f64").exists()
            for t in frames
        )
        if have_renders:
            shape = (ds.height, ds.width)
            preds = {
                t: (
                    imgio.read_f64(render_dir / f"mask_ss_{t:04d}.f64", shape),
                    imgio.read_f64(render_dir / f"mask_dy_{t:04d}.f64", shape),
                )
                for t in frames
            }
            ckpt_meta = {}
            for name in ("model_refined.lmf.json", "model.lmf.json"):
                p = ws.root / "checkpoints" / name
                if p.exists():
                    ckpt_meta = json.loads(p.read_text()).get("meta", {})
                    break
            label = label or _label(ckpt_meta)
        else:
            ckpt = _pick_checkpoint(ws)
            params, meta = load_checkpoint(ckpt)
            preds = {}
            for t in frames:
                out = render_frame(
                    params, ds.poses[t], t=t, n_samples=cfg["render_samples"],
                    workers=cfg["workers"], channels=("mask_ss", "mask_dy"),
                )
                preds[t] = (out["mask_ss"], out["mask_dy"])
            label = label or _label(meta)
    report = evaluate(preds, ds, frames, label=label)
    out_dir = ws.dir("reports")
    artifacts = []
    if ds.pseudo is not None:
        from .scenegen import MotionMask

        masks = [
            MotionMask(values=ds.pseudo[t], frame_index=t, threshold=cfg["threshold"])
            for t in range(ds.n_frames)
        ]
        curves = analyze_pseudo_masks(masks, ds)
        report = EvalReport(**{**report.__dict__, "curves": tuple(curves)})
        curves_path = out_dir / "pseudo_curves.csv"
        with open(curves_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "precision", "recall", "fpr", "fnr"])
            for row in curves:
                w.writerow([f"{row[k]:.6f}" for k in ("threshold", "precision", "recall", "fpr", "fnr")])
        artifacts.append(curves_path)
    csv_path = out_dir / "eval.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "category", "frame", "ap", "kind"])
        for row in report.as_rows():
            w.writerow([label, row["category"], row["frame"], f"{row['ap']:.6f}", row["kind"]])
    table = report.summary_table()
    summary_path = out_dir / "summary.txt"
    summary_path.write_text(table + "\n")
    ws.record("eval", "report", [csv_path, summary_path] + artifacts)
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmf",
        description="Layered radiance-field motion fusion on procedural scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("generate", cmd_generate),
        ("train", cmd_train),
        ("refine", cmd_refine),
        ("render", cmd_render),
        ("eval", cmd_eval),
    ):
        p = sub.add_parser(name)
        p.set_defaults(fn=fn)
        p.add_argument("--config", type=str, default=None, help="key=value config file")
        p.add_argument("--workspace", type=str, required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--scene", type=str, default=None)
        p.add_argument("--frames", type=str, default=None, help="comma-separated frame set")
        p.add_argument("--neighbors", type=int, default=None, help="symmetric frame window")
        p.add_argument("--losses", type=str, default=None, help="subset of rgb,pmf,nmf")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--lambda-pmf", dest="lambda_pmf", type=float, default=None)
        p.add_argument("--lambda-nmf", dest="lambda_nmf", type=float, default=None)
        p.add_argument("--threshold", type=float, default=None)
        p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int, default=None)
        p.add_argument("--rays-per-step", dest="rays_per_step", type=int, default=None)
        p.add_argument("--n-samples", dest="n_samples", type=int, default=None)
        p.add_argument("--recall", type=float, default=None)
        p.add_argument("--fpr", type=float, default=None)
        p.add_argument("--refine-steps", dest="refine_steps", type=int, default=None)
        p.add_argument("--refine-lr", dest="refine_lr", type=float, default=None)
        p.add_argument("--render-samples", dest="render_samples", type=int, default=None)
        p.add_argument("--grid-res", dest="grid_res", type=int, default=None)
        p.add_argument("--label", type=str, default=None)
        if name == "eval":
            p.add_argument("--pred-dir", type=str, default=None,
                           help="score external PGM mask predictions instead of renders")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except MissingArtifactError as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4
    except EngineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
