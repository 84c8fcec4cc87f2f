import numpy as np
import pytest

from layermotion import scenegen
from layermotion.errors import ConfigError, DomainError
from layermotion.geometry import look_at
from layermotion.scenegen import (
    ColorRamp,
    GroundTruth,
    MotionMask,
    SceneConfig,
    SceneSpec,
    Sphere,
    SceneObject,
    benchmark_config,
    degrade_to_pseudo_masks,
    generate_scene,
    render_ground_truth,
)


def small_config(**kw):
    base = dict(name="small", n_frames=6, height=24, width=24, seed=1)
    base.update(kw)
    return SceneConfig(**base)


class TestGenerateScene:
    def test_deterministic_regeneration(self):
        cfg = benchmark_config("lmf-bench-v1")
        a = generate_scene(cfg)
        b = generate_scene(cfg)
        assert a.objects == b.objects  # primitives and ramps are plain tuples
        for pa, pb in zip(a.cameras, b.cameras):
            np.testing.assert_array_equal(pa.rotation, pb.rotation)
            np.testing.assert_array_equal(pa.translation, pb.translation)
        ga = render_ground_truth(a)
        gb = render_ground_truth(b)
        np.testing.assert_array_equal(ga.rgb, gb.rgb)
        np.testing.assert_array_equal(ga.mask_dyn, gb.mask_dyn)

    def test_no_dynamic_objects_means_empty_dyn_mask(self):
        scene = generate_scene(small_config(n_dynamic=0))
        gt = render_ground_truth(scene)
        assert not gt.mask_dyn.any()
        assert gt.mask_ss.any()

    def test_bench_dynamic_fraction_by_exhaustive_count(self):
        scene = generate_scene(benchmark_config("lmf-bench-v1"))
        gt = render_ground_truth(scene)
        frac = gt.mask_dyn.reshape(gt.mask_dyn.shape[0], -1).mean(axis=1)
        assert frac.min() >= 0.02 and frac.max() <= 0.20

    def test_degenerate_configs_rejected(self):
        with pytest.raises(ConfigError):
            generate_scene(small_config(n_frames=1))
        with pytest.raises(ConfigError):
            generate_scene(small_config(height=4))
        with pytest.raises(ConfigError):
            benchmark_config("nope")

    def test_nonzero_camera_baseline(self):
        scene = generate_scene(small_config())
        centers = np.stack([p.center for p in scene.cameras])
        assert np.linalg.norm(centers[-1] - centers[0]) > 0.1


def _const_cameras(n, h, w):
    fx = 0.5 * w / np.tan(np.radians(32.0))
    intr = dict(fx=fx, fy=fx, cx=(w - 1) / 2, cy=(h - 1) / 2)
    return tuple(
        look_at((0.5, 0.0, 0.0), (-0.5, 0.0, 0.0), frame_index=i, **intr)
        for i in range(n)
    )


class TestRenderGroundTruth:
    def test_empty_scene_is_background(self):
        scene = SceneSpec(
            name="empty", n_frames=2, height=16, width=16, seed=0,
            objects=(), cameras=_const_cameras(2, 16, 16), background=(0.2, 0.4, 0.6),
        )
        gt = render_ground_truth(scene)
        assert np.all(gt.rgb == np.array([0.2, 0.4, 0.6]))
        assert not gt.mask_dyn.any() and not gt.mask_ss.any()

    def test_camera_attached_sphere_matches_analytic_disk(self):
        h = w = 32
        center = np.array([0.0, 0.0, -0.5])
        scene = SceneSpec(
            name="disk", n_frames=2, height=h, width=w, seed=0,
            objects=(
                SceneObject(
                    primitive=Sphere(center=tuple(center), radius=0.12),
                    color=ColorRamp(base=(1, 0, 0)),
                    category=scenegen.DYNAMIC,
                ),
            ),
            cameras=_const_cameras(2, h, w),
        )
        gt = render_ground_truth(scene)
        pose = scene.cameras[0]
        expected = np.zeros((h, w), dtype=bool)
        for iy in range(h):
            for ix in range(w):
                d = np.array([(ix - pose.cx) / pose.fx, (iy - pose.cy) / pose.fy, -1.0])
                d = d / np.linalg.norm(d)
                proj = center @ d
                if proj <= 0:
                    continue
                dist = np.linalg.norm(center - proj * d)
                expected[iy, ix] = dist <= 0.12
        np.testing.assert_array_equal(gt.mask_dyn[0], expected)
        np.testing.assert_array_equal(gt.mask_dyn[1], expected)  # camera-pinned

    def test_semi_static_pose_swap_oracle(self):
        def build(swap):
            a, b = (-0.4, 0.15, 0.0), (-0.4, -0.2, 0.1)
            if swap:
                a, b = b, a
            return SceneSpec(
                name="swap", n_frames=4, height=24, width=24, seed=0,
                objects=(
                    SceneObject(
                        primitive=scenegen.Box(lo=(-0.1, -0.1, -0.1), hi=(0.1, 0.1, 0.1)),
                        color=ColorRamp(base=(0, 1, 0)),
                        category=scenegen.SEMI_STATIC,
                        offset_a=a, offset_b=b, t_star=2,
                    ),
                ),
                cameras=_const_cameras(4, 24, 24),
            )

        gt = render_ground_truth(build(False))
        gt_sw = render_ground_truth(build(True))
        np.testing.assert_array_equal(gt.mask_ss[1], gt_sw.mask_ss[2])
        np.testing.assert_array_equal(gt.mask_ss[2], gt_sw.mask_ss[1])
        assert (gt.mask_ss[1] != gt.mask_ss[2]).any()

    def test_masks_disjoint_invariant(self, bench_gt):
        assert not (bench_gt.mask_dyn & bench_gt.mask_ss).any()

    def test_ground_truth_constructor_rejects_overlap(self):
        m = np.ones((1, 2, 2), dtype=bool)
        with pytest.raises(DomainError):
            GroundTruth(rgb=np.zeros((1, 2, 2, 3)), mask_dyn=m, mask_ss=m)


class TestDegradeToPseudoMasks:
    def test_no_degradation_is_exact(self, bench_gt):
        masks = degrade_to_pseudo_masks(bench_gt, recall=1.0, fpr=0.0, seed=0)
        for t, m in enumerate(masks):
            np.testing.assert_array_equal(m.values, bench_gt.mask_dyn[t].astype(float))

    def test_confusion_matrix_oracle(self, bench_gt, bench_pseudo):
        values = np.stack([m.values for m in bench_pseudo])
        pred = values >= 0.5
        gt = bench_gt.mask_dyn
        tp = int((pred & gt).sum())
        fp = int((pred & ~gt).sum())
        pos = int(gt.sum())
        neg = int((~gt).sum())
        recall = tp / pos
        precision = tp / (tp + fp)
        assert 0.55 <= recall <= 0.65
        assert precision >= 0.95
        assert abs(fp / neg - 0.002) <= 0.5 * 0.002

    def test_empty_positive_frame_gets_only_false_positives(self):
        rgb = np.zeros((2, 32, 32, 3))
        dyn = np.zeros((2, 32, 32), dtype=bool)
        dyn[1, 8:16, 8:16] = True
        gt = GroundTruth(rgb=rgb, mask_dyn=dyn, mask_ss=np.zeros_like(dyn))
        masks = degrade_to_pseudo_masks(gt, recall=0.6, fpr=0.01, seed=3)
        assert not (masks[0].binary & dyn[0]).any()
        assert masks[0].binary.sum() == round(0.01 * 32 * 32)

    def test_deterministic_given_seed(self, bench_gt):
        a = degrade_to_pseudo_masks(bench_gt, recall=0.7, fpr=0.003, seed=5)
        b = degrade_to_pseudo_masks(bench_gt, recall=0.7, fpr=0.003, seed=5)
        for ma, mb in zip(a, b):
            np.testing.assert_array_equal(ma.values, mb.values)

    def test_precision_invariant_default_settings(self, bench_gt, bench_pseudo):
        values = np.stack([m.values for m in bench_pseudo])
        pred = values >= 0.5
        tp = int((pred & bench_gt.mask_dyn).sum())
        fp = int((pred & ~bench_gt.mask_dyn).sum())
        assert tp / (tp + fp) >= 0.9

    def test_parameter_validation(self, bench_gt):
        with pytest.raises(DomainError):
            degrade_to_pseudo_masks(bench_gt, recall=0.0, fpr=0.0)
        with pytest.raises(DomainError):
            degrade_to_pseudo_masks(bench_gt, recall=0.5, fpr=1.0)

    def test_motion_mask_invariants(self):
        with pytest.raises(DomainError):
            MotionMask(values=np.array([[1.5]]), frame_index=0)
        m = MotionMask(values=np.array([[0.2, 0.8]]), frame_index=0, threshold=0.5)
        np.testing.assert_array_equal(m.binary, [[False, True]])
