import json
import shutil

import numpy as np
import pytest

from sparsesplat.config import FitConfig, RunConfig
from sparsesplat.gaussians import covariance, read_ply, write_ply
from sparsesplat.geometry import CameraView
from sparsesplat.harness import (SceneError, check_weights, fit_gaussians, fit_scene, init_weights, load_scene, psnr,
                                 random_gaussians, run_infer, save_scene, ssim)
from sparsesplat.harness.fit import DivergenceError
from sparsesplat.harness.gradcheck import random_scene
from sparsesplat.harness.metrics import mse
from sparsesplat.harness.pipeline import PipelineError
from sparsesplat.harness.scene import load_camera, save_camera
from sparsesplat.imageio import write_png
from sparsesplat.rasterizer import rasterize
from sparsesplat.weights import WeightFormatError


def _view_entry(image, T=None):
    T = np.eye(4) if T is None else T
    return {"image": image, "intrinsics": [8, 8, 4, 4], "world_from_camera": T.reshape(-1).tolist(),
            "near": 0.5, "far": 20}


@pytest.fixture
def mini_dir(tmp_path, rng):
    for k in range(2):
        write_png(tmp_path / f"v{k}.png", rng.uniform(0, 1, (8, 12, 3)))
    return tmp_path


def _write(dirpath, data):
    p = dirpath / "scene.json"
    p.write_text(json.dumps(data))
    return p


class TestScene:
    def test_minimal(self, mini_dir):
        T = np.eye(4)
        T[0, 3] = 0.3
        s = load_scene(_write(mini_dir, {"views": [_view_entry("v0.png"), _view_entry("v1.png", T)]}))
        assert s.context == [0, 1] and s.targets == []
        assert s.views[1].camera.position == pytest.approx([0.3, 0, 0])
        assert s.views[0].image.shape == (8, 12, 3) and s.views[0].image.dtype == np.float32
        assert s.views[0].camera.width == 12 and s.views[0].camera.height == 8
        assert s.prior(0) is None

    def test_reflection_rejected(self, mini_dir):
        with pytest.raises(SceneError, match="view 0"):
            load_scene(_write(mini_dir, {"views": [_view_entry("v0.png", np.diag([1, 1, -1, 1.0]))]}))

    def test_missing_image(self, mini_dir):
        with pytest.raises(SceneError, match="does not exist"):
            load_scene(_write(mini_dir, {"views": [_view_entry("nope.png")]}))

    def test_missing_prior(self, mini_dir):
        entry = dict(_view_entry("v0.png"), prior="p.pfm")
        with pytest.raises(SceneError, match="prior"):
            load_scene(_write(mini_dir, {"views": [entry]}))

    def test_size_not_divisible(self, tmp_path):
        write_png(tmp_path / "odd.png", np.zeros((10, 8, 3)))
        with pytest.raises(SceneError, match="divisible by 4"):
            load_scene(_write(tmp_path, {"views": [_view_entry("odd.png")]}))

    def test_index_out_of_range(self, mini_dir):
        with pytest.raises(SceneError, match="out of range"):
            load_scene(_write(mini_dir, {"views": [_view_entry("v0.png")], "targets": [3]}))

    def test_missing_file(self, tmp_path):
        with pytest.raises(SceneError):
            load_scene(tmp_path / "none.json")

    def test_round_trip_semantic(self, plane_scene, tmp_path):
        s = load_scene(plane_scene)
        out = tmp_path / "copy" / "s.json"
        out.parent.mkdir()
        save_scene(s, out)
        a = json.loads(plane_scene.read_text())
        b = json.loads(out.read_text())
        for va, vb in zip(a["views"], b["views"]):
            assert (plane_scene.parent / va["image"]).resolve() == (out.parent / vb["image"]).resolve()
            assert (plane_scene.parent / va["prior"]).resolve() == (out.parent / vb["prior"]).resolve()
            for k in ("intrinsics", "world_from_camera", "near", "far"):
                assert va[k] == vb[k]
        assert (a["context"], a["targets"]) == (b["context"], b["targets"])
        again = load_scene(out)
        for v, w in zip(s.views, again.views):
            np.testing.assert_array_equal(v.camera.world_from_camera, w.camera.world_from_camera)
            np.testing.assert_array_equal(v.image, w.image)

    def test_camera_file_round_trip(self, stereo_pair, tmp_path):
        save_camera(stereo_pair[1], tmp_path / "c.json")
        c = load_camera(tmp_path / "c.json")
        assert (c.fx, c.fy, c.cx, c.cy) == (64.0, 64.0, 32.0, 32.0)
        np.testing.assert_array_equal(c.world_from_camera, stereo_pair[1].world_from_camera)
        assert (c.width, c.height, c.near, c.far) == (64, 64, 1.0, 10.0)


@pytest.fixture(scope="module")
def plane_infer(plane_scene):
    scene = load_scene(plane_scene)
    cfg = RunConfig()
    return scene, cfg, run_infer(scene, cfg)


class TestPipeline:
    def test_shapes(self, plane_infer):
        scene, cfg, res = plane_infer
        assert len(res.gaussians) == 64 * 64 * 2
        assert res.renders[1].color.shape == (64, 64, 3)
        assert [d.shape for d in res.depths] == [(64, 64)] * 2
        assert res.distributions[0].logits.shape == (16, 16, cfg.depth_candidates)

    def test_invariants(self, plane_infer):
        g = plane_infer[2].gaussians
        assert (g.opacities > 0).all() and (g.opacities < 1).all()
        np.testing.assert_allclose(np.linalg.norm(g.rotations, axis=1), 1, atol=1e-6)
        np.linalg.cholesky(covariance(g.scales, g.rotations))
        for d, idx in zip(plane_infer[2].depths, plane_infer[0].context):
            cam = plane_infer[0].views[idx].camera
            assert d.min() >= cam.near and d.max() <= cam.far

    def test_context_view_coverage(self, plane_infer):
        scene, cfg, res = plane_infer
        cam = scene.views[0].camera
        out = rasterize(res.gaussians, cam, 64, 64)
        assert (out.alpha > 0).all()

    def test_deterministic(self, plane_infer):
        scene, cfg, res = plane_infer
        again = run_infer(scene, cfg)
        assert again.renders[1].color.tobytes() == res.renders[1].color.tobytes()
        assert again.gaussians.means.tobytes() == res.gaussians.means.tobytes()

    def test_doubling_candidates_keeps_shapes(self, plane_infer):
        scene, cfg, res = plane_infer
        big = RunConfig(depth_candidates=2 * cfg.depth_candidates)
        out = run_infer(scene, big)
        assert len(out.gaussians) == len(res.gaussians)
        assert out.renders[1].color.shape == res.renders[1].color.shape
        assert out.distributions[0].logits.shape[-1] == 64

    def test_without_ddmt(self, plane_infer):
        scene, _, res = plane_infer
        out = run_infer(scene, RunConfig(ddmt_repeats=0))
        assert len(out.gaussians) == len(res.gaussians)

    def test_needs_two_context_views(self, plane_scene):
        scene = load_scene(plane_scene)
        scene.context = [0]
        with pytest.raises(PipelineError):
            run_infer(scene, RunConfig())

    def test_check_weights(self):
        cfg = RunConfig()
        w = init_weights(cfg)
        check_weights(w, cfg)
        with pytest.raises(WeightFormatError):
            check_weights(w, RunConfig(channels=16))
        with pytest.raises(WeightFormatError, match="missing"):
            check_weights(w, RunConfig(ddmt_repeats=2))

    def test_scene_without_priors(self, plane_scene, tmp_path):
        for f in plane_scene.parent.glob("view*.png"):
            shutil.copy(f, tmp_path / f.name)
        data = json.loads(plane_scene.read_text())
        for v in data["views"]:
            v.pop("prior")
        scene = load_scene(_write(tmp_path, data))
        out = run_infer(scene, RunConfig())
        assert len(out.gaussians) == 8192


class TestFit:
    @pytest.fixture
    def small(self):
        g, cam = random_scene(np.random.default_rng(9), 15, 16)
        return g.astype(np.float64), cam

    def test_fixed_point(self, small):
        g, cam = small
        target = rasterize(g, cam, 16, 16).color
        res = fit_gaussians(g, [(target, cam)], FitConfig(iterations=5))
        assert res.losses == [0.0]
        assert res.gaussians is g
        assert res.psnr == 99.0
        assert ssim(res.renders[0], target) == 1.0

    def test_step_zero_loss_matches_independent_mse(self, small, rng):
        g, cam = small
        target = rng.uniform(0, 1, (16, 16, 3))
        res = fit_gaussians(g, [(target, cam), (target[::-1], cam)], FitConfig(iterations=1))
        r = rasterize(g, cam, 16, 16).color.astype(np.float64)
        expect = 0.5 * (np.sum((r - target) ** 2) / r.size + np.sum((r - target[::-1]) ** 2) / r.size)
        assert res.losses[0] == pytest.approx(expect, rel=1e-12)

    def test_best_trace_monotone_and_improving(self, small, rng):
        g, cam = small
        target = rasterize(g.copy(), cam, 16, 16).color
        start = random_gaussians(cam, 30, seed=2, depth_range=(2, 6))
        res = fit_gaussians(start, [(target, cam)], FitConfig(iterations=40), scene_scale=4.0)
        assert len(res.losses) == 41
        assert all(b <= a for a, b in zip(res.best_trace, res.best_trace[1:]))
        assert res.best_trace == list(np.minimum.accumulate(res.losses))
        assert res.best_trace[-1] < 0.5 * res.losses[0]
        assert res.psnr == pytest.approx(psnr(res.renders[0], target), abs=1e-9)
        np.testing.assert_allclose(np.linalg.norm(res.gaussians.rotations, axis=1), 1)

    def test_nan_target_diverges_at_step_zero(self, small):
        g, cam = small
        target = np.full((16, 16, 3), np.nan)
        with pytest.raises(DivergenceError) as err:
            fit_gaussians(g, [(target, cam)], FitConfig(iterations=3))
        assert err.value.iteration == 0

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_huge_step_reports_iteration(self, small, rng):
        g, cam = small
        fit = FitConfig(iterations=5, lr=1e308)
        with pytest.raises(DivergenceError) as err:
            fit_gaussians(g, [(rng.uniform(0, 1, (16, 16, 3)), cam)], fit)
        assert err.value.iteration >= 1

    def test_random_gaussians_in_frustum(self, square_cam):
        g = random_gaussians(square_cam, 200, seed=1)
        assert len(g) == 200
        z = g.means[:, 2]
        assert z.min() >= 1 and z.max() <= 10
        g.validate()

    def test_fit_scene_uses_context(self, plane_scene):
        scene = load_scene(plane_scene)
        cfg = RunConfig()
        cfg.fit.iterations = 3
        cfg.fit.n_gaussians = 50
        res = fit_scene(scene, cfg)
        assert len(res.renders) == len(scene.context)
        assert len(res.losses) == 4

    def test_fit_from_inference(self, plane_scene):
        scene = load_scene(plane_scene)
        cfg = RunConfig()
        cfg.fit.iterations = 1
        cfg.fit.init = "infer"
        res = fit_scene(scene, cfg)
        assert len(res.gaussians) == 8192


class TestMetrics:
    def test_identical_capped(self, rng):
        a = rng.uniform(0, 1, (16, 16, 3))
        assert psnr(a, a) == 99.0
        assert ssim(a, a) == 1.0

    def test_uniform_error(self):
        assert psnr(np.full((4, 4, 3), 0.2), np.full((4, 4, 3), 0.3)) == pytest.approx(20.0, abs=1e-6)

    def test_symmetric(self, rng):
        a, b = rng.uniform(0, 1, (2, 16, 16, 3))
        assert psnr(a, b) == psnr(b, a)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_psnr_peak(self):
        assert psnr(np.zeros((2, 2)), np.full((2, 2), 25.5), peak=255) == pytest.approx(20.0)

    def test_constant_images(self):
        expect = (2 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4)
        assert ssim(np.full((16, 16), 0.5), np.full((16, 16), 0.6)) == pytest.approx(expect, abs=1e-6)

    def test_against_direct_window_sum(self, rng):
        # oracle: explicit 2-D Gaussian window at every valid position
        a, b = rng.uniform(0, 1, (2, 13, 14))
        x = np.arange(11) - 5
        g1 = np.exp(-x * x / 4.5)
        w = np.outer(g1, g1)
        w /= w.sum()
        vals = []
        for i in range(3):
            for j in range(4):
                pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va = (w * pa * pa).sum() - ma * ma
                vb = (w * pb * pb).sum() - mb * mb
                cv = (w * pa * pb).sum() - ma * mb
                vals.append((2 * ma * mb + 1e-4) * (2 * cv + 9e-4) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4)))
        assert ssim(a, b) == pytest.approx(np.mean(vals), abs=1e-10)

    def test_grayscale_is_channel_mean(self, rng):
        a, b = rng.uniform(0, 1, (2, 16, 16, 3))
        assert ssim(a, b) == pytest.approx(ssim(a.mean(-1), b.mean(-1)), abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError, match="smaller"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))
        with pytest.raises(ValueError, match="shapes differ"):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))
        assert mse(np.zeros(3), np.ones(3)) == 1.0
