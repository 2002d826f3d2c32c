"""Scene IO, end-to-end inference, per-scene fitting, metrics and the CLI."""

from .fit import FitResult, fit_gaussians, fit_scene, random_gaussians
from .metrics import psnr, ssim
from .pipeline import InferResult, check_weights, init_weights, run_infer
from .scene import SceneBundle, SceneError, View, load_scene, save_scene

__all__ = [
    "FitResult", "InferResult", "SceneBundle", "SceneError", "View", "check_weights", "fit_gaussians",
    "fit_scene", "init_weights", "load_scene", "psnr", "random_gaussians", "run_infer", "save_scene", "ssim",
]
