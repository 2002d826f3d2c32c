"""Scene bundle JSON.

Schema::

    {
      "views": [{"image": "view0.png", "intrinsics": [fx, fy, cx, cy],
                 "world_from_camera": [16 row-major floats], "near": 0.5, "far": 20.0,
                 "prior": "view0_prior.pfm"}],
      "context": [0, 2],
      "targets": [1]
    }

Relative paths resolve against the directory holding the JSON file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..encoder import PriorDepth, load_prior
from ..geometry import CameraError, CameraView
from ..imageio import read_png


class SceneError(ValueError):
    pass


@dataclass
class View:
    image_path: Path
    camera: CameraView
    prior_path: Path | None = None
    image: np.ndarray | None = None


@dataclass
class SceneBundle:
    views: list[View]
    context: list[int]
    targets: list[int]
    root: Path = field(default_factory=Path.cwd)

    def cameras(self, indices) -> list[CameraView]:
        return [self.views[i].camera for i in indices]

    def images(self, indices) -> list[np.ndarray]:
        return [self.views[i].image for i in indices]

    def prior(self, i: int, weights=None) -> PriorDepth | None:
        """Load the monocular prior of view ``i`` (``None`` when the view has none)."""
        v = self.views[i]
        if v.prior_path is None:
            return None
        cam = v.camera
        return load_prior(v.prior_path, cam.height, cam.width, cam if weights is not None else None, weights)


def _camera_from_json(entry: dict, width: int, height: int) -> CameraView:
    try:
        fx, fy, cx, cy = (float(x) for x in entry["intrinsics"])
        T = np.asarray(entry["world_from_camera"], dtype=np.float64)
        near, far = float(entry["near"]), float(entry["far"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneError(f"bad camera entry: {exc}") from exc
    if T.size != 16:
        raise SceneError(f"world_from_camera needs 16 values, got {T.size}")
    try:
        return CameraView.from_params(fx, fy, cx, cy, width, height, T.reshape(4, 4), near, far)
    except CameraError as exc:
        raise SceneError(str(exc)) from exc


def load_scene(path) -> SceneBundle:
    path = Path(path)
    if not path.exists():
        raise SceneError(f"scene file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: invalid JSON ({exc})") from exc
    root = path.parent
    views = []
    for k, entry in enumerate(data.get("views", [])):
        img_path = root / entry["image"]
        if not img_path.exists():
            raise SceneError(f"view {k}: image {img_path} does not exist")
        image = read_png(img_path)
        h, w = image.shape[:2]
        if h % 4 or w % 4:
            raise SceneError(f"view {k}: image size {w}x{h} is not divisible by 4")
        try:
            cam = _camera_from_json(entry, w, h)
        except SceneError as exc:
            raise SceneError(f"view {k}: {exc}") from exc
        prior = entry.get("prior")
        prior_path = root / prior if prior else None
        if prior_path is not None and not prior_path.exists():
            raise SceneError(f"view {k}: prior {prior_path} does not exist")
        views.append(View(img_path, cam, prior_path, image))
    if not views:
        raise SceneError(f"{path}: scene has no views")
    context = [int(i) for i in data.get("context", range(len(views)))]
    targets = [int(i) for i in data.get("targets", [])]
    for i in context + targets:
        if not 0 <= i < len(views):
            raise SceneError(f"{path}: view index {i} out of range")
    return SceneBundle(views, context, targets, root)


def scene_to_dict(scene: SceneBundle, root: Path) -> dict:
    def rel(p: Path) -> str:
        return Path(os.path.relpath(Path(p).resolve(), Path(root).resolve())).as_posix()

    views = []
    for v in scene.views:
        c = v.camera
        entry = {
            "image": rel(v.image_path),
            "intrinsics": [c.fx, c.fy, c.cx, c.cy],
            "world_from_camera": [float(x) for x in c.world_from_camera.reshape(-1)],
            "near": c.near,
            "far": c.far,
        }
        if v.prior_path is not None:
            entry["prior"] = rel(v.prior_path)
        views.append(entry)
    return {"views": views, "context": list(scene.context), "targets": list(scene.targets)}


def save_scene(scene: SceneBundle, path) -> None:
    path = Path(path)
    path.write_text(json.dumps(scene_to_dict(scene, path.parent), indent=2))


def load_camera(path) -> CameraView:
    """Standalone camera JSON: one view entry plus ``width`` and ``height``."""
    data = json.loads(Path(path).read_text())
    try:
        return _camera_from_json(data, int(data["width"]), int(data["height"]))
    except KeyError as exc:
        raise SceneError(f"{path}: camera file is missing {exc}") from exc


def save_camera(cam: CameraView, path) -> None:
    Path(path).write_text(json.dumps({
        "intrinsics": [cam.fx, cam.fy, cam.cx, cam.cy],
        "world_from_camera": [float(x) for x in cam.world_from_camera.reshape(-1)],
        "near": cam.near, "far": cam.far, "width": cam.width, "height": cam.height,
    }, indent=2))
