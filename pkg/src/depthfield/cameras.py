"""Pinhole cameras and per-pixel ray generation.

Pixel (u, v) maps through the inverse intrinsics to the camera-space
direction ((u - cx) / fx, (v - cy) / fy, 1), which is normalized and rotated
into world space; the ray origin is the camera center. The camera looks down
its +z axis and rays are indexed by integer pixel coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # (3, 3) camera-to-world
    translation: np.ndarray  # (3,) camera center in world coordinates

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be positive")
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation length 3")
        if np.abs(r @ r.T - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise ValueError("rotation must be orthonormal within 1e-9")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation must be proper (det +1)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def n_pixels(self) -> int:
        return self.width * self.height


def ray_directions(camera: Camera) -> np.ndarray:
    """Unit world-space ray direction for every pixel, shape (height, width, 3)."""
    u = np.arange(camera.width, dtype=np.float64)
    v = np.arange(camera.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    dirs = np.stack([(uu - camera.cx) / camera.fx,
                     (vv - camera.cy) / camera.fy,
                     np.ones_like(uu)], axis=-1)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return dirs @ camera.rotation.T


def camera_to_json_dict(camera: Camera) -> dict:
    return {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height,
        "rotation": camera.rotation.tolist(),
        "translation": camera.translation.tolist(),
    }


def camera_from_json_dict(doc: dict) -> Camera:
    return Camera(
        fx=float(doc["fx"]), fy=float(doc["fy"]),
        cx=float(doc["cx"]), cy=float(doc["cy"]),
        width=int(doc["width"]), height=int(doc["height"]),
        rotation=np.asarray(doc["rotation"], dtype=np.float64),
        translation=np.asarray(doc["translation"], dtype=np.float64),
    )


def save_cameras(cameras, path, t_near: float, t_far: float) -> None:
    """Write the shared cameras.json: ray bounds plus per-camera parameters."""
    doc = {"near": t_near, "far": t_far,
           "cameras": [camera_to_json_dict(c) for c in cameras]}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_cameras(path):
    """Read cameras.json; returns (cameras, t_near, t_far)."""
    with open(path) as f:
        doc = json.load(f)
    cameras = [camera_from_json_dict(c) for c in doc["cameras"]]
    return cameras, float(doc["near"]), float(doc["far"])


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world rotation with +z toward target from eye."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    n = np.linalg.norm(right)
    if n < 1e-12:
        raise ValueError("up direction is parallel to the viewing direction")
    right /= n
    down = np.cross(fwd, right)
    # columns map camera axes (x right, y down, z forward) to world
    return np.stack([right, down, fwd], axis=1)


def orbit_cameras(n: int, radius: float, target=(0.0, 0.0, 0.0), height: float = 0.0,
                  width: int = 64, image_height: int = 64, focal: float = None,
                  arc: float = 2.0 * np.pi):
    """Cameras spaced along a horizontal arc, all looking at the target."""
    if n < 1:
        raise ValueError("need at least one camera")
    if focal is None:
        focal = 1.2 * max(width, image_height)
    target = np.asarray(target, dtype=np.float64)
    cams = []
    for i in range(n):
        ang = arc * i / n
        eye = target + np.array([radius * np.sin(ang), height, -radius * np.cos(ang)])
        cams.append(Camera(
            fx=focal, fy=focal, cx=(width - 1) / 2.0, cy=(image_height - 1) / 2.0,
            width=width, height=image_height,
            rotation=look_at(eye, target), translation=eye,
        ))
    return cams
