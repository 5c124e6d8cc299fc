"""Voxel radiance field: trilinear queries, quadrature rendering, ray depth.

A grid cell holds a density sigma and a Lambertian RGB color. Rendering a ray
composites N samples with per-segment opacity alpha_i = 1 - exp(-sigma_i *
delta_i), transmittance T_i = prod_{j<i}(1 - alpha_j) and weights w_i =
T_i * alpha_i; color is sum(w_i c_i), expected depth sum(w_i t_i), opacity
sum(w_i). Colors are view independent so the quadrature has an exact
closed-form oracle for piecewise-constant media.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cameras import Camera, ray_directions
from .io import DepthMap, RgbImage

DIRECTION_TOL = 1e-9
EPSILON_OPACITY = 1e-3  # below this accumulated opacity a rendered depth is invalid

GRID_MAGIC = b"DFGRID01"
_DTYPE_CODES = {b"f": "<f4", b"d": "<f8"}


@dataclass
class VoxelGrid:
    """Axis-aligned density/color grid; sigma[i, j, k] pairs with color[i, j, k]."""

    sigma: np.ndarray  # (nx, ny, nz) >= 0
    color: np.ndarray  # (nx, ny, nz, 3) in [0, 1]
    bounds: np.ndarray  # (2, 3): row 0 min corner, row 1 max corner

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        self.bounds = np.asarray(self.bounds, dtype=np.float64)
        if self.sigma.ndim != 3:
            raise ValueError(f"sigma must be 3-D, got shape {self.sigma.shape}")
        if self.color.shape != self.sigma.shape + (3,):
            raise ValueError("color must have shape sigma.shape + (3,)")
        if self.bounds.shape != (2, 3):
            raise ValueError("bounds must have shape (2, 3)")
        if np.any(self.bounds[1] <= self.bounds[0]):
            raise ValueError("bounds must have positive extent on every axis")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be non-negative")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise ValueError("color channels must lie in [0, 1]")

    @property
    def resolution(self):
        return self.sigma.shape

    @property
    def cell_size(self) -> np.ndarray:
        return (self.bounds[1] - self.bounds[0]) / np.array(self.resolution)

    def cell_centers(self) -> np.ndarray:
        """World coordinates of every cell center, shape (nx, ny, nz, 3)."""
        axes = [self.bounds[0][a] + (np.arange(n) + 0.5) * self.cell_size[a]
                for a, n in enumerate(self.resolution)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    @classmethod
    def uniform(cls, resolution, bounds, sigma=0.0, color=(0.0, 0.0, 0.0)):
        nx, ny, nz = resolution
        return cls(sigma=np.full((nx, ny, nz), float(sigma)),
                   color=np.broadcast_to(np.asarray(color, dtype=np.float64),
                                         (nx, ny, nz, 3)).copy(),
                   bounds=np.asarray(bounds, dtype=np.float64))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray  # (3,)
    direction: np.ndarray  # (3,), unit length
    t_near: float
    t_far: float

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        if o.shape != (3,) or d.shape != (3,):
            raise ValueError("origin and direction must be length-3 vectors")
        if abs(np.linalg.norm(d) - 1.0) > DIRECTION_TOL:
            raise ValueError("direction must be unit length within 1e-9")
        if not 0 < self.t_near < self.t_far:
            raise ValueError("require 0 < t_near < t_far")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def point(self, t):
        return self.origin + np.multiply.outer(np.asarray(t), self.direction)


@dataclass(frozen=True)
class RaySamples:
    """Sorted quadrature nodes t_i with segment lengths delta_i along a ray."""

    t: np.ndarray  # (n,)
    delta: np.ndarray  # (n,), last entry is t_far - t_n

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        d = np.asarray(self.delta, dtype=np.float64)
        if t.ndim != 1 or t.shape != d.shape or t.size < 1:
            raise ValueError("t and delta must be equal-length 1-D arrays")
        if np.any(np.diff(t) <= 0):
            raise ValueError("sample depths must be strictly increasing")
        if np.any(d <= 0):
            raise ValueError("segment lengths must be positive")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "delta", d)

    @property
    def n_samples(self) -> int:
        return self.t.size


def sample_ray(ray: Ray, n: int, jitter: bool = False, rng_seed: int = 0) -> RaySamples:
    """Stratified samples: one node per equal bin of [t_near, t_far].

    With jitter off, nodes sit at bin midpoints; with jitter on they are drawn
    uniformly inside each bin from the seeded generator, so equal seeds yield
    equal samples.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    width = (ray.t_far - ray.t_near) / n
    offsets = (np.random.default_rng(rng_seed).uniform(size=n) if jitter
               else np.full(n, 0.5))
    t = ray.t_near + (np.arange(n) + offsets) * width
    delta = np.empty(n)
    delta[:-1] = np.diff(t)
    delta[-1] = ray.t_far - t[-1]
    return RaySamples(t=t, delta=delta)


# --- trilinear interpolation ---

_CORNERS = np.array([(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)])


def interp_corners(grid: VoxelGrid, points: np.ndarray):
    """Flat cell indices and trilinear weights of the 8 cells around each point.

    Weights are zero for points outside the grid bounds; coordinates are
    clamped to the cell-center range, so the boundary half-cell replicates
    edge values. Returns (idx, weights) with trailing axis 8.
    """
    points = np.asarray(points, dtype=np.float64)
    res = np.array(grid.resolution)
    inside = np.all((points >= grid.bounds[0]) & (points <= grid.bounds[1]), axis=-1)
    u = (points - grid.bounds[0]) / grid.cell_size - 0.5
    u = np.clip(u, 0.0, res - 1.0)
    i0 = np.minimum(u.astype(np.int64), np.maximum(res - 2, 0))
    f = u - i0
    i1 = np.minimum(i0 + 1, res - 1)

    lo_hi = np.stack([i0, i1], axis=-2)  # (..., 2, 3)
    one_f = np.stack([1.0 - f, f], axis=-2)
    corners = _CORNERS  # (8, 3)
    take = np.arange(3)
    idx3 = lo_hi[..., corners, take]  # (..., 8, 3)
    w = one_f[..., corners, take].prod(axis=-1)  # (..., 8)
    w = w * inside[..., None]
    flat = (idx3[..., 0] * res[1] + idx3[..., 1]) * res[2] + idx3[..., 2]
    return flat, w


def query(grid: VoxelGrid, point):
    """Trilinear density and color at a world point; outside bounds: (0, black).

    Accepts a single (3,) point or any (..., 3) batch.
    """
    point = np.asarray(point, dtype=np.float64)
    single = point.ndim == 1
    idx, w = interp_corners(grid, point)
    sigma = (grid.sigma.reshape(-1)[idx] * w).sum(axis=-1)
    color = (grid.color.reshape(-1, 3)[idx] * w[..., None]).sum(axis=-2)
    if single:
        return float(sigma), color
    return sigma, color


# --- compositing ---

def composite_weights(sigma, delta):
    """Quadrature weights along the trailing axis: returns (alpha, T, w).

    T[..., 0] is exactly 1 and T[..., i+1] = T[..., i] * (1 - alpha[..., i]).
    """
    alpha = -np.expm1(-sigma * delta)
    trans = np.cumprod(1.0 - alpha, axis=-1)
    ones = np.ones(alpha.shape[:-1] + (1,))
    t_full = np.concatenate([ones, trans], axis=-1)  # (..., n+1)
    return alpha, t_full, t_full[..., :-1] * alpha


@dataclass(frozen=True)
class RenderResult:
    color: np.ndarray  # (3,)
    depth: float
    opacity: float
    weights: np.ndarray  # (n,)


def render(grid: VoxelGrid, samples: RaySamples, ray: Ray) -> RenderResult:
    """Composite one ray: color, expected depth, opacity and per-sample weights."""
    sigma, color = query(grid, ray.point(samples.t))
    _, _, w = composite_weights(sigma, samples.delta)
    return RenderResult(color=w @ color, depth=float(w @ samples.t),
                        opacity=float(w.sum()), weights=w)


def render_rays(grid: VoxelGrid, origins, directions, t, delta):
    """Vectorized compositing for a batch of rays.

    origins/directions are (r, 3), t/delta (r, n). Returns (color (r, 3),
    depth (r,), opacity (r,)).
    """
    points = origins[:, None, :] + t[..., None] * directions[:, None, :]
    sigma, color = query(grid, points)
    _, _, w = composite_weights(sigma, delta)
    return (w[..., None] * color).sum(axis=1), (w * t).sum(axis=1), w.sum(axis=1)


def _stratified_t(t_near, t_far, n, count, jitter, seed):
    """Sample depths for `count` rays, shape (count, n); per-pixel seed split."""
    width = (t_far - t_near) / n
    if jitter:
        offsets = np.empty((count, n))
        for p in range(count):
            offsets[p] = np.random.default_rng(seed ^ p).uniform(size=n)
    else:
        offsets = np.full((count, n), 0.5)
    t = t_near + (np.arange(n) + offsets) * width
    delta = np.empty_like(t)
    delta[:, :-1] = np.diff(t, axis=1)
    delta[:, -1] = t_far - t[:, -1]
    return t, delta


def render_image(grid: VoxelGrid, camera: Camera, n_samples: int,
                 jitter: bool = False, seed: int = 0, *,
                 t_near: float, t_far: float, threads: int = 1):
    """Render every camera pixel; returns (RgbImage with max_i 1, DepthMap).

    Rendered depth is set to the invalid sentinel 0 wherever the accumulated
    opacity falls below EPSILON_OPACITY. The jitter generator is split per
    pixel (seed xor pixel index) so chunked and serial renders agree.
    """
    h, w = camera.height, camera.width
    dirs = ray_directions(camera).reshape(-1, 3)
    origins = np.broadcast_to(camera.translation, dirs.shape)
    t, delta = _stratified_t(t_near, t_far, n_samples, h * w, jitter, seed)

    color = np.empty((h * w, 3))
    depth = np.empty(h * w)
    opacity = np.empty(h * w)

    def run_chunk(lo, hi):
        c, d, a = render_rays(grid, dirs[lo:hi], origins[lo:hi], t[lo:hi], delta[lo:hi])
        color[lo:hi] = c
        depth[lo:hi] = d
        opacity[lo:hi] = a

    chunk = max(1, -(-h * w // max(threads, 1)))
    spans = [(lo, min(lo + chunk, h * w)) for lo in range(0, h * w, chunk)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda s: run_chunk(*s), spans))
    else:
        for span in spans:
            run_chunk(*span)

    depth[opacity < EPSILON_OPACITY] = 0.0
    image = RgbImage(np.clip(color, 0.0, 1.0).reshape(h, w, 3), max_i=1.0)
    return image, DepthMap(depth.reshape(h, w))


# --- serialization ---

def save_grid(grid: VoxelGrid, path) -> None:
    """Flat binary container; see README for the exact layout."""
    with open(path, "wb") as f:
        nx, ny, nz = grid.resolution
        f.write(GRID_MAGIC)
        f.write(struct.pack("<IIIc", nx, ny, nz, b"d"))
        f.write(struct.pack("<6d", *grid.bounds.reshape(-1)))
        f.write(grid.sigma.astype("<f8").tobytes())
        f.write(grid.color.astype("<f8").tobytes())


def load_grid(path) -> VoxelGrid:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != GRID_MAGIC:
            raise ValueError(f"{path}: not a voxel grid file (bad magic {magic!r})")
        nx, ny, nz, code = struct.unpack("<IIIc", f.read(13))
        if code not in _DTYPE_CODES:
            raise ValueError(f"{path}: unknown value dtype code {code!r}")
        dtype = np.dtype(_DTYPE_CODES[code])
        bounds = np.array(struct.unpack("<6d", f.read(48))).reshape(2, 3)
        n = nx * ny * nz
        payload = f.read((n + 3 * n) * dtype.itemsize)
        if len(payload) != (n + 3 * n) * dtype.itemsize:
            raise ValueError(f"{path}: truncated grid payload")
        values = np.frombuffer(payload, dtype=dtype)
    sigma = values[:n].reshape(nx, ny, nz).astype(np.float64)
    color = values[n:].reshape(nx, ny, nz, 3).astype(np.float64)
    return VoxelGrid(sigma=sigma, color=color, bounds=bounds)
