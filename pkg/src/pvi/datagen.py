"""Synthetic surface samplers standing in for scanned/CAD point clouds.

Each generator draws points on an analytic surface with a seeded RNG; the
result is quantized to the requested lattice depth. Shape parameters are
drawn from the same seed so a dataset of varied geometry is reproducible from
a single integer.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .geometry import PointSet, RawPointSet, quantize

SHAPES = ("sphere", "torus", "cube", "plane-union")


def _rotation(rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return q


def sample_sphere(n: int, rng: np.random.Generator, radius: float = 0.5) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius


def sample_torus(n: int, rng: np.random.Generator, big: float = 0.35,
                 small: float = 0.15) -> np.ndarray:
    pts = np.empty((0, 3))
    while len(pts) < n:
        m = 2 * (n - len(pts)) + 16
        u = rng.uniform(0, 2 * np.pi, m)
        t = rng.uniform(0, 2 * np.pi, m)
        # Area element is proportional to big + small*cos(t): rejection-sample
        # so the tube is covered uniformly rather than bunching inside.
        accept = rng.uniform(0, big + small, m) < (big + small * np.cos(t))
        u, t = u[accept], t[accept]
        ring = big + small * np.cos(t)
        batch = np.stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(t)], axis=1)
        pts = np.vstack([pts, batch])
    return pts[:n]


def sample_cube(n: int, rng: np.random.Generator, half: float = 0.5) -> np.ndarray:
    face = rng.integers(0, 6, n)
    uv = rng.uniform(-half, half, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -half, half)
    for a in range(3):
        sel = axis == a
        others = [b for b in range(3) if b != a]
        pts[sel, a] = sign[sel]
        pts[sel, others[0]] = uv[sel, 0]
        pts[sel, others[1]] = uv[sel, 1]
    return pts


def sample_plane_union(n: int, rng: np.random.Generator, half: float = 0.5) -> np.ndarray:
    """Three mutually orthogonal squares through the origin."""
    plane = rng.integers(0, 3, n)
    uv = rng.uniform(-half, half, size=(n, 2))
    pts = np.zeros((n, 3))
    for a in range(3):
        sel = plane == a
        others = [b for b in range(3) if b != a]
        pts[sel, others[0]] = uv[sel, 0]
        pts[sel, others[1]] = uv[sel, 1]
    return pts


def generate_cloud(shape: str, n_points: int, bit_depth: int, seed: int,
                   vary: bool = False) -> PointSet:
    """Sample a surface and quantize it. With vary=True the shape parameters
    and orientation are themselves drawn from the seed."""
    if shape not in SHAPES:
        raise DataError(f"unknown shape {shape!r}; choose from {SHAPES}")
    if n_points < 1:
        raise DataError("need at least one point")
    rng = np.random.default_rng(seed)
    if shape == "sphere":
        radius = rng.uniform(0.35, 0.5) if vary else 0.5
        pts = sample_sphere(n_points, rng, radius)
    elif shape == "torus":
        big = rng.uniform(0.28, 0.4) if vary else 0.35
        small = rng.uniform(0.1, 0.2) if vary else 0.15
        pts = sample_torus(n_points, rng, big, small)
    elif shape == "cube":
        pts = sample_cube(n_points, rng)
    else:
        pts = sample_plane_union(n_points, rng)
    if vary:
        pts = pts @ _rotation(rng).T
        pts = pts + rng.uniform(-0.05, 0.05, size=3)
    return quantize(RawPointSet(pts), bit_depth)


def dataset(count: int, n_points: int, bit_depth: int, seed: int) -> list[PointSet]:
    """A reproducible mixed-shape dataset cycling through all generators."""
    return [generate_cloud(SHAPES[i % len(SHAPES)], n_points, bit_depth,
                           seed * 100003 + i, vary=True) for i in range(count)]
