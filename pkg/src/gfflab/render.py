"""Hue rendering of planar angles into binary PPM images."""
from __future__ import annotations

import numpy as np
from matplotlib.colors import hsv_to_rgb

from .gff import GaussianSampler, VectorField
from .lattice import build_box
from .rng import make_rng

HUGE_SIDE = 4096


class RenderError(ValueError):
    pass


def memory_estimate(side: int, N: int = 2) -> int:
    """Rough peak bytes for sampling and rendering an N-component field of the given side."""
    sites = side * side
    # field planes, one transform workspace per component, grid bookkeeping, RGB image
    return int(sites * (8 * N + 16 + 8 * 3 + 3))


def angle_rgb(values: np.ndarray, components=(0, 1)) -> np.ndarray:
    """(rows, cols, N) grid -> (rows, cols, 3) uint8 image with hue = angle of the 2-subspace."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 3:
        raise RenderError("expected a (rows, cols, N) grid")
    a, b = components
    if a == b or min(a, b) < 0 or max(a, b) >= v.shape[2]:
        raise RenderError(f"invalid component pair {components} for N = {v.shape[2]}")
    hue = (np.arctan2(v[..., b], v[..., a]) + np.pi) / (2 * np.pi)
    hsv = np.stack([np.mod(hue, 1.0), np.ones_like(hue), np.ones_like(hue)], axis=-1)
    return np.round(hsv_to_rgb(hsv) * 255).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = []
    pos = 0
    while len(parts) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        parts.append(data[pos:end])
        pos = end
    if parts[0] != b"P6":
        raise RenderError("not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    pos += 1
    return np.frombuffer(data[pos:pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def render_angles(field, path, components=None, overlay=None) -> np.ndarray:
    """Render a VectorField, SpinConfig or (rows, cols, N) grid.

    N = 2 renders directly; larger N requires ``components``.  ``overlay`` is
    an optional per-site mask drawn in black.
    """
    if hasattr(field, "graph"):
        vals = field.values if hasattr(field, "values") else field.theta
        N = vals.shape[1]
        grid = field.graph.to_grid(vals)
        graph = field.graph
    else:
        grid = np.asarray(field)
        N = grid.shape[2]
        graph = None
    if components is None:
        if N != 2:
            raise RenderError(f"N = {N}: pass two components to render a 2-subspace")
        components = (0, 1)
    rgb = angle_rgb(grid, components)
    if overlay is not None:
        m = graph.to_grid(np.asarray(overlay, dtype=float)) > 0 if graph is not None else overlay
        rgb[m] = 0
    write_ppm(path, rgb)
    return rgb


def sample_for_render(side: int, mass: float, N: int, seed, huge: bool = False) -> VectorField:
    """Zero-boundary N-component field on a box of roughly the requested side."""
    if side > HUGE_SIDE and not huge:
        raise RenderError(f"side {side} > {HUGE_SIDE} needs --huge "
                          f"(about {memory_estimate(side, N) / 2 ** 30:.1f} GiB)")
    n = max(1, side // 2)
    g = build_box(n)
    vals = GaussianSampler(g, mass=mass).sample(N, make_rng(seed))
    return VectorField(g, vals, mass=mass, seed=seed if isinstance(seed, int) else None)
