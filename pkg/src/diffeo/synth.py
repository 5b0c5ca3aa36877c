"""Deterministic synthetic inputs: velocities, phantoms, masks and translations.

Recipes
-------
svf
    Independent standard normal noise per component, Gaussian-smoothed with
    ``sigma`` voxels (default 4), then rescaled so the largest absolute
    component equals ``amplitude``. An optional ``taper`` multiplies by a
    smooth window that vanishes on the grid boundary.
phantom
    Head-like ellipsoid (bright) with a darker cortical rim, two dark
    ventricles and a few seeded inner blobs, all with smooth (logistic)
    edges of width ~1 voxel.
ball-mask
    Label 1 inside the sphere ``|p - center| <= radius``, 0 elsewhere.
translation
    Transformation ``p -> p + c`` with a constant vector ``c``.
"""

import numpy as np
from scipy import ndimage

from .errors import InvalidFieldError
from .fields import Grid3, ScalarVolume, VectorField, identity_coords

KINDS = ("svf", "phantom", "ball-mask", "translation")


def _center(grid):
    return np.array([(n - 1) / 2.0 for n in grid.shape])


def boundary_window(grid: Grid3, width: float = 4.0):
    """Product of per-axis ramps: 0 on the boundary faces, 1 deeper than ``width``."""
    w = np.ones(grid.shape)
    for a, n in enumerate(grid.shape):
        i = np.arange(n, dtype=np.float64)
        d = np.minimum(i, n - 1 - i) / width
        ramp = np.where(d >= 1.0, 1.0, np.sin(0.5 * np.pi * np.clip(d, 0, 1)) ** 2)
        shape = [1, 1, 1]
        shape[a] = n
        w = w * ramp.reshape(shape)
    return w


def smooth_velocity(grid: Grid3, amplitude: float, seed: int = 0, sigma: float = 4.0,
                    taper: float = 0.0) -> VectorField:
    if amplitude < 0 or sigma <= 0:
        raise InvalidFieldError("amplitude must be >= 0 and sigma > 0")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((3,) + grid.shape)
    z = np.stack([ndimage.gaussian_filter(noise[c], sigma, mode="reflect") for c in range(3)])
    if taper > 0:
        z *= boundary_window(grid, taper)
    peak = np.abs(z).max()
    if peak > 0:
        z *= amplitude / peak
    return VectorField(grid, z, "velocity")


def _logistic_inside(rho, width):
    # 1 inside rho < 1, 0 outside, smooth edge
    return 0.5 * (1.0 - np.tanh((rho - 1.0) / width))


def phantom(grid: Grid3, seed: int = 0) -> ScalarVolume:
    c = _center(grid)
    p = identity_coords(grid.shape)
    half = np.array(grid.shape, dtype=np.float64) / 2.0
    q = (p - c[:, None, None, None]) / half[:, None, None, None]
    edge = 1.0 / half.min()

    def ellipsoid(center, radii):
        r = np.sqrt(sum(((q[a] - center[a]) / radii[a]) ** 2 for a in range(3)))
        return _logistic_inside(r, edge / min(radii))

    head = ellipsoid((0, 0, 0), (0.8, 0.88, 0.72))
    inner = ellipsoid((0, 0, 0), (0.66, 0.74, 0.58))
    img = 0.55 * head + 0.45 * inner
    for sx in (-0.16, 0.16):
        img -= 0.6 * ellipsoid((sx, 0.02, 0.0), (0.1, 0.26, 0.16))
    rng = np.random.default_rng(seed)
    for _ in range(4):
        ctr = rng.uniform(-0.35, 0.35, 3)
        rad = rng.uniform(0.08, 0.16, 3)
        img += rng.uniform(-0.3, 0.3) * ellipsoid(ctr, rad)
    return ScalarVolume(grid, np.clip(img, 0.0, None), "intensity")


def ball_mask(grid: Grid3, radius: float, center=None) -> ScalarVolume:
    if radius <= 0:
        raise InvalidFieldError("radius must be positive")
    c = _center(grid) if center is None else np.asarray(center, dtype=np.float64)
    p = identity_coords(grid.shape)
    r2 = sum((p[a] - c[a]) ** 2 for a in range(3))
    return ScalarVolume(grid, (r2 <= radius * radius).astype(np.int32), "label")


def translation(grid: Grid3, shift) -> VectorField:
    shift = np.asarray(shift, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(shift)):
        raise InvalidFieldError("translation must be finite")
    return VectorField(grid, identity_coords(grid.shape) + shift[:, None, None, None],
                       "transformation")


def synth(kind: str, grid: Grid3, amplitude: float = 1.0, seed: int = 0, **kw):
    """Dispatch on ``kind``; see the module docstring for the recipes."""
    if kind == "svf":
        return smooth_velocity(grid, amplitude, seed, sigma=kw.get("sigma", 4.0),
                               taper=kw.get("taper", 0.0))
    if kind == "phantom":
        return phantom(grid, seed)
    if kind == "ball-mask":
        radius = kw.get("radius") or min(grid.shape) / 4.0
        return ball_mask(grid, radius, kw.get("center"))
    if kind == "translation":
        return translation(grid, kw.get("shift", (amplitude, 0.0, 0.0)))
    raise InvalidFieldError(f"unknown synth kind {kind!r}; expected one of {KINDS}")
