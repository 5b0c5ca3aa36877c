"""Grid, volume and vector-field types plus sampling, warping and composition.

Arrays are indexed ``[i, j, k]`` with ``i`` along x, so flattening with
``order="F"`` gives the x-fastest order used on disk. Vector fields keep
their three components on a leading axis: ``data.shape == (3, nx, ny, nz)``.
All coordinates are in voxel units; spacing only matters for reports in mm.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import trilinear
from .errors import GridMismatchError, InvalidFieldError

SCALAR_KINDS = ("intensity", "jacobian", "label")
VECTOR_KINDS = ("transformation", "displacement", "velocity", "curl")


@dataclass(frozen=True)
class Grid3:
    nx: int
    ny: int
    nz: int
    sx: float = 1.0
    sy: float = 1.0
    sz: float = 1.0

    def __post_init__(self):
        for n in (self.nx, self.ny, self.nz):
            if int(n) != n or n < 2:
                raise InvalidFieldError(f"grid dimensions must be integers >= 2, got {self.shape}")
        for s in (self.sx, self.sy, self.sz):
            if not (np.isfinite(s) and s > 0):
                raise InvalidFieldError(f"grid spacing must be positive, got {self.spacing}")

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    @property
    def spacing(self):
        return (self.sx, self.sy, self.sz)

    @property
    def size(self):
        return self.nx * self.ny * self.nz

    @classmethod
    def from_shape(cls, shape, spacing=(1.0, 1.0, 1.0)):
        return cls(*(int(n) for n in shape), *(float(s) for s in spacing))

    def matches(self, other: "Grid3") -> bool:
        """Same dimensions and spacing (to 1e-5 relative)."""
        return self.shape == other.shape and np.allclose(
            self.spacing, other.spacing, rtol=1e-5, atol=0.0)

    def downsampled(self):
        """Grid holding every other voxel along each axis."""
        return Grid3((self.nx + 1) // 2, (self.ny + 1) // 2, (self.nz + 1) // 2,
                     2 * self.sx, 2 * self.sy, 2 * self.sz)


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    grid: Grid3
    data: np.ndarray
    kind: str = "intensity"
    orientation: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in SCALAR_KINDS:
            raise InvalidFieldError(f"unknown volume kind {self.kind!r}")
        data = np.asarray(self.data)
        if data.shape != self.grid.shape:
            raise InvalidFieldError(
                f"volume data shape {data.shape} does not match grid {self.grid.shape}")
        if self.kind == "label":
            if not np.all(np.isfinite(data)) or np.any(data < 0) or np.any(data != np.round(data)):
                raise InvalidFieldError("label volumes must hold non-negative integers")
            data = data.astype(np.int32)
        else:
            data = data.astype(np.float64)
        object.__setattr__(self, "data", data)

    def with_data(self, data, kind=None):
        return ScalarVolume(self.grid, data, kind or self.kind, self.orientation)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid3
    data: np.ndarray
    kind: str = "transformation"
    orientation: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in VECTOR_KINDS:
            raise InvalidFieldError(f"unknown field kind {self.kind!r}")
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape != (3,) + self.grid.shape:
            raise InvalidFieldError(
                f"field data shape {data.shape} does not match (3,) + {self.grid.shape}")
        object.__setattr__(self, "data", data)

    def component(self, c, kind="intensity"):
        return ScalarVolume(self.grid, self.data[c], kind)


@dataclass(frozen=True, eq=False)
class FeatureStack:
    grid: Grid3
    channels: list
    channel_names: list

    def __post_init__(self):
        if len(self.channels) != len(self.channel_names):
            raise InvalidFieldError("channel count and channel name count differ")
        for ch in self.channels:
            if not ch.grid.matches(self.grid):
                raise GridMismatchError("all channels must share the stack grid")

    def as_array(self):
        """Channels stacked on a trailing axis, shape (nx, ny, nz, C)."""
        return np.stack([ch.data.astype(np.float64) for ch in self.channels], axis=-1)


def check_same_grid(*objs):
    first = objs[0].grid
    for o in objs[1:]:
        if not first.matches(o.grid):
            raise GridMismatchError(f"grid mismatch: {first.shape} vs {o.grid.shape}")


def identity_coords(shape):
    return np.mgrid[:shape[0], :shape[1], :shape[2]].astype(np.float64)


def identity_field(grid: Grid3) -> VectorField:
    return VectorField(grid, identity_coords(grid.shape), "transformation")


def to_displacement(phi: VectorField) -> VectorField:
    if phi.kind == "displacement":
        return phi
    if phi.kind != "transformation":
        raise InvalidFieldError(f"cannot convert a {phi.kind} field to a displacement")
    return VectorField(phi.grid, phi.data - identity_coords(phi.grid.shape),
                       "displacement", phi.orientation)


def to_transformation(u: VectorField) -> VectorField:
    if u.kind == "transformation":
        return u
    if u.kind != "displacement":
        raise InvalidFieldError(f"cannot convert a {u.kind} field to a transformation")
    return VectorField(u.grid, u.data + identity_coords(u.grid.shape),
                       "transformation", u.orientation)


def interpolate(values, coords):
    """Trilinear interpolation of a 3-D array at voxel coordinates.

    ``coords`` has shape (3, ...). Points outside the array take the value of
    the nearest boundary face (clamp-to-edge). ``values`` may also carry a
    leading component axis, in which case every component is sampled.
    """
    values = np.asarray(values)
    if values.ndim == 3:
        return trilinear(values[None], coords)[0]
    return trilinear(values, coords)


def _check_finite(phi):
    if not np.all(np.isfinite(phi.data)):
        raise InvalidFieldError("transformation contains non-finite values")


def interpolate_nearest(values, coords):
    shape = values.shape
    idx = [np.clip(np.floor(coords[a] + 0.5), 0, shape[a] - 1).astype(np.intp) for a in range(3)]
    return values[tuple(idx)]


def _point(p):
    p = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise InvalidFieldError(f"sample point must be finite, got {p}")
    return p


def sample_trilinear(vol: ScalarVolume, p) -> float:
    if vol.kind == "label":
        raise InvalidFieldError("label volumes must be sampled with sample_nearest")
    p = _point(p)
    return float(interpolate(vol.data, p.reshape(3, 1))[0])


def sample_nearest(vol: ScalarVolume, p):
    p = _point(p)
    return interpolate_nearest(vol.data, p.reshape(3, 1))[0].item()


def warp(vol: ScalarVolume, phi: VectorField) -> ScalarVolume:
    """Resample ``vol`` through ``phi``: ``out(p) = vol(phi(p))``.

    Labels use nearest-neighbour lookup, every other kind is trilinear.
    """
    check_same_grid(vol, phi)
    phi = to_transformation(phi)
    _check_finite(phi)
    if vol.kind == "label":
        out = interpolate_nearest(vol.data, phi.data)
    else:
        out = interpolate(vol.data, phi.data)
    return vol.with_data(out)


def compose(outer: VectorField, inner: VectorField) -> VectorField:
    """Transformation ``p -> outer(inner(p))``."""
    check_same_grid(outer, inner)
    outer = to_transformation(outer)
    inner = to_transformation(inner)
    _check_finite(inner)
    return VectorField(outer.grid, interpolate(outer.data, inner.data),
                       "transformation", outer.orientation)
