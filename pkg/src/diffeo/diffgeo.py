"""Jacobian determinant and curl of transformations.

Partial derivatives use central differences inside the grid and one-sided
differences on the boundary faces, in voxel units. ``diff`` and
``diff_adjoint`` form an exact transpose pair, which the variational solver
relies on to assemble gradients.
"""

import numpy as np

from .errors import InvalidFieldError
from .fields import (
    ScalarVolume,
    VectorField,
    check_same_grid,
    to_transformation,
)


def diff(f, axis):
    """Finite-difference derivative of ``f`` along ``axis``."""
    f = np.moveaxis(np.asarray(f, dtype=np.float64), axis, 0)
    n = f.shape[0]
    if n < 2:
        raise InvalidFieldError("need at least two samples along each axis")
    out = np.empty_like(f)
    out[1:-1] = 0.5 * (f[2:] - f[:-2])
    out[0] = f[1] - f[0]
    out[-1] = f[-1] - f[-2]
    return np.moveaxis(out, 0, axis)


def diff_adjoint(g, axis):
    """Transpose of :func:`diff` applied to ``g``."""
    g = np.moveaxis(np.asarray(g, dtype=np.float64), axis, 0)
    n = g.shape[0]
    if n < 2:
        raise InvalidFieldError("need at least two samples along each axis")
    out = np.zeros_like(g)
    half = 0.5 * g[1:-1]
    # interior rows i contribute +g/2 at i+1 and -g/2 at i-1
    out[2:] += half
    out[:-2] -= half
    out[0] -= g[0]
    out[1] += g[0]
    out[-1] += g[-1]
    out[-2] -= g[-1]
    return np.moveaxis(out, 0, axis)


def jacobian_matrix(phi_data):
    """Array ``M`` of shape (3, 3, nx, ny, nz) with ``M[c, a] = d phi_c / d x_a``."""
    return np.array([[diff(phi_data[c], a) for a in range(3)] for c in range(3)])


def cofactor_matrix(M):
    """Cofactors of a stack of 3x3 matrices; ``d det(M) / d M == cof(M)``."""
    C = np.empty_like(M)
    C[0, 0] = M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1]
    C[0, 1] = M[1, 2] * M[2, 0] - M[1, 0] * M[2, 2]
    C[0, 2] = M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0]
    C[1, 0] = M[0, 2] * M[2, 1] - M[0, 1] * M[2, 2]
    C[1, 1] = M[0, 0] * M[2, 2] - M[0, 2] * M[2, 0]
    C[1, 2] = M[0, 1] * M[2, 0] - M[0, 0] * M[2, 1]
    C[2, 0] = M[0, 1] * M[1, 2] - M[0, 2] * M[1, 1]
    C[2, 1] = M[0, 2] * M[1, 0] - M[0, 0] * M[1, 2]
    C[2, 2] = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    return C


def determinant(M):
    return (M[0, 0] * (M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
            - M[0, 1] * (M[1, 0] * M[2, 2] - M[1, 2] * M[2, 0])
            + M[0, 2] * (M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0]))


def curl_from_jacobian(M):
    return np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])


def curl_array(phi_data):
    d = diff
    return np.array([
        d(phi_data[2], 1) - d(phi_data[1], 2),
        d(phi_data[0], 2) - d(phi_data[2], 0),
        d(phi_data[1], 0) - d(phi_data[0], 1),
    ])


def jacobian_determinant(phi: VectorField) -> ScalarVolume:
    """Per-voxel determinant of the Jacobian of a transformation.

    Displacement fields are converted to transformations first.
    """
    phi = to_transformation(phi)
    jd = determinant(jacobian_matrix(phi.data))
    return ScalarVolume(phi.grid, jd, "jacobian", phi.orientation)


def curl(phi: VectorField) -> VectorField:
    """Curl of a transformation or displacement.

    The identity map is curl-free, so both representations of the same
    deformation give identical results and no conversion is done.
    """
    if phi.kind not in ("transformation", "displacement"):
        raise InvalidFieldError(f"curl expects a transformation or displacement, got {phi.kind}")
    return VectorField(phi.grid, curl_array(phi.data), "curl", phi.orientation)


def negative_jacobian_fraction(jd: ScalarVolume, mask: ScalarVolume = None) -> float:
    """Share of (masked) voxels where the Jacobian determinant is <= 0."""
    if mask is None:
        sel = np.ones(jd.grid.shape, dtype=bool)
    else:
        check_same_grid(jd, mask)
        sel = mask.data != 0
    count = int(sel.sum())
    if count == 0:
        raise InvalidFieldError("mask selects no voxels; negative-Jacobian fraction undefined")
    return int(np.count_nonzero(jd.data[sel] <= 0)) / count
