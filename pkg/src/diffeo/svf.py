"""Exponentiation of stationary velocity fields by scaling and squaring."""

import numpy as np

from .errors import InvalidFieldError
from .fields import VectorField, compose, identity_coords

DEFAULT_STEPS = 7
MAX_STEPS = 12


def exponentiate(z: VectorField, steps: int = DEFAULT_STEPS) -> VectorField:
    """Diffeomorphism obtained by flowing along ``z`` for unit time.

    The velocity is scaled by ``2**-steps`` to get a near-identity map which
    is then composed with itself ``steps`` times. Composition clamps at the
    grid boundary, so voxels within ``max|z|`` of the boundary carry the
    boundary error.
    """
    if z.kind != "velocity":
        raise InvalidFieldError(f"exponentiate expects a velocity field, got {z.kind}")
    if int(steps) != steps or not 1 <= steps <= MAX_STEPS:
        raise InvalidFieldError(f"steps must be an integer in [1, {MAX_STEPS}], got {steps}")
    if not np.all(np.isfinite(z.data)):
        raise InvalidFieldError("velocity field contains non-finite values")
    phi = VectorField(z.grid, identity_coords(z.grid.shape) + z.data / 2.0 ** steps,
                      "transformation", z.orientation)
    for _ in range(int(steps)):
        phi = compose(phi, phi)
    return phi


def exponentiate_inverse(z: VectorField, steps: int = DEFAULT_STEPS) -> VectorField:
    """``exp(-z)``, the inverse of :func:`exponentiate` up to interpolation error."""
    neg = VectorField(z.grid, -z.data, "velocity", z.orientation)
    return exponentiate(neg, steps)
