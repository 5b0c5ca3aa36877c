"""Reconstruct a transformation from a prescribed Jacobian determinant and curl.

The unknown is the displacement ``u`` of ``phi = id + u``. The discretized
objective is::

    E(u) = 1/2 * mean( (J(phi) - f0)**2 + lam * |curl(phi) - g0|**2 )

with ``J`` and ``curl`` built from the stencils in :mod:`diffeo.diffgeo`.
Its exact gradient applies the transposed stencils to the residuals; the
Jacobian residual is weighted by the cofactor matrix of ``grad phi``.
Minimization is steepest descent with Gaussian-smoothed gradients, a
backtracking line search and ``u`` fixed to zero on the boundary faces.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .diffgeo import (
    cofactor_matrix,
    curl_from_jacobian,
    determinant,
    diff_adjoint,
    jacobian_matrix,
)
from .errors import InvalidFieldError
from .fields import ScalarVolume, VectorField, check_same_grid, identity_coords

log = logging.getLogger(__name__)

MEAN_JD_RANGE = (0.2, 5.0)


@dataclass(frozen=True, eq=False)
class MonitorPair:
    """Prescribed Jacobian determinant ``f0`` and curl ``g0``."""

    f0: ScalarVolume
    g0: VectorField

    def __post_init__(self):
        check_same_grid(self.f0, self.g0)
        if not (np.all(np.isfinite(self.f0.data)) and np.all(np.isfinite(self.g0.data))):
            raise InvalidFieldError("monitor functions must be finite")
        if np.any(self.f0.data <= 0):
            raise InvalidFieldError("prescribed Jacobian determinant must be positive everywhere")
        mean = float(self.f0.data.mean())
        if not MEAN_JD_RANGE[0] <= mean <= MEAN_JD_RANGE[1]:
            log.warning("mean prescribed Jacobian %.3g is far from 1; the monitor pair "
                        "is probably not realizable on a fixed domain", mean)

    @property
    def grid(self):
        return self.f0.grid


@dataclass
class SolveOptions:
    max_iters: int = 500
    step: float = 0.5
    sigma: float = 1.0
    tol: float = 1e-6
    abs_tol: float = 1e-8
    window: int = 10
    curl_weight: float = 1.0
    max_halvings: int = 20
    growth: float = 1.5
    max_step_factor: float = 16.0


@dataclass
class SolveReport:
    iterations: int = 0
    final_value: float = 0.0
    history: list = field(default_factory=list)
    converged: bool = False
    reason: str = ""

    def to_dict(self):
        return asdict(self)


def _residuals(u, monitor):
    # grad(id + u) = I + grad(u); the stencils are exact on the identity
    M = jacobian_matrix(u)
    for c in range(3):
        M[c, c] += 1.0
    rj = determinant(M) - monitor.f0.data
    rc = curl_from_jacobian(M) - monitor.g0.data
    return M, rj, rc


def objective(u, monitor: MonitorPair, curl_weight=1.0):
    """Value of the discretized functional for displacement array ``u``."""
    _, rj, rc = _residuals(u, monitor)
    return 0.5 * float(np.mean(rj ** 2) + curl_weight * np.mean(np.sum(rc ** 2, axis=0)))


def objective_and_gradient(u, monitor: MonitorPair, curl_weight=1.0):
    """Functional value and its exact gradient with respect to every entry of ``u``."""
    M, rj, rc = _residuals(u, monitor)
    nv = rj.size
    value = 0.5 * float(np.mean(rj ** 2) + curl_weight * np.mean(np.sum(rc ** 2, axis=0)))

    cof = cofactor_matrix(M)
    grad = np.zeros_like(u)
    for c in range(3):
        for a in range(3):
            grad[c] += diff_adjoint(rj * cof[c, a], a)
    w = curl_weight
    # curl = (d_y p3 - d_z p2, d_z p1 - d_x p3, d_x p2 - d_y p1)
    grad[2] += w * diff_adjoint(rc[0], 1)
    grad[1] -= w * diff_adjoint(rc[0], 2)
    grad[0] += w * diff_adjoint(rc[1], 2)
    grad[2] -= w * diff_adjoint(rc[1], 0)
    grad[1] += w * diff_adjoint(rc[2], 0)
    grad[0] -= w * diff_adjoint(rc[2], 1)
    return value, grad / nv


def _interior_mask(shape):
    m = np.zeros(shape, dtype=bool)
    m[1:-1, 1:-1, 1:-1] = True
    return m


def reconstruct(monitor: MonitorPair, opts: SolveOptions = None, init: VectorField = None):
    """Find ``phi`` whose Jacobian determinant and curl match ``monitor``.

    Returns ``(phi, report)``. Running out of iterations is not an error:
    the best iterate is returned with ``report.converged`` set to False.
    """
    opts = opts or SolveOptions()
    grid = monitor.grid
    shape = grid.shape
    interior = _interior_mask(shape)
    nv = grid.size
    lam = opts.curl_weight

    u = np.zeros((3,) + shape)
    if init is not None:
        check_same_grid(monitor.f0, init)
        u = (init.data - identity_coords(shape)) if init.kind == "transformation" else init.data.copy()
        u[:, ~interior] = 0.0

    value, grad = objective_and_gradient(u, monitor, lam)
    report = SolveReport(final_value=value, history=[value])
    if value <= opts.abs_tol:
        report.converged, report.reason = True, "initial value below tolerance"
        return _as_field(u, monitor), report

    tau = opts.step
    for it in range(1, opts.max_iters + 1):
        # per-voxel scaling keeps the step size independent of grid size
        d = grad * nv
        # mask before and after smoothing so the preconditioner stays symmetric
        d[:, ~interior] = 0.0
        if opts.sigma > 0:
            d = np.stack([ndimage.gaussian_filter(d[c], opts.sigma, mode="constant")
                          for c in range(3)])
        d[:, ~interior] = 0.0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            trial = u - tau * d
            trial_value = objective(trial, monitor, lam)
            if trial_value < value:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            report.converged, report.reason = True, "line search found no decrease"
            break
        u = trial
        tau = min(tau * opts.growth, opts.step * opts.max_step_factor)
        value, grad = objective_and_gradient(u, monitor, lam)
        report.history.append(value)
        report.iterations = it
        if value <= opts.abs_tol:
            report.converged, report.reason = True, "value below absolute tolerance"
            break
        h = report.history
        if len(h) > opts.window and (h[-opts.window - 1] - h[-1]) < opts.tol * h[-opts.window - 1]:
            report.converged, report.reason = True, "relative decrease below tolerance"
            break
    else:
        report.reason = "max_iters reached"
    report.final_value = value
    return _as_field(u, monitor), report


def _as_field(u, monitor):
    return VectorField(monitor.grid, identity_coords(monitor.grid.shape) + u,
                       "transformation", monitor.f0.orientation)


def measure_monitor(phi: VectorField) -> MonitorPair:
    from .diffgeo import curl, jacobian_determinant
    return MonitorPair(jacobian_determinant(phi), curl(phi))
