"""Intensity registration by SSD descent over a stationary velocity field.

The moving image is warped through ``exp(z)`` and compared with the fixed
image. Each iteration takes a step along the Gaussian-smoothed gradient::

    (warped - fixed) * grad(warped) + 2 * lam_reg * D^T D z

and keeps it only if the objective ``SSD + lam_reg * mean|grad z|**2``
drops (step halving otherwise). The data term uses the usual demons-style
approximation ``dE/dz ~ dE/dphi``. Levels run coarse to fine, the velocity
being upsampled (and doubled) between levels.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .diffgeo import diff, diff_adjoint
from .errors import InvalidFieldError
from .fields import (
    Grid3,
    ScalarVolume,
    VectorField,
    check_same_grid,
    identity_coords,
    interpolate,
)
from .svf import DEFAULT_STEPS, exponentiate

log = logging.getLogger(__name__)

MIN_LEVEL_SIZE = 8


@dataclass
class RegistrationOptions:
    levels: int = 3
    iters: int = 100
    step: float = 1.0
    sigma: float = 1.5
    svf_steps: int = DEFAULT_STEPS
    reg_weight: float = 0.01
    max_halvings: int = 8
    tol: float = 1e-5
    window: int = 10

    def validate(self):
        if not 1 <= self.levels <= 5:
            raise InvalidFieldError("levels must be in [1, 5]")
        if self.iters < 1 or self.step <= 0 or self.sigma <= 0 or self.svf_steps < 1:
            raise InvalidFieldError("iters, step, sigma and svf_steps must be positive")
        if self.reg_weight < 0:
            raise InvalidFieldError("reg_weight must be >= 0")


@dataclass
class RegistrationReport:
    iterations: int = 0
    initial_ssd: float = 0.0
    final_ssd: float = 0.0
    final_value: float = 0.0
    history: list = field(default_factory=list)
    levels: list = field(default_factory=list)
    normalization: dict = field(default_factory=dict)
    converged: bool = False

    def to_dict(self):
        return asdict(self)


def normalize(data):
    mean = float(data.mean())
    std = float(data.std())
    if std == 0.0:
        std = 1.0
    return (data - mean) / std, mean, std


def downsample(data):
    """Blur then keep every other voxel; coarse voxel ``c`` sits at fine ``2c``."""
    return ndimage.gaussian_filter(data, 1.0, mode="nearest")[::2, ::2, ::2]


def upsample_velocity(z, shape):
    """Interpolate a coarse velocity onto ``shape``, doubling its values."""
    coords = identity_coords(shape) / 2.0
    return np.stack([2.0 * interpolate(z[c], coords) for c in range(3)])


def _smoothness(z):
    return float(sum(np.mean(diff(z[c], a) ** 2) for c in range(3) for a in range(3)))


def _smoothness_grad(z):
    # per-voxel gradient of sum_c,a |D_a z_c|^2
    return np.stack([2.0 * sum(diff_adjoint(diff(z[c], a), a) for a in range(3))
                     for c in range(3)])


class _Level:
    def __init__(self, moving, fixed, opts):
        self.moving = moving
        self.fixed = fixed
        self.opts = opts
        self.grid = Grid3.from_shape(moving.shape)

    def evaluate(self, z):
        zf = VectorField(self.grid, z, "velocity")
        phi = exponentiate(zf, self.opts.svf_steps)
        warped = interpolate(self.moving, phi.data)
        ssd = 0.5 * float(np.mean((warped - self.fixed) ** 2))
        return ssd + self.opts.reg_weight * _smoothness(z), warped

    def direction(self, z, warped):
        res = warped - self.fixed
        g = np.stack([res * diff(warped, a) for a in range(3)])
        if self.opts.reg_weight > 0:
            g += self.opts.reg_weight * _smoothness_grad(z)
        return np.stack([ndimage.gaussian_filter(g[c], self.opts.sigma, mode="constant")
                         for c in range(3)])


def _run_level(level, z, opts, report):
    value, warped = level.evaluate(z)
    history = [value]
    iters = 0
    converged = False
    for _ in range(opts.iters):
        d = level.direction(z, warped)
        tau = opts.step
        accepted = False
        for _ in range(opts.max_halvings + 1):
            trial = z - tau * d
            t_value, t_warped = level.evaluate(trial)
            if t_value < value:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            converged = True
            break
        z, value, warped = trial, t_value, t_warped
        history.append(value)
        iters += 1
        w = opts.window
        if len(history) > w and history[-w - 1] - history[-1] < opts.tol * history[-w - 1]:
            converged = True
            break
    report.levels.append({"shape": list(level.grid.shape), "iterations": iters,
                          "history": history, "converged": converged})
    report.iterations += iters
    return z, converged


def register(moving: ScalarVolume, fixed: ScalarVolume, opts: RegistrationOptions = None):
    """Register ``moving`` onto ``fixed``.

    Returns ``(z, phi, report)`` where ``phi = exp(z)`` and
    ``warp(moving, phi)`` approximates ``fixed``. Intensities are normalized
    to zero mean and unit variance internally; the SSD values in the report
    refer to normalized intensities at full resolution.
    """
    opts = opts or RegistrationOptions()
    opts.validate()
    check_same_grid(moving, fixed)
    if moving.kind == "label" or fixed.kind == "label":
        raise InvalidFieldError("register expects intensity volumes, not labels")
    if not (np.all(np.isfinite(moving.data)) and np.all(np.isfinite(fixed.data))):
        raise InvalidFieldError("input intensities must be finite")

    m, m_mean, m_std = normalize(moving.data)
    f, f_mean, f_std = normalize(fixed.data)
    report = RegistrationReport(normalization={
        "moving_mean": m_mean, "moving_std": m_std, "fixed_mean": f_mean, "fixed_std": f_std})

    pyramid = [(m, f)]
    while len(pyramid) < opts.levels and min(pyramid[-1][0].shape) >= 2 * MIN_LEVEL_SIZE:
        pm, pf = pyramid[-1]
        pyramid.append((downsample(pm), downsample(pf)))

    z = np.zeros((3,) + pyramid[-1][0].shape)
    converged = True
    for k in range(len(pyramid) - 1, -1, -1):
        pm, pf = pyramid[k]
        if z.shape[1:] != pm.shape:
            z = upsample_velocity(z, pm.shape)
        level = _Level(pm, pf, opts)
        z, ok = _run_level(level, z, opts, report)
        converged = converged and ok

    top = report.levels[-1]["history"]
    report.history = top
    report.final_value = top[-1]
    report.initial_ssd = 0.5 * float(np.mean((m - f) ** 2))
    zf = VectorField(moving.grid, z, "velocity", moving.orientation)
    phi = exponentiate(zf, opts.svf_steps)
    report.final_ssd = 0.5 * float(np.mean((interpolate(m, phi.data) - f) ** 2))
    report.converged = converged
    log.debug("registration: ssd %.4g -> %.4g in %d iterations",
              report.initial_ssd, report.final_ssd, report.iterations)
    return zf, phi, report
