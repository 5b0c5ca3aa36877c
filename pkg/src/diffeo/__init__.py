"""Diffeomorphic deformation-field toolkit.

Jacobian determinant and curl extraction, reconstruction of transformations
from prescribed Jacobian/curl monitors, stationary-velocity registration,
transformation averaging, atlas construction, feature export and metrics.
"""

from .atlas import AtlasOptions, AtlasReport, build_atlas
from .average import average_monitor, average_transformations
from .diffgeo import curl, jacobian_determinant, negative_jacobian_fraction
from .errors import DiffeoError, GridMismatchError, InvalidFieldError, NiftiError
from .features import export_stack, fixed_stack, moving_stack
from .fields import (
    FeatureStack,
    Grid3,
    ScalarVolume,
    VectorField,
    compose,
    identity_field,
    sample_nearest,
    sample_trilinear,
    to_displacement,
    to_transformation,
    warp,
)
from .metrics import dice, dice_multilabel, ssd_value
from .nifti import read_field, read_volume, write_field, write_volume
from .registration import RegistrationOptions, register
from .svf import exponentiate, exponentiate_inverse
from .varsolve import MonitorPair, SolveOptions, SolveReport, reconstruct

__version__ = "0.1.0"

__all__ = [
    "AtlasOptions", "AtlasReport", "build_atlas",
    "average_monitor", "average_transformations",
    "curl", "jacobian_determinant", "negative_jacobian_fraction",
    "DiffeoError", "GridMismatchError", "InvalidFieldError", "NiftiError",
    "export_stack", "fixed_stack", "moving_stack",
    "FeatureStack", "Grid3", "ScalarVolume", "VectorField", "compose", "identity_field",
    "sample_nearest", "sample_trilinear", "to_displacement", "to_transformation", "warp",
    "dice", "dice_multilabel", "ssd_value",
    "read_field", "read_volume", "write_field", "write_volume",
    "RegistrationOptions", "register",
    "exponentiate", "exponentiate_inverse",
    "MonitorPair", "SolveOptions", "SolveReport", "reconstruct",
]
