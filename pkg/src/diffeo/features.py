"""Five-channel feature stacks (image, Jacobian determinant, curl x/y/z).

Moving subjects pair their image with the monitors of their own
transformation; the fixed image is paired with the monitors averaged over
all subjects' transformations.
"""

import json
from pathlib import Path

import numpy as np

from .average import average_monitor
from .diffgeo import curl, jacobian_determinant
from .errors import InvalidFieldError
from .fields import FeatureStack, Grid3, ScalarVolume, check_same_grid
from .nifti import read_array, write_array

CHANNEL_NAMES = ["img", "jd", "cv1", "cv2", "cv3"]


def _stack(image, jd, cv):
    channels = [image, jd] + [cv.component(c) for c in range(3)]
    return FeatureStack(image.grid, channels, list(CHANNEL_NAMES))


def moving_stack(image: ScalarVolume, phi) -> FeatureStack:
    check_same_grid(image, phi)
    return _stack(image, jacobian_determinant(phi), curl(phi))


def fixed_stack(image: ScalarVolume, phis) -> FeatureStack:
    phis = list(phis)
    if not phis:
        raise InvalidFieldError("fixed_stack needs at least one transformation")
    check_same_grid(image, *phis)
    monitor = average_monitor(phis)
    return _stack(image, monitor.f0, monitor.g0)


def sidecar_path(path):
    path = Path(path)
    name = path.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return path.with_name(name + ".json")


def export_stack(stack: FeatureStack, path):
    """Write a 4-D float32 NIfTI (nx, ny, nz, C) plus a JSON sidecar of channel names."""
    data = stack.as_array().astype(np.float32)
    write_array(path, data, stack.grid.spacing)
    meta = {"channels": list(stack.channel_names), "shape": list(data.shape)}
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def load_stack(path) -> FeatureStack:
    data, hdr = read_array(path)
    if data.ndim != 4:
        raise InvalidFieldError(f"{path}: feature stacks are 4-D, got {data.ndim}-D")
    names = json.loads(sidecar_path(path).read_text())["channels"]
    grid = Grid3.from_shape(data.shape[:3], [abs(s) or 1.0 for s in hdr["pixdim"][1:4]])
    channels = [ScalarVolume(grid, np.asarray(data[..., c], dtype=np.float64))
                for c in range(data.shape[3])]
    return FeatureStack(grid, channels, names)
