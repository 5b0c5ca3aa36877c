"""Average of transformations through their Jacobian determinants and curls.

The average of ``phi_1 .. phi_N`` is the transformation reconstructed from
the mean Jacobian determinant and the mean curl of the inputs. Translations
have the same monitors as the identity, so translation content is invisible
to this average; inputs should be roughly centred beforehand.
"""

import hashlib

import numpy as np

from .diffgeo import curl, jacobian_determinant
from .errors import InvalidFieldError
from .fields import ScalarVolume, VectorField, check_same_grid
from .parallel import pmap
from .varsolve import MonitorPair, SolveOptions, reconstruct


def _monitors(phi):
    return jacobian_determinant(phi).data, curl(phi).data


def average_monitor(phis) -> MonitorPair:
    phis = list(phis)
    if not phis:
        raise InvalidFieldError("cannot average an empty list of transformations")
    check_same_grid(*phis)
    parts = pmap(_monitors, phis)
    # sum in a fixed order that does not depend on how the list was given
    order = sorted(range(len(parts)), key=lambda i: _sort_key(phis[i]))
    # accumulate offsets from a reference member: equal inputs average exactly
    ref_f, ref_g = parts[order[0]]
    df = np.zeros_like(ref_f)
    dg = np.zeros_like(ref_g)
    for i in order[1:]:
        df += parts[i][0] - ref_f
        dg += parts[i][1] - ref_g
    n = len(phis)
    grid = phis[0].grid
    return MonitorPair(ScalarVolume(grid, ref_f + df / n, "jacobian"),
                       VectorField(grid, ref_g + dg / n, "curl"))


def _sort_key(phi):
    # content-based key so that input permutations sum identically
    return hashlib.sha256(phi.data.tobytes()).digest()


def average_transformations(phis, opts: SolveOptions = None):
    """Return ``(phi_avg, report)`` for a list of transformations."""
    return reconstruct(average_monitor(phis), opts)
