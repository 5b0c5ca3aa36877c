"""Unbiased template construction by repeated register / average / warp.

Every subject ``y_i`` starts as a candidate template. One outer iteration
registers each candidate (moving) to every member of the cohort (fixed),
averages the resulting transformations and warps the candidate by that
average. The first iteration's cohort is the subjects themselves; later
iterations run on the temporary templates, so the candidate-to-itself term
is always the identity. The loop stops once every average is within
``epsilon`` (mean voxel displacement) of the identity, and the candidate
with the smallest final deviation is returned.

With ``single_candidate`` only that subject is refined and the cohort stays
the original subjects.

Candidates are resampled from the original subject through the accumulated
composition of averages, so each template is interpolated only once.
"""

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .average import average_transformations
from .errors import InvalidFieldError
from .fields import (
    check_same_grid,
    compose,
    identity_coords,
    identity_field,
    warp,
)
from .parallel import pmap
from .registration import RegistrationOptions, register
from .varsolve import SolveOptions

log = logging.getLogger(__name__)


@dataclass
class AtlasOptions:
    epsilon: float = 0.05
    max_outer_iters: int = 5
    registration: RegistrationOptions = field(default_factory=RegistrationOptions)
    solve: SolveOptions = field(default_factory=SolveOptions)
    single_candidate: Optional[int] = None


@dataclass
class AtlasReport:
    deviations: list = field(default_factory=list)
    self_displacement: list = field(default_factory=list)
    chosen_index: int = -1
    iterations: int = 0
    converged: bool = False

    def to_dict(self):
        return asdict(self)


def mean_displacement(phi):
    u = phi.data - identity_coords(phi.grid.shape)
    return float(np.mean(np.sqrt(np.sum(u * u, axis=0))))


def _content_order(volumes):
    keys = [hashlib.sha256(v.data.tobytes()).digest() for v in volumes]
    return sorted(range(len(volumes)), key=lambda i: (keys[i], i))


def build_atlas(subjects, opts: AtlasOptions = None, labels=None, keep_fields=False):
    """Build a template from ``subjects``.

    Parameters
    ----------
    subjects : list of ScalarVolume
        At least two intensity volumes on a shared grid.
    opts : AtlasOptions
    labels : list of ScalarVolume, optional
        Segmentations aligned with ``subjects``; the chosen candidate's
        segmentation is carried through the same transformations.
    keep_fields : bool
        Also return the per-iteration average transformations.

    Returns
    -------
    atlas : ScalarVolume
    report : AtlasReport
        ``deviations[t][i]`` is the deviation of candidate ``i`` (input
        order) at outer iteration ``t``.
    extras : dict
        ``labels`` (the propagated segmentation or None), ``transform``
        (accumulated transformation of the chosen candidate) and, with
        ``keep_fields``, ``fields`` indexed ``[t][i]``.
    """
    opts = opts or AtlasOptions()
    subjects = list(subjects)
    if len(subjects) < 2:
        raise InvalidFieldError("atlas construction needs at least two subjects")
    check_same_grid(*subjects)
    if labels is not None:
        if len(labels) != len(subjects):
            raise InvalidFieldError("need one label volume per subject")
        check_same_grid(subjects[0], *labels)
    if opts.epsilon <= 0 or opts.max_outer_iters < 1:
        raise InvalidFieldError("epsilon and max_outer_iters must be positive")

    order = _content_order(subjects)
    if opts.single_candidate is not None:
        if not 0 <= opts.single_candidate < len(subjects):
            raise InvalidFieldError("single_candidate out of range")
        candidates = [opts.single_candidate]
    else:
        candidates = list(order)

    grid = subjects[0].grid
    transforms = {i: identity_field(grid) for i in candidates}
    templates = {i: subjects[i] for i in candidates}
    report = AtlasReport()
    kept = []

    full = opts.single_candidate is None
    for t in range(opts.max_outer_iters):
        cohort = templates if full else dict(enumerate(subjects))
        pairs = [(i, j) for i in candidates for j in order]
        results = pmap(lambda ij: register(templates[ij[0]], cohort[ij[1]],
                                           opts.registration)[1], pairs)
        by_pair = dict(zip(pairs, results))
        devs = {}
        self_disp = {}
        averages = {}
        for i in candidates:
            phis = [by_pair[(i, j)] for j in order]
            averages[i], _ = average_transformations(phis, opts.solve)
            devs[i] = mean_displacement(averages[i])
            self_disp[i] = mean_displacement(by_pair[(i, i)])
        # templates change only after every candidate has seen the same cohort
        templates = dict(templates)
        for i in candidates:
            transforms[i] = compose(transforms[i], averages[i])
            templates[i] = warp(subjects[i], transforms[i])
        report.deviations.append([devs.get(i) for i in range(len(subjects))])
        report.self_displacement.append([self_disp.get(i) for i in range(len(subjects))])
        report.iterations = t + 1
        if keep_fields:
            kept.append([averages.get(i) for i in range(len(subjects))])
        worst = max(devs.values())
        log.info("atlas iteration %d: max deviation %.4g", t + 1, worst)
        if worst < opts.epsilon:
            report.converged = True
            break

    last = report.deviations[-1]
    best = min(candidates, key=lambda i: (last[i], order.index(i)))
    report.chosen_index = best
    atlas = templates[best]
    atlas_labels = warp(labels[best], transforms[best]) if labels is not None else None
    extras = {"labels": atlas_labels, "transform": transforms[best]}
    if keep_fields:
        extras["fields"] = kept
    return atlas, report, extras
