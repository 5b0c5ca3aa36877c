"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line with the measured quantities and
the wall time against its budget; the lines are printed in the pytest
summary under "acceptance criteria".
"""

import time

import numpy as np

from cases import (
    atlas_cohort,
    margin_for,
    recovered_shift,
    registration_case,
    relative_l2,
    roundtrip_truth,
    texture,
)
from conftest import smooth_random_field
from diffeo.atlas import AtlasOptions, build_atlas
from diffeo.average import average_transformations
from diffeo.cli import run
from diffeo.diffgeo import curl, jacobian_determinant, negative_jacobian_fraction
from diffeo.fields import (
    Grid3,
    ScalarVolume,
    VectorField,
    compose,
    identity_coords,
    identity_field,
    warp,
)
from diffeo.metrics import dice, dice_multilabel
from diffeo.nifti import read_field, read_volume, write_field, write_volume
from diffeo.registration import RegistrationOptions, register
from diffeo.svf import exponentiate, exponentiate_inverse
from diffeo.synth import smooth_velocity, translation
from diffeo.varsolve import (
    SolveOptions,
    measure_monitor,
    objective,
    objective_and_gradient,
    reconstruct,
)
from oracles import curl_oracle, dice_oracle, jacobian_det_oracle
from test_nifti import fuzz_outcomes


class Clock:
    def __init__(self):
        self.start = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.start


def record(log, number, title, checks, clock, budget):
    """Log one criterion and fail the test if any check or the budget is missed.

    ``checks`` maps a short description to ``(passed, measured)``; a
    ``budget`` of None reports the runtime without bounding it.
    """
    elapsed = clock.elapsed
    checks = dict(checks)
    if budget is None:
        checks["runtime"] = (True, f"{elapsed:.1f} s")
    else:
        checks[f"runtime < {budget:g} s"] = (elapsed < budget, f"{elapsed:.1f} s")
    passed = all(ok for ok, _ in checks.values())
    detail = "; ".join(f"{name}: {measured}" for name, (ok, measured) in checks.items())
    line = f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}  [{detail}]"
    log.append(line)
    print(line)
    failed = [name for name, (ok, _) in checks.items() if not ok]
    assert not failed, line


def non_increasing(seq, tol=0.0):
    return all(b <= a + tol for a, b in zip(seq, seq[1:]))


def test_01_analytic_differential_geometry(acceptance_log):
    clock = Clock()
    grid = Grid3(32, 32, 32)
    A = np.diag([1.2, 0.9, 1.1])
    A[1, 0], A[0, 1] = 0.1, -0.1
    b = np.array([0.5, -1.0, 2.0])
    x = identity_coords(grid.shape)
    phi = VectorField(grid, np.einsum("ab,b...->a...", A, x) + b[:, None, None, None],
                      "transformation")
    inner = (slice(1, -1),) * 3
    jd = jacobian_determinant(phi).data[inner]
    cv = curl(phi).data[(slice(None),) + inner]
    det = float(np.linalg.det(A))
    jd_err = float(np.abs(jd - det).max())
    cv_err = float(np.abs(cv - np.array([0.0, 0.0, 0.2])[:, None, None, None]).max())
    record(acceptance_log, 1, "analytic JD and curl of an affine map", {
        f"|JD - det A| <= 1e-10 (det A = {det:.6g})": (jd_err <= 1e-10, f"{jd_err:.1e}"),
        "|curl - (0,0,0.2)| <= 1e-10": (cv_err <= 1e-10, f"{cv_err:.1e}"),
    }, clock, 1.0)


def test_02_diffgeo_oracle(acceptance_log):
    clock = Clock()
    grid = Grid3(8, 8, 8)
    jd_err = cv_err = 0.0
    for seed in range(100):
        data = smooth_random_field(grid.shape, 1000 + seed, amplitude=0.6)
        phi = VectorField(grid, data, "transformation")
        jd_err = max(jd_err, float(np.abs(jacobian_determinant(phi).data
                                          - jacobian_det_oracle(data)).max()))
        cv_err = max(cv_err, float(np.abs(curl(phi).data - curl_oracle(data)).max()))
    record(acceptance_log, 2, "JD/curl vs loop oracles on 100 random 8^3 fields", {
        "max JD error <= 1e-12": (jd_err <= 1e-12, f"{jd_err:.1e}"),
        "max curl error <= 1e-12": (cv_err <= 1e-12, f"{cv_err:.1e}"),
    }, clock, 5.0)


def test_03_svf(acceptance_log):
    clock = Clock()
    grid = Grid3(32, 32, 32)
    zero = exponentiate(VectorField(grid, np.zeros((3,) + grid.shape), "velocity"))
    exact_identity = bool(np.array_equal(zero.data, identity_field(grid).data))
    worst_rt = 0.0
    worst_neg = 0.0
    for amp in (0.5, 1.0, 1.5, 2.0):
        for seed in range(3):
            z = smooth_velocity(grid, amp, seed=seed)
            fwd, inv = exponentiate(z), exponentiate_inverse(z)
            m = margin_for(amp)
            box = (slice(None),) + (slice(m, -m),) * 3
            err = np.abs(compose(fwd, inv).data - identity_coords(grid.shape))[box].max()
            worst_rt = max(worst_rt, float(err))
            for phi in (fwd, inv):
                worst_neg = max(worst_neg, negative_jacobian_fraction(jacobian_determinant(phi)))
    record(acceptance_log, 3, "SVF exponentiation (12 velocities, max|z| <= 2, 32^3)", {
        "exp(0) == id exactly": (exact_identity, str(exact_identity)),
        "interior |exp(z)o exp(-z) - id| <= 0.1": (worst_rt <= 0.1, f"{worst_rt:.3g}"),
        "negative-JD fraction == 0": (worst_neg == 0.0, f"{worst_neg:g}"),
    }, clock, 10.0)


def test_04_varsolve_roundtrip(acceptance_log):
    clock = Clock()
    _, _, monitor = roundtrip_truth(n=32, amplitude=1.5, seed=7)
    phi, report = reconstruct(monitor)
    f0, g0 = monitor.f0.data, monitor.g0.data
    rj = relative_l2(jacobian_determinant(phi).data, f0, f0 - 1.0)
    rc = relative_l2(curl(phi).data, g0, g0)
    mono = non_increasing(report.history)
    record(acceptance_log, 4, f"varsolve round trip on 32^3 ({report.iterations} iterations)", {
        "rel L2 JD residual <= 5e-2": (rj <= 5e-2, f"{rj:.2e}"),
        "rel L2 curl residual <= 5e-2": (rc <= 5e-2, f"{rc:.2e}"),
        "history non-increasing": (mono, str(mono)),
    }, clock, 180.0)


def test_05_varsolve_gradient_check(acceptance_log):
    clock = Clock()
    grid = Grid3(12, 12, 12)
    rng = np.random.default_rng(0)
    target = VectorField(grid, smooth_random_field(grid.shape, 500, amplitude=0.8),
                         "transformation")
    monitor = measure_monitor(target)
    u = smooth_random_field(grid.shape, 501, amplitude=0.4) - identity_coords(grid.shape)
    _, g = objective_and_gradient(u, monitor)
    worst = 0.0
    for _ in range(20):
        d = rng.standard_normal(u.shape)
        h = 1e-5
        fd = (objective(u + h * d, monitor) - objective(u - h * d, monitor)) / (2 * h)
        worst = max(worst, abs(fd - float(np.sum(g * d))) / abs(fd))
    record(acceptance_log, 5, "varsolve gradient vs central differences (20 directions, 12^3)", {
        "max relative error <= 1e-4": (worst <= 1e-4, f"{worst:.1e}"),
    }, clock, 30.0)


def test_06_registration_recovery(acceptance_log):
    clock = Clock()
    fixed, moving, ball, moving_ball = registration_case(n=64)
    z_self, _, _ = register(fixed, fixed)
    self_max = float(np.abs(z_self.data).max())
    _, phi, rep = register(moving, fixed)
    reduction = 1.0 - rep.final_ssd / rep.initial_ssd
    d = dice(warp(moving_ball, phi), ball)
    tex = texture(n=32)
    shift = np.array([3.0, 0.0, 0.0])
    _, phi_t, _ = register(warp(tex, translation(tex.grid, -shift)), tex)
    est = recovered_shift(phi_t)
    terr = float(np.linalg.norm(est - shift))
    record(acceptance_log, 6, "registration recovery", {
        "self: max|z| <= 1e-3": (self_max <= 1e-3, f"{self_max:.1e}"),
        "64^3 known warp: SSD reduction >= 90%": (reduction >= 0.9, f"{100 * reduction:.2f}%"),
        "ball Dice >= 0.90": (d >= 0.9, f"{d:.4f}"),
        "3-voxel shift error <= 0.3": (terr <= 0.3, f"{terr:.3f} (got {np.round(est, 3).tolist()})"),
    }, clock, 300.0)


def test_07_averaging(acceptance_log):
    clock = Clock()
    _, phi, monitor = roundtrip_truth(n=32, amplitude=1.5, seed=7)
    avg, _ = average_transformations([phi, phi, phi])
    f0, g0 = monitor.f0.data, monitor.g0.data
    rj = relative_l2(jacobian_determinant(avg).data, f0, f0 - 1.0)
    rc = relative_l2(curl(avg).data, g0, g0)
    grid = phi.grid
    ident, rep_id = average_transformations([identity_field(grid)] * 3)
    id_ok = rep_id.iterations == 0 and np.array_equal(ident.data, identity_field(grid).data)
    phis = [VectorField(grid, smooth_random_field(grid.shape, 60 + k, amplitude=1.0),
                        "transformation") for k in range(4)]
    opts = SolveOptions(max_iters=50)
    a, _ = average_transformations(phis, opts)
    b, _ = average_transformations([phis[3], phis[1], phis[0], phis[2]], opts)
    perm = bool(np.array_equal(a.data, b.data))
    record(acceptance_log, 7, "transformation averaging", {
        "3 identical: rel JD residual <= 5e-2": (rj <= 5e-2, f"{rj:.2e}"),
        "3 identical: rel curl residual <= 5e-2": (rc <= 5e-2, f"{rc:.2e}"),
        "identity inputs -> identity, 0 iterations": (id_ok, str(id_ok)),
        "permutation invariance bit-exact": (perm, str(perm)),
    }, clock, 60.0)


def test_08_atlas(acceptance_log):
    clock = Clock()
    _, head, subjects, labels = atlas_cohort(n=48)
    opts = AtlasOptions(registration=RegistrationOptions(iters=50))
    _, report, extras = build_atlas(subjects, opts, labels=labels)
    worst = [max(d) for d in report.deviations]
    mono = non_increasing(worst, tol=1e-3)
    subject_dice = [dice(lab, head) for lab in labels]
    atlas_dice = dice(extras["labels"], head)
    self_term = max(max(s) for s in report.self_displacement)
    record(acceptance_log, 8, "atlas of 3 warped phantoms (48^3)", {
        f"converged in <= 5 iterations (epsilon {opts.epsilon})":
            (report.converged and report.iterations <= 5, f"{report.iterations} iterations"),
        "max deviation non-increasing": (mono, " -> ".join(f"{w:.4f}" for w in worst)),
        "atlas Dice >= max subject Dice":
            (atlas_dice >= max(subject_dice),
             f"{atlas_dice:.4f} vs {', '.join(f'{s:.4f}' for s in subject_dice)}"),
        "self term <= 0.1 voxel": (self_term <= 0.1, f"{self_term:.3g}"),
    }, clock, 900.0)


def test_09_metrics(acceptance_log):
    clock = Clock()
    grid = Grid3(8, 8, 8)
    mismatches = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        a = ScalarVolume(grid, rng.integers(0, 4, grid.shape), "label")
        b = ScalarVolume(grid, rng.integers(0, 4, grid.shape), "label")
        scores, _ = dice_multilabel(a, b)
        mismatches += sum(scores[k] != dice_oracle(a.data, b.data, k) for k in (1, 2, 3))
    cube_a = np.zeros(grid.shape, int)
    cube_b = np.zeros(grid.shape, int)
    cube_a[2:4, 2:4, 2:4] = 1
    cube_b[3:5, 2:4, 2:4] = 1
    half = dice(ScalarVolume(grid, cube_a, "label"), ScalarVolume(grid, cube_b, "label"))
    record(acceptance_log, 9, "Dice metrics", {
        "20 random 4-label 8^3 pairs equal counting oracle": (mismatches == 0,
                                                              f"{mismatches} mismatches"),
        "half-overlap cube == 0.5": (half == 0.5, repr(half)),
    }, clock, 5.0)


def test_10_io(acceptance_log, tmp_path):
    clock = Clock()
    grid = Grid3(20, 18, 16, 1.0, 1.2, 2.5)
    rng = np.random.default_rng(0)
    vol = ScalarVolume(grid, rng.standard_normal(grid.shape), "intensity")
    fld = VectorField(grid, rng.standard_normal((3,) + grid.shape), "displacement")
    write_volume(vol, tmp_path / "v.nii.gz", double=True)
    write_field(fld, tmp_path / "f.nii", double=True)
    vol_ok = bool(np.array_equal(read_volume(tmp_path / "v.nii.gz").data, vol.data))
    fld_ok = bool(np.array_equal(read_field(tmp_path / "f.nii").data, fld.data))
    fuzz_dir = tmp_path / "fuzz"
    fuzz_dir.mkdir()
    try:
        clean, errors = fuzz_outcomes(fuzz_dir, 100)
        crash = None
    except Exception as exc:  # anything outside the library's error types is a crash
        clean = errors = 0
        crash = type(exc).__name__
    record(acceptance_log, 10, "NIfTI I/O", {
        "float64 volume round trip bit-exact": (vol_ok, str(vol_ok)),
        "float64 field round trip bit-exact": (fld_ok, str(fld_ok)),
        "100 mutated headers: no crashes": (crash is None and clean + errors == 100,
                                            crash or f"{errors} errors, {clean} clean reads"),
    }, clock, 10.0)


PIPELINE = [
    ["synth", "--kind", "phantom", "--shape", "24", "24", "24", "--out", "base.nii"],
    ["synth", "--kind", "ball-mask", "--shape", "24", "24", "24", "--radius", "7",
     "--out", "ball.nii"],
    ["synth", "--kind", "svf", "--shape", "24", "24", "24", "--amp", "1.5", "--seed", "1",
     "--out", "z1.nii"],
    ["synth", "--kind", "svf", "--shape", "24", "24", "24", "--amp", "1.5", "--seed", "2",
     "--out", "z2.nii.gz"],
    ["exp", "--in", "z1.nii", "--out", "phi1.nii"],
    ["exp", "--in", "z2.nii.gz", "--inverse", "--out", "phi2.nii"],
    ["compose", "--outer", "phi1.nii", "--inner", "phi2.nii", "--out", "phi12.nii"],
    ["warp", "--in", "base.nii", "--field", "phi1.nii", "--out", "s1.nii"],
    ["warp", "--in", "base.nii", "--field", "phi2.nii", "--out", "s2.nii"],
    ["warp", "--in", "ball.nii", "--field", "phi1.nii", "--label", "--out", "l1.nii"],
    ["warp", "--in", "ball.nii", "--field", "phi2.nii", "--label", "--out", "l2.nii"],
    ["jd", "--in", "phi12.nii", "--out", "jd.nii"],
    ["curl", "--in", "phi12.nii", "--out", "cv.nii"],
    ["negjac", "--in", "phi12.nii", "--json"],
    ["reconstruct", "--jd", "jd.nii", "--curl", "cv.nii", "--max-iters", "40", "--out", "rec.nii",
     "--report", "rec.json"],
    ["register", "--moving", "s1.nii", "--fixed", "base.nii", "--levels", "2", "--iters", "25",
     "--out-velocity", "rz.nii", "--out-field", "rphi.nii", "--out-warped", "rw.nii",
     "--report", "reg.json"],
    ["average", "--in", "phi1.nii", "phi2.nii", "rphi.nii", "--max-iters", "40",
     "--out", "avg.nii", "--report", "avg.json"],
    ["atlas", "--in", "s1.nii", "s2.nii", "--labels", "l1.nii", "l2.nii", "--out", "atlas.nii",
     "--out-labels", "atlas_lab.nii", "--max-outer-iters", "2", "--reg-levels", "2",
     "--reg-iters", "20", "--max-iters", "40", "--fields-dir", "fields", "--report", "atlas.json"],
    ["dice", "--a", "l1.nii", "--b", "l2.nii", "--json"],
    ["ssd", "--a", "s1.nii", "--b", "s2.nii", "--json"],
    ["features", "--image", "s1.nii", "--field", "rphi.nii", "--out", "feat_m.nii.gz"],
    ["features", "--image", "base.nii", "--field", "phi1.nii", "phi2.nii", "--mode", "fixed",
     "--out", "feat_f.nii"],
    ["slice", "--in", "atlas.nii", "--axis", "y", "--out", "atlas.png"],
    ["slice", "--in", "rphi.nii", "--axis", "z", "--index", "12", "--out", "rphi.png"],
]


def run_pipeline(directory, threads, monkeypatch):
    monkeypatch.chdir(directory)
    for argv in PIPELINE:
        code = run(argv + ["--threads", str(threads)])
        if code != 0:
            return f"{argv[0]} exited {code}"
    return None


def snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}


def test_11_determinism(acceptance_log, tmp_path, monkeypatch, capsys):
    clock = Clock()
    runs = {}
    errors = []
    for name, threads in (("a", 1), ("b", 1), ("c", 4)):
        d = tmp_path / name
        d.mkdir()
        err = run_pipeline(d, threads, monkeypatch)
        if err:
            errors.append(err)
        runs[name] = snapshot(d)
    capsys.readouterr()
    commands = sorted({argv[0] for argv in PIPELINE})
    same = runs["a"] == runs["b"]
    threaded = runs["a"] == runs["c"]
    diff = sorted(k for k in runs["a"] if runs["a"][k] != runs["c"].get(k))
    record(acceptance_log, 11, f"CLI determinism ({len(commands)} subcommands, "
                               f"{len(runs['a'])} output files)", {
        "pipeline succeeded": (not errors, "; ".join(errors) or "all exit 0"),
        "rerun byte-identical": (same, str(same)),
        "--threads 4 byte-identical to --threads 1": (threaded, ", ".join(diff) or "True"),
    }, clock, None)
