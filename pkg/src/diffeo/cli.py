"""Command-line entry point: ``diffeo <subcommand> [options]``.

Exit codes: 0 on success, 1 on usage errors, 2 on data errors (malformed
or mismatched inputs, unreadable files). Reports are printed as JSON with
``--json`` and written to ``--report`` files where offered.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import nifti
from .atlas import AtlasOptions, build_atlas
from .average import average_transformations
from .diffgeo import curl, jacobian_determinant, negative_jacobian_fraction
from .errors import DiffeoError, InvalidFieldError
from .features import export_stack, fixed_stack, moving_stack
from .fields import Grid3, ScalarVolume, compose, warp
from .metrics import dice_multilabel, dice_score, ssd_value
from .parallel import set_threads
from .registration import RegistrationOptions, register
from .svf import exponentiate, exponentiate_inverse
from .synth import KINDS as SYNTH_KINDS
from .synth import synth
from .varsolve import MonitorPair, SolveOptions, reconstruct

log = logging.getLogger("diffeo")

COMMANDS = ("jd", "curl", "negjac", "exp", "reconstruct", "register", "average", "atlas",
            "dice", "ssd", "features", "warp", "compose", "synth", "slice")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _common():
    p = _Parser(add_help=False)
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $DIFFEO_THREADS or all cores)")
    p.add_argument("--config", type=Path, default=None,
                   help="JSON file of option defaults; explicit flags take precedence")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _solve_args(p):
    g = p.add_argument_group("variational solver")
    g.add_argument("--max-iters", type=int, default=SolveOptions.max_iters)
    g.add_argument("--step", type=float, default=SolveOptions.step)
    g.add_argument("--sigma", type=float, default=SolveOptions.sigma)
    g.add_argument("--tol", type=float, default=SolveOptions.tol)
    g.add_argument("--curl-weight", type=float, default=SolveOptions.curl_weight)


def _reg_args(p, prefix=""):
    g = p.add_argument_group("registration")
    g.add_argument(f"--{prefix}levels", type=int, default=RegistrationOptions.levels)
    g.add_argument(f"--{prefix}iters", type=int, default=RegistrationOptions.iters)
    g.add_argument(f"--{prefix}step", type=float, default=RegistrationOptions.step)
    g.add_argument(f"--{prefix}sigma", type=float, default=RegistrationOptions.sigma)
    g.add_argument(f"--{prefix}svf-steps", type=int, default=RegistrationOptions.svf_steps)
    g.add_argument(f"--{prefix}reg-weight", type=float, default=RegistrationOptions.reg_weight)


def _solve_opts(a):
    return SolveOptions(max_iters=a.max_iters, step=a.step, sigma=a.sigma, tol=a.tol,
                        curl_weight=a.curl_weight)


def _reg_opts(a, prefix=""):
    get = lambda name: getattr(a, prefix + name)  # noqa: E731
    return RegistrationOptions(levels=get("levels"), iters=get("iters"), step=get("step"),
                               sigma=get("sigma"), svf_steps=get("svf_steps"),
                               reg_weight=get("reg_weight"))


def build_parser():
    common = _common()
    parser = _Parser(prog="diffeo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[common], description=help)

    p = add("jd", "Jacobian determinant of a transformation")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--double", action="store_true", help="write float64")

    p = add("curl", "curl of a transformation or displacement")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--double", action="store_true")

    p = add("negjac", "fraction of voxels with Jacobian determinant <= 0")
    p.add_argument("--in", dest="inp", required=True, help="transformation or JD volume")
    p.add_argument("--mask", default=None)

    p = add("exp", "exponentiate a stationary velocity field")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=7)
    p.add_argument("--inverse", action="store_true", help="compute exp(-z)")
    p.add_argument("--double", action="store_true")

    p = add("reconstruct", "transformation from prescribed Jacobian determinant and curl")
    p.add_argument("--jd", required=True)
    p.add_argument("--curl", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--double", action="store_true")
    _solve_args(p)

    p = add("register", "SSD registration of a moving image onto a fixed image")
    p.add_argument("--moving", required=True)
    p.add_argument("--fixed", required=True)
    p.add_argument("--out-velocity", default=None)
    p.add_argument("--out-field", default=None)
    p.add_argument("--out-warped", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--double", action="store_true")
    _reg_args(p)

    p = add("average", "average transformations through their JD and curl")
    p.add_argument("--in", dest="inp", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--double", action="store_true")
    _solve_args(p)

    p = add("atlas", "iterative unbiased template construction")
    p.add_argument("--in", dest="inp", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", nargs="+", default=None, help="one segmentation per subject")
    p.add_argument("--out-labels", default=None)
    p.add_argument("--epsilon", type=float, default=AtlasOptions.epsilon)
    p.add_argument("--max-outer-iters", type=int, default=AtlasOptions.max_outer_iters)
    p.add_argument("--single-candidate", type=int, default=None)
    p.add_argument("--fields-dir", default=None, help="write per-iteration average fields here")
    p.add_argument("--report", default=None)
    _solve_args(p)
    _reg_args(p, prefix="reg-")

    p = add("dice", "Dice overlap of label volumes")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--label", type=int, default=None, help="single label (default: all)")

    p = add("ssd", "half mean squared difference of two volumes")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)

    p = add("features", "export a 5-channel feature stack")
    p.add_argument("--image", required=True)
    p.add_argument("--field", nargs="+", required=True)
    p.add_argument("--mode", choices=("moving", "fixed"), default="moving")
    p.add_argument("--out", required=True)

    p = add("warp", "resample a volume through a transformation")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", action="store_true", help="treat input as labels")
    p.add_argument("--double", action="store_true")

    p = add("compose", "compose two transformations (outer after inner)")
    p.add_argument("--outer", required=True)
    p.add_argument("--inner", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--double", action="store_true")

    p = add("synth", "generate synthetic test data")
    p.add_argument("--kind", choices=SYNTH_KINDS, required=True)
    p.add_argument("--shape", type=int, nargs=3, default=[32, 32, 32])
    p.add_argument("--spacing", type=float, nargs=3, default=[1.0, 1.0, 1.0])
    p.add_argument("--amp", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--smooth", type=float, default=4.0, help="svf smoothing sigma in voxels")
    p.add_argument("--taper", type=float, default=0.0, help="svf boundary taper width")
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--shift", type=float, nargs=3, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--double", action="store_true")

    p = add("slice", "export one slice as PNG (RGB for vector fields)")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--index", type=int, default=None, help="default: middle slice")
    p.add_argument("--out", required=True)
    return parser, sub


def _is_field(path):
    return nifti.read_header(path)["dim"][0] == 5


def _emit(args, report, text):
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    elif text:
        print(text)


def _write_report(path, report):
    if path:
        Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def cmd_jd(a):
    jd = jacobian_determinant(nifti.read_field(a.inp))
    nifti.write_volume(jd, a.out, double=a.double)
    rep = {"min": float(jd.data.min()), "max": float(jd.data.max()),
           "mean": float(jd.data.mean()), "negative_fraction": negative_jacobian_fraction(jd)}
    _emit(a, rep, f"JD range [{rep['min']:.6g}, {rep['max']:.6g}], mean {rep['mean']:.6g}")


def cmd_curl(a):
    cv = curl(nifti.read_field(a.inp))
    nifti.write_field(cv, a.out, double=a.double)
    mag = np.sqrt(np.sum(cv.data ** 2, axis=0))
    rep = {"max_magnitude": float(mag.max()), "mean_magnitude": float(mag.mean())}
    _emit(a, rep, f"curl magnitude max {rep['max_magnitude']:.6g}")


def cmd_negjac(a):
    if _is_field(a.inp):
        jd = jacobian_determinant(nifti.read_field(a.inp))
    else:
        jd = nifti.read_volume(a.inp, kind="jacobian")
    mask = nifti.read_volume(a.mask, kind="label") if a.mask else None
    frac = negative_jacobian_fraction(jd, mask)
    sel = jd.data if mask is None else jd.data[mask.data != 0]
    rep = {"fraction": frac, "percent": 100.0 * frac,
           "count": int(np.count_nonzero(sel <= 0)), "voxels": int(sel.size)}
    _emit(a, rep, f"{rep['percent']:.6g}% of {rep['voxels']} voxels have JD <= 0")


def cmd_exp(a):
    z = nifti.read_field(a.inp, kind="velocity")
    phi = (exponentiate_inverse if a.inverse else exponentiate)(z, a.steps)
    nifti.write_field(phi, a.out, double=a.double)
    jd = jacobian_determinant(phi)
    rep = {"steps": a.steps, "inverse": a.inverse, "min_jd": float(jd.data.min()),
           "negative_fraction": negative_jacobian_fraction(jd)}
    _emit(a, rep, f"wrote {a.out}; min JD {rep['min_jd']:.6g}")


def cmd_reconstruct(a):
    f0 = nifti.read_volume(a.jd, kind="jacobian")
    g0 = nifti.read_field(a.curl, kind="curl")
    phi, report = reconstruct(MonitorPair(f0, g0), _solve_opts(a))
    nifti.write_field(phi, a.out, double=a.double)
    rep = report.to_dict()
    _write_report(a.report, rep)
    _emit(a, rep, f"{report.iterations} iterations, functional {report.final_value:.6g}, "
                  f"converged={report.converged}")


def cmd_register(a):
    moving = nifti.read_volume(a.moving, kind="intensity")
    fixed = nifti.read_volume(a.fixed, kind="intensity")
    z, phi, report = register(moving, fixed, _reg_opts(a))
    if a.out_velocity:
        nifti.write_field(z, a.out_velocity, double=a.double)
    if a.out_field:
        nifti.write_field(phi, a.out_field, double=a.double)
    if a.out_warped:
        nifti.write_volume(warp(moving, phi), a.out_warped, double=a.double)
    rep = report.to_dict()
    rep["negative_jacobian_fraction"] = negative_jacobian_fraction(jacobian_determinant(phi))
    _write_report(a.report, rep)
    _emit(a, rep, f"SSD {report.initial_ssd:.6g} -> {report.final_ssd:.6g} "
                  f"in {report.iterations} iterations")


def cmd_average(a):
    phis = [nifti.read_field(p) for p in a.inp]
    phi, report = average_transformations(phis, _solve_opts(a))
    nifti.write_field(phi, a.out, double=a.double)
    rep = report.to_dict()
    rep["inputs"] = len(phis)
    _write_report(a.report, rep)
    _emit(a, rep, f"averaged {len(phis)} fields; functional {report.final_value:.6g}")


def cmd_atlas(a):
    subjects = [nifti.read_volume(p, kind="intensity") for p in a.inp]
    labels = None
    if a.labels:
        labels = [nifti.read_volume(p, kind="label") for p in a.labels]
    opts = AtlasOptions(epsilon=a.epsilon, max_outer_iters=a.max_outer_iters,
                        registration=_reg_opts(a, "reg_"), solve=_solve_opts(a),
                        single_candidate=a.single_candidate)
    atlas, report, extras = build_atlas(subjects, opts, labels=labels,
                                        keep_fields=bool(a.fields_dir))
    nifti.write_volume(atlas, a.out)
    if a.out_labels and extras["labels"] is not None:
        nifti.write_volume(extras["labels"], a.out_labels)
    if a.fields_dir:
        out = Path(a.fields_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t, row in enumerate(extras["fields"], 1):
            for i, phi in enumerate(row):
                if phi is not None:
                    nifti.write_field(phi, out / f"avg_iter{t}_cand{i}.nii.gz")
    rep = report.to_dict()
    _write_report(a.report, rep)
    _emit(a, rep, f"atlas from subject {report.chosen_index} after {report.iterations} "
                  f"iterations (converged={report.converged})")


def cmd_dice(a):
    sa = nifti.read_volume(a.a, kind="label")
    sb = nifti.read_volume(a.b, kind="label")
    if a.label is not None:
        res = dice_score(sa, sb, a.label)
        rep = {"label": a.label, "dice": res.value, "empty": res.empty}
        _emit(a, rep, f"dice[{a.label}] = {res.value:.6g}")
    else:
        scores, mean = dice_multilabel(sa, sb)
        rep = {"labels": {str(k): v for k, v in scores.items()}, "mean": mean}
        _emit(a, rep, "mean dice = " + ("n/a" if mean is None else f"{mean:.6g}"))


def cmd_ssd(a):
    va = nifti.read_volume(a.a, kind="intensity")
    vb = nifti.read_volume(a.b, kind="intensity")
    rep = {"ssd": ssd_value(va, vb)}
    _emit(a, rep, f"ssd = {rep['ssd']:.6g}")


def cmd_features(a):
    image = nifti.read_volume(a.image, kind="intensity")
    phis = [nifti.read_field(p) for p in a.field]
    if a.mode == "moving":
        if len(phis) != 1:
            raise UsageError("features --mode moving takes exactly one --field")
        stack = moving_stack(image, phis[0])
    else:
        stack = fixed_stack(image, phis)
    export_stack(stack, a.out)
    rep = {"channels": stack.channel_names, "shape": list(stack.grid.shape), "mode": a.mode,
           "fields": len(phis)}
    _emit(a, rep, f"wrote {len(stack.channels)}-channel stack to {a.out}")


def cmd_warp(a):
    vol = nifti.read_volume(a.inp, kind="label" if a.label else None)
    out = warp(vol, nifti.read_field(a.field))
    nifti.write_volume(out, a.out, double=a.double)
    _emit(a, {"kind": out.kind, "shape": list(out.grid.shape)}, f"wrote {a.out}")


def cmd_compose(a):
    out = compose(nifti.read_field(a.outer), nifti.read_field(a.inner))
    nifti.write_field(out, a.out, double=a.double)
    _emit(a, {"shape": list(out.grid.shape)}, f"wrote {a.out}")


def cmd_synth(a):
    grid = Grid3(*a.shape, *a.spacing)
    kw = {"sigma": a.smooth, "taper": a.taper, "radius": a.radius}
    if a.shift is not None:
        kw["shift"] = a.shift
    obj = synth(a.kind, grid, amplitude=a.amp, seed=a.seed, **kw)
    if isinstance(obj, ScalarVolume):
        nifti.write_volume(obj, a.out, double=a.double)
    else:
        nifti.write_field(obj, a.out, double=a.double)
    _emit(a, {"kind": a.kind, "shape": list(grid.shape), "seed": a.seed}, f"wrote {a.out}")


def _to_uint8(arr):
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        return np.zeros(arr.shape, dtype=np.uint8)
    return np.round(255.0 * (arr - lo) / (hi - lo)).astype(np.uint8)


def cmd_slice(a):
    from PIL import Image

    axis = "xyz".index(a.axis)
    if _is_field(a.inp):
        data = nifti.read_field(a.inp).data
        n = data.shape[1 + axis]
        idx = n // 2 if a.index is None else a.index
        if not 0 <= idx < n:
            raise InvalidFieldError(f"slice index {idx} outside [0, {n})")
        sl = np.take(data, idx, axis=1 + axis)
        # per-component min-max over the slice; qualitative only
        rgb = np.stack([_to_uint8(sl[c]).T for c in range(3)], axis=-1)
        img = Image.fromarray(np.ascontiguousarray(rgb), mode="RGB")
    else:
        data = nifti.read_volume(a.inp, kind="intensity").data
        n = data.shape[axis]
        idx = n // 2 if a.index is None else a.index
        if not 0 <= idx < n:
            raise InvalidFieldError(f"slice index {idx} outside [0, {n})")
        img = Image.fromarray(np.ascontiguousarray(_to_uint8(np.take(data, idx, axis=axis)).T),
                              mode="L")
    img.save(a.out, format="PNG")
    _emit(a, {"axis": a.axis, "index": idx, "mode": img.mode}, f"wrote {a.out}")


HANDLERS = {name: globals()["cmd_" + name] for name in COMMANDS}


def _parse(argv):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_help())
    config = getattr(args, "config", None)
    if config:
        try:
            defaults = json.loads(Path(config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {config}: {exc}") from exc
        if not isinstance(defaults, dict):
            raise UsageError("config file must hold a JSON object")
        sp = sub.choices[args.command]
        known = {act.dest for act in sp._actions}
        unknown = set(k.replace("-", "_") for k in defaults) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        # config values become defaults, so explicit flags still win
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
        args = parser.parse_args(argv)
    return args


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip() + "\n")
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        set_threads(args.threads)
    except ValueError as exc:
        sys.stderr.write(f"diffeo: {exc}\n")
        return 1
    try:
        HANDLERS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"diffeo {args.command}: {exc}\n")
        return 1
    except (DiffeoError, OSError, ValueError) as exc:
        sys.stderr.write(f"diffeo {args.command}: error: {exc}\n")
        return 2
    finally:
        set_threads(None)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
