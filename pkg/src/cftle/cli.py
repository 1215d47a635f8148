"""Command-line orchestration.

Subcommands: passive-ftle, gen-policy, cftle, diagnostics, sweep, render,
patches. Every command takes --config/--out/--threads/--seedless, writes
its outputs atomically under --out, and finishes with a run manifest
(config hash, versions, wall time) so a run can be reproduced exactly.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .diagnostics import (PatchSpec, accumulated_state_error_field, advect_patches,
                          check_grad_jf, check_hjb_relation, energy_field,
                          field_distance, interior_low_sigma_node,
                          interior_sigma_argmax, ridge_centroid_x,
                          straddle_offsets, terminal_cost_field)
from .ftle import extract_ridges, ftle_field
from .grids import GridSpec, ScalarField
from .integrate import IntegrationError
from .ocp import CostWeights, GoalSpec, HorizonSpec
from .parallel import resolve_threads
from .policy import (controlled_field, generate_mpc_policy, load_policy,
                     save_policy)
from .render import write_pgm
from .serialization import (FormatError, atomic_write_bytes, config_hash,
                            read_field, write_field, write_json)


class NumericalFailure(Exception):
    """A computation completed abnormally (non-convergent, non-finite)."""


def _manifest(out_dir: str, command: str, rc_hash: str, threads: int,
              seedless: bool, t_start: float, outputs: list, warnings: list) -> None:
    write_json(os.path.join(out_dir, "run_manifest.json"), {
        "command": command,
        "config_hash": rc_hash,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": sys.version.split()[0],
        "threads": threads,
        "seedless": seedless,
        "wall_time_s": round(time.perf_counter() - t_start, 3),
        "outputs": outputs,
        "warnings": warnings,
    })


def _quality_warnings(sigma: ScalarField, label: str) -> list:
    warnings = []
    frac = sigma.invalid_fraction()
    if frac > 0.10:
        warnings.append(f"{label}: {frac:.1%} of nodes are invalid")
    return warnings


def _write_sigma(out_dir: str, name: str, sigma: ScalarField, rc: RunConfig,
                 rc_hash: str, t_a: float, outputs: list) -> None:
    """Field file plus optional ridge mask and rendering for one exponent field."""
    path = os.path.join(out_dir, f"{name}.field")
    # boundary rows/columns come from one-sided stencils, lower accuracy
    write_field(path, sigma, quantity=name, t0=rc.t0, t_a=t_a, cfg_hash=rc_hash,
                extra={"boundary_stencil": "one_sided_first_order"})
    outputs.append(os.path.basename(path))
    if rc.ridge_write_mask:
        ridge = extract_ridges(sigma, rc.ridge_percentile)
        mask_field = ScalarField(grid=sigma.grid, values=ridge.astype(float),
                                 mask=np.ones_like(ridge))
        mpath = os.path.join(out_dir, f"{name}_ridge.field")
        write_field(mpath, mask_field, quantity=f"{name}_ridge", t0=rc.t0,
                    t_a=t_a, cfg_hash=rc_hash,
                    extra={"percentile": rc.ridge_percentile})
        outputs.append(os.path.basename(mpath))
    if rc.render_enabled:
        overlay = None
        if rc.render_ridge_percentile is not None:
            overlay = extract_ridges(sigma, rc.render_ridge_percentile)
        ppath = os.path.join(out_dir, f"{name}.pgm")
        write_pgm(ppath, sigma, vmin=rc.render_vmin, vmax=rc.render_vmax,
                  ridge_mask=overlay)
        outputs.append(os.path.basename(ppath))


def cmd_passive_ftle(args) -> int:
    t_begin = time.perf_counter()
    rc = load_config(args.config)
    threads = resolve_threads(args.threads)
    rc_hash = config_hash(rc.to_dict())
    flow = rc.flow()
    grid = rc.ftle_grid()
    spec = rc.step_spec()
    outputs: list = []
    warnings: list = []

    def run_one(t_a: float) -> None:
        name = "sigma_forward" if t_a > 0 else "sigma_backward"
        sigma = ftle_field(flow, grid, rc.t0, t_a, spec, threads=threads)
        warnings.extend(_quality_warnings(sigma, name))
        _write_sigma(args.out, name, sigma, rc, rc_hash, t_a, outputs)

    run_one(rc.t_a)
    if rc.backward:
        run_one(-rc.t_a)
    _manifest(args.out, "passive-ftle", rc_hash, threads, args.seedless,
              t_begin, outputs, warnings)
    return 0


def cmd_gen_policy(args) -> int:
    t_begin = time.perf_counter()
    rc = load_config(args.config)
    threads = resolve_threads(args.threads)
    rc_hash = config_hash(rc.to_dict())
    flow = rc.flow()
    pgrid = rc.policy_grid()
    fgrid = rc.ftle_grid()
    # the lookup table must be coarse relative to the field grid it serves
    if pgrid.spacing_x < fgrid.spacing_x or pgrid.spacing_y < fgrid.spacing_y:
        raise ConfigError("config.policy: policy grid must be at least as coarse "
                          f"as the FTLE grid (policy spacing {pgrid.spacing_x:g}x"
                          f"{pgrid.spacing_y:g}, field spacing {fgrid.spacing_x:g}x"
                          f"{fgrid.spacing_y:g})")
    policy, report = generate_mpc_policy(
        flow, pgrid, rc.policy_t_start, rc.dt_policy, rc.n_times,
        rc.weights(), rc.goal_spec(), rc.horizon(), rc.bounds(),
        options=rc.solver_options(), periodic=rc.periodic,
        time_interp=rc.time_interp, threads=threads)
    ppath = os.path.join(args.out, "policy.policy")
    save_policy(policy, ppath)
    rpath = os.path.join(args.out, "gen_policy_report.json")
    write_json(rpath, report.to_dict())
    warnings = []
    if report.non_converged:
        warnings.append(f"{report.non_converged} of {report.n_solves} solves "
                        "did not reach tolerance")
    _manifest(args.out, "gen-policy", rc_hash, threads, args.seedless, t_begin,
              [os.path.basename(ppath), os.path.basename(rpath)], warnings)
    return 0


def _load_matching_policy(path: str, flow):
    policy = load_policy(path)
    if policy.flow_descriptor != flow.descriptor():
        raise ConfigError(f"policy {path} was generated for flow "
                          f"{policy.flow_descriptor}, config specifies "
                          f"{flow.descriptor()}")
    return policy


def _require_periodic_for_backward(policy, flow) -> None:
    if not policy.periodic:
        raise ConfigError("backward advection needs a policy with the periodic "
                          "extension flag")
    period = None
    if hasattr(flow, "params") and hasattr(flow.params, "period"):
        period = flow.params.period()
    if period is not None and abs(policy.span - period) > 1e-9:
        raise ConfigError(f"backward advection needs a policy spanning one flow "
                          f"period: span {policy.span} vs period {period}")


def cmd_cftle(args) -> int:
    t_begin = time.perf_counter()
    rc = load_config(args.config)
    threads = resolve_threads(args.threads)
    rc_hash = config_hash(rc.to_dict())
    flow = rc.flow()
    grid = rc.ftle_grid()
    spec = rc.step_spec()
    policy = _load_matching_policy(args.policy, flow)
    combined = controlled_field(flow, policy)
    outputs: list = []
    warnings: list = []

    def run_one(t_a: float) -> None:
        name = "sigma_cftle_forward" if t_a > 0 else "sigma_cftle_backward"
        if t_a < 0:
            _require_periodic_for_backward(policy, flow)
        sigma = ftle_field(combined, grid, rc.t0, t_a, spec, threads=threads)
        warnings.extend(_quality_warnings(sigma, name))
        _write_sigma(args.out, name, sigma, rc, rc_hash, t_a, outputs)

    run_one(rc.t_a)
    if rc.backward:
        run_one(-rc.t_a)
    _manifest(args.out, "cftle", rc_hash, threads, args.seedless, t_begin,
              outputs, warnings)
    return 0


def _hjb_sample_points(domain, n: int) -> np.ndarray:
    """Deterministic interior lattice, row by row, first n points."""
    side = int(np.ceil(np.sqrt(n)))
    fx = np.linspace(0.2, 0.8, side)
    fy = np.linspace(0.2, 0.8, side)
    pts = [(domain.x_min + a * domain.width, domain.y_min + b * domain.height)
           for b in fy for a in fx]
    return np.array(pts[:n])


def cmd_diagnostics(args) -> int:
    t_begin = time.perf_counter()
    rc = load_config(args.config)
    threads = resolve_threads(args.threads)
    rc_hash = config_hash(rc.to_dict())
    flow = rc.flow()
    spec = rc.step_spec()
    d = rc.diag
    try:
        dgrid = GridSpec(domain=rc.domain, nx=d["grid_nx"], ny=d["grid_ny"])
    except ValueError as exc:
        raise ConfigError(f"config.diagnostics: {exc}") from exc
    policy = None
    if args.policy:
        policy = _load_matching_policy(args.policy, flow)
    if d["energy"] and policy is None:
        raise ConfigError("config.diagnostics.energy: requires --policy")
    outputs: list = []
    report: dict = {}
    failures: list = []

    def attempt(check: str, fn) -> None:
        try:
            fn()
        except (ConfigError, FormatError):
            raise
        except Exception as exc:  # per-check failures recorded, run continues
            failures.append({"check": check, "error": f"{type(exc).__name__}: {exc}"})

    def do_terminal() -> None:
        fld = controlled_field(flow, policy) if policy is not None else flow
        jf = terminal_cost_field(fld, dgrid, rc.t0, rc.t_a, rc.goal_spec(),
                                 spec, threads=threads)
        path = os.path.join(args.out, "terminal_cost.field")
        write_field(path, jf, quantity="terminal_cost", t0=rc.t0, t_a=rc.t_a,
                    cfg_hash=rc_hash)
        outputs.append(os.path.basename(path))
        report["terminal_cost"] = {"mean": float(np.mean(jf.valid_values())),
                                   "max": float(np.max(jf.valid_values()))}

    def do_energy() -> None:
        en = energy_field(policy, dgrid, d["energy_time"])
        path = os.path.join(args.out, "energy.field")
        write_field(path, en, quantity="energy", t0=d["energy_time"], t_a=0.0,
                    cfg_hash=rc_hash)
        outputs.append(os.path.basename(path))
        report["energy"] = {"mean": float(np.mean(en.values)),
                            "max": float(np.max(en.values))}

    def do_state_error() -> None:
        fld, info = accumulated_state_error_field(
            flow, dgrid, rc.t0, rc.weights(), rc.goal_spec(), rc.horizon(),
            rc.bounds(), options=rc.solver_options(), threads=threads)
        path = os.path.join(args.out, "state_error.field")
        write_field(path, fld, quantity="state_error", t0=rc.t0, t_a=0.0,
                    cfg_hash=rc_hash)
        outputs.append(os.path.basename(path))
        report["state_error"] = info

    def do_grad_jf() -> None:
        resid, summary = check_grad_jf(flow, rc.ftle_grid(), rc.t0, rc.t_a,
                                       rc.goal_spec(), spec, threads=threads)
        path = os.path.join(args.out, "grad_jf_residual.field")
        write_field(path, resid, quantity="grad_jf_residual", t0=rc.t0,
                    t_a=rc.t_a, cfg_hash=rc_hash)
        outputs.append(os.path.basename(path))
        report["grad_jf"] = summary

    def do_hjb() -> None:
        samples = _hjb_sample_points(rc.domain, d["hjb_samples"])
        report["hjb"] = check_hjb_relation(
            flow, samples, rc.t0, rc.weights(), rc.goal_spec(), rc.horizon(),
            rc.bounds(), options=rc.solver_options(), h=d["hjb_h"])

    if d["terminal_cost"]:
        attempt("terminal_cost", do_terminal)
    if d["energy"]:
        attempt("energy", do_energy)
    if d["state_error"]:
        attempt("state_error", do_state_error)
    if d["grad_jf"]:
        attempt("grad_jf", do_grad_jf)
    if d["hjb"]:
        attempt("hjb", do_hjb)

    report["failures"] = failures
    rpath = os.path.join(args.out, "diagnostics_report.json")
    write_json(rpath, report)
    outputs.append(os.path.basename(rpath))
    _manifest(args.out, "diagnostics", rc_hash, threads, args.seedless, t_begin,
              outputs, [f["check"] for f in failures])
    if failures:
        raise NumericalFailure(f"{len(failures)} diagnostic check(s) failed; "
                               f"see {rpath}")
    return 0


def _fmt_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return "_".join(_fmt_value(x) for x in v)
    f = float(v)
    if f == int(f):
        return str(int(f))
    return repr(f)


def cmd_sweep(args) -> int:
    t_begin = time.perf_counter()
    rc = load_config(args.config)
    threads = resolve_threads(args.threads)
    rc_hash = config_hash(rc.to_dict())
    if rc.sweep_parameter is None or not rc.sweep_values:
        raise ConfigError("config.sweep: parameter and a nonempty values list "
                          "are required for the sweep command")
    flow = rc.flow()
    grid = rc.ftle_grid()
    pgrid = rc.policy_grid()
    spec = rc.step_spec()
    param = rc.sweep_parameter

    passive = ftle_field(flow, grid, rc.t0, rc.t_a, spec, threads=threads)
    outputs: list = []
    warnings: list = []
    ppath = os.path.join(args.out, "sigma_passive.field")
    write_field(ppath, passive, quantity="sigma_passive", t0=rc.t0, t_a=rc.t_a,
                cfg_hash=rc_hash)
    outputs.append(os.path.basename(ppath))

    index = {"parameter": param, "passive_field": os.path.basename(ppath),
             "items": []}
    rows = []
    failed = 0
    for value in rc.sweep_values:
        tag = f"{param}={_fmt_value(value)}"
        item = {"value": value, "tag": tag}
        try:
            weights = rc.weights()
            goal = rc.goal_spec()
            horizon = rc.horizon()
            if param == "rq":
                weights = CostWeights(rc.q, float(value) * rc.q)
            elif param == "t_h":
                horizon = HorizonSpec(float(value), rc.ocp_dt)
            else:
                gx, gy = float(value[0]), float(value[1])
                goal = GoalSpec(gx, gy)
            policy, report = generate_mpc_policy(
                flow, pgrid, rc.policy_t_start, rc.dt_policy, rc.n_times,
                weights, goal, horizon, rc.bounds(),
                options=rc.solver_options(), periodic=rc.periodic,
                time_interp=rc.time_interp, threads=threads)
            pol_path = os.path.join(args.out, f"policy__{tag}.policy")
            save_policy(policy, pol_path)
            outputs.append(os.path.basename(pol_path))
            sigma = ftle_field(controlled_field(flow, policy), grid, rc.t0,
                               rc.t_a, spec, threads=threads)
            fpath = os.path.join(args.out, f"sigma__{tag}.field")
            write_field(fpath, sigma, quantity="sigma_cftle", t0=rc.t0,
                        t_a=rc.t_a, cfg_hash=rc_hash, extra={"sweep": tag})
            outputs.append(os.path.basename(fpath))
            row = {"parameter": param, "value": value, "tag": tag,
                   "distance_to_passive": field_distance(sigma, passive),
                   "non_converged_solves": report.non_converged}
            if param == "goal":
                row["ridge_centroid_x"] = ridge_centroid_x(sigma, rc.ridge_percentile)
            rows.append(row)
            item.update({"field": os.path.basename(fpath),
                         "policy": os.path.basename(pol_path), "ok": True})
        except (ConfigError, FormatError):
            raise
        except Exception as exc:  # record and continue with the next value
            failed += 1
            item.update({"ok": False, "error": f"{type(exc).__name__}: {exc}"})
            warnings.append(f"sweep item {tag} failed: {exc}")
        index["items"].append(item)

    csv_lines = ["parameter,value,distance_to_passive,ridge_centroid_x,non_converged"]
    for row in rows:
        cx = row.get("ridge_centroid_x")
        csv_lines.append(",".join([
            row["parameter"],
            _fmt_value(row["value"]),
            repr(row["distance_to_passive"]),
            "" if cx is None else repr(cx),
            str(row["non_converged_solves"]),
        ]))
    spath = os.path.join(args.out, "summary.csv")
    atomic_write_bytes(spath, ("\n".join(csv_lines) + "\n").encode())
    outputs.append(os.path.basename(spath))
    ipath = os.path.join(args.out, "index.json")
    write_json(ipath, index)
    outputs.append(os.path.basename(ipath))
    _manifest(args.out, "sweep", rc_hash, threads, args.seedless, t_begin,
              outputs, warnings)
    if failed:
        raise NumericalFailure(f"{failed} sweep item(s) failed; see index.json")
    return 0


def cmd_render(args) -> int:
    t_begin = time.perf_counter()
    rc = load_config(args.config)
    rc_hash = config_hash(rc.to_dict())
    sigma, _header = read_field(args.field)
    overlay = None
    if rc.render_ridge_percentile is not None:
        overlay = extract_ridges(sigma, rc.render_ridge_percentile)
    stem = os.path.splitext(os.path.basename(args.field))[0]
    path = os.path.join(args.out, f"{stem}.pgm")
    write_pgm(path, sigma, vmin=rc.render_vmin, vmax=rc.render_vmax,
              ridge_mask=overlay)
    _manifest(args.out, "render", rc_hash, 1, args.seedless, t_begin,
              [os.path.basename(path)], [])
    return 0


def cmd_patches(args) -> int:
    t_begin = time.perf_counter()
    rc = load_config(args.config)
    threads = resolve_threads(args.threads)
    rc_hash = config_hash(rc.to_dict())
    flow = rc.flow()
    spec = rc.step_spec()
    p = rc.patches
    policy = None
    if args.policy:
        policy = _load_matching_policy(args.policy, flow)
    fld = controlled_field(flow, policy) if policy is not None else flow

    if p["placement"] == "explicit":
        if not p["centers"]:
            raise ConfigError("config.patches.centers: explicit placement needs "
                              "at least one center")
        centers = [np.array(c, dtype=float) for c in p["centers"]]
        labels = [f"patch{i}" for i in range(len(centers))]
    else:
        if not args.sigma:
            raise ConfigError("automatic patch placement needs --sigma "
                              "(a field file to locate the ridge)")
        sigma, _ = read_field(args.sigma)
        if p["placement"] == "straddle_max":
            node = interior_sigma_argmax(sigma, p["margin"])
        else:
            node = interior_low_sigma_node(sigma, p["margin"])
            median = float(np.median(sigma.valid_values()))
            if sigma.values[node] >= median:
                raise NumericalFailure("low-sigma placement found no node below "
                                       "the median")
        c_a, c_b = straddle_offsets(sigma, node, p["offset"], rc.ridge_percentile)
        centers = [c_a, c_b]
        labels = ["side_a", "side_b"]

    patches = [PatchSpec(center=tuple(c), radius=p["radius"],
                         n_particles=p["n_particles"], label=lbl)
               for c, lbl in zip(centers, labels)]
    result = advect_patches(fld, patches, rc.t0, p["t_a"], spec,
                            snapshot_times=[rc.t0 + t for t in p["snapshot_times"]])

    report: dict = {"placement": p["placement"], "patches": {}}
    for label, data in result.items():
        report["patches"][label] = {
            "times": data["times"],
            "centroids": data["centroids"].tolist(),
            "positions": data["positions"].tolist(),
        }
    if len(patches) >= 2:
        a = result[labels[0]]["centroids"]
        b = result[labels[1]]["centroids"]
        dists = [float(np.hypot(a[i, 0] - b[i, 0], a[i, 1] - b[i, 1]))
                 for i in range(a.shape[0])]
        report["inter_centroid_distance"] = dists
        if dists[0] > 0:
            report["separation_ratio"] = dists[-1] / dists[0]
    rpath = os.path.join(args.out, "patches_report.json")
    write_json(rpath, report)
    _manifest(args.out, "patches", rc_hash, threads, args.seedless, t_begin,
              [os.path.basename(rpath)], [])
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to the JSON run config")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=0,
                        help="worker threads; 0 = one per CPU (default)")
    common.add_argument("--seedless", action="store_true",
                        help="assert the run uses no random numbers (always "
                             "true for this package; recorded in the manifest)")
    parser = argparse.ArgumentParser(
        prog="cftle",
        description="Exponent fields for passive and controlled agents in "
                    "analytic unsteady flows")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("passive-ftle", parents=[common],
                   help="compute the passive exponent field").set_defaults(fn=cmd_passive_ftle)
    sub.add_parser("gen-policy", parents=[common],
                   help="precompute the space-time control policy").set_defaults(fn=cmd_gen_policy)

    c = sub.add_parser("cftle", parents=[common],
                       help="exponent field of the controlled system")
    c.add_argument("--policy", required=True, help="policy file path")
    c.set_defaults(fn=cmd_cftle)

    dg = sub.add_parser("diagnostics", parents=[common],
                        help="cost-landscape fields and identity checks")
    dg.add_argument("--policy", default=None, help="policy file path (optional)")
    dg.set_defaults(fn=cmd_diagnostics)

    sub.add_parser("sweep", parents=[common],
                   help="hyperparameter sweep with per-value fields and summary"
                   ).set_defaults(fn=cmd_sweep)

    r = sub.add_parser("render", parents=[common], help="render a field file to PGM")
    r.add_argument("--field", required=True, help="field file to render")
    r.set_defaults(fn=cmd_render)

    pt = sub.add_parser("patches", parents=[common],
                        help="advect labeled particle patches")
    pt.add_argument("--policy", default=None, help="policy file path (optional)")
    pt.add_argument("--sigma", default=None,
                    help="sigma field file for automatic patch placement")
    pt.set_defaults(fn=cmd_patches)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, IntegrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except FormatError as exc:
        print(f"file format error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
