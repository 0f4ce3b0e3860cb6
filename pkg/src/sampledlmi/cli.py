"""Command line front end: ``sample``, ``synthesize`` and ``verify``.

Exit codes: 0 success, 2 bad usage or input, 3 synthesis found no certified
region, 4 verification failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .model import BoxRegion, Certificate, LftSystem
from .sampling import (InferredStructure, SamplingError, grid_counts, infer_structure, load_samples_csv,
                       sample_grid, save_samples_csv)
from .synthesis import SynthesisConfig, synthesize_regions
from .systems import SystemSpec, get_system, parse_r_grid
from .verify import (DivergenceError, audit_trajectory, boundary_points, check_certificate, phase_portrait,
                     save_phase_portrait_csv, save_trajectory_csv, simulate)

EXIT_OK, EXIT_USAGE, EXIT_SYNTHESIS, EXIT_VERIFY = 0, 2, 3, 4
REPORT_SCHEMA = "sampledlmi.report"
REPORT_VERSION = 1

log = logging.getLogger("sampledlmi")


class InputError(ValueError):
    pass


def _box(spec, name) -> BoxRegion:
    if isinstance(spec, dict):
        return BoxRegion(np.asarray(spec["lower"], float), np.asarray(spec["upper"], float))
    if isinstance(spec, (list, tuple)):
        return BoxRegion.symmetric(spec)
    raise InputError(f"{name} must be a list of half widths or a {{lower, upper}} object")


def _expression_oracle(exprs: List[str], nx: int, nu: int):
    """Oracle from one numpy expression per state row, in terms of ``x1..`` and ``u1..``."""
    namespace = {k: getattr(np, k) for k in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh",
                                             "sinh", "cosh", "arctan", "sign", "pi")}
    if len(exprs) != nx:
        raise InputError(f"delta needs {nx} expressions, got {len(exprs)}")
    try:
        code = [compile(e, f"delta_{i + 1}", "eval") for i, e in enumerate(exprs)]
    except SyntaxError as exc:
        raise InputError(f"bad delta expression: {exc}") from exc

    def oracle(dx, du):
        env = dict(namespace)
        env.update({f"x{j + 1}": dx[j] for j in range(nx)})
        env.update({f"u{j + 1}": du[j] for j in range(nu)})
        return np.array([float(eval(c, {"__builtins__": {}}, env)) for c in code])

    return oracle


def load_system(source: str) -> SystemSpec:
    """Built-in name or a JSON file with ``A``, ``B1``, ``X``, ``U`` and ``delta`` expressions."""
    path = Path(source)
    if not path.suffix == ".json":
        try:
            return get_system(source)
        except KeyError as exc:
            raise InputError(str(exc.args[0])) from None
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read system file {source}: {exc}") from exc
    try:
        A = np.asarray(d["A"], float)
        B1 = np.atleast_2d(np.asarray(d["B1"], float))
        nx, nu = B1.shape
        nominal = LftSystem(A, B1, np.zeros((nx, 0)), (), ())
        X, U = _box(d["X"], "X"), _box(d["U"], "U")
        grid = tuple(d.get("grid", [31] * (nx + nu)))
        r_grid = tuple(d.get("r_grid", [U.inscribed_radius()]))
        return SystemSpec(d.get("name", path.stem), nominal, _expression_oracle(d["delta"], nx, nu), X, U,
                          grid, r_grid, d.get("constrain_input", "auto"), int(d.get("n_max", 20)),
                          np.asarray(d["x_init"], float) if "x_init" in d else None, d.get("description", ""))
    except KeyError as exc:
        raise InputError(f"system file {source} is missing {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise InputError(f"system file {source}: {exc}") from exc


def _samples(args, spec: SystemSpec):
    if getattr(args, "samples", None):
        return load_samples_csv(args.samples)
    grid = grid_counts(args.grid, spec.X.dim + spec.U.dim) if args.grid else list(spec.grid)
    return sample_grid(spec.oracle, spec.X, spec.U, grid)


def _structure_dict(st: InferredStructure) -> dict:
    return {
        "nonzero_rows": list(st.nonzero_rows),
        "B2": st.B2.tolist(),
        "C": [c.tolist() for c in st.C],
        "D": [d.tolist() for d in st.D],
        "dependence_mask": st.dependence_mask.astype(int).tolist(),
    }


def _structure_from(d: dict, nx: int, nu: int) -> InferredStructure:
    C = tuple(np.asarray(c, float).reshape(nx + nu, nx) for c in d["C"])
    D = tuple(np.asarray(m, float).reshape(nx + nu, nu) for m in d["D"])
    mask = np.asarray(d["dependence_mask"], bool).reshape(len(C), nx + nu)
    return InferredStructure(tuple(d["nonzero_rows"]), np.asarray(d["B2"], float).reshape(nx, len(C)),
                             C, D, mask)


def _box_dict(b: BoxRegion) -> dict:
    return {"lower": b.lower.tolist(), "upper": b.upper.tolist()}


def _finite(v):
    """Replace non-finite floats (also inside lists and dicts) by ``None`` so the output is strict JSON."""
    if isinstance(v, dict):
        return {k: _finite(e) for k, e in v.items()}
    if isinstance(v, float):
        return v if math.isfinite(v) else None
    if isinstance(v, (list, tuple)):
        return [_finite(e) for e in v]
    return v


def cmd_sample(args) -> int:
    spec = load_system(args.system)
    samples = _samples(args, spec)
    st = infer_structure(samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_samples_csv(samples, out / "samples.csv")
    print(f"{samples.n} samples on grid {list(samples.grid_shape)} -> {out / 'samples.csv'}")
    print(st.summary(samples.nx))
    return EXIT_OK


def cmd_synthesize(args) -> int:
    spec = load_system(args.system)
    samples = _samples(args, spec)
    st = infer_structure(samples)
    r_grid = parse_r_grid(args.r_grid) if args.r_grid else list(spec.r_grid)
    config = SynthesisConfig(
        alpha0=args.alpha0,
        r_grid=r_grid,
        n_max=args.nmax if args.nmax is not None else spec.n_max,
        alpha_tol=args.alpha_tol,
        constrain_input=args.constrain_input or spec.constrain_input,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_samples_csv(samples, out / "samples.csv")
    with open(out / "runlog.jsonl", "w") as fh:
        def sink(rec):
            fh.write(json.dumps(_finite(rec), allow_nan=False) + "\n")
            fh.flush()

        outcome = synthesize_regions(spec.nominal, samples, st, spec.X, config, U=spec.U, log_sink=sink)

    sys_full = st.apply(spec.nominal)
    records = []
    for rec in outcome.records:
        records.append({
            "r": rec.r,
            "status": rec.status,
            "alpha_certified": rec.alpha_certified,
            "bracket": [_finite(float(b)) for b in rec.bracket],
            "K": None if rec.K is None else rec.K.tolist(),
            "gamma_used": None if rec.gamma_used is None else rec.gamma_used.tolist(),
            "iterations_used": rec.iterations_used,
            "n_attempts": len(rec.attempts),
            "certificate": None if rec.certificate is None else rec.certificate.to_dict(),
        })
    best = outcome.best_record
    report = {
        "schema": REPORT_SCHEMA,
        "version": REPORT_VERSION,
        "package_version": __version__,
        "system": {"source": args.system, "name": spec.name, "A": spec.nominal.A.tolist(),
                   "B1": spec.nominal.B1.tolist()},
        "sampling": {"X": _box_dict(spec.X), "U": _box_dict(spec.U), "grid": list(samples.grid_shape),
                     "n_samples": samples.n, "samples_csv": "samples.csv"},
        "structure": _structure_dict(st),
        "config": {"alpha0": config.alpha0, "r_grid": config.r_grid, "n_max": config.n_max,
                   "alpha_tol": config.alpha_tol, "growth": config.growth,
                   "constrain_input": config.constrain_input},
        "input_constrained": outcome.constrain_input,
        "alpha_cap": outcome.alpha_cap,
        "records": records,
        "best": outcome.best,
        "certificate_check": None if best is None else check_certificate(best.certificate, sys_full).to_dict(),
        "gain_bound_max_excess": max((s - b for *_, s, b in outcome.soundness), default=None),
    }
    (out / "report.json").write_text(json.dumps(_finite(report), indent=2, allow_nan=False))
    for rec in outcome.records:
        k = "-" if rec.K is None else np.array2string(rec.K.ravel(), precision=4)
        print(f"r = {rec.r:.4g}: {rec.status}, alpha = {rec.alpha_certified:.4g}, K = {k}")
    if best is None:
        print("no region certified", file=sys.stderr)
        return EXIT_SYNTHESIS
    print(f"best: r = {best.r:.4g}, alpha = {best.alpha_certified:.4g}, "
          f"K = {np.array2string(best.K.ravel(), precision=4)}")
    print(f"report -> {out / 'report.json'}")
    return EXIT_OK


def read_report(path) -> dict:
    try:
        report = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read report {path}: {exc}") from exc
    if report.get("schema") != REPORT_SCHEMA or report.get("version") != REPORT_VERSION:
        raise InputError(f"{path}: not a version {REPORT_VERSION} report")
    return report


def cmd_verify(args) -> int:
    out = Path(args.out)
    report = read_report(args.report or out / "report.json")
    if report["best"] is None:
        raise InputError("report holds no certified region")
    spec = load_system(args.system or report["system"]["source"])
    A, B1 = np.asarray(report["system"]["A"]), np.asarray(report["system"]["B1"])
    if A.shape != spec.nominal.A.shape or not np.allclose(A, spec.nominal.A) or not np.allclose(B1, spec.nominal.B1):
        raise InputError("system in the report does not match the selected system")
    nx, nu = B1.shape
    st = _structure_from(report["structure"], nx, nu)
    sys_full = st.apply(spec.nominal)
    cert = Certificate.from_dict(report["records"][report["best"]]["certificate"])

    check = check_certificate(cert, sys_full)
    print("certificate:", check.summary())
    out.mkdir(parents=True, exist_ok=True)
    inits = list(boundary_points(cert.region.W, args.n_ic))
    if args.x_init:
        inits.append(np.array([float(v) for v in args.x_init.split(",")]))
    results = []
    ok = check.ok
    for j, x0 in enumerate(inits):
        entry = {"x_init": x0.tolist()}
        try:
            traj = simulate(spec.oracle, sys_full, cert.K, x0, args.t_final, args.dt, P=cert.P)
        except DivergenceError as exc:
            traj = exc.trajectory
            entry["diverged"] = True
            ok = False
        save_trajectory_csv(traj, out / f"trajectory_{j:02d}.csv")
        audit = audit_trajectory(traj, cert, st, spec.oracle)
        ok &= audit.ok
        entry.update(final_norm=traj.final_norm, audit_ok=audit.ok, audit=audit.summary())
        results.append(entry)
        print(f"x0 = {np.array2string(x0, precision=4)}: |x(T)| = {traj.final_norm:.3e}, "
              f"audit {'ok' if audit.ok else 'FAILED'} ({audit.summary()})")
    pts, vel = phase_portrait(sys_full, cert.K, spec.oracle, cert.region.W, extent=args.portrait_extent)
    save_phase_portrait_csv(pts, vel, out / "phase_portrait.csv")
    summary = {"certificate": check.to_dict(), "trajectories": results, "ok": bool(ok)}
    (out / "verify.json").write_text(json.dumps(_finite(summary), indent=2, allow_nan=False))
    print("verification", "passed" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sampledlmi", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--system", default="example1",
                        help="built-in system name (example1, example2, linear) or a JSON system file")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="reserved; every step is deterministic")

    sp = sub.add_parser("sample", help="sample the nonlinearity on a grid and infer its structure")
    common(sp)
    sp.add_argument("--grid", help="grid counts per coordinate, e.g. 31,31,31 or 31")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("synthesize", help="search for the largest certified region")
    common(sp)
    sp.add_argument("--grid", help="grid counts per coordinate, e.g. 31,31,31 or 31")
    sp.add_argument("--samples", help="use an existing samples CSV instead of sampling")
    sp.add_argument("--r-grid", help="input radii as start:stop:count or a comma list")
    sp.add_argument("--alpha0", type=float, help="initial ellipsoid scale")
    sp.add_argument("--alpha-tol", type=float, default=0.02, help="relative bisection tolerance on alpha")
    sp.add_argument("--nmax", type=int, help="maximum inner iterations")
    sp.add_argument("--constrain-input", choices=("auto", "on", "off"))
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("verify", help="check a certificate and simulate the closed loop")
    common(sp)
    sp.set_defaults(system=None)
    sp.add_argument("--report", help="report JSON (default OUT/report.json)")
    sp.add_argument("--n-ic", type=int, default=12, help="initial conditions on the ellipsoid boundary")
    sp.add_argument("--x-init", help="extra initial condition, comma separated")
    sp.add_argument("--t-final", type=float, default=30.0)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--portrait-extent", type=float, default=1.5,
                    help="phase-portrait box as a multiple of the ellipsoid bounding box")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, SamplingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
