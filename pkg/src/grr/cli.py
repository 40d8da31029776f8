"""``grr`` command-line entry point.

Exit codes: 0 success, 1 input or configuration error, 2 solver non-convergence
(artifacts are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .errors import GrrError, InfeasibleError, NumericalError

log = logging.getLogger("grr")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2


# -- shared helpers ------------------------------------------------------------------


def read_points(path) -> np.ndarray:
    """Point cloud CSV: one point per line, comma-separated coordinates."""
    p = Path(path)
    if not p.exists():
        raise GrrError(f"point cloud file not found: {p}")
    try:
        pts = np.loadtxt(p, delimiter=",", ndmin=2, comments="#")
    except ValueError as exc:
        raise GrrError(f"cannot parse point cloud {p}: {exc}") from None
    if pts.size == 0:
        raise GrrError(f"point cloud {p} is empty")
    return pts


def write_points(points, path) -> None:
    np.savetxt(path, np.atleast_2d(points), delimiter=",", fmt="%.17g")


def _versions():
    import scipy

    return {"grr": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def write_run_record(out: Path, command: str, cfg: RunConfig | None, started: float, exit_code: int,
                     extra: dict | None = None) -> None:
    """run.json with command, config hash, versions, seed and durations; plus the resolved config."""
    out.mkdir(parents=True, exist_ok=True)
    rec = {
        "command": command,
        "argv": sys.argv[1:],
        "config_sha256": cfg.digest() if cfg is not None else None,
        "seed": cfg.get("run.seed") if cfg is not None else None,
        "versions": _versions(),
        "duration_s": time.perf_counter() - started,
        "exit_code": exit_code,
    }
    rec.update(extra or {})
    (out / "run.json").write_text(json.dumps(rec, indent=2, default=str) + "\n")
    if cfg is not None:
        (out / "config.resolved.cfg").write_text(cfg.to_text())


def _space_from_config(cfg: RunConfig, points=None):
    from .mapspace import Box, MapSpace

    if cfg.get("space.path"):
        return MapSpace.load(cfg["space.path"])
    lo, hi = cfg.get("space.box_lo"), cfg.get("space.box_hi")
    if lo is None or hi is None:
        if points is None:
            raise GrrError("space.box_lo and space.box_hi are required")
        lo = tuple(np.floor(points.min(axis=0)))
        hi = tuple(np.ceil(points.max(axis=0)))
    return MapSpace(Box(tuple(lo), tuple(hi)), int(cfg["space.n_lp"]), cfg["space.bc"], cfg["space.kind"],
                    cfg["space.convention"])


def _solver_from_config(cfg: RunConfig):
    from .solver import AugLagConfig, BarrierConfig, SolverConfig

    bar = {k: v for k, v in cfg.section("solver.barrier").items()}
    aug = {k: v for k, v in cfg.section("solver.auglag").items()}
    top = {k: cfg[f"solver.{k}"] for k in ("max_iters", "grad_tol", "memory")}
    return SolverConfig(**top, barrier=BarrierConfig(**bar), auglag=AugLagConfig(**aug))


def _objective_from_config(cfg: RunConfig, mesh):
    from .objective import ObjectiveConfig

    kw = {k: v for k, v in cfg.section("objective").items() if v is not None}
    return ObjectiveConfig(mesh=mesh if kw.get("kind") == "exp_mesh" else None, **kw)


def _cpd_from_config(cfg: RunConfig):
    from .cpd import CpdConfig

    s = cfg.section("cpd")
    s.pop("enabled")
    return CpdConfig(**s)


# -- subcommands -----------------------------------------------------------------------


def cmd_register(args) -> int:
    from .experiments import write_csv
    from .geometry import geo_error
    from .mesh import read_mesh, write_mesh
    from .registration import RegistrationProblem, morph_mesh, register, register_with_cpd

    cfg = RunConfig.load(args.config, {"mesh.path": args.mesh, "clouds.reference": args.ref,
                                       "clouds.target": args.target, "run.out": args.out})
    cfg.require("mesh.path", "clouds.reference", "clouds.target")
    out = Path(cfg["run.out"])
    started = time.perf_counter()
    mesh = read_mesh(cfg["mesh.path"])
    x = read_points(cfg["clouds.reference"])
    y = read_points(cfg["clouds.target"])
    space = _space_from_config(cfg, mesh.nodes)
    prob = RegistrationProblem(space, _objective_from_config(cfg, mesh), x, y if len(y) == len(x) else x,
                               method=cfg["method.name"], xi=cfg["method.xi"], delta=cfg["method.delta"],
                               delta_con=cfg["method.delta_con"], mesh=mesh, solver=_solver_from_config(cfg))
    if cfg["cpd.enabled"] or not cfg["clouds.sorted"] or len(y) != len(x):
        phi, reps, met = register_with_cpd(x, y, prob, _cpd_from_config(cfg))
    else:
        phi, _, met = register(prob)
    out.mkdir(parents=True, exist_ok=True)
    write_mesh(morph_mesh(mesh, phi), out / "deformed.mesh")
    phi.save(out / "mapping.npz")
    space.save(out / "space.npz")
    row = {"run_id": cfg["run.id"], "method": cfg["method.name"],
           "param": {"tykhonov": cfg["method.xi"], "morozov": cfg["method.delta"],
                     "inverted": cfg["method.xi"]}[cfg["method.name"]]}
    row.update(met.as_row())
    if cfg.get("clouds.test"):
        row["geo_error"] = geo_error(phi, x, read_points(cfg["clouds.test"]))
    write_csv([row], out / "metrics.csv")
    code = EXIT_OK if met.converged else EXIT_NONCONVERGED
    write_run_record(out, "register", cfg, started, code, {"M": space.M, "space_checksum": space.checksum})
    return code


def cmd_cpd(args) -> int:
    from .cpd import cpd_run
    from .mapspace import MapSpace
    from .pod import PodBasis, reduce_space

    started = time.perf_counter()
    cfg = RunConfig.load(args.config, {"cpd.beta": args.beta, "cpd.lam": args.lam, "cpd.w": args.w})
    x = read_points(args.ref)
    y = read_points(args.target)
    space = None
    if args.reduced:
        if not args.space:
            raise GrrError("--reduced needs --space (the full space the basis was built on)")
        full = MapSpace.load(args.space)
        space = reduce_space(full, PodBasis.load(args.reduced, full))
    res = cpd_run(x, y, _cpd_from_config(cfg), space=space)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_points(res.Y_aligned, out)
    code = EXIT_OK if res.converged else EXIT_NONCONVERGED
    write_run_record(out.parent, "cpd", cfg, started, code,
                     {"iterations": res.iterations, "exit_reason": res.exit_reason,
                      "cover_distance": res.cover_distance, "sigma2": res.state.sigma2})
    return code


def _load_snapshots(path: Path, space):
    from .mapspace import Mapping

    if path.is_dir():
        files = sorted(path.glob("*.npz"))
        if not files:
            raise GrrError(f"no mapping files (*.npz) in {path}")
        return np.array([Mapping.load(f, space).a for f in files])
    if not path.exists():
        raise GrrError(f"snapshot file not found: {path}")
    return np.atleast_2d(np.loadtxt(path, delimiter=",", comments="#"))


def cmd_pod(args) -> int:
    from .experiments import write_csv
    from .mapspace import MapSpace
    from .pod import energy_curve, pod_build

    started = time.perf_counter()
    cfg = RunConfig.load(args.config, {"pod.tol": args.tol, "space.path": args.space})
    cfg.require("space.path")
    space = MapSpace.load(cfg["space.path"])
    U = _load_snapshots(Path(args.snapshots), space)
    basis = pod_build(U, cfg["pod.tol"], space)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    basis.save(out)
    rows = [{"k": k, "eigenvalue": float(lam), "residual_energy": r}
            for (k, r), lam in zip(energy_curve(basis), basis.eigenvalues)]
    write_csv(rows, out.with_suffix(".eigenvalues.csv"))
    write_run_record(out.parent, "pod", cfg, started, EXIT_OK,
                     {"n_snapshots": len(U), "M": basis.n_modes})
    print(f"POD basis with M={basis.n_modes} modes written to {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .experiments import write_csv
    from .geometry import SampledBoundary, corner_constant, hausdorff, tube_area

    started = time.perf_counter()
    cfg = RunConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    did = False
    if args.corner_constant:
        alphas = np.linspace(math.pi / 2 / args.n_alpha, math.pi / 2, args.n_alpha)
        alphas = np.unique(np.append(alphas, math.pi / 4))
        rows = [{"alpha": float(a), "C": corner_constant(float(a)),
                 "bound": min(3.0, 1 / math.sin(a))} for a in alphas]
        write_csv(rows, out / "corner_constant.csv")
        did = True
    if args.tube_area is not None:
        bnd = (SampledBoundary(read_points(args.curve)) if args.curve
               else SampledBoundary.from_curve(lambda t: np.column_stack([np.cos(t), np.sin(t)])))
        ta = tube_area(bnd, args.tube_area, n_mc=args.n_mc, seed=int(cfg["run.seed"]))
        write_csv([{"delta": args.tube_area, "estimate": ta.estimate, "stderr": ta.stderr,
                    "bound": ta.bound}], out / "tube_area.csv")
        did = True
    if args.hausdorff:
        a, b = (read_points(p) for p in args.hausdorff)
        write_csv([{"hausdorff": hausdorff(a, b)}], out / "hausdorff.csv")
        did = True
    if not did:
        raise GrrError("nothing to analyze: pass --corner-constant, --tube-area or --hausdorff")
    write_run_record(out, "analyze", cfg, started, EXIT_OK)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from .experiments import ExperimentConfig, run_table

    started = time.perf_counter()
    cfg = RunConfig.load(args.config)
    ek = cfg.section("experiment")
    ek["seed"] = int(cfg["run.seed"])
    if args.jobs is not None:
        ek["jobs"] = args.jobs
    names = {f.name for f in fields(ExperimentConfig)}
    base = ExperimentConfig.full_scale() if args.paper_scale else ExperimentConfig()
    defaults = ExperimentConfig()
    # keys explicitly changed from the desk default override the chosen scale
    changed = {k: v for k, v in ek.items() if k in names and v != getattr(defaults, k)}
    exp_cfg = ExperimentConfig(**{**base.__dict__, **changed})
    kw = {}
    if args.objective:
        kw["kinds"] = tuple(args.objective)
    out = Path(args.out)
    tables = run_table(args.experiment, exp_cfg, out, **kw)
    converged = all(bool(r.get("converged", True)) for rows in tables.values() for r in rows)
    code = EXIT_OK if converged else EXIT_NONCONVERGED
    write_run_record(out, f"reproduce {args.experiment}", cfg, started, code,
                     {"experiment_config": exp_cfg.__dict__, "tables": sorted(tables)})
    return code


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grr", description="Geometry registration and reduction.")
    p.add_argument("--version", action="version", version=f"grr {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("register", help="fit a bijective mapping to point pairs and morph a mesh")
    r.add_argument("--config")
    r.add_argument("--mesh")
    r.add_argument("--ref")
    r.add_argument("--target")
    r.add_argument("--out")
    r.set_defaults(func=cmd_register)

    c = sub.add_parser("cpd", help="align a raw target cloud with coherent point drift")
    c.add_argument("--config")
    c.add_argument("--ref", required=True)
    c.add_argument("--target", required=True)
    c.add_argument("--beta", type=float)
    c.add_argument("--lambda", dest="lam", type=float)
    c.add_argument("--w", type=float)
    c.add_argument("--out", required=True)
    c.add_argument("--reduced", help="POD basis file; CPD then searches the reduced space")
    c.add_argument("--space", help="space file the POD basis was built on")
    c.set_defaults(func=cmd_cpd)

    o = sub.add_parser("pod", help="build a POD basis from mapping snapshots")
    o.add_argument("--config")
    o.add_argument("--snapshots", required=True, help="directory of mapping .npz files or a CSV of coefficients")
    o.add_argument("--space")
    o.add_argument("--tol", type=float)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_pod)

    a = sub.add_parser("analyze", help="geometric error constants and distances")
    a.add_argument("--config")
    a.add_argument("--out", default="analysis")
    a.add_argument("--corner-constant", action="store_true")
    a.add_argument("--n-alpha", type=int, default=50)
    a.add_argument("--tube-area", type=float, metavar="DELTA")
    a.add_argument("--curve", help="closed curve samples (CSV); unit circle by default")
    a.add_argument("--n-mc", type=int, default=1_000_000)
    a.add_argument("--hausdorff", nargs=2, metavar=("A", "B"))
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("reproduce", help="run a benchmark experiment and write its metric tables")
    e.add_argument("experiment", choices=("three-point", "ring-twist", "two-holes"))
    e.add_argument("--config")
    e.add_argument("--out", default="results")
    e.add_argument("--jobs", type=int)
    e.add_argument("--paper-scale", action="store_true")
    e.add_argument("--objective", action="append",
                   choices=("h2", "exp_jac", "exp_mesh", "lin_elastic", "neohookean"))
    e.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InfeasibleError, NumericalError) as exc:
        print(f"grr: solver failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (GrrError, ValueError, OSError) as exc:
        print(f"grr: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
