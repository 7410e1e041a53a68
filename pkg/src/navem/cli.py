"""Command-line driver: ``navem <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .meshes import FAMILIES, MeshError, generate_mesh, mesh_statistics, read_mesh, write_mesh
from .navem import NetworkBasis, OracleBasis, export_solution, mesh_bundles, navem_errors, solve_navem, solve_navem_newton
from .network import ModelError, save_model
from .problems import get_problem
from .study import MODES, ExperimentConfig, emit_report, load_config, load_models, run_convergence_study, write_study
from .training import AdamConfig, QuasiNewtonConfig, TrainConfig, build_dataset, read_dataset, sqrt_avg_loss, train_pair, write_dataset
from .vem import solve_vem, solve_vem_newton, vem_errors

logger = logging.getLogger("navem")

_MESH_SIZE_KEY = {"rdqm": "n", "vm": "n_seeds", "htm": "n"}


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} file not found: {p}")
    return p


def cmd_gen_mesh(args) -> int:
    params = {_MESH_SIZE_KEY[args.family]: args.size}
    mesh = generate_mesh(args.family, seed=args.seed, **params)
    write_mesh(mesh, args.output)
    print(f"wrote {args.output}: {mesh.n_vertices} vertices, {mesh.n_elements} elements, h={mesh.h:.4f}")
    return 0


def cmd_stats(args) -> int:
    for path in args.meshes:
        stats = mesh_statistics(read_mesh(_existing(path, "mesh")))
        print(json.dumps({"mesh": str(path), **stats}, sort_keys=True) if args.json else f"# {path}")
        if not args.json:
            for k, v in stats.items():
                print(f"{k:28s} {v:.6g}" if isinstance(v, float) else f"{k:28s} {v}")
    return 0


def cmd_build_dataset(args) -> int:
    data = build_dataset(args.cls, args.size, seed=args.seed, source=args.source)
    write_dataset(args.output, data)
    print(f"wrote {args.output}: {len(data)} samples of class {data.cls.tag}, hash {data.hash()}")
    return 0


def _train_config(epochs, iters, args) -> TrainConfig:
    hidden = tuple(int(v) for v in args.hidden.split(",")) if args.hidden else None
    return TrainConfig(AdamConfig(lr=args.lr, epochs=epochs, batch_size=args.batch_size), QuasiNewtonConfig(max_iter=iters), args.regularization, args.seed, hidden)


def cmd_train(args) -> int:
    data = read_dataset(_existing(args.dataset, "dataset"))
    pair, _ = train_pair(data, _train_config(args.epochs, args.lbfgs, args), _train_config(args.q_epochs, args.q_lbfgs, args))
    pair.phi_net.meta["dataset_path"] = str(args.dataset)
    save_model(args.output, pair)
    print(f"wrote {args.output}: class {pair.tag}, sqrt L0 {sqrt_avg_loss(pair.phi_net, data, 'L0'):.3e}, sqrt L1 {sqrt_avg_loss(pair.q_net, data, 'L1'):.3e}")
    return 0


def cmd_solve(args) -> int:
    mesh = read_mesh(_existing(args.mesh, "mesh"))
    problem = get_problem(args.problem, args.lam)
    iters = 0
    if args.mode == "vem":
        if problem.nonlinear is not None:
            res = solve_vem_newton(mesh, problem)
            u, iters = res.u, res.iterations
        else:
            u = solve_vem(mesh, problem)
        e0, e1 = vem_errors(mesh, u, problem.u, problem.grad)
        bundles = None
    else:
        basis = OracleBasis() if args.mode == "navem-oracle" else NetworkBasis(load_models(args.models))
        bundles = mesh_bundles(mesh, basis)
        if problem.nonlinear is not None:
            res = solve_navem_newton(mesh, problem, bundles=bundles)
            u, iters = res.u, res.iterations
        else:
            u = solve_navem(mesh, problem, bundles=bundles)
        e0, e1 = navem_errors(mesh, u, problem.u, problem.grad, bundles=bundles)
    print(f"h={mesh.h:.6g} err0={e0:.6e} err1={e1:.6e} dofs={mesh.n_vertices}" + (f" newton_iters={iters}" if problem.nonlinear else ""))
    if args.output:
        if bundles is not None:
            export_solution(args.output, mesh, u, bundles)
        else:
            np.savetxt(args.output, np.column_stack([mesh.vertices, u]), header="x1 x2 u", comments="")
        print(f"wrote {args.output}")
    return 0


def _study_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(_existing(args.config, "config"))
    else:
        cfg = ExperimentConfig()
    overrides = {k: getattr(args, k) for k in ("problem", "lam", "family", "refinements", "mode", "seed", "output") if getattr(args, k) is not None}
    if args.models:
        overrides["models"] = list(args.models)
    if args.no_timing:
        overrides["timing"] = False
    fields = {k: getattr(cfg, k) for k in ExperimentConfig.__dataclass_fields__}
    fields.update(overrides)
    return ExperimentConfig(**fields)


def cmd_study(args) -> int:
    cfg = _study_config(args)
    result = run_convergence_study(cfg)
    path = write_study(result, cfg.output)
    print(f"wrote {path}: slope0={result.slopes[0]:.3f} slope1={result.slopes[1]:.3f}")
    return 0


def cmd_report(args) -> int:
    for p in args.csv:
        _existing(p, "study CSV")
    text = emit_report(args.csv, args.plots)
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="navem", description="Neural approximated and classical virtual element solvers.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-mesh", help="generate a mesh and write it in navem-mesh format")
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--size", type=int, default=8, help="grid cells per side (rdqm, htm) or Voronoi seeds (vm)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_mesh)

    p = sub.add_parser("stats", help="geometric statistics of mesh files")
    p.add_argument("meshes", nargs="+")
    p.add_argument("--json", action="store_true", help="one JSON object per mesh")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build-dataset", help="build a training dataset for one polygon class")
    p.add_argument("--class", dest="cls", required=True, help="class tag, e.g. nv4, nv5, ht1")
    p.add_argument("--size", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--source", choices=("random", "voronoi", "reference"), default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train the value and gradient networks on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=2000, help="Adam epochs for the value network")
    p.add_argument("--lbfgs", type=int, default=2000, help="L-BFGS iterations for the value network")
    p.add_argument("--q-epochs", type=int, default=0, help="Adam epochs for the gradient network")
    p.add_argument("--q-lbfgs", type=int, default=500, help="L-BFGS iterations for the gradient network")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=0, help="0 for full batch")
    p.add_argument("--regularization", type=float, default=1e-8)
    p.add_argument("--hidden", default=None, help="comma-separated hidden widths")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("solve", help="solve a test problem on one mesh and report errors")
    p.add_argument("--mesh", required=True)
    p.add_argument("--problem", default="test1", choices=("test1", "test2", "test3", "linear"))
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--mode", choices=MODES, default="vem")
    p.add_argument("--models", nargs="*", default=[])
    p.add_argument("-o", "--output", default=None, help="solution export path")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("study", help="convergence study over a mesh family, written as CSV")
    p.add_argument("--config", default=None, help="flat key = value config file")
    p.add_argument("--problem", default=None)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--family", default=None)
    p.add_argument("--refinements", type=int, default=None)
    p.add_argument("--mode", default=None)
    p.add_argument("--models", nargs="*", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", default=None, help="output directory")
    p.add_argument("--no-timing", action="store_true", help="write zero runtimes for byte-reproducible CSV")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("report", help="summarise study CSV files")
    p.add_argument("csv", nargs="+")
    p.add_argument("--plots", default=None, help="directory for SVG convergence plots")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, MeshError, ModelError, ValueError) as exc:
        print(f"navem {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
