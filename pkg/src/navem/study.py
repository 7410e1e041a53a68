"""Convergence studies, CSV output and summary reports."""

from __future__ import annotations

import csv
import io
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .meshes import FAMILIES, mesh_family
from .navem import MissingModelError, NetworkBasis, OracleBasis, mesh_bundles, navem_errors, solve_navem, solve_navem_newton
from .network import load_model
from .problems import LAMBDAS, get_problem
from .vem import solve_vem, solve_vem_newton, vem_errors

logger = logging.getLogger(__name__)

MODES = ("vem", "navem", "navem-oracle")
PROBLEMS = ("test1", "test2", "test3")
CSV_COLUMNS = ("h", "err0", "err1", "dofs", "runtime")


@dataclass
class ExperimentConfig:
    problem: str = "test1"
    lam: float = 1.0
    family: str = "rdqm"
    refinements: int = 4
    mode: str = "vem"
    models: list = field(default_factory=list)
    seed: int = 0
    output: str = "."
    timing: bool = True

    def __post_init__(self):
        if self.problem not in PROBLEMS and self.problem != "linear":
            raise ValueError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if self.problem == "test3" and self.lam not in LAMBDAS:
            logger.warning("lambda %s is outside the standard set %s", self.lam, LAMBDAS)
        if self.family not in FAMILIES:
            raise ValueError(f"unknown mesh family {self.family!r}; expected one of {FAMILIES}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.refinements < 1:
            raise ValueError("refinements must be >= 1")
        if isinstance(self.models, str):
            self.models = [m for m in self.models.split(",") if m]

    @property
    def nonlinear(self) -> bool:
        return self.problem == "test3"


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


_CONFIG_TYPES = {"lam": float, "refinements": int, "seed": int, "timing": _parse_bool}


def parse_config(text: str) -> ExperimentConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, _, val = (s.strip() for s in line.partition("="))
        if key not in ExperimentConfig.__dataclass_fields__:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _CONFIG_TYPES.get(key, str)(val)
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def load_models(paths) -> dict:
    models = {}
    for p in paths:
        if not os.path.exists(p):
            raise FileNotFoundError(f"model file not found: {p}")
        pair = load_model(p)
        models[pair.tag] = pair
    return models


def fitted_slope(h, err) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    h, err = np.asarray(h, float), np.asarray(err, float)
    if len(h) < 2:
        return float("nan")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


@dataclass
class StudyResult:
    config: ExperimentConfig
    rows: list
    slopes: tuple

    @property
    def columns(self) -> tuple:
        return CSV_COLUMNS + (("newton_iters",) if self.config.nonlinear else ())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([repr(float(r[c])) if c in ("h", "err0", "err1", "runtime") else int(r[c]) for c in self.columns])
        return buf.getvalue()


def solve_case(mesh, problem, mode: str, basis=None):
    """One solve with error evaluation; returns ``(dofs, err0, err1, newton_iters)``."""
    iters = 0
    if mode == "vem":
        if problem.nonlinear is not None:
            res = solve_vem_newton(mesh, problem)
            u, iters = res.u, res.iterations
        else:
            u = solve_vem(mesh, problem)
        e0, e1 = vem_errors(mesh, u, problem.u, problem.grad)
        return u, e0, e1, iters
    bundles = mesh_bundles(mesh, basis)
    if problem.nonlinear is not None:
        res = solve_navem_newton(mesh, problem, bundles=bundles)
        u, iters = res.u, res.iterations
    else:
        u = solve_navem(mesh, problem, bundles=bundles)
    e0, e1 = navem_errors(mesh, u, problem.u, problem.grad, bundles=bundles)
    return u, e0, e1, iters


def make_mode_basis(config: ExperimentConfig):
    if config.mode == "navem-oracle":
        return OracleBasis()
    if config.mode == "navem":
        if not config.models:
            raise MissingModelError("mode navem needs trained models (config key 'models')")
        return NetworkBasis(load_models(config.models))
    return None


def run_convergence_study(config: ExperimentConfig, meshes=None) -> StudyResult:
    problem = get_problem(config.problem, config.lam)
    basis = make_mode_basis(config)
    meshes = meshes if meshes is not None else mesh_family(config.family, config.refinements, seed=config.seed)
    rows = []
    for mesh in meshes:
        t0 = time.perf_counter()
        _, e0, e1, iters = solve_case(mesh, problem, config.mode, basis)
        # wall-clock runtime breaks byte-identical output, so it can be disabled
        rt = time.perf_counter() - t0 if config.timing else 0.0
        rows.append({"h": mesh.h, "err0": e0, "err1": e1, "dofs": mesh.n_vertices, "runtime": rt, "newton_iters": iters})
        logger.info("%s %s %s h=%.4f err0=%.3e err1=%.3e (%.1fs)", config.problem, config.family, config.mode, mesh.h, e0, e1, rt)
    h = [r["h"] for r in rows]
    slopes = (fitted_slope(h, [r["err0"] for r in rows]), fitted_slope(h, [r["err1"] for r in rows]))
    return StudyResult(config, rows, slopes)


def study_name(config: ExperimentConfig) -> str:
    lam = f"_lam{config.lam:g}" if config.nonlinear else ""
    return f"{config.problem}{lam}_{config.family}_{config.mode}"


def write_study(result: StudyResult, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"{study_name(result.config)}.csv"
    path.write_text(result.to_csv())
    return path


def read_study_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    missing = [c for c in CSV_COLUMNS if c not in rows[0]]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    return [{k: float(v) for k, v in r.items()} for r in rows]


def emit_report(csv_paths, plot_dir=None) -> str:
    """One summary row per study file; optional log-log SVG plots."""
    paths = [Path(p) for p in csv_paths]
    if not paths:
        raise ValueError("report needs at least one study CSV")
    lines = ["study,meshes,h_min,err0_min,err1_min,slope0,slope1"]
    studies = []
    for p in paths:
        rows = read_study_csv(p)
        h = [r["h"] for r in rows]
        e0 = [r["err0"] for r in rows]
        e1 = [r["err1"] for r in rows]
        s0, s1 = fitted_slope(h, e0), fitted_slope(h, e1)
        lines.append(f"{p.stem},{len(rows)},{min(h):.4e},{min(e0):.4e},{min(e1):.4e},{s0:.3f},{s1:.3f}")
        studies.append((p.stem, h, e0, e1))
    if plot_dir is not None:
        plot_convergence(studies, plot_dir)
    return "\n".join(lines) + "\n"


def plot_convergence(studies, plot_dir) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = []
    d = Path(plot_dir)
    d.mkdir(parents=True, exist_ok=True)
    for label, idx, order in (("err0", 2, 2), ("err1", 3, 1)):
        fig, ax = plt.subplots(figsize=(5, 4))
        for st in studies:
            ax.loglog(st[1], st[idx], "o-", label=st[0])
        h_all = np.concatenate([st[1] for st in studies])
        e_all = np.concatenate([st[idx] for st in studies])
        # reference slope triangle anchored below the data
        h0, h1 = h_all.min(), h_all.min() * 2
        e_ref = e_all.min() * 0.5
        ax.loglog([h0, h1, h1, h0], [e_ref, e_ref, e_ref * 2**order, e_ref], "k-", lw=0.8)
        ax.text(h1 * 1.05, e_ref * 2 ** (order / 2), str(order))
        ax.set_xlabel("h")
        ax.set_ylabel(label)
        ax.legend(fontsize=7)
        path = d / f"convergence_{label}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        out.append(path)
    return out
