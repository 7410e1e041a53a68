"""Training data and optimisation for the coefficient networks.

A dataset stores, for every (polygon, vertex) sample, the encoded input, a
16-point-per-edge Gauss rule on the frame polygon, the hat trace and its
tangential derivative at those points, and the Vandermonde blocks of the
approximation space.  The value network minimises the boundary L2 misfit of
the trace; the gradient network starts from it and minimises the misfit of
tangential derivatives.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .encoding import (
    CONFIG_INPUT_DIM,
    MIN_CURVILINEAR_GAP,
    EncodedInput,
    PolygonClass,
    encode,
    hanging_reference_polygon,
)
from .geometry import AffineMap, GeometryError, Polygon, QuadratureRule, boundary_quadrature
from .harmonic import ApproxSpace, build_approx_space
from .meshes import vm_mesh
from .navem import hat_trace
from .network import (
    DEFAULT_HIDDEN,
    RDQM_HIDDEN,
    MLPParams,
    PredictorPair,
    flatten_grads,
    glorot_init,
    mlp_backward,
    mlp_forward,
)

logger = logging.getLogger(__name__)

DATASET_HEADER = "navem-dataset v1"
LOSS_POINTS_PER_EDGE = 16
REGULARIZATION = 1e-8


class TrainingError(RuntimeError):
    def __init__(self, message, params=None, history=None):
        super().__init__(message)
        self.params = params
        self.history = history or []


def target_hat(P: Polygon, j: int, rule: QuadratureRule, tol: float = 1e-10):
    """Hat trace of vertex ``j`` and its tangential derivative at boundary points."""
    v = P.vertices
    a, b = v[rule.edges], v[(rule.edges + 1) % len(P)]
    expected = a + rule.param[:, None] * (b - a)
    if np.abs(expected - rule.points).max(initial=0.0) > tol * P.diameter:
        raise GeometryError("quadrature points do not lie on the polygon boundary")
    return hat_trace(P, j, rule)


@dataclass
class TrainingSample:
    x0_coef: np.ndarray
    quad: QuadratureRule
    target_trace: np.ndarray
    target_tangent: np.ndarray
    space: ApproxSpace
    frame_polygon: Polygon
    j_frame: int


def make_sample(enc: EncodedInput, n_per_edge: int = LOSS_POINTS_PER_EDGE) -> TrainingSample:
    F, jf = enc.frame_polygon, enc.j_frame
    rule = boundary_quadrature(F, n_per_edge)
    trace, tangent = target_hat(F, jf, rule)
    return TrainingSample(np.asarray(enc.x0_coef, float), rule, trace, tangent, build_approx_space(F, jf), F, jf)


@dataclass
class Dataset:
    """Samples of one polygon class with stacked arrays for batched losses."""

    cls: PolygonClass
    samples: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.samples:
            raise ValueError("empty dataset")
        dims = {len(s.x0_coef) for s in self.samples}
        npts = {len(s.quad.weights) for s in self.samples}
        if len(dims) != 1 or len(npts) != 1:
            raise ValueError("samples do not share encoding dimension and quadrature size")
        self.X = np.array([s.x0_coef for s in self.samples])
        self.W = np.array([s.quad.weights for s in self.samples])
        self.T0 = np.array([s.target_trace for s in self.samples])
        self.T1 = np.array([s.target_tangent for s in self.samples])
        blocks = [s.space.vandermonde(s.quad.points) for s in self.samples]
        self.V = np.array([b.V for b in blocks])
        self.VT = np.array([b.tangential(s.quad.tangents) for b, s in zip(blocks, self.samples)])

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def output_dim(self) -> int:
        return self.V.shape[2]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.cls, [self.samples[i] for i in np.atleast_1d(idx)], dict(self.provenance))

    def hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X, self.W, self.T0):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------- sources


def random_convex_polygon(rng, n: int = 4, max_tries: int = 10000, min_edge: float = 0.1) -> Polygon:
    """``n`` uniform points in the unit disk, kept when they are in convex position."""
    for _ in range(max_tries):
        r = np.sqrt(rng.uniform(size=n))
        t = rng.uniform(0, 2 * np.pi, size=n)
        pts = np.column_stack([r * np.cos(t), r * np.sin(t)])
        order = np.argsort(np.arctan2(*(pts - pts.mean(0)).T[::-1]))
        pts = pts[order]
        try:
            P = Polygon(pts)
        except GeometryError:
            continue
        if not P.is_convex(tol=1e-9):
            continue
        if P.edge_lengths.min() < min_edge * P.diameter:
            continue
        return P
    raise TrainingError(f"could not generate a convex {n}-gon in {max_tries} tries")


def voronoi_pool(n_vertices: int, count: int, seed: int = 0, n_seeds=(256, 512, 1024), max_meshes: int = 60):
    """Elements with ``n_vertices`` vertices pooled from Voronoi meshes of growing size."""
    pool = []
    k = 0
    while len(pool) < count:
        if k >= max_meshes:
            raise TrainingError(f"Voronoi pool exhausted: {len(pool)} of {count} {n_vertices}-gons")
        mesh = vm_mesh(n_seeds[k % len(n_seeds)], lloyd_iterations=20, seed=10_000 + seed * 101 + k)
        for e in range(mesh.n_elements):
            if len(mesh.elements[e]) == n_vertices:
                pool.append(mesh.polygon(e))
        k += 1
    return pool[:count]


def sample_hanging_inputs(config: int, rng, gap: float = MIN_CURVILINEAR_GAP, max_tries: int = 10000) -> np.ndarray:
    """Curvilinear coordinates of retained hanging nodes with spacing at least ``gap``."""
    dim = CONFIG_INPUT_DIM[config]
    for _ in range(max_tries):
        if config == 5:
            t = rng.uniform(gap, 1 - gap, size=2)
            return t
        t = np.sort(rng.uniform(0, 1, size=dim))
        if np.diff(np.concatenate([[0.0], t, [1.0]])).min() >= gap:
            return t
    raise TrainingError("hanging-node sampler exhausted")


def _hanging_encoded(config: int, x0) -> EncodedInput:
    F, jf = hanging_reference_polygon(config, x0)
    return EncodedInput(PolygonClass("hanging", config), np.asarray(x0, float), AffineMap.identity(), F, jf)


def build_dataset(cls, size: int, seed: int = 0, source: str | None = None, n_per_edge: int = LOSS_POINTS_PER_EDGE) -> Dataset:
    """Build ``size`` samples (pairs of polygon and vertex) for a class.

    ``source`` is ``"random"`` (random convex polygons), ``"voronoi"`` (elements
    pooled from Voronoi meshes) or ``"reference"`` (hanging-node sampler on the
    reference triangle); the default follows the class.
    """
    cls = PolygonClass.from_tag(cls) if isinstance(cls, str) else cls
    rng = np.random.default_rng(seed)
    if size < 1:
        raise ValueError("dataset size must be positive")
    samples = []
    if cls.kind == "hanging":
        if cls.n not in CONFIG_INPUT_DIM:
            raise ValueError(f"configuration {cls.n} has a closed-form basis and needs no training")
        source = source or "reference"
        for _ in range(size):
            samples.append(make_sample(_hanging_encoded(cls.n, sample_hanging_inputs(cls.n, rng)), n_per_edge))
    else:
        n = cls.n
        source = source or ("random" if n <= 4 else "voronoi")
        n_poly = -(-size // n)
        if source == "random":
            polys = [random_convex_polygon(rng, n) for _ in range(n_poly)]
        elif source == "voronoi":
            polys = voronoi_pool(n, n_poly, seed=seed)
        else:
            raise ValueError(f"unknown dataset source {source!r}")
        for P in polys:
            for j in range(n):
                if len(samples) < size:
                    samples.append(make_sample(encode(P, j), n_per_edge))
    prov = {"class": cls.tag, "source": source, "size": size, "seed": seed, "n_per_edge": n_per_edge}
    return Dataset(cls, samples, prov)


def dataset_from_polygons(polygons, cls=None, n_per_edge: int = LOSS_POINTS_PER_EDGE) -> Dataset:
    """All (polygon, vertex) samples of the given polygons, e.g. test-mesh elements."""
    samples = []
    for P in polygons:
        for j in range(len(P)):
            enc = encode(P, j)
            if cls is not None and enc.cls.tag != (cls if isinstance(cls, str) else cls.tag):
                continue
            samples.append(make_sample(enc, n_per_edge))
    if not samples:
        raise ValueError("no samples of the requested class")
    return Dataset(PolygonClass.from_tag(cls if isinstance(cls, str) else cls.tag) if cls else encode(polygons[0], 0).cls, samples)


# ---------------------------------------------------------------- losses


def _regularization(net: MLPParams, reg: float):
    theta = net.flat()
    mask = net.weight_mask()
    return reg * float(np.sum((theta * mask) ** 2)), 2 * reg * theta * mask


def _quadratic_loss(net: MLPParams, X, B, W, target, reg: float):
    c, cache = mlp_forward(net, X)
    r = np.einsum("sqd,sd->sq", B, c) - target
    S = len(X)
    value = float(np.sum(W * r * r)) / S
    dc = 2.0 * np.einsum("sq,sqd->sd", W * r, B) / S
    grad = flatten_grads(*mlp_backward(net, cache, dc))
    rv, rg = _regularization(net, reg)
    return value + rv, grad + rg, value


def loss_L0(net: MLPParams, batch: Dataset, reg: float = REGULARIZATION):
    """Mean boundary L2 misfit of the trace plus weight regularisation.

    Returns ``(loss, gradient, data_term)``.
    """
    return _quadratic_loss(net, batch.X, batch.V, batch.W, batch.T0, reg)


def loss_L1(net: MLPParams, batch: Dataset, reg: float = REGULARIZATION):
    """Mean boundary L2 misfit of tangential derivatives plus regularisation."""
    return _quadratic_loss(net, batch.X, batch.VT, batch.W, batch.T1, reg)


def sqrt_avg_loss(net: MLPParams, batch: Dataset, which: str = "L0") -> float:
    fn = loss_L0 if which == "L0" else loss_L1
    return float(np.sqrt(fn(net, batch, 0.0)[2]))


def oracle_loss(batch: Dataset, which: str = "L0") -> float:
    """Mean per-sample least-squares optimum (lower bound of the data term)."""
    B = batch.V if which == "L0" else batch.VT[:, :, 1:]
    T = batch.T0 if which == "L0" else batch.T1
    out = 0.0
    for Bs, ws, ts in zip(B, batch.W, T):
        sw = np.sqrt(ws)
        A = Bs * sw[:, None]
        scale = np.linalg.norm(A, axis=0)
        scale[scale == 0] = 1
        c = np.linalg.lstsq(A / scale, ts * sw, rcond=1e-12)[0]
        out += float(np.sum((A / scale @ c - ts * sw) ** 2))
    return out / len(batch)


# ---------------------------------------------------------------- optimisers


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 2000
    batch_size: int = 0  # 0: full batch


@dataclass
class QuasiNewtonConfig:
    max_iter: int = 2000
    gtol: float = 1e-10
    memory: int = 20


@dataclass
class TrainConfig:
    adam: AdamConfig = field(default_factory=AdamConfig)
    quasi_newton: QuasiNewtonConfig = field(default_factory=QuasiNewtonConfig)
    regularization: float = REGULARIZATION
    seed: int = 0
    hidden: tuple | None = None
    precondition: bool = True
    combined_loss: bool = False

    def __post_init__(self):
        if self.combined_loss:
            raise NotImplementedError("a single network trained on a combined value and tangential loss is not provided")
        if self.adam.lr <= 0 or self.quasi_newton.gtol <= 0 or self.regularization < 0:
            raise ValueError("learning rate and tolerances must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def default_hidden(cls: PolygonClass) -> tuple:
    return RDQM_HIDDEN if (cls.kind == "nv" and cls.n == 4) else DEFAULT_HIDDEN


def _optimize(net: MLPParams, loss_fn, data: Dataset, cfg: TrainConfig, label: str):
    history = {"adam": [], "quasi_newton": []}
    rng = np.random.default_rng(cfg.seed)
    theta = net.flat()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    a = cfg.adam
    good = net
    step = 0
    n = len(data)
    bs = a.batch_size if 0 < a.batch_size < n else n
    for epoch in range(a.epochs):
        order = rng.permutation(n) if bs < n else [np.arange(n)]
        batches = [order[i : i + bs] for i in range(0, n, bs)] if bs < n else order
        for idx in batches:
            cur = net.with_flat(theta)
            sub = data if bs == n else _slice(data, idx)
            value, grad, _ = loss_fn(cur, sub, cfg.regularization)
            if not np.isfinite(value):
                raise TrainingError(f"{label}: non-finite loss during Adam", good, history)
            good = cur
            step += 1
            m = a.beta1 * m + (1 - a.beta1) * grad
            v = a.beta2 * v + (1 - a.beta2) * grad * grad
            mh = m / (1 - a.beta1**step)
            vh = v / (1 - a.beta2**step)
            theta = theta - a.lr * mh / (np.sqrt(vh) + a.eps)
        if epoch % 100 == 0 or epoch == a.epochs - 1:
            history["adam"].append(float(value))
            logger.debug("%s adam epoch %d loss %.3e", label, epoch, value)

    def fun(th):
        val, g, _ = loss_fn(net.with_flat(th), data, cfg.regularization)
        if not np.isfinite(val):
            return np.inf, np.zeros_like(th)
        return val, g

    q = cfg.quasi_newton
    if q.max_iter > 0:
        res = minimize(fun, theta, jac=True, method="L-BFGS-B", callback=lambda th: history["quasi_newton"].append(float(fun(th)[0])), options={"maxiter": q.max_iter, "maxcor": q.memory, "gtol": q.gtol, "ftol": 1e-15, "maxls": 50})
        if not np.isfinite(res.fun):
            raise TrainingError(f"{label}: non-finite loss in quasi-Newton phase", good, history)
        theta = res.x
    return net.with_flat(theta), history


class _Slice:
    """Lightweight view over stacked dataset arrays."""

    def __init__(self, data: Dataset, idx):
        self.X, self.V, self.VT = data.X[idx], data.V[idx], data.VT[idx]
        self.W, self.T0, self.T1 = data.W[idx], data.T0[idx], data.T1[idx]

    def __len__(self):
        return len(self.X)


def _slice(data: Dataset, idx):
    return _Slice(data, idx)


# ---------------------------------------------------------------- output preconditioning

PRECONDITIONER_FLOOR = 1e-14


@dataclass
class OutputPreconditioner:
    """Affine change of output variables ``c = shift + transform @ y``.

    ``transform`` whitens the dataset-mean Gram matrix of the boundary
    Vandermonde blocks and ``shift`` is the minimiser of the mean trace loss
    over constant coefficient vectors.  The harmonic and pole columns are
    nearly dependent on the frame polygons, so raw coefficients span many
    orders of magnitude; in ``y`` the loss Hessian of the last layer is close
    to the identity.
    """

    transform: np.ndarray
    shift: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_dataset(cls, data, floor: float = PRECONDITIONER_FLOOR) -> "OutputPreconditioner":
        S = len(data)
        M = np.einsum("sqi,sq,sqj->ij", data.V, data.W, data.V) / S
        r = np.einsum("sqi,sq,sq->i", data.V, data.W, data.T0) / S
        lam, U = np.linalg.eigh(M)
        lam = np.maximum(lam, floor * lam[-1])
        return cls(U / np.sqrt(lam), U @ ((U.T @ r) / lam), np.sqrt(lam)[:, None] * U.T)

    def view(self, data) -> "_Slice":
        """Dataset whose blocks and targets act on ``y`` instead of ``c``."""
        out = _Slice(data, slice(None))
        out.V = data.V @ self.transform
        out.VT = data.VT @ self.transform
        out.T0 = data.T0 - data.V @ self.shift
        out.T1 = data.T1 - data.VT @ self.shift
        return out

    def fold(self, net: MLPParams) -> MLPParams:
        """Network predicting ``c`` from one predicting ``y``."""
        out = net.copy()
        out.weights[-1] = self.transform @ net.weights[-1]
        out.biases[-1] = self.transform @ net.biases[-1] + self.shift
        return out

    def unfold(self, net: MLPParams) -> MLPParams:
        out = net.copy()
        out.weights[-1] = self.inverse @ net.weights[-1]
        out.biases[-1] = self.inverse @ (net.biases[-1] - self.shift)
        return out


def _train(net, loss_fn, dataset, cfg: TrainConfig, label: str):
    """Optimise ``net`` (predicting ``c``), in preconditioned variables if enabled."""
    if not cfg.precondition:
        return _optimize(net, loss_fn, dataset, cfg, label)
    pre = OutputPreconditioner.from_dataset(dataset)
    y_net, hist = _optimize(pre.unfold(net), loss_fn, pre.view(dataset), cfg, label)
    return pre.fold(y_net), hist


def train_phi_net(dataset: Dataset, config: TrainConfig | None = None, init: MLPParams | None = None):
    """Adam epochs followed by limited-memory BFGS on the trace loss."""
    cfg = config or TrainConfig()
    hidden = cfg.hidden or default_hidden(dataset.cls)
    sizes = (dataset.input_dim, *hidden, dataset.output_dim)
    t0 = time.perf_counter()
    if init is not None:
        net, hist = _train(init.copy(), loss_L0, dataset, cfg, f"{dataset.cls.tag}/phi")
    elif cfg.precondition:
        # Glorot initialisation is applied to the y-space network
        pre = OutputPreconditioner.from_dataset(dataset)
        y_net, hist = _optimize(glorot_init(sizes, cfg.seed), loss_L0, pre.view(dataset), cfg, f"{dataset.cls.tag}/phi")
        net = pre.fold(y_net)
    else:
        net, hist = _optimize(glorot_init(sizes, cfg.seed), loss_L0, dataset, cfg, f"{dataset.cls.tag}/phi")
    net.meta.update(
        {
            "class": dataset.cls.tag,
            "seed": cfg.seed,
            "loss": "L0",
            "sqrt_avg_loss": sqrt_avg_loss(net, dataset, "L0"),
            "dataset_hash": dataset.hash(),
            "train_seconds": time.perf_counter() - t0,
        }
    )
    return net, hist


def train_q_net(phi_net: MLPParams, dataset: Dataset, config: TrainConfig | None = None):
    """Copy the value network and fine-tune it on the tangential-derivative loss."""
    cfg = config or TrainConfig()
    net = phi_net.copy()
    t0 = time.perf_counter()
    if cfg.adam.epochs > 0 or cfg.quasi_newton.max_iter > 0:
        net, hist = _train(net, loss_L1, dataset, cfg, f"{dataset.cls.tag}/q")
    else:
        hist = {"adam": [], "quasi_newton": []}
    net.meta.update(
        {
            "class": dataset.cls.tag,
            "seed": cfg.seed,
            "loss": "L1",
            "sqrt_avg_loss": sqrt_avg_loss(net, dataset, "L1"),
            "dataset_hash": dataset.hash(),
            "train_seconds": time.perf_counter() - t0,
        }
    )
    return net, hist


def train_pair(dataset: Dataset, config: TrainConfig | None = None, q_config: TrainConfig | None = None) -> tuple:
    phi, h0 = train_phi_net(dataset, config)
    q, h1 = train_q_net(phi, dataset, q_config or config)
    return PredictorPair(phi, q, dataset.cls.tag), {"phi": h0, "q": h1}


# ---------------------------------------------------------------- text format


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def _floats(line: str) -> np.ndarray:
    return np.array([float(v) for v in line.split()]) if line.strip() else np.zeros(0)


def write_dataset(path, dataset: Dataset) -> None:
    """Per sample: encoded input, frame polygon, quadrature arrays and targets."""
    lines = [DATASET_HEADER, f"class {dataset.cls.tag}", "provenance " + json.dumps(dataset.provenance, sort_keys=True), f"samples {len(dataset)}"]
    for s in dataset.samples:
        F = s.frame_polygon
        lines.append(f"sample {len(F)} {s.j_frame} {len(s.quad.weights)}")
        lines.append(_fmt(s.x0_coef))
        lines.append(_fmt(F.vertices))
        lines.append(" ".join("1" if h else "0" for h in F.hanging))
        lines.append(_fmt(s.quad.points))
        lines.append(_fmt(s.quad.weights))
        lines.append(_fmt(s.quad.tangents))
        lines.append(" ".join(str(int(e)) for e in s.quad.edges))
        lines.append(_fmt(s.quad.param))
        lines.append(_fmt(s.target_trace))
        lines.append(_fmt(s.target_tangent))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != DATASET_HEADER:
        raise ValueError(f"{path}: not a {DATASET_HEADER!r} file")
    try:
        cls = PolygonClass.from_tag(lines[1].split()[1])
        prov = json.loads(lines[2][len("provenance ") :])
        count = int(lines[3].split()[1])
        samples, pos = [], 4
        for _ in range(count):
            _, nv, jf, nq = lines[pos].split()
            nv, jf, nq = int(nv), int(jf), int(nq)
            x0 = _floats(lines[pos + 1])
            verts = _floats(lines[pos + 2]).reshape(nv, 2)
            flags = np.array([c == "1" for c in lines[pos + 3].split()])
            pts = _floats(lines[pos + 4]).reshape(nq, 2)
            w = _floats(lines[pos + 5])
            tang = _floats(lines[pos + 6]).reshape(nq, 2)
            edges = np.array([int(e) for e in lines[pos + 7].split()])
            param = _floats(lines[pos + 8])
            t0, t1 = _floats(lines[pos + 9]), _floats(lines[pos + 10])
            F = Polygon(verts, flags)
            rule = QuadratureRule(pts, w, tang, edges, param)
            samples.append(TrainingSample(x0, rule, t0, t1, build_approx_space(F, jf), F, jf))
            pos += 11
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed dataset file ({exc})") from None
    return Dataset(cls, samples, prov)
