"""Fully connected tanh networks predicting approximation-space coefficients.

Each polygon class owns a pair of networks with the same topology: one whose
output coefficients reproduce the basis function values and one, initialised
from the first, whose coefficients reproduce its gradient.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .encoding import PolygonClass
from .harmonic import ApproxSpace

MODEL_HEADER = "navem-model v1"

RDQM_HIDDEN = (40, 40, 40, 40)
DEFAULT_HIDDEN = (50, 50, 50, 50, 50)


class ModelError(ValueError):
    pass


@dataclass
class MLPParams:
    layer_sizes: tuple
    weights: list
    biases: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ModelError(f"invalid layer sizes {self.layer_sizes}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ModelError("number of weight/bias arrays does not match the layer sizes")
        for k, (A, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[k + 1], self.layer_sizes[k])
            if A.shape != shape or b.shape != (shape[0],):
                raise ModelError(f"layer {k}: expected weight {shape}, got {A.shape} / {b.shape}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(A.size + b.size for A, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([A.ravel(), b]) for A, b in zip(self.weights, self.biases)])

    def with_flat(self, theta) -> "MLPParams":
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ModelError("flat parameter vector has the wrong length")
        Ws, bs, pos = [], [], 0
        for A, b in zip(self.weights, self.biases):
            Ws.append(theta[pos : pos + A.size].reshape(A.shape))
            pos += A.size
            bs.append(theta[pos : pos + b.size].copy())
            pos += b.size
        return MLPParams(self.layer_sizes, Ws, bs, dict(self.meta))

    def weight_mask(self) -> np.ndarray:
        """1 on weight-matrix entries and 0 on biases, in ``flat`` order."""
        return np.concatenate([np.concatenate([np.ones(A.size), np.zeros(b.size)]) for A, b in zip(self.weights, self.biases)])

    def copy(self) -> "MLPParams":
        return self.with_flat(self.flat())


def glorot_init(layer_sizes, seed: int = 0) -> MLPParams:
    """Weights ~ N(0, 2 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    sizes = tuple(int(s) for s in layer_sizes)
    Ws = [rng.normal(0.0, np.sqrt(2.0 / (m + n)), size=(n, m)) for m, n in zip(sizes[:-1], sizes[1:])]
    bs = [np.zeros(n) for n in sizes[1:]]
    return MLPParams(sizes, Ws, bs, {"seed": int(seed)})


def mlp_forward(params: MLPParams, x0_coef):
    """Batched forward pass; ``x0_coef`` is ``(N_0,)`` or ``(B, N_0)``.

    Returns the output (same leading shape) and a cache of layer activations.
    """
    x = np.asarray(x0_coef, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != params.n_in:
        raise ModelError(f"input has {X.shape[1]} features, network expects {params.n_in}")
    acts = [X]
    L = len(params.weights)
    for k, (A, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ A.T + b
        acts.append(np.tanh(z) if k < L - 1 else z)
    out = acts[-1]
    return (out[0] if single else out), acts


def mlp_backward(params: MLPParams, cache, output_cotangent):
    """Reverse-mode gradients of ``<cotangent, output>`` w.r.t. weights and biases."""
    acts = cache
    G = np.atleast_2d(np.asarray(output_cotangent, dtype=float))
    if G.shape != acts[-1].shape:
        raise ModelError(f"cotangent shape {G.shape} does not match output {acts[-1].shape}")
    L = len(params.weights)
    gW, gb = [None] * L, [None] * L
    for k in range(L - 1, -1, -1):
        gW[k] = G.T @ acts[k]
        gb[k] = G.sum(axis=0)
        if k > 0:
            G = (G @ params.weights[k]) * (1.0 - acts[k] ** 2)
    return gW, gb


def flatten_grads(gW, gb) -> np.ndarray:
    return np.concatenate([np.concatenate([A.ravel(), b]) for A, b in zip(gW, gb)])


@dataclass
class PredictorPair:
    phi_net: MLPParams
    q_net: MLPParams
    tag: str

    def __post_init__(self):
        if self.phi_net.layer_sizes != self.q_net.layer_sizes:
            raise ModelError("value and gradient networks must share the same topology")
        cls = PolygonClass.from_tag(self.tag)
        if cls.input_dim and cls.input_dim != self.phi_net.n_in:
            raise ModelError(f"class {self.tag} expects {cls.input_dim} inputs, network has {self.phi_net.n_in}")

    def coefficients(self, x0_coef):
        return mlp_forward(self.phi_net, x0_coef)[0], mlp_forward(self.q_net, x0_coef)[0]


@dataclass(frozen=True)
class BasisPrediction:
    coefficients_phi: np.ndarray
    coefficients_q: np.ndarray
    cls: PolygonClass
    frame: object

    def __post_init__(self):
        if not (np.all(np.isfinite(self.coefficients_phi)) and np.all(np.isfinite(self.coefficients_q))):
            raise ModelError("non-finite predicted coefficients")


def evaluate_coefficients(space: ApproxSpace, c_phi, c_q, points):
    """Values from ``c_phi`` and gradients ``(q1, q2)`` from ``c_q`` at frame points."""
    block = space.vandermonde(points)
    phi = block.V @ c_phi
    q = np.column_stack([block.Vx @ c_q, block.Vy @ c_q])
    return phi, q


def predict_basis(pair: PredictorPair, space: ApproxSpace, x0_coef, points):
    """Predicted values and gradients at points given in the network frame."""
    if space.dim != pair.phi_net.n_out:
        raise ModelError(f"space dimension {space.dim} does not match network output {pair.phi_net.n_out}")
    c_phi, c_q = pair.coefficients(x0_coef)
    return evaluate_coefficients(space, c_phi, c_q, points)


# ---------------------------------------------------------------- text format


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def _write_net(lines, name, net: MLPParams):
    lines.append(f"{name} {len(net.layer_sizes)}")
    lines.append(" ".join(str(s) for s in net.layer_sizes))
    for A, b in zip(net.weights, net.biases):
        lines.append(_fmt(A))
        lines.append(_fmt(b))


def _meta_line(meta: dict) -> str:
    return json.dumps(meta, sort_keys=True, default=lambda v: np.asarray(v).tolist())


def save_model(path, pair: PredictorPair) -> None:
    lines = [MODEL_HEADER, f"class {pair.tag}", "meta " + _meta_line(pair.phi_net.meta)]
    _write_net(lines, "phi", pair.phi_net)
    lines.append("meta " + _meta_line(pair.q_net.meta))
    _write_net(lines, "q", pair.q_net)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_meta(line: str) -> dict:
    if not line.startswith("meta "):
        raise ModelError("missing metadata line")
    return json.loads(line[len("meta ") :])


def _read_net(it, expect: str, meta: dict) -> MLPParams:
    name, _, count = next(it).partition(" ")
    if name != expect:
        raise ModelError(f"expected section {expect!r}, found {name!r}")
    sizes = tuple(int(s) for s in next(it).split())
    if len(sizes) != int(count):
        raise ModelError("layer count mismatch")
    Ws, bs = [], []
    for m, n in zip(sizes[:-1], sizes[1:]):
        Ws.append(np.array([float(v) for v in next(it).split()]).reshape(n, m))
        bs.append(np.array([float(v) for v in next(it).split()]))
    return MLPParams(sizes, Ws, bs, meta)


def load_model(path, expected_tag: str | None = None) -> PredictorPair:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != MODEL_HEADER:
        raise ModelError(f"{path}: not a {MODEL_HEADER!r} file")
    it = iter(lines[1:])
    try:
        tag_line = next(it)
        if not tag_line.startswith("class "):
            raise ModelError(f"{path}: missing class line")
        tag = tag_line.split()[1]
        phi = _read_net(it, "phi", _parse_meta(next(it)))
        q = _read_net(it, "q", _parse_meta(next(it)))
    except StopIteration:
        raise ModelError(f"{path}: truncated model file") from None
    except ValueError as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"{path}: malformed model file ({exc})") from None
    if expected_tag is not None and expected_tag != tag:
        raise ModelError(f"{path}: model is for class {tag}, expected {expected_tag}")
    return PredictorPair(phi, q, tag)


def dataset_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    return h.hexdigest()[:16]
