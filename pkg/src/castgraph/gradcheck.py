"""Central finite-difference check of the model's analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Adjacency, GatModel, ModelConfig, init_params

# entries whose true gradient is ~0 would otherwise divide roundoff by roundoff
REL_FLOOR = 1e-7


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    n_entries: int


def random_instance(rng, max_nodes: int = 12, max_dim: int = 8):
    """Random small model, graph and labelled pair batch (dropout off)."""
    n = int(rng.integers(3, max_nodes + 1))
    heads = int(rng.choice([1, 2, 4]))
    d_model = heads * int(rng.integers(1, max_dim // heads + 1))
    d_in = int(rng.integers(2, max_dim + 1))
    cfg = ModelConfig(d_model=d_model, heads=heads, dropout=0.0, gamma=float(rng.choice([0.0, 0.5, 2.0])))
    model = GatModel(d_in, cfg, init_params(d_in, cfg, rng))
    for k in model.params:
        model.params[k] = model.params[k] + rng.normal(0.0, 0.3, model.params[k].shape)
    model.class_weights = rng.uniform(0.5, 1.5, 2)
    x = rng.normal(size=(n, d_in))
    m = int(rng.integers(n, 3 * n + 1))
    adj = Adjacency.with_self_loops(n, rng.integers(0, n, m), rng.integers(0, n, m))
    b = int(rng.integers(1, 9))
    pairs = rng.integers(0, n, (b, 2))
    labels = rng.integers(0, 2, b)
    return model, x, adj, pairs, labels


def numerical_gradients(model: GatModel, x, adj, pairs, labels, eps: float = 1e-4) -> dict:
    out = {}
    for name, P in model.params.items():
        g = np.zeros_like(P)
        flat = P.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            lp = model.forward(x, adj, pairs, labels)[1]
            flat[i] = old - eps
            lm = model.forward(x, adj, pairs, labels)[1]
            flat[i] = old
            gflat[i] = (lp - lm) / (2 * eps)
        out[name] = g
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)


def check_instance(model, x, adj, pairs, labels, eps: float = 1e-4) -> GradCheckResult:
    _, _, cache = model.forward(x, adj, pairs, labels)
    analytic = model.backward(cache)
    numeric = numerical_gradients(model, x, adj, pairs, labels, eps)
    worst, worst_name, n = 0.0, "", 0
    for name in model.params:
        rel = relative_error(analytic[name], numeric[name])
        n += rel.size
        if rel.size and rel.max() > worst:
            worst, worst_name = float(rel.max()), name
    return GradCheckResult(worst, worst_name, n)


def run(trials: int = 20, seed: int = 0, eps: float = 1e-4, max_nodes: int = 12, max_dim: int = 8):
    rng = np.random.default_rng(seed)
    return [check_instance(*random_instance(rng, max_nodes, max_dim), eps=eps) for _ in range(trials)]
