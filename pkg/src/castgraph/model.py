"""Two-layer multi-head GAT with residuals, pair classifier and focal loss.

Forward and backward passes are written out by hand in numpy so gradients
can be checked against finite differences.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import sparse

LEAKY_SLOPE = 0.2
P_MIN = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 32
    heads: int = 4
    dropout: float = 0.1
    gamma: float = 2.0
    class_weights: str = "inverse_frequency"  # or "none"
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    threshold: float = 0.5
    seed: int = 0

    def validate(self):
        if self.d_model < 1 or self.heads < 1:
            raise ValueError("model.d_model and model.heads must be positive")
        if self.d_model % self.heads:
            raise ValueError("model.d_model must be divisible by model.heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("model.dropout must lie in [0, 1)")
        if self.gamma < 0:
            raise ValueError("model.gamma must be >= 0")
        if self.class_weights not in ("inverse_frequency", "none"):
            raise ValueError("model.class_weights must be 'inverse_frequency' or 'none'")
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("model.lr, model.batch_size and model.max_epochs must be positive")
        if self.patience < 0:
            raise ValueError("model.patience must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("model.threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


class Adjacency:
    """Message-passing edges (src -> dst) sorted by dst, with segment offsets."""

    def __init__(self, n_nodes: int, src, dst):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        order = np.lexsort((src, dst))
        self.n = n_nodes
        self.src = src[order]
        self.dst = dst[order]
        if n_nodes and (np.bincount(self.dst, minlength=n_nodes) == 0).any():
            raise ValueError("every node needs at least one incoming edge (add self-loops)")
        self.dst_starts = np.searchsorted(self.dst, np.arange(n_nodes))
        self.src_order = np.argsort(self.src, kind="stable")
        counts = np.bincount(self.src, minlength=n_nodes)
        self.src_has = counts > 0
        self.src_starts = np.concatenate([[0], np.cumsum(counts)[:-1]])[self.src_has]

    @classmethod
    def with_self_loops(cls, n_nodes: int, src=(), dst=()) -> "Adjacency":
        src = np.concatenate([np.asarray(src, np.int64), np.arange(n_nodes)])
        dst = np.concatenate([np.asarray(dst, np.int64), np.arange(n_nodes)])
        key = np.unique(dst * max(n_nodes, 1) + src)
        d, s = np.divmod(key, max(n_nodes, 1))
        return cls(n_nodes, s, d)

    @classmethod
    def from_graph(cls, g) -> "Adjacency":
        cached = getattr(g, "_adjacency", None)
        if cached is None:
            s, d = g.message_edges()
            cached = cls(g.n_nodes, s, d)
            g._adjacency = cached
        return cached

    def receptive_field(self, targets, layers: int = 2):
        """Nodes and per-layer adjacencies that ``targets``' final outputs depend on.

        Returns (nodes, adjs, local) where ``nodes`` are original ids, ``adjs[i]``
        is the adjacency for layer i+1 over ``nodes`` and ``local`` maps
        original ids to positions in ``nodes``. Outputs of layer i+1 are exact
        only for nodes that layer i+2 reads; every other node keeps just its
        self-loop so the softmax stays defined.
        """
        need = [None] * (layers + 1)
        mask = np.zeros(self.n, dtype=bool)
        mask[np.asarray(targets, dtype=np.int64)] = True
        need[layers] = mask
        for i in range(layers, 0, -1):
            prev = need[i].copy()
            prev[self.src[need[i][self.dst]]] = True
            need[i - 1] = prev
        nodes = np.flatnonzero(need[0])
        local = np.full(self.n, -1, dtype=np.int64)
        local[nodes] = np.arange(len(nodes))
        adjs = []
        for i in range(1, layers + 1):
            sel = need[i][self.dst]
            rest = nodes[~need[i][nodes]]
            src = np.concatenate([local[self.src[sel]], local[rest]])
            dst = np.concatenate([local[self.dst[sel]], local[rest]])
            adjs.append(Adjacency(len(nodes), src, dst))
        return nodes, adjs, local

    def matrices(self, weights: np.ndarray):
        """One sparse (dst x src) matrix per head from (H, E) edge weights."""
        indptr = np.append(self.dst_starts, len(self.dst))
        return [sparse.csr_matrix((w, self.src, indptr), shape=(self.n, self.n)) for w in weights]

    def sum_by_dst(self, values: np.ndarray) -> np.ndarray:
        """Sum edge values (..., E, ...) over edges sharing a dst; axis 1 is the edge axis."""
        return np.add.reduceat(values, self.dst_starts, axis=1)

    def sum_by_src(self, values: np.ndarray) -> np.ndarray:
        out_shape = list(values.shape)
        out_shape[1] = self.n
        out = np.zeros(out_shape)
        out[:, self.src_has] = np.add.reduceat(values[:, self.src_order], self.src_starts, axis=1)
        return out


def glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(d_in: int, cfg: ModelConfig, rng=None) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    H, d = cfg.heads, cfg.d_model
    k1 = d // H
    p = {
        "l1.W": glorot(rng, (H, d_in, k1), d_in, k1),
        "l1.a": glorot(rng, (H, 2 * k1), 2 * k1, 1),
        "l2.W": glorot(rng, (H, d, d), d, d),
        "l2.a": glorot(rng, (H, 2 * d), 2 * d, 1),
        "cls.W1": glorot(rng, (2 * d, d), 2 * d, d),
        "cls.b1": np.zeros(d),
        "cls.W2": glorot(rng, (d, 2), d, 2),
        "cls.b2": np.zeros(2),
    }
    if d_in != d:
        p["l1.R"] = glorot(rng, (d_in, d), d_in, d)
    return p


def param_shapes(d_in: int, cfg: ModelConfig) -> dict[str, tuple]:
    H, d = cfg.heads, cfg.d_model
    k1 = d // H
    shapes = {
        "l1.W": (H, d_in, k1),
        "l1.a": (H, 2 * k1),
        "l2.W": (H, d, d),
        "l2.a": (H, 2 * d),
        "cls.W1": (2 * d, d),
        "cls.b1": (d,),
        "cls.W2": (d, 2),
        "cls.b2": (2,),
    }
    if d_in != d:
        shapes["l1.R"] = (d_in, d)
    return shapes


def leaky_relu(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def softmax_rows(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def edge_softmax(scores: np.ndarray, adj: Adjacency) -> np.ndarray:
    """Softmax of (H, E) edge scores over each dst's incoming edges."""
    m = np.maximum.reduceat(scores, adj.dst_starts, axis=1)
    ex = np.exp(scores - m[:, adj.dst])
    return ex / adj.sum_by_dst(ex)[:, adj.dst]


def attention_coefficients(W, a, h, adj: Adjacency) -> np.ndarray:
    """Attention weights (H, E) for every message edge; rows sum to 1 per dst node."""
    Z = np.matmul(h, W)
    k = Z.shape[2]
    s_dst = np.matmul(Z, a[:, :k, None])[..., 0]
    s_src = np.matmul(Z, a[:, k:, None])[..., 0]
    return edge_softmax(leaky_relu(s_dst[:, adj.dst] + s_src[:, adj.src]), adj)


def gat_layer_forward(W, a, h, adj: Adjacency, R=None, merge="concat", dropout=0.0, rng=None):
    """One attention layer; returns (output, cache).

    ``R`` is the residual projection (None means identity). Dropout acts on
    the attention weights and only when ``rng`` is given.
    """
    H, d_in, k = W.shape
    if h.shape[1] != d_in:
        raise ValueError(f"layer expects inputs of width {d_in}, got {h.shape[1]}")
    Z = np.matmul(h, W)
    s_dst = np.matmul(Z, a[:, :k, None])[..., 0]
    s_src = np.matmul(Z, a[:, k:, None])[..., 0]
    e = s_dst[:, adj.dst] + s_src[:, adj.src]
    alpha = edge_softmax(leaky_relu(e), adj)
    if rng is not None and dropout > 0:
        keep = (rng.random(alpha.shape) >= dropout) / (1.0 - dropout)
    else:
        keep = None
    alpha_used = alpha * keep if keep is not None else alpha
    mats = adj.matrices(alpha_used)
    M = np.stack([A @ Zh for A, Zh in zip(mats, Z)])
    act = elu(M)
    if merge == "concat":
        out = act.transpose(1, 0, 2).reshape(h.shape[0], H * k)
    else:
        out = act.mean(axis=0)
    out = out + (h if R is None else h @ R)
    cache = dict(h=h, Z=Z, e=e, alpha=alpha, keep=keep, mats=mats, M=M, merge=merge)
    return out, cache


def gat_layer_backward(W, a, R, adj: Adjacency, cache, d_out):
    """Gradients (dW, da, dR, dh) of one attention layer given dL/d(output)."""
    h, Z, M = cache["h"], cache["Z"], cache["M"]
    H, _, k = W.shape
    n = h.shape[0]
    if R is None:
        dh = d_out.copy()
        dR = None
    else:
        dh = d_out @ R.T
        dR = h.T @ d_out
    if cache["merge"] == "concat":
        d_act = d_out.reshape(n, H, k).transpose(1, 0, 2)
    else:
        d_act = np.broadcast_to(d_out / H, (H, n, k))
    dM = d_act * elu_grad(M)
    # only nodes near the batch's pairs receive gradient; skip edges into the rest
    live = np.flatnonzero(np.any(dM != 0, axis=(0, 2))[adj.dst])
    d_alpha_used = np.zeros((H, len(adj.dst)))
    if len(live):
        ls, ld = adj.src[live], adj.dst[live]
        d_alpha_used[:, live] = np.stack([np.einsum("ek,ek->e", dMh[ld], Zh[ls]) for dMh, Zh in zip(dM, Z)])
    dZ = np.stack([A.T @ dMh for A, dMh in zip(cache["mats"], dM)])
    keep = cache["keep"]
    d_alpha = d_alpha_used * keep if keep is not None else d_alpha_used
    alpha = cache["alpha"]
    dot = adj.sum_by_dst(alpha * d_alpha)
    d_lr = alpha * (d_alpha - dot[:, adj.dst])
    de = d_lr * np.where(cache["e"] > 0, 1.0, LEAKY_SLOPE)
    ds_dst = adj.sum_by_dst(de)
    ds_src = adj.sum_by_src(de)
    da = np.concatenate(
        [np.matmul(ds_dst[:, None, :], Z)[:, 0], np.matmul(ds_src[:, None, :], Z)[:, 0]], axis=1
    )
    dZ += ds_dst[:, :, None] * a[:, None, :k] + ds_src[:, :, None] * a[:, None, k:]
    dW = np.matmul(h.T, dZ)
    dh += np.matmul(dZ, W.transpose(0, 2, 1)).sum(axis=0)
    return dW, da, dR, dh


def focal_loss(probs, labels, alpha_t, gamma: float):
    """Per-example focal loss for rows of 2-class probabilities.

    ``alpha_t`` is a per-example weight (scalar broadcasts).
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    p_t = np.maximum(probs[np.arange(len(labels)), labels], P_MIN)
    return -np.asarray(alpha_t) * (1.0 - p_t) ** gamma * np.log(p_t)


def focal_loss_grad_pt(p_t, alpha_t, gamma: float):
    """d loss / d p_t (zero where p_t was clamped)."""
    clamped = p_t < P_MIN
    p = np.maximum(p_t, P_MIN)
    q = 1.0 - p
    if gamma == 0:
        t1 = np.zeros_like(p)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(q > 0, gamma * q ** (gamma - 1.0) * np.log(p), 0.0)
    g = alpha_t * (t1 - q**gamma / p)
    return np.where(clamped, 0.0, g)


def class_weight_vector(labels, policy: str = "inverse_frequency") -> np.ndarray:
    """Per-class weights: inverse frequency, normalized to mean 1 over classes."""
    if policy == "none":
        return np.ones(2)
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=2).astype(float)
    if (counts == 0).any():
        return np.ones(2)
    inv = counts.sum() / counts
    return inv / inv.mean()


class GatModel:
    def __init__(self, d_in: int, config: ModelConfig, params: Optional[dict] = None):
        config.validate()
        self.d_in = d_in
        self.config = config
        self.params = params if params is not None else init_params(d_in, config)
        self.check_shapes()
        self.class_weights = np.ones(2)

    def check_shapes(self):
        expected = param_shapes(self.d_in, self.config)
        if set(expected) != set(self.params):
            raise ValueError(
                f"parameter set mismatch: expected {sorted(expected)}, got {sorted(self.params)}"
            )
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != tuple(shape):
                raise ValueError(f"{name}: expected shape {shape}, got {self.params[name].shape}")

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    # -- forward -----------------------------------------------------------

    def embed(self, x, adj, rng=None):
        """Node embeddings; ``adj`` is one Adjacency or one per layer."""
        a1, a2 = (adj, adj) if isinstance(adj, Adjacency) else adj
        p, drop = self.params, self.config.dropout
        h1, c1 = gat_layer_forward(p["l1.W"], p["l1.a"], x, a1, p.get("l1.R"), "concat", drop, rng)
        h2, c2 = gat_layer_forward(p["l2.W"], p["l2.a"], h1, a2, None, "mean", drop, rng)
        c1["adj"], c2["adj"] = a1, a2
        return h2, (c1, c2)

    def classify(self, h, pairs, rng=None):
        p = self.params
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        inp = np.concatenate([h[pairs[:, 0]], h[pairs[:, 1]]], axis=1)
        pre = inp @ p["cls.W1"] + p["cls.b1"]
        hid = elu(pre)
        if rng is not None and self.config.dropout > 0:
            keep = (rng.random(hid.shape) >= self.config.dropout) / (1.0 - self.config.dropout)
            hid_used = hid * keep
        else:
            keep = None
            hid_used = hid
        logits = hid_used @ p["cls.W2"] + p["cls.b2"]
        probs = softmax_rows(logits)
        return probs, dict(pairs=pairs, inp=inp, pre=pre, keep=keep, hid_used=hid_used, probs=probs)

    def forward(self, x, adj, pairs, labels=None, rng=None, weights=None):
        """Probabilities for ``pairs``; with labels also the weighted mean focal loss.

        ``weights`` optionally scales each pair's contribution (default 1).
        """
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.size and (pairs.min() < 0 or pairs.max() >= x.shape[0]):
            raise IndexError("pair references a node outside the graph")
        h, layer_caches = self.embed(x, adj, rng)
        probs, cc = self.classify(h, pairs, rng)
        cache = dict(x=x, adj=adj, h=h, layers=layer_caches, cls=cc)
        if labels is None:
            return probs, None, cache
        labels = np.asarray(labels, dtype=np.int64)
        w = self.class_weights[labels]
        if weights is not None:
            w = w * np.asarray(weights, dtype=float)
        losses = focal_loss(probs, labels, w, self.config.gamma)
        cache.update(labels=labels, w=w)
        return probs, float(losses.mean()), cache

    # -- backward ----------------------------------------------------------

    def backward(self, cache) -> dict[str, np.ndarray]:
        p = self.params
        cc, labels, w = cache["cls"], cache["labels"], cache["w"]
        probs = cc["probs"]
        B = len(labels)
        idx = np.arange(B)
        p_t = probs[idx, labels]
        dpt = focal_loss_grad_pt(p_t, w, self.config.gamma) / B
        onehot = np.zeros_like(probs)
        onehot[idx, labels] = 1.0
        dlogits = (dpt * p_t)[:, None] * (onehot - probs)

        g = {}
        g["cls.W2"] = cc["hid_used"].T @ dlogits
        g["cls.b2"] = dlogits.sum(axis=0)
        dhid = dlogits @ p["cls.W2"].T
        if cc["keep"] is not None:
            dhid = dhid * cc["keep"]
        dpre = dhid * elu_grad(cc["pre"])
        g["cls.W1"] = cc["inp"].T @ dpre
        g["cls.b1"] = dpre.sum(axis=0)
        dinp = dpre @ p["cls.W1"].T
        d = self.config.d_model
        h = cache["h"]
        dh = np.zeros_like(h)
        np.add.at(dh, cc["pairs"][:, 0], dinp[:, :d])
        np.add.at(dh, cc["pairs"][:, 1], dinp[:, d:])

        c1, c2 = cache["layers"]
        dW2, da2, _, dh1 = gat_layer_backward(p["l2.W"], p["l2.a"], None, c2["adj"], c2, dh)
        dW1, da1, dR1, _ = gat_layer_backward(p["l1.W"], p["l1.a"], p.get("l1.R"), c1["adj"], c1, dh1)
        g["l2.W"], g["l2.a"] = dW2, da2
        g["l1.W"], g["l1.a"] = dW1, da1
        if dR1 is not None:
            g["l1.R"] = dR1
        return g


def classify_pair(model: GatModel, h, pair) -> np.ndarray:
    probs, _ = model.classify(h, np.asarray(pair).reshape(1, 2))
    return probs[0]


def graph_inputs(g):
    return g.x, Adjacency.from_graph(g)


def forward_batch(model: GatModel, g, pairs, labels=None, rng=None):
    """Mean focal loss over ``pairs`` of window graph ``g`` (eval mode unless rng is given)."""
    x, adj = graph_inputs(g)
    return model.forward(x, adj, pairs, labels, rng)


def backward_batch(model: GatModel, cache) -> dict[str, np.ndarray]:
    return model.backward(cache)


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(x) for k, x in params.items()}, {k: np.zeros_like(x) for k, x in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """In-place Adam update of ``params``."""
    for name, gr in grads.items():
        if not np.all(np.isfinite(gr)):
            raise NonFiniteGradientError(f"non-finite gradient in {name} at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, gr in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * gr
        v *= b2
        v += (1.0 - b2) * gr * gr
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
