"""Policy/value networks over agent graphs, with exact analytic gradients.

Two architectures:

* ``gcn`` - stacked graph convolutions sigma((A @ H @ W_other + H @ W_self)/n)
  followed by an elementwise max-pool over the node axis, then separate
  policy (softmax) and value MLP heads on the pooled vector. The pooling makes
  the outputs invariant to any permutation of the neighbor nodes; the graph
  convolution weights are shared between the two heads.
* ``mlp`` - baseline that flattens the node embeddings in row order through
  two ReLU layers; deliberately *not* permutation invariant.

Gradients are hand-derived for this fixed computation graph (no autodiff);
``backward`` returns exact derivatives of any scalar loss built from the
log-probability of an action, the policy entropy, and the value output.

Parameters are flat ``dict[str, ndarray]`` so the optimizer and checkpoint
format stay trivial. Checkpoints are a versioned binary blob of named
tensors stored as little-endian float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import kernels
from .tracklets import AgentGraph, complete_adjacency

_GCN_KEYS = ("gcn0_other", "gcn0_self", "gcn1_other", "gcn1_self", "pi_w1", "pi_b1", "pi_w2", "pi_b2", "v_w1", "v_b1", "v_w2", "v_b2")
_MLP_KEYS = ("mlp_w0", "mlp_b0", "mlp_w1", "mlp_b1", "pi_w", "pi_b", "v_w", "v_b")


@dataclass(frozen=True)
class PolicySpec:
    """Shapes of one agent's network."""

    node_dim: int
    n_nodes: int
    n_actions: int
    arch: str = "gcn"
    gcn_widths: tuple = (64, 64)
    head_hidden: int = 64
    mlp_widths: tuple = (128, 128)

    def __post_init__(self):
        if self.arch not in ("gcn", "mlp"):
            raise ValueError(f"unknown arch {self.arch!r}")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


def init_params(spec: PolicySpec, rng: np.random.Generator) -> dict:
    """Glorot-uniform weights, zero biases, in a fixed key order."""
    p = {}
    if spec.arch == "gcn":
        fan = spec.node_dim
        for layer, width in enumerate(spec.gcn_widths):
            p[f"gcn{layer}_other"] = _glorot(rng, fan, width)
            p[f"gcn{layer}_self"] = _glorot(rng, fan, width)
            fan = width
        p["pi_w1"] = _glorot(rng, fan, spec.head_hidden)
        p["pi_b1"] = np.zeros(spec.head_hidden)
        p["pi_w2"] = _glorot(rng, spec.head_hidden, spec.n_actions)
        p["pi_b2"] = np.zeros(spec.n_actions)
        p["v_w1"] = _glorot(rng, fan, spec.head_hidden)
        p["v_b1"] = np.zeros(spec.head_hidden)
        p["v_w2"] = _glorot(rng, spec.head_hidden, 1)
        p["v_b2"] = np.zeros(1)
    else:
        fan = spec.node_dim * spec.n_nodes
        for layer, width in enumerate(spec.mlp_widths):
            p[f"mlp_w{layer}"] = _glorot(rng, fan, width)
            p[f"mlp_b{layer}"] = np.zeros(width)
            fan = width
        p["pi_w"] = _glorot(rng, fan, spec.n_actions)
        p["pi_b"] = np.zeros(spec.n_actions)
        p["v_w"] = _glorot(rng, fan, 1)
        p["v_b"] = np.zeros(1)
    return p


def zeros_like_params(params: Mapping[str, np.ndarray]) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _softmax_rows(logits: np.ndarray):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=-1, keepdims=True)
    probs = e / s
    log_probs = z - np.log(s)
    return probs, log_probs


def _entropy_rows(probs: np.ndarray, log_probs: np.ndarray) -> np.ndarray:
    plogp = np.where(probs > 0.0, probs * log_probs, 0.0)
    return -plogp.sum(axis=-1)


# ---------------------------------------------------------------------------
# Single-layer public op
# ---------------------------------------------------------------------------


def gcn_layer_forward(phi: np.ndarray, adj: np.ndarray, w_other: np.ndarray, w_self: np.ndarray) -> np.ndarray:
    """ReLU((adj @ phi @ w_other + phi @ w_self) / n_nodes)."""
    phi = np.asarray(phi, dtype=np.float64)
    adj = np.asarray(adj, dtype=np.float64)
    n = phi.shape[0]
    if adj.shape != (n, n):
        raise ValueError(f"adjacency {adj.shape} does not match {n} nodes")
    if w_other.shape != w_self.shape:
        raise ValueError(f"w_other {w_other.shape} and w_self {w_self.shape} differ")
    if w_other.shape[0] != phi.shape[1]:
        raise ValueError(f"weights expect input dim {w_other.shape[0]}, got {phi.shape[1]}")
    return np.maximum((adj @ phi @ w_other + phi @ w_self) / n, 0.0)


# ---------------------------------------------------------------------------
# Batched forward/backward (the trainer's path); single-graph ops wrap these.
# ---------------------------------------------------------------------------


@dataclass
class ForwardCache:
    phi: np.ndarray  # (B, n, F)
    probs: np.ndarray  # (B, A)
    log_probs: np.ndarray  # (B, A)
    values: np.ndarray  # (B,)
    entropy: np.ndarray  # (B,)
    hidden: dict = field(default_factory=dict)


def forward_batch(phi: np.ndarray, params: Mapping[str, np.ndarray], spec: PolicySpec) -> ForwardCache:
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim == 2:
        phi = phi[None]
    if phi.shape[1] != spec.n_nodes or phi.shape[2] != spec.node_dim:
        raise ValueError(f"expected (B, {spec.n_nodes}, {spec.node_dim}) inputs, got {phi.shape}")
    if spec.arch == "gcn":
        return _gcn_forward(phi, params, spec)
    return _mlp_forward(phi, params, spec)


def _bmm(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(B, n, F) @ (F, O) as a single GEMM."""
    b, n, f = h.shape
    return (h.reshape(b * n, f) @ w).reshape(b, n, -1)


def _neighbor_sum(h: np.ndarray) -> np.ndarray:
    """A @ H for the complete graph: row sums minus self."""
    return h.sum(axis=1, keepdims=True) - h


def _gcn_forward(phi, params, spec):
    n = spec.n_nodes
    h = phi
    pre, post = [], [phi]
    for layer in range(len(spec.gcn_widths)):
        ah = _neighbor_sum(h)
        s = (_bmm(ah, params[f"gcn{layer}_other"]) + _bmm(h, params[f"gcn{layer}_self"])) / n
        h = np.maximum(s, 0.0)
        pre.append(s)
        post.append(h)
    pooled = h.max(axis=1)
    pool_arg = h.argmax(axis=1)
    hp = np.maximum(pooled @ params["pi_w1"] + params["pi_b1"], 0.0)
    logits = hp @ params["pi_w2"] + params["pi_b2"]
    hv = np.maximum(pooled @ params["v_w1"] + params["v_b1"], 0.0)
    values = (hv @ params["v_w2"] + params["v_b2"])[:, 0]
    probs, log_probs = _softmax_rows(logits)
    return ForwardCache(
        phi=phi,
        probs=probs,
        log_probs=log_probs,
        values=values,
        entropy=_entropy_rows(probs, log_probs),
        hidden={"pre": pre, "post": post, "pooled": pooled, "pool_arg": pool_arg, "hp": hp, "hv": hv},
    )


def _mlp_forward(phi, params, spec):
    b = phi.shape[0]
    x = phi.reshape(b, -1)
    acts = [x]
    h = x
    for layer in range(len(spec.mlp_widths)):
        h = np.maximum(h @ params[f"mlp_w{layer}"] + params[f"mlp_b{layer}"], 0.0)
        acts.append(h)
    logits = h @ params["pi_w"] + params["pi_b"]
    values = (h @ params["v_w"] + params["v_b"])[:, 0]
    probs, log_probs = _softmax_rows(logits)
    return ForwardCache(
        phi=phi,
        probs=probs,
        log_probs=log_probs,
        values=values,
        entropy=_entropy_rows(probs, log_probs),
        hidden={"acts": acts},
    )


def backward_batch(cache: ForwardCache, params: Mapping[str, np.ndarray], spec: PolicySpec, d_logits: np.ndarray, d_values: np.ndarray) -> dict:
    """Exact parameter gradients given seed gradients at the logits and value."""
    if spec.arch == "gcn":
        return _gcn_backward(cache, params, spec, d_logits, d_values)
    return _mlp_backward(cache, params, spec, d_logits, d_values)


def _gcn_backward(cache, params, spec, d_logits, d_values):
    g = {}
    hid = cache.hidden
    pooled, hp, hv = hid["pooled"], hid["hp"], hid["hv"]
    n = spec.n_nodes

    g["pi_w2"] = hp.T @ d_logits
    g["pi_b2"] = d_logits.sum(axis=0)
    dhp = (d_logits @ params["pi_w2"].T) * (hp > 0.0)
    g["pi_w1"] = pooled.T @ dhp
    g["pi_b1"] = dhp.sum(axis=0)

    dv = d_values[:, None]
    g["v_w2"] = hv.T @ dv
    g["v_b2"] = dv.sum(axis=0)
    dhv = (dv @ params["v_w2"].T) * (hv > 0.0)
    g["v_w1"] = pooled.T @ dhv
    g["v_b1"] = dhv.sum(axis=0)

    d_pooled = dhp @ params["pi_w1"].T + dhv @ params["v_w1"].T

    dh = np.zeros_like(hid["post"][-1])
    np.put_along_axis(dh, hid["pool_arg"][:, None, :], d_pooled[:, None, :], axis=1)

    for layer in range(len(spec.gcn_widths) - 1, -1, -1):
        ds = dh * (hid["pre"][layer] > 0.0)
        h_prev = hid["post"][layer]
        ah = _neighbor_sum(h_prev)
        g[f"gcn{layer}_other"] = np.tensordot(ah, ds, axes=([0, 1], [0, 1])) / n
        g[f"gcn{layer}_self"] = np.tensordot(h_prev, ds, axes=([0, 1], [0, 1])) / n
        if layer > 0:
            # adjacency is symmetric, so the upstream mix is another neighbor sum
            dh = (_neighbor_sum(_bmm(ds, params[f"gcn{layer}_other"].T)) + _bmm(ds, params[f"gcn{layer}_self"].T)) / n
    return {k: g[k] for k in params}


def _mlp_backward(cache, params, spec, d_logits, d_values):
    g = {}
    acts = cache.hidden["acts"]
    top = acts[-1]
    g["pi_w"] = top.T @ d_logits
    g["pi_b"] = d_logits.sum(axis=0)
    dv = d_values[:, None]
    g["v_w"] = top.T @ dv
    g["v_b"] = dv.sum(axis=0)
    dh = d_logits @ params["pi_w"].T + dv @ params["v_w"].T
    for layer in range(len(spec.mlp_widths) - 1, -1, -1):
        dh = dh * (acts[layer + 1] > 0.0)
        g[f"mlp_w{layer}"] = acts[layer].T @ dh
        g[f"mlp_b{layer}"] = dh.sum(axis=0)
        if layer > 0:
            dh = dh @ params[f"mlp_w{layer}"].T
    return {k: g[k] for k in params}


# ---------------------------------------------------------------------------
# Single-graph public ops
# ---------------------------------------------------------------------------


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF categorical draw (cheaper than Generator.choice)."""
    u = rng.random() * probs.sum()
    acc = 0.0
    for i in range(len(probs) - 1):
        acc += probs[i]
        if u < acc:
            return i
    return len(probs) - 1


@dataclass(frozen=True)
class PolicyOutput:
    probs: np.ndarray  # (A,)
    value: float
    log_probs: np.ndarray  # (A,)
    entropy: float

    def sample(self, rng: np.random.Generator):
        a = sample_index(self.probs, rng)
        return a, float(self.log_probs[a])

    def greedy(self) -> int:
        return int(np.argmax(self.probs))


def _single_output(cache: ForwardCache) -> PolicyOutput:
    return PolicyOutput(
        probs=cache.probs[0],
        value=float(cache.values[0]),
        log_probs=cache.log_probs[0],
        entropy=float(cache.entropy[0]),
    )


def forward(graph: AgentGraph, params: Mapping[str, np.ndarray], spec: PolicySpec) -> PolicyOutput:
    """GCN policy/value evaluation of one agent graph."""
    if spec.arch != "gcn":
        raise ValueError("forward is the GCN op; use flat_mlp_forward for the baseline")
    return _single_output(forward_batch(graph.node_features, params, spec))


def flat_mlp_forward(graph: AgentGraph, params: Mapping[str, np.ndarray], spec: PolicySpec) -> PolicyOutput:
    """Order-sensitive flat-MLP baseline over the same node features."""
    if spec.arch != "mlp":
        raise ValueError("flat_mlp_forward needs an mlp PolicySpec")
    return _single_output(forward_batch(graph.node_features, params, spec))


def policy_forward(graph: AgentGraph, params: Mapping[str, np.ndarray], spec: PolicySpec) -> PolicyOutput:
    """Architecture-dispatching single-graph forward used by the trainer.

    Routes through the jitted kernels for the default two-layer shapes (the
    rollout hot loop); anything else falls back to the batched implementation.
    """
    if spec.arch == "gcn" and len(spec.gcn_widths) == 2:
        probs, log_probs, value, entropy = kernels.gcn_policy_forward(
            graph.node_features, complete_adjacency(graph.n_nodes), *(params[k] for k in _GCN_KEYS)
        )
        return PolicyOutput(probs=probs, value=float(value), log_probs=log_probs, entropy=float(entropy))
    if spec.arch == "mlp" and len(spec.mlp_widths) == 2:
        probs, log_probs, value, entropy = kernels.mlp_policy_forward(
            graph.node_features, *(params[k] for k in _MLP_KEYS)
        )
        return PolicyOutput(probs=probs, value=float(value), log_probs=log_probs, entropy=float(entropy))
    return _single_output(forward_batch(graph.node_features, params, spec))


def make_actor(params: Mapping[str, np.ndarray], spec: PolicySpec):
    """Bind parameters once and return node_features -> (probs, log_probs, value, entropy).

    Used by the rollout loop, where per-call dict lookups and dataclass
    construction would otherwise dominate. The returned closure holds array
    references, so it stays valid across in-place parameter mutation but not
    across rebinding.
    """
    if spec.arch == "gcn" and len(spec.gcn_widths) == 2:
        adj = complete_adjacency(spec.n_nodes)
        args = tuple(params[k] for k in _GCN_KEYS)
        fn = kernels.gcn_policy_forward

        def act(node_features):
            return fn(node_features, adj, *args)

        return act
    if spec.arch == "mlp" and len(spec.mlp_widths) == 2:
        args = tuple(params[k] for k in _MLP_KEYS)
        fn = kernels.mlp_policy_forward

        def act(node_features):
            return fn(node_features, *args)

        return act

    def act(node_features):
        c = forward_batch(node_features, params, spec)
        return c.probs[0], c.log_probs[0], float(c.values[0]), float(c.entropy[0])

    return act


@dataclass(frozen=True)
class LossSeeds:
    """Coefficients of the scalar loss logp_coef*log pi(action) + entropy_coef*H + value_coef*V."""

    action: int | None = None
    logp_coef: float = 0.0
    entropy_coef: float = 0.0
    value_coef: float = 0.0


def loss_seed_gradients(cache: ForwardCache, actions, logp_coef, entropy_coef, value_coef):
    """Translate loss-term coefficients into (d_logits, d_values) seed gradients.

    d/dz log p[a] = onehot(a) - p ; d/dz H = -p * (log p + H) ; value seeds pass through.
    """
    b, n_actions = cache.probs.shape
    d_logits = np.zeros((b, n_actions))
    lc = np.broadcast_to(np.asarray(logp_coef, dtype=np.float64), (b,))
    ec = np.broadcast_to(np.asarray(entropy_coef, dtype=np.float64), (b,))
    vc = np.broadcast_to(np.asarray(value_coef, dtype=np.float64), (b,))
    if actions is not None:
        acts = np.broadcast_to(np.asarray(actions, dtype=np.int64), (b,))
        onehot = np.zeros((b, n_actions))
        onehot[np.arange(b), acts] = 1.0
        d_logits += lc[:, None] * (onehot - cache.probs)
    d_logits += ec[:, None] * (-cache.probs * (cache.log_probs + cache.entropy[:, None]))
    return d_logits, vc.astype(np.float64).copy()


def backward(graph: AgentGraph, params: Mapping[str, np.ndarray], spec: PolicySpec, seeds: LossSeeds) -> dict:
    """Exact gradients of the seeded scalar loss for every parameter."""
    if seeds.logp_coef != 0.0 and seeds.action is None:
        raise ValueError("logp_coef requires an action")
    cache = forward_batch(graph.node_features, params, spec)
    d_logits, d_values = loss_seed_gradients(
        cache, seeds.action, seeds.logp_coef, seeds.entropy_coef, seeds.value_coef
    )
    return backward_batch(cache, params, spec, d_logits, d_values)


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, then named little-endian float32 tensors.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"TMRLTENS"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    def __init__(self, found: int, supported: int):
        super().__init__(f"checkpoint format version {found} not supported (this build reads version {supported})")
        self.found = found
        self.supported = supported


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], version: int = CHECKPOINT_VERSION) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", version, len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic {magic!r})")
        version, count = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(version, CHECKPOINT_VERSION)
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim)) if ndim else ()
            n_items = int(np.prod(shape)) if shape else 1
            buf = f.read(4 * n_items)
            out[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float64)
        return out
