"""The two segment-scoring architectures.

* `fc`: per-segment two-layer perceptron — Linear+ReLU, Dropout 0.5,
  Linear+Sigmoid. No cross-segment mixing.
* `pglsum`: multi-head attention applied globally (8 heads over the whole
  sequence) and locally (4 window modules with 4 heads each, over an equal
  partition of the rows), summed together with a residual copy of the
  input, then a dropout/layer-norm/linear stack ending in a sigmoid.

Ablation variants drop the local attention, the global attention, or the
residual connection; each is a distinct forward function.

All parameters live in a plain {name: float64 ndarray} dict so the
optimizer and checkpoint code can treat them uniformly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .resample import partition_edges
from .types import FEATURE_DIM, ScoreVector

MODEL_KINDS = ("fc", "pglsum", "pglsum_no_local", "pglsum_no_global", "pglsum_no_residual")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "pglsum"
    d_model: int = FEATURE_DIM
    hidden: int = 512
    global_heads: int = 8
    local_heads: int = 4
    local_windows: int = 4
    dropout_p: float = 0.5
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind '{self.kind}' (choose from {MODEL_KINDS})")
        if self.kind != "fc":
            if self.d_model % self.global_heads or self.d_model % self.local_heads:
                raise ValueError("d_model must be divisible by both head counts")

    @property
    def uses_global(self) -> bool:
        return self.kind in ("pglsum", "pglsum_no_local", "pglsum_no_residual")

    @property
    def uses_local(self) -> bool:
        return self.kind in ("pglsum", "pglsum_no_global", "pglsum_no_residual")

    @property
    def uses_residual(self) -> bool:
        return self.kind in ("pglsum", "pglsum_no_local", "pglsum_no_global")


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, fixed draw order.

    Attention projections are stored packed: wq/wk/wv hold all heads side
    by side in column blocks of head_dim, wo holds the per-head output
    projections in the matching row blocks (so wo's fan_in is head_dim).
    """
    p: dict[str, np.ndarray] = {}
    d = cfg.d_model
    if cfg.kind != "fc":
        if cfg.uses_global:
            for mat in ("wq", "wk", "wv"):
                p[f"global.{mat}"] = _uniform(rng, (d, d), d)
            p["global.wo"] = _uniform(rng, (d, d), d // cfg.global_heads)
        if cfg.uses_local:
            for w in range(cfg.local_windows):
                for mat in ("wq", "wk", "wv"):
                    p[f"local.w{w}.{mat}"] = _uniform(rng, (d, d), d)
                p[f"local.w{w}.wo"] = _uniform(rng, (d, d), d // cfg.local_heads)
        p["stack.ln1.gamma"] = np.ones(d)
        p["stack.ln1.beta"] = np.zeros(d)
        p["stack.ln2.gamma"] = np.ones(cfg.hidden)
        p["stack.ln2.beta"] = np.zeros(cfg.hidden)
    p["stack.w1"] = _uniform(rng, (d, cfg.hidden), d)
    p["stack.b1"] = _uniform(rng, (cfg.hidden,), d)
    p["stack.w2"] = _uniform(rng, (cfg.hidden, 1), cfg.hidden)
    p["stack.b2"] = _uniform(rng, (1,), cfg.hidden)
    return p


def _mha(nodes: dict[str, ad.Node], prefix: str, x: ad.Node, heads: int, head_dim: int) -> ad.Node:
    """Scaled dot-product multi-head attention.

    One packed projection per role, then per-head attention over column
    blocks; concatenating the head outputs and applying the packed output
    projection equals summing per-head (head_dim, d) projections.
    """
    inv_sqrt = 1.0 / math.sqrt(head_dim)
    q = ad.matmul(x, nodes[f"{prefix}.wq"])
    k = ad.matmul(x, nodes[f"{prefix}.wk"])
    v = ad.matmul(x, nodes[f"{prefix}.wv"])
    head_outs = []
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = ad.slice_cols(q, lo, hi)
        kh = ad.slice_cols(k, lo, hi)
        vh = ad.slice_cols(v, lo, hi)
        attn = ad.softmax_rows(ad.scale(ad.matmul_nt(qh, kh), inv_sqrt))
        head_outs.append(ad.matmul(attn, vh))
    return ad.matmul(ad.concat_cols(head_outs), nodes[f"{prefix}.wo"])


def forward_node(
    cfg: ModelConfig,
    params: dict[str, np.ndarray],
    features: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[ad.Node, dict[str, ad.Node]]:
    """Build the forward graph; returns the (M, 1) output node and param nodes."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != cfg.d_model:
        raise ad.ShapeError(
            f"features shape {features.shape} incompatible with d_model={cfg.d_model}"
        )
    m = features.shape[0]
    nodes = {name: ad.param(value, name) for name, value in params.items()}
    x = ad.constant(features)

    if cfg.kind == "fc":
        h = ad.relu(ad.add_bias(ad.matmul(x, nodes["stack.w1"]), nodes["stack.b1"]))
        h = ad.dropout(h, cfg.dropout_p, rng, train)
        out = ad.sigmoid(ad.add_bias(ad.matmul(h, nodes["stack.w2"]), nodes["stack.b2"]))
        return out, nodes

    if m < cfg.local_windows:
        raise ValueError(f"attention model needs M >= {cfg.local_windows} segments, got {m}")

    mixed = None
    if cfg.uses_global:
        mixed = _mha(nodes, "global", x, cfg.global_heads, cfg.d_model // cfg.global_heads)
    if cfg.uses_local:
        edges = partition_edges(m, cfg.local_windows)
        winouts = []
        for w in range(cfg.local_windows):
            xw = ad.slice_rows(x, int(edges[w]), int(edges[w + 1]))
            winouts.append(
                _mha(nodes, f"local.w{w}", xw, cfg.local_heads, cfg.d_model // cfg.local_heads)
            )
        local = ad.concat_rows(winouts)
        mixed = local if mixed is None else ad.add(mixed, local)
    if cfg.uses_residual:
        mixed = ad.add(mixed, x)

    h = ad.dropout(mixed, cfg.dropout_p, rng, train)
    h = ad.add_bias(
        ad.mul_gain(ad.layer_norm_rows(h, cfg.ln_eps), nodes["stack.ln1.gamma"]),
        nodes["stack.ln1.beta"],
    )
    h = ad.relu(ad.add_bias(ad.matmul(h, nodes["stack.w1"]), nodes["stack.b1"]))
    h = ad.dropout(h, cfg.dropout_p, rng, train)
    h = ad.add_bias(
        ad.mul_gain(ad.layer_norm_rows(h, cfg.ln_eps), nodes["stack.ln2.gamma"]),
        nodes["stack.ln2.beta"],
    )
    out = ad.sigmoid(ad.add_bias(ad.matmul(h, nodes["stack.w2"]), nodes["stack.b2"]))
    return out, nodes


def predict(cfg: ModelConfig, params: dict[str, np.ndarray], features: np.ndarray) -> np.ndarray:
    """Eval-mode forward pass; dropout-free and deterministic."""
    out, _ = forward_node(cfg, params, features, train=False)
    return out.value[:, 0]


def fc_forward(
    params: dict[str, np.ndarray],
    features: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> ScoreVector:
    out, _ = forward_node(ModelConfig(kind="fc"), params, features, train=train, rng=rng)
    return ScoreVector(out.value[:, 0])


def attn_forward(
    params: dict[str, np.ndarray],
    features: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    kind: str = "pglsum",
) -> ScoreVector:
    out, _ = forward_node(ModelConfig(kind=kind), params, features, train=train, rng=rng)
    return ScoreVector(out.value[:, 0])
