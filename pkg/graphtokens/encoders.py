"""
Node-embedding backbones: MLP, GCN, attention convolution, a global-attention
Transformer and the SGFormer-style hybrid.

Every kind has a forward that returns (output, cache) and an analytic
backward that turns the cache and an upstream gradient into the input
gradient and one gradient per parameter block. Block names:

    mlp / gcn    layer{l}.w, layer{l}.b
    attn         layer{l}.w_q, layer{l}.w_k, layer{l}.w_v, layer{l}.w_e
    transformer  layer{l}.w_q, layer{l}.w_k, layer{l}.w_v
    sgformer     gcn.layer{l}.w, gcn.layer{l}.b, attn.layer{l}.w_q, ...

Hidden layers use ReLU; the last layer is linear.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

import config
from .errors import ConfigError, DimensionError, ParseError
from .graph import AttentionIndex, Edge, attention_index, validation_position
from .numerics import (
    DeterministicRng,
    Matrix,
    activation,
    activation_backward,
    as_matrix,
    row_softmax,
    row_softmax_backward,
)
from .schemas import ENCODER_KINDS, EncoderCheckpoint

logger = logging.getLogger(__name__)

Blocks = Dict[str, Matrix]


@dataclass
class EncoderParams:
    kind: str
    blocks: Blocks
    layers: int
    attn_layers: int = 0
    alpha: float = config.SGFORMER_ALPHA

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"Unknown encoder kind '{self.kind}', expected one of {ENCODER_KINDS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.layers < 1:
            raise ConfigError("An encoder needs at least one layer")
        if self.kind == "sgformer" and self.attn_layers < 1:
            raise ConfigError("sgformer needs at least one attention layer")
        self._check_chain()

    def _chain(self, prefix: str, count: int, key: str) -> List[Tuple[int, int]]:
        shapes = []
        for l in range(count):
            name = f"{prefix}layer{l}.{key}"
            if name not in self.blocks:
                raise DimensionError(f"Missing parameter block '{name}'")
            shapes.append(self.blocks[name].shape)
        return shapes

    def _check_chain(self):
        if self.kind in ("mlp", "gcn"):
            chains = [("", self.layers, "w")]
        elif self.kind in ("attn", "transformer"):
            chains = [("", self.layers, "w_q")]
        else:
            chains = [("gcn.", self.layers, "w"), ("attn.", self.attn_layers, "w_q")]
        widths = set()
        for prefix, count, key in chains:
            shapes = self._chain(prefix, count, key)
            for (_, cols), (rows, _) in zip(shapes, shapes[1:]):
                if cols != rows:
                    raise DimensionError(f"Layer widths do not chain in '{prefix or self.kind}': {shapes}")
            widths.add((shapes[0][0], shapes[-1][1]))
        if len(widths) != 1:
            raise DimensionError(f"sgformer branches disagree on input/output widths: {sorted(widths)}")

    @property
    def d_in(self) -> int:
        key = {"mlp": "layer0.w", "gcn": "layer0.w", "sgformer": "gcn.layer0.w"}.get(self.kind, "layer0.w_q")
        return self.blocks[key].shape[0]

    @property
    def d_out(self) -> int:
        if self.kind in ("mlp", "gcn"):
            return self.blocks[f"layer{self.layers - 1}.w"].shape[1]
        if self.kind == "sgformer":
            return self.blocks[f"gcn.layer{self.layers - 1}.w"].shape[1]
        return self.blocks[f"layer{self.layers - 1}.w_q"].shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.kind, {k: v.copy() for k, v in self.blocks.items()}, self.layers, self.attn_layers, self.alpha)


def _uniform(rng: DeterministicRng, fan_in: int, shape) -> Matrix:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, shape)


def _widths(d_in: int, d_out: int, layers: int, hidden: int) -> List[int]:
    return [d_in] + [hidden] * (layers - 1) + [d_out]


def init_encoder(
    kind: str,
    d_in: int,
    d_out: Optional[int] = None,
    rng: Optional[DeterministicRng] = None,
    layers: int = config.ENCODER_LAYERS,
    hidden: int = config.HIDDEN_DIM,
    alpha: float = config.SGFORMER_ALPHA,
    attn_layers: Optional[int] = None,
    edge_dim: int = 0,
) -> EncoderParams:
    """Weights and biases drawn uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = rng or DeterministicRng(0)
    d_out = hidden if d_out is None else d_out
    if kind not in ENCODER_KINDS:
        raise ConfigError(f"Unknown encoder kind '{kind}', expected one of {ENCODER_KINDS}")
    blocks: Blocks = {}

    def dense(prefix: str, count: int):
        w = _widths(d_in, d_out, count, hidden)
        for l in range(count):
            blocks[f"{prefix}layer{l}.w"] = _uniform(rng, w[l], (w[l], w[l + 1]))
            blocks[f"{prefix}layer{l}.b"] = _uniform(rng, w[l], (1, w[l + 1]))

    def attention(prefix: str, count: int, with_edges: bool):
        w = _widths(d_in, d_out, count, hidden)
        for l in range(count):
            for key in ("w_q", "w_k", "w_v"):
                blocks[f"{prefix}layer{l}.{key}"] = _uniform(rng, w[l], (w[l], w[l + 1]))
            if with_edges and edge_dim > 0:
                blocks[f"{prefix}layer{l}.w_e"] = _uniform(rng, edge_dim, (edge_dim, w[l + 1]))

    if kind in ("mlp", "gcn"):
        dense("", layers)
    elif kind == "attn":
        attention("", layers, True)
    elif kind == "transformer":
        attention("", layers, False)
    else:
        attn_layers = attn_layers or layers
        dense("gcn.", layers)
        attention("attn.", attn_layers, False)
    return EncoderParams(kind, blocks, layers, attn_layers if kind == "sgformer" else 0, alpha)


# --- LAYER PRIMITIVES ---

def _dense_stack(h: Matrix, blocks: Blocks, prefix: str, count: int, prop: Optional[Matrix]):
    caches = []
    for l in range(count):
        w, b = blocks[f"{prefix}layer{l}.w"], blocks[f"{prefix}layer{l}.b"]
        agg = prop @ h if prop is not None else h
        pre = agg @ w + b
        out = pre if l == count - 1 else activation(pre, "relu")
        caches.append((agg, pre, out))
        h = out
    return h, caches


def _dense_stack_backward(d_h: Matrix, blocks: Blocks, prefix: str, caches, prop, grads: Blocks) -> Matrix:
    last = len(caches) - 1
    for l in range(last, -1, -1):
        agg, pre, out = caches[l]
        d_pre = d_h if l == last else activation_backward(pre, out, d_h, "relu")
        w = blocks[f"{prefix}layer{l}.w"]
        grads[f"{prefix}layer{l}.w"] = agg.T @ d_pre
        grads[f"{prefix}layer{l}.b"] = d_pre.sum(axis=0, keepdims=True)
        d_agg = d_pre @ w.T
        d_h = prop.T @ d_agg if prop is not None else d_agg
    return d_h


def cross_attention_forward(x_lat: Matrix, x_inp: Matrix, w_q: Matrix, w_k: Matrix, w_v: Matrix):
    """softmax((X_lat W_Q)(X_inp W_K)^T / sqrt(d)) (X_inp W_V), d = columns of W_Q."""
    if x_lat.shape[1] != w_q.shape[0] or x_inp.shape[1] != w_k.shape[0] or x_inp.shape[1] != w_v.shape[0]:
        raise DimensionError(
            f"Attention widths do not match: latents {x_lat.shape}, inputs {x_inp.shape}, "
            f"W_Q {w_q.shape}, W_K {w_k.shape}, W_V {w_v.shape}"
        )
    if w_q.shape[1] != w_k.shape[1]:
        raise DimensionError(f"W_Q {w_q.shape} and W_K {w_k.shape} project to different widths")
    q = x_lat @ w_q
    k = x_inp @ w_k
    v = x_inp @ w_v
    scale = 1.0 / np.sqrt(w_q.shape[1])
    s = row_softmax((q @ k.T) * scale)
    out = s @ v
    return out, (x_lat, x_inp, w_q, w_k, w_v, q, k, v, s, scale)


def cross_attention(x_lat: Matrix, x_inp: Matrix, w_q: Matrix, w_k: Matrix, w_v: Matrix) -> Matrix:
    return cross_attention_forward(x_lat, x_inp, w_q, w_k, w_v)[0]


def cross_attention_backward(cache, d_out: Matrix) -> Dict[str, Matrix]:
    x_lat, x_inp, w_q, w_k, w_v, q, k, v, s, scale = cache
    d_s = d_out @ v.T
    d_v = s.T @ d_out
    d_logits = row_softmax_backward(s, d_s) * scale
    d_q = d_logits @ k
    d_k = d_logits.T @ q
    return {
        "x_lat": d_q @ w_q.T,
        "x_inp": d_k @ w_k.T + d_v @ w_v.T,
        "w_q": x_lat.T @ d_q,
        "w_k": x_inp.T @ d_k,
        "w_v": x_inp.T @ d_v,
    }


def _global_stack(h: Matrix, blocks: Blocks, prefix: str, count: int):
    caches = []
    for l in range(count):
        name = f"{prefix}layer{l}"
        out, att = cross_attention_forward(h, h, blocks[f"{name}.w_q"], blocks[f"{name}.w_k"], blocks[f"{name}.w_v"])
        post = out if l == count - 1 else activation(out, "relu")
        caches.append((att, out, post))
        h = post
    return h, caches


def _global_stack_backward(d_h: Matrix, prefix: str, caches, grads: Blocks) -> Matrix:
    last = len(caches) - 1
    for l in range(last, -1, -1):
        att, out, post = caches[l]
        d_out = d_h if l == last else activation_backward(out, post, d_h, "relu")
        g = cross_attention_backward(att, d_out)
        for key in ("w_q", "w_k", "w_v"):
            grads[f"{prefix}layer{l}.{key}"] = g[key]
        d_h = g["x_lat"] + g["x_inp"]
    return d_h


def _segment_softmax(z: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    peak = np.full(n, -np.inf)
    np.maximum.at(peak, seg, z)
    e = np.exp(z - peak[seg])
    total = np.zeros(n)
    np.add.at(total, seg, e)
    return e / total[seg]


def _segment_softmax_backward(a: np.ndarray, d_a: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    dot = np.zeros(n)
    np.add.at(dot, seg, a * d_a)
    return a * (d_a - dot[seg])


def _attn_conv_layer(h: Matrix, idx: AttentionIndex, w_q, w_k, w_v, w_e):
    n = h.shape[0]
    scale = 1.0 / np.sqrt(w_q.shape[1])
    q, k, v = h @ w_q, h @ w_k, h @ w_v
    keys = k[idx.source].copy()
    has_edge = idx.edge_row >= 0
    use_edges = w_e is not None and bool(has_edge.any())
    if use_edges:
        if idx.edge_features.shape[1] != w_e.shape[0]:
            raise DimensionError(
                f"Edge feature width {idx.edge_features.shape[1]} does not match W_E rows {w_e.shape[0]}"
            )
        e_proj = idx.edge_features @ w_e
        keys[has_edge] += e_proj[idx.edge_row[has_edge]]
    z = np.sum(q[idx.target] * keys, axis=1) * scale
    a = _segment_softmax(z, idx.target, n)
    out = np.zeros((n, v.shape[1]))
    np.add.at(out, idx.target, a[:, None] * v[idx.source])
    return out, (h, q, keys, v, a, scale, use_edges)


def _attn_conv_layer_backward(cache, idx: AttentionIndex, w_q, w_k, w_v, d_out: Matrix):
    h, q, keys, v, a, scale, use_edges = cache
    n = h.shape[0]
    d_a = np.sum(d_out[idx.target] * v[idx.source], axis=1)
    d_v = np.zeros_like(v)
    np.add.at(d_v, idx.source, a[:, None] * d_out[idx.target])
    d_z = _segment_softmax_backward(a, d_a, idx.target, n) * scale
    d_q = np.zeros_like(q)
    np.add.at(d_q, idx.target, d_z[:, None] * keys)
    d_keys = d_z[:, None] * q[idx.target]
    d_k = np.zeros_like(q)
    np.add.at(d_k, idx.source, d_keys)
    grads = {"w_q": h.T @ d_q, "w_k": h.T @ d_k, "w_v": h.T @ d_v}
    if use_edges:
        has_edge = idx.edge_row >= 0
        d_e = np.zeros((idx.edge_features.shape[0], q.shape[1]))
        np.add.at(d_e, idx.edge_row[has_edge], d_keys[has_edge])
        grads["w_e"] = idx.edge_features.T @ d_e
    d_h = d_q @ w_q.T + d_k @ w_k.T + d_v @ w_v.T
    return d_h, grads


def _attn_conv_stack(h: Matrix, blocks: Blocks, count: int, idx: AttentionIndex):
    caches = []
    for l in range(count):
        name = f"layer{l}"
        out, c = _attn_conv_layer(
            h, idx, blocks[f"{name}.w_q"], blocks[f"{name}.w_k"], blocks[f"{name}.w_v"], blocks.get(f"{name}.w_e")
        )
        post = out if l == count - 1 else activation(out, "relu")
        caches.append((c, out, post))
        h = post
    return h, caches


def _attn_conv_stack_backward(d_h: Matrix, blocks: Blocks, caches, idx: AttentionIndex, grads: Blocks) -> Matrix:
    last = len(caches) - 1
    for l in range(last, -1, -1):
        c, out, post = caches[l]
        d_out = d_h if l == last else activation_backward(out, post, d_h, "relu")
        name = f"layer{l}"
        d_h, g = _attn_conv_layer_backward(
            c, idx, blocks[f"{name}.w_q"], blocks[f"{name}.w_k"], blocks[f"{name}.w_v"], d_out
        )
        for key, value in g.items():
            grads[f"{name}.{key}"] = value
    return d_h


# --- DISPATCH ---

@dataclass
class EncoderCache:
    kind: str
    node_count: int
    parts: dict = field(default_factory=dict)


def _check_input(x, p: EncoderParams) -> Matrix:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionError(f"Encoder input must be a non-empty N×d matrix, got shape {x.shape}")
    if x.shape[1] != p.d_in:
        raise DimensionError(f"{p.kind} encoder expects width {p.d_in}, got {x.shape[1]}")
    return x


def _check_adjacency(norm_adjacency: Optional[Matrix], n: int, kind: str) -> Matrix:
    if norm_adjacency is None:
        raise DimensionError(f"{kind} encoder needs a normalized adjacency")
    if norm_adjacency.shape != (n, n):
        raise DimensionError(f"Adjacency has shape {norm_adjacency.shape}, expected {(n, n)}")
    return norm_adjacency


def encoder_forward(
    p: EncoderParams,
    x: Matrix,
    norm_adjacency: Optional[Matrix] = None,
    attention: Optional[AttentionIndex] = None,
) -> Tuple[Matrix, EncoderCache]:
    x = _check_input(x, p)
    n = x.shape[0]
    cache = EncoderCache(p.kind, n)
    if p.kind == "mlp":
        out, cache.parts["dense"] = _dense_stack(x, p.blocks, "", p.layers, None)
    elif p.kind == "gcn":
        prop = _check_adjacency(norm_adjacency, n, p.kind)
        out, cache.parts["dense"] = _dense_stack(x, p.blocks, "", p.layers, prop)
        cache.parts["prop"] = prop
    elif p.kind == "attn":
        if attention is None or attention.node_count != n:
            raise DimensionError("attn encoder needs an attention index over the same nodes")
        out, cache.parts["attn"] = _attn_conv_stack(x, p.blocks, p.layers, attention)
        cache.parts["index"] = attention
    elif p.kind == "transformer":
        out, cache.parts["global"] = _global_stack(x, p.blocks, "", p.layers)
    else:
        prop = _check_adjacency(norm_adjacency, n, p.kind)
        local, cache.parts["dense"] = _dense_stack(x, p.blocks, "gcn.", p.layers, prop)
        glob, cache.parts["global"] = _global_stack(x, p.blocks, "attn.", p.attn_layers)
        cache.parts["prop"] = prop
        cache.parts["branches"] = (local, glob)
        out = p.alpha * local + (1.0 - p.alpha) * glob
    return out, cache


def encoder_backward(p: EncoderParams, cache: EncoderCache, d_out: Matrix) -> Tuple[Matrix, Blocks]:
    grads: Blocks = {}
    if p.kind == "mlp":
        d_x = _dense_stack_backward(d_out, p.blocks, "", cache.parts["dense"], None, grads)
    elif p.kind == "gcn":
        d_x = _dense_stack_backward(d_out, p.blocks, "", cache.parts["dense"], cache.parts["prop"], grads)
    elif p.kind == "attn":
        d_x = _attn_conv_stack_backward(d_out, p.blocks, cache.parts["attn"], cache.parts["index"], grads)
    elif p.kind == "transformer":
        d_x = _global_stack_backward(d_out, "", cache.parts["global"], grads)
    else:
        d_x = _dense_stack_backward(p.alpha * d_out, p.blocks, "gcn.", cache.parts["dense"], cache.parts["prop"], grads)
        d_x = d_x + _global_stack_backward((1.0 - p.alpha) * d_out, "attn.", cache.parts["global"], grads)
    return d_x, grads


def encode(p: EncoderParams, x: Matrix, norm_adjacency=None, attention=None) -> Matrix:
    return encoder_forward(p, x, norm_adjacency, attention)[0]


def _expect(p: EncoderParams, kind: str):
    if p.kind != kind:
        raise ConfigError(f"Expected a {kind} encoder, got {p.kind}")


def mlp_forward(x: Matrix, p: EncoderParams) -> Matrix:
    _expect(p, "mlp")
    return encode(p, x)


def gcn_forward(x: Matrix, norm_adjacency: Matrix, p: EncoderParams) -> Matrix:
    _expect(p, "gcn")
    return encode(p, x, norm_adjacency=np.asarray(norm_adjacency, dtype=np.float64))


def attn_conv_forward(
    x: Matrix, edges: Union[AttentionIndex, Sequence[Edge]], p: EncoderParams, undirected: bool = True
) -> Matrix:
    _expect(p, "attn")
    x = np.asarray(x, dtype=np.float64)
    idx = edges if isinstance(edges, AttentionIndex) else attention_index(tuple(edges), x.shape[0], undirected)
    return encode(p, x, attention=idx)


def transformer_forward(x: Matrix, p: EncoderParams) -> Matrix:
    _expect(p, "transformer")
    return encode(p, x)


def sgformer_branches(x: Matrix, norm_adjacency: Matrix, p: EncoderParams) -> Tuple[Matrix, Matrix]:
    """The GCN branch and the all-pairs attention branch before mixing."""
    _expect(p, "sgformer")
    _, cache = encoder_forward(p, x, norm_adjacency=np.asarray(norm_adjacency, dtype=np.float64))
    return cache.parts["branches"]


def sgformer_forward(x: Matrix, norm_adjacency: Matrix, p: EncoderParams) -> Matrix:
    _expect(p, "sgformer")
    return encode(p, x, norm_adjacency=np.asarray(norm_adjacency, dtype=np.float64))


# --- CHECKPOINTS ---

def _layer_docs(p: EncoderParams, prefix: str, count: int) -> List[dict]:
    docs = []
    for l in range(count):
        name = f"{prefix}layer{l}."
        doc = {}
        for key, value in p.blocks.items():
            if key.startswith(name):
                short = key[len(name):]
                doc[short] = value.ravel().tolist() if short == "b" else value.tolist()
        docs.append(doc)
    return docs


def encoder_to_checkpoint(p: EncoderParams) -> EncoderCheckpoint:
    if p.kind == "sgformer":
        return EncoderCheckpoint(
            kind=p.kind,
            layers=_layer_docs(p, "gcn.", p.layers),
            attn_layers=_layer_docs(p, "attn.", p.attn_layers),
            alpha=p.alpha,
        )
    return EncoderCheckpoint(kind=p.kind, layers=_layer_docs(p, "", p.layers), alpha=p.alpha)


def encoder_from_checkpoint(doc: EncoderCheckpoint) -> EncoderParams:
    blocks: Blocks = {}

    def load(prefix: str, layers: List[dict]):
        for l, layer in enumerate(layers):
            for short, value in layer.items():
                name = f"layer{l}.{short}"
                m = np.array(value, dtype=np.float64)
                if short == "b":
                    m = m.reshape(1, -1)
                blocks[f"{prefix}{name}"] = as_matrix(m, name)

    if doc.kind == "sgformer":
        load("gcn.", doc.layers)
        load("attn.", doc.attn_layers)
        return EncoderParams(doc.kind, blocks, len(doc.layers), len(doc.attn_layers), doc.alpha)
    load("", doc.layers)
    return EncoderParams(doc.kind, blocks, len(doc.layers), 0, doc.alpha)


def save_encoder(p: EncoderParams) -> str:
    return encoder_to_checkpoint(p).model_dump_json()


def load_encoder(text: str) -> EncoderParams:
    try:
        doc = EncoderCheckpoint.model_validate_json(text)
    except ValidationError as e:
        msg, loc = validation_position(e)
        raise ParseError(msg, loc) from e
    return encoder_from_checkpoint(doc)
