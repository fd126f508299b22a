"""Triple-encoder summarization network.

Three encoders feed one decoder: a relative-position Transformer over
normalized assembly tokens, a typed-edge graph attention network over the
instruction-level graph, and a second relative-position Transformer over
(refined) pseudo code. Each decoder block runs masked self-attention, then one
cross-attention sublayer per source in a configurable order, then a
feed-forward sublayer; every sublayer is wrapped in residual + layer norm.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .bicfg import N_EDGE_KINDS, BiCfg, edge_kind_id
from .errors import ConfigError
from .tensor import Tensor

log = logging.getLogger(__name__)

SOURCES = ("PSEUDO", "ASM", "GRAPH")
ALL_ORDERS = [tuple(p) for p in itertools.permutations(SOURCES)]
N_KINDS = N_EDGE_KINDS + 1  # + self loop
SELF_KIND = N_EDGE_KINDS
NEG_INF = -1e9


@dataclass
class ModelConfig:
    d_model: int = 256
    n_heads: int = 4
    ff_dim: int = 1024
    n_layers_asm: int = 3
    n_layers_pseudo: int = 3
    n_layers_dec: int = 3
    n_gat_layers: int = 2
    gat_heads: int = 4
    rel_clip_distance: int = 16
    dropout: float = 0.1
    cross_attention_order: tuple = ("PSEUDO", "ASM", "GRAPH")
    fusion_mode: str = "TRIPLE"  # or CONCAT_SINGLE_ENCODER
    concat_use_graph: bool = True
    asm_vocab_size: int = 0
    pseudo_vocab_size: int = 0
    summary_vocab_size: int = 0
    max_asm_len: int = 400
    max_pseudo_len: int = 400
    max_summary_len: int = 32
    rel_values: bool = True
    share_node_embeddings: bool = False
    tie_output_embeddings: bool = False
    gat_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.cross_attention_order = tuple(s.upper() for s in self.cross_attention_order)
        self.fusion_mode = self.fusion_mode.upper()
        self.validate(check_vocab=False)

    def validate(self, check_vocab=True):
        if self.fusion_mode not in ("TRIPLE", "CONCAT_SINGLE_ENCODER"):
            raise ConfigError(f"unknown fusion_mode {self.fusion_mode}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_model % self.gat_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by gat_heads {self.gat_heads}")
        if self.fusion_mode == "TRIPLE" and sorted(self.cross_attention_order) != sorted(SOURCES):
            raise ConfigError(f"cross_attention_order must be a permutation of {SOURCES}")
        if self.rel_clip_distance < 1:
            raise ConfigError("rel_clip_distance must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if check_vocab and min(self.asm_vocab_size, self.pseudo_vocab_size, self.summary_vocab_size) < 5:
            raise ConfigError("vocabulary sizes must be set (>= 5) before building a model")

    @property
    def sources(self):
        """Decoder cross-attention order."""
        if self.fusion_mode == "TRIPLE":
            return self.cross_attention_order
        return ("CONCAT", "GRAPH") if self.concat_use_graph else ("CONCAT",)

    def to_dict(self):
        d = asdict(self)
        d["cross_attention_order"] = list(self.cross_attention_order)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
        d = dict(d)
        if "cross_attention_order" in d:
            d["cross_attention_order"] = tuple(d["cross_attention_order"])
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read model config {path}: {e}") from None

    @classmethod
    def micro(cls, **overrides):
        """Small configuration used for gradient checks and overfit tests."""
        base = dict(d_model=8, n_heads=2, ff_dim=16, n_layers_asm=1, n_layers_pseudo=1, n_layers_dec=1,
                    n_gat_layers=1, gat_heads=2, rel_clip_distance=3, dropout=0.0,
                    asm_vocab_size=20, pseudo_vocab_size=20, summary_vocab_size=20,
                    max_asm_len=64, max_pseudo_len=64, max_summary_len=10)
        base.update(overrides)
        return cls(**base)


@dataclass
class EncodedSequence:
    states: Tensor  # (B, L, d)
    mask: np.ndarray  # (B, L) bool

    def __post_init__(self):
        if self.states.shape[:2] != self.mask.shape:
            raise ValueError(f"states {self.states.shape} do not match mask {self.mask.shape}")


# ------------------------------------------------------------------ layers

class Params:
    """Ordered registry of named parameter tensors."""

    def __init__(self, rng, dtype=np.float32):
        self.rng = rng
        self.dtype = dtype
        self.tensors = {}

    def add(self, name, shape, init="xavier"):
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name}")
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "embed":
            data = self.rng.normal(0.0, shape[-1] ** -0.5, size=shape)
        else:
            fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], shape[0])
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            data = self.rng.uniform(-lim, lim, size=shape)
        t = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        self.tensors[name] = t
        return t


class Linear:
    def __init__(self, ps, name, din, dout, bias=True):
        self.W = ps.add(f"{name}.W", (din, dout))
        self.b = ps.add(f"{name}.b", (dout,), "zeros") if bias else None

    def __call__(self, x):
        y = x @ self.W
        return y + self.b if self.b is not None else y


class LayerNorm:
    def __init__(self, ps, name, d):
        self.g = ps.add(f"{name}.g", (d,), "ones")
        self.b = ps.add(f"{name}.b", (d,), "zeros")

    def __call__(self, x):
        return T.layer_norm(x, self.g, self.b, axis=-1, eps=1e-5)


def masked_softmax(logits, valid):
    """Softmax over the last axis restricted to ``valid``; fully invalid rows give zeros."""
    return T.masked_fill(T.softmax(T.masked_fill(logits, ~valid, NEG_INF), axis=-1), ~valid, 0.0)


def relative_index(lq, lk, clip):
    """Clipped offsets j - i shifted into [0, 2*clip]."""
    return np.clip(np.arange(lk)[None, :] - np.arange(lq)[:, None], -clip, clip) + clip


class MultiHeadAttention:
    def __init__(self, ps, name, d, heads, rel_clip=None, rel_values=True):
        self.h, self.dh = heads, d // heads
        self.q = Linear(ps, f"{name}.q", d, d)
        self.k = Linear(ps, f"{name}.k", d, d, bias=False)  # a key bias cancels in the softmax
        self.v = Linear(ps, f"{name}.v", d, d)
        self.o = Linear(ps, f"{name}.o", d, d)
        self.clip = rel_clip
        self.relK = self.relV = None
        if rel_clip:
            self.relK = ps.add(f"{name}.relK", (2 * rel_clip + 1, self.dh), "embed")
            if rel_values:
                self.relV = ps.add(f"{name}.relV", (2 * rel_clip + 1, self.dh), "embed")

    def _split(self, x):
        b, l, _ = x.shape
        return T.transpose(T.reshape(x, (b, l, self.h, self.dh)), (0, 2, 1, 3))

    def __call__(self, x, mem, key_mask, causal=False, return_weights=False):
        b, lq, d = x.shape
        lk = mem.shape[1]
        if lk == 0:
            # nothing to attend to: same result as a fully masked source
            out = Tensor(np.zeros((b, lq, d), dtype=x.dtype))
            return (out, Tensor(np.zeros((b, self.h, lq, 0), dtype=x.dtype))) if return_weights else out
        q, k, v = self._split(self.q(x)), self._split(self.k(mem)), self._split(self.v(mem))
        logits = q @ T.swap_last(k)
        idx = None
        if self.relK is not None:
            idx = relative_index(lq, lk, self.clip)
            logits = logits + T.gather_last(q @ T.transpose(self.relK), idx)
        logits = logits * (1.0 / math.sqrt(self.dh))
        valid = np.broadcast_to(key_mask[:, None, None, :], (b, 1, lq, lk))
        if causal:
            valid = valid & np.tril(np.ones((lq, lk), dtype=bool))[None, None]
        valid = np.broadcast_to(valid, (b, self.h, lq, lk))
        w = masked_softmax(logits, valid)
        out = w @ v
        if self.relV is not None:
            out = out + T.scatter_last(w, idx, 2 * self.clip + 1) @ self.relV
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, lq, d))
        out = self.o(out)
        rows = valid[:, 0].any(axis=-1)  # (b, lq)
        if not rows.all():
            out = T.masked_fill(out, ~rows[:, :, None], 0.0)
        return (out, w) if return_weights else out


class FeedForward:
    def __init__(self, ps, name, d, ff):
        self.l1 = Linear(ps, f"{name}.l1", d, ff)
        self.l2 = Linear(ps, f"{name}.l2", ff, d)

    def __call__(self, x):
        return self.l2(T.relu(self.l1(x)))


class EncoderLayer:
    def __init__(self, ps, name, cfg):
        self.attn = MultiHeadAttention(ps, f"{name}.attn", cfg.d_model, cfg.n_heads,
                                       cfg.rel_clip_distance, cfg.rel_values)
        self.ln1 = LayerNorm(ps, f"{name}.ln1", cfg.d_model)
        self.ff = FeedForward(ps, f"{name}.ff", cfg.d_model, cfg.ff_dim)
        self.ln2 = LayerNorm(ps, f"{name}.ln2", cfg.d_model)

    def __call__(self, x, mask, drop):
        x = self.ln1(x + drop(self.attn(x, x, mask)))
        return self.ln2(x + drop(self.ff(x)))


class SequenceEncoder:
    """Token embedding + stacked relative-position self-attention layers."""

    def __init__(self, ps, name, cfg, vocab_size, n_layers):
        self.emb = ps.add(f"{name}.emb", (vocab_size, cfg.d_model), "embed")
        self.scale = math.sqrt(cfg.d_model)
        self.layers = [EncoderLayer(ps, f"{name}.layer{i}", cfg) for i in range(n_layers)]

    def __call__(self, ids, mask, drop):
        if ids.shape[1] == 0:
            return EncodedSequence(Tensor(np.zeros(ids.shape + (self.emb.shape[1],), dtype=self.emb.dtype)), mask)
        x = drop(T.embedding(self.emb, ids) * self.scale)
        for layer in self.layers:
            x = layer(x, mask, drop)
        return EncodedSequence(x, mask)


class GATLayer:
    def __init__(self, ps, name, cfg):
        d, h = cfg.d_model, cfg.gat_heads
        self.h, self.dh = h, d // h
        self.W = Linear(ps, f"{name}.W", d, d, bias=False)
        self.a_src = ps.add(f"{name}.a_src", (h, self.dh))
        self.a_dst = ps.add(f"{name}.a_dst", (h, self.dh))
        self.kind_bias = ps.add(f"{name}.kind_bias", (h, N_KINDS), "zeros")
        self.kind_gain = ps.add(f"{name}.kind_gain", (N_KINDS,), "ones")
        self.ln = LayerNorm(ps, f"{name}.ln", d)
        self.slope = cfg.gat_slope

    def __call__(self, x, adj, drop):
        # adj: (B, N_KINDS, Q, Q) bool, adj[b, k, i, j] <=> edge j -> i of kind k
        b, q, d = x.shape
        h, dh, k = self.h, self.dh, N_KINDS
        wh = T.transpose(T.reshape(self.W(x), (b, q, h, dh)), (0, 2, 1, 3))  # (B,H,Q,dh)
        full = (b, h, q, dh)
        s_src = T.sum_(wh * T.broadcast_to(T.reshape(self.a_src, (1, h, 1, dh)), full), axis=-1)
        s_dst = T.sum_(wh * T.broadcast_to(T.reshape(self.a_dst, (1, h, 1, dh)), full), axis=-1)
        grid = (b, h, q, k, q)
        logits = (T.broadcast_to(T.reshape(s_dst, (b, h, q, 1, 1)), grid)
                  + T.broadcast_to(T.reshape(s_src, (b, h, 1, 1, q)), grid)
                  + T.broadcast_to(T.reshape(self.kind_bias, (1, h, 1, k, 1)), grid))
        logits = T.leaky_relu(logits, self.slope)
        valid = np.transpose(adj, (0, 2, 1, 3))[:, None]  # (B,1,Q,K,Q)
        valid = np.broadcast_to(valid, grid).reshape(b, h, q, k * q)
        alpha = masked_softmax(T.reshape(logits, (b, h, q, k * q)), valid)
        alpha = alpha.reshape(grid) * T.broadcast_to(T.reshape(self.kind_gain, (1, 1, 1, k, 1)), grid)
        agg = T.sum_(alpha, axis=3) @ wh  # (B,H,Q,dh)
        agg = T.reshape(T.transpose(agg, (0, 2, 1, 3)), (b, q, d))
        return self.ln(x + drop(T.relu(agg)))


class DecoderLayer:
    def __init__(self, ps, name, cfg):
        d = cfg.d_model
        self.self_attn = MultiHeadAttention(ps, f"{name}.self", d, cfg.n_heads)
        self.ln_self = LayerNorm(ps, f"{name}.ln_self", d)
        self.cross = {}
        self.ln_cross = {}
        for src in cfg.sources:
            self.cross[src] = MultiHeadAttention(ps, f"{name}.cross_{src.lower()}", d, cfg.n_heads)
            self.ln_cross[src] = LayerNorm(ps, f"{name}.ln_{src.lower()}", d)
        self.order = cfg.sources
        self.ff = FeedForward(ps, f"{name}.ff", d, cfg.ff_dim)
        self.ln_ff = LayerNorm(ps, f"{name}.ln_ff", d)
        self.name = name

    def __call__(self, x, tgt_mask, memories, drop, trace=None, skip=()):
        x = self.ln_self(x + drop(self.self_attn(x, x, tgt_mask, causal=True)))
        for src in self.order:
            if trace is not None:
                trace.append(f"{self.name}.cross_{src.lower()}")
            if src in skip:
                x = self.ln_cross[src](x)
                continue
            mem = memories[src]
            x = self.ln_cross[src](x + drop(self.cross[src](x, mem.states, mem.mask)))
        if trace is not None:
            trace.append(f"{self.name}.ff")
        return self.ln_ff(x + drop(self.ff(x)))


def sinusoid(length, d):
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# ------------------------------------------------------------------- model

class SummaryModel:
    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.ps = Params(np.random.default_rng(cfg.seed), dtype)
        ps = self.ps
        if cfg.fusion_mode == "TRIPLE":
            self.asm_enc = SequenceEncoder(ps, "asm_enc", cfg, cfg.asm_vocab_size, cfg.n_layers_asm)
            self.pseudo_enc = SequenceEncoder(ps, "pseudo_enc", cfg, cfg.pseudo_vocab_size, cfg.n_layers_pseudo)
        else:
            # asm ids, then pseudo ids shifted by asm_vocab_size, then one separator id
            self.concat_enc = SequenceEncoder(ps, "concat_enc", cfg, self.concat_vocab_size, cfg.n_layers_asm)
        self.use_graph = "GRAPH" in cfg.sources
        if self.use_graph:
            if cfg.share_node_embeddings:
                enc = self.asm_enc if cfg.fusion_mode == "TRIPLE" else self.concat_enc
                self.node_emb = enc.emb
            else:
                self.node_emb = ps.add("node_emb", (cfg.asm_vocab_size, cfg.d_model), "embed")
            self.gat_layers = [GATLayer(ps, f"gat{i}", cfg) for i in range(cfg.n_gat_layers)]
        self.sum_emb = ps.add("dec.emb", (cfg.summary_vocab_size, cfg.d_model), "embed")
        self.dec_layers = [DecoderLayer(ps, f"dec.layer{i}", cfg) for i in range(cfg.n_layers_dec)]
        self.out = None if cfg.tie_output_embeddings else Linear(ps, "dec.out", cfg.d_model, cfg.summary_vocab_size)
        self.training = False
        self.rng = np.random.default_rng(cfg.seed + 1)
        self.trace = None
        if dtype != np.float32:
            self.astype(dtype)

    # -- parameter plumbing
    @property
    def params(self):
        return self.ps.tensors

    @property
    def dtype(self):
        return self.ps.dtype

    @property
    def concat_vocab_size(self):
        return self.cfg.asm_vocab_size + self.cfg.pseudo_vocab_size + 1

    def astype(self, dtype):
        self.ps.dtype = dtype
        for t in self.params.values():
            t.data = t.data.astype(dtype)
            t.grad = None
        return self

    def parameter_count(self):
        return int(sum(t.size for t in self.params.values()))

    def state_dict(self):
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for k, t in self.params.items():
            if state[k].shape != t.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {t.shape}")
            t.data = np.array(state[k], dtype=t.dtype)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def train(self, flag=True):
        self.training = flag
        return self

    def eval(self):
        return self.train(False)

    def _drop(self, x):
        return T.dropout(x, self.cfg.dropout, self.rng, self.training)

    # -- encoders
    @staticmethod
    def _as_batch(ids, mask):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
            mask = None if mask is None else np.asarray(mask, dtype=bool)[None]
        if mask is None:
            mask = np.ones(ids.shape, dtype=bool)
        return ids, np.asarray(mask, dtype=bool)

    def _check_ids(self, ids, size, what):
        if ids.size and (ids.min() < 0 or ids.max() >= size):
            raise IndexError(f"{what} id out of range [0, {size})")

    def ai_encode(self, ids, mask=None) -> EncodedSequence:
        ids, mask = self._as_batch(ids, mask)
        self._check_ids(ids, self.cfg.asm_vocab_size, "asm")
        return self.asm_enc(ids, mask, self._drop)

    def ps_encode(self, ids, mask=None) -> EncodedSequence:
        ids, mask = self._as_batch(ids, mask)
        self._check_ids(ids, self.cfg.pseudo_vocab_size, "pseudo")
        return self.pseudo_enc(ids, mask, self._drop)

    def concat_encode(self, ids, mask=None) -> EncodedSequence:
        ids, mask = self._as_batch(ids, mask)
        self._check_ids(ids, self.concat_vocab_size, "concat")
        return self.concat_enc(ids, mask, self._drop)

    def node_initial_features(self, node_ids, node_tok_mask, node_mask=None) -> Tensor:
        """Mean of each node's token embeddings: (B, Q, T) ids -> (B, Q, d)."""
        node_ids = np.asarray(node_ids, dtype=np.int64)
        m = np.asarray(node_tok_mask, dtype=bool)
        self._check_ids(node_ids, self.node_emb.shape[0], "node token")
        b, q, t = node_ids.shape
        counts = m.sum(axis=-1, keepdims=True)
        real = np.ones((b, q), dtype=bool) if node_mask is None else np.asarray(node_mask, dtype=bool)
        empty = int((real & (counts[..., 0] == 0)).sum())
        if empty:
            log.warning("%d graph node(s) have no tokens; using zero features", empty)
        weights = np.where(counts > 0, m / np.maximum(counts, 1), 0.0).astype(self.dtype)
        emb = T.embedding(self.node_emb, node_ids)  # (B,Q,T,d)
        out = Tensor(weights[:, :, None, :]) @ emb  # (B,Q,1,d)
        return T.reshape(out, (b, q, self.cfg.d_model))

    def gat_encode(self, node_init: Tensor, adj, node_mask) -> EncodedSequence:
        adj = np.asarray(adj, dtype=bool)
        node_mask = np.asarray(node_mask, dtype=bool)
        if node_init.ndim == 2:
            node_init = T.reshape(node_init, (1,) + node_init.shape)
            adj, node_mask = adj[None], node_mask[None]
        if adj.shape[-1] != node_init.shape[1] or node_mask.shape[-1] != node_init.shape[1]:
            raise ValueError(f"graph has {adj.shape[-1]} nodes but {node_init.shape[1]} feature rows")
        adj = adj.copy()
        q = node_init.shape[1]
        adj[:, SELF_KIND] = np.eye(q, dtype=bool)[None] & node_mask[:, :, None]
        x = node_init
        for layer in self.gat_layers:
            x = layer(x, adj, self._drop)
        return EncodedSequence(x, node_mask)

    def encode(self, batch) -> dict:
        mem = {}
        if self.cfg.fusion_mode == "TRIPLE":
            mem["ASM"] = self.ai_encode(batch.asm_ids, batch.asm_mask)
            mem["PSEUDO"] = self.ps_encode(batch.pseudo_ids, batch.pseudo_mask)
        else:
            mem["CONCAT"] = self.concat_encode(batch.concat_ids, batch.concat_mask)
        if self.use_graph:
            init = self.node_initial_features(batch.node_ids, batch.node_tok_mask, batch.node_mask)
            mem["GRAPH"] = self.gat_encode(init, batch.adj, batch.node_mask)
        return mem

    # -- decoder
    def decode(self, memories, prefix_ids, prefix_mask=None, skip=()) -> Tensor:
        """Logits (B, T, V) for every prefix position."""
        ids, mask = self._as_batch(prefix_ids, prefix_mask)
        self._check_ids(ids, self.cfg.summary_vocab_size, "summary")
        b, t = ids.shape
        pos = Tensor(sinusoid(t, self.cfg.d_model).astype(self.dtype))
        x = self._drop(T.embedding(self.sum_emb, ids) * math.sqrt(self.cfg.d_model) + pos)
        for layer in self.dec_layers:
            x = layer(x, mask, memories, self._drop, self.trace, skip)
        if self.out is not None:
            return self.out(x)
        return x @ T.transpose(self.sum_emb)

    def decode_step(self, memories, prefix_ids, skip=()) -> np.ndarray:
        """Next-token distribution after each prefix: (B, V)."""
        ids = np.asarray(prefix_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.shape[1] == 0:
            raise ValueError("decoder prefix must contain BOS")
        with T.no_grad():
            logits = self.decode(memories, ids, skip=skip)
            return T.softmax(logits[:, -1, :], axis=-1).data

    def log_probs_step(self, memories, prefix_ids) -> np.ndarray:
        ids = np.asarray(prefix_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.shape[1] == 0:
            raise ValueError("decoder prefix must contain BOS")
        with T.no_grad():
            return T.log_softmax(self.decode(memories, ids)[:, -1, :], axis=-1).data

    def loss(self, batch) -> Tensor:
        mem = self.encode(batch)
        logits = self.decode(mem, batch.tgt_in, batch.tgt_in_mask)
        return cross_entropy(logits, batch.tgt_out)

    def forward_probe(self):
        """Record sublayer execution order during the next decode."""
        self.trace = []
        return self.trace


def cross_entropy(logits: Tensor, targets, pad_id=0) -> Tensor:
    """Mean token-level negative log-likelihood over non-PAD targets."""
    targets = np.asarray(targets, dtype=np.int64)
    keep = targets != pad_id
    n = int(keep.sum())
    if n == 0:
        raise ValueError("batch has no non-PAD target positions")
    v = logits.shape[-1]
    onehot = (targets[..., None] == np.arange(v)) & keep[..., None]
    lp = T.log_softmax(logits, axis=-1)
    return T.sum_(lp * Tensor(onehot.astype(logits.dtype))) * (-1.0 / n)


# -------------------------------------------------------------- graph input

def graph_adjacency(g: BiCfg, q=None) -> np.ndarray:
    """(N_KINDS, Q, Q) bool; [k, i, j] true for an edge j -> i of kind k. Self loops left empty."""
    q = g.q if q is None else q
    adj = np.zeros((N_KINDS, q, q), dtype=bool)
    for e in g.edges:
        adj[edge_kind_id(e.etype, e.direction), e.dst, e.src] = True
    return adj
