"""Turn dataset records into padded model batches."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bicfg import BiCfg, build_bicfg, edge_kind_id
from .listing import function_from_record
from .model import N_KINDS, ModelConfig
from .normalize import normalize_function
from .pseudo import tokenize_pseudo
from .tokens import Origin, TokenSeq
from .vocab import BOS, EOS, PAD, Vocab, build_vocab, encode

log = logging.getLogger(__name__)

MAX_NODE_TOKENS = 16


@dataclass
class Prepared:
    """Token-level view of one sample, before vocabulary lookup."""
    id: str
    split: str
    asm: TokenSeq
    pseudo: TokenSeq
    graph: BiCfg
    summary: TokenSeq


@dataclass
class Example:
    id: str
    asm_ids: list
    pseudo_ids: list
    node_ids: list
    edges: list  # (src, dst, kind_id)
    summary_ids: list  # BOS ... EOS
    reference: list = field(default_factory=list)


@dataclass
class Vocabs:
    asm: Vocab
    pseudo: Vocab
    summary: Vocab

    def digests(self):
        return {"asm": self.asm.digest(), "pseudo": self.pseudo.digest(), "summary": self.summary.digest()}

    def save(self, directory):
        for name in ("asm", "pseudo", "summary"):
            getattr(self, name).save(os.path.join(directory, f"vocab_{name}.json"))

    @classmethod
    def load(cls, directory):
        return cls(*(Vocab.load(os.path.join(directory, f"vocab_{n}.json")) for n in ("asm", "pseudo", "summary")))

    @classmethod
    def build(cls, prepared, min_freq=2, shared_pseudo_summary=False):
        prepared = list(prepared)
        asm = build_vocab([p.asm for p in prepared], min_freq, Origin.ASM)
        if shared_pseudo_summary:
            joint = build_vocab([p.pseudo.tokens for p in prepared] + [p.summary.tokens for p in prepared],
                                min_freq, Origin.PSEUDO)
            pseudo = joint
            summary = Vocab(Origin.SUMMARY, joint.token_of, min_freq)
        else:
            pseudo = build_vocab([p.pseudo for p in prepared], min_freq, Origin.PSEUDO)
            summary = build_vocab([p.summary for p in prepared], min_freq, Origin.SUMMARY)
        return cls(asm, pseudo, summary)


def read_dataset(path) -> list:
    if os.path.isdir(path):
        path = os.path.join(path, "dataset.jsonl")
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def prepare(record, refiner=None) -> Prepared:
    # dataset records wrap the listing record; bare listing records are accepted too
    f = function_from_record(record.get("function", record))
    tokens = record.get("tokens_asm") or normalize_function(f).tokens
    pseudo = record.get("pseudo", f.pseudo) or ""
    if refiner is not None:
        pseudo = refiner(pseudo)
    summary = record.get("summary", [])
    if isinstance(summary, str):
        summary = summary.lower().split()
    return Prepared(record.get("id", f.name), record.get("split", "TRAIN"), TokenSeq(tokens, Origin.ASM),
                    tokenize_pseudo(pseudo), build_bicfg(f), TokenSeq(list(summary), Origin.SUMMARY))


def to_example(p: Prepared, vocabs: Vocabs, cfg: ModelConfig, max_nodes=256) -> Example:
    asm_ids = encode(p.asm, vocabs.asm, cfg.max_asm_len, add_bos_eos=False)
    pseudo_ids = encode(p.pseudo, vocabs.pseudo, cfg.max_pseudo_len, add_bos_eos=False)
    q = min(p.graph.q, max_nodes)
    node_ids = [encode(TokenSeq(list(n.tokens), Origin.ASM), vocabs.asm, MAX_NODE_TOKENS, add_bos_eos=False)
                for n in p.graph.nodes[:q]]
    edges = [(e.src, e.dst, edge_kind_id(e.etype, e.direction)) for e in p.graph.edges if e.src < q and e.dst < q]
    summary_ids = encode(p.summary, vocabs.summary, cfg.max_summary_len + 2, add_bos_eos=True)
    return Example(p.id, asm_ids, pseudo_ids, node_ids, edges, summary_ids, list(p.summary.tokens))


@dataclass
class Batch:
    ids: list
    asm_ids: np.ndarray
    asm_mask: np.ndarray
    pseudo_ids: np.ndarray
    pseudo_mask: np.ndarray
    concat_ids: Optional[np.ndarray]
    concat_mask: Optional[np.ndarray]
    node_ids: np.ndarray
    node_tok_mask: np.ndarray
    node_mask: np.ndarray
    adj: np.ndarray
    tgt_in: np.ndarray
    tgt_in_mask: np.ndarray
    tgt_out: np.ndarray

    @property
    def size(self):
        return len(self.ids)

    def select(self, rows):
        """Sub-batch (or repeated rows) for beam expansion."""
        rows = np.asarray(rows)
        pick = lambda a: None if a is None else a[rows]
        return Batch([self.ids[i] for i in rows], *(pick(getattr(self, n)) for n in _ARRAYS))


_ARRAYS = ("asm_ids", "asm_mask", "pseudo_ids", "pseudo_mask", "concat_ids", "concat_mask", "node_ids",
           "node_tok_mask", "node_mask", "adj", "tgt_in", "tgt_in_mask", "tgt_out")


def _pad(seqs, min_len=1):
    width = max([len(s) for s in seqs] + [min_len])
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask


def collate(examples, cfg: ModelConfig) -> Batch:
    asm_ids, asm_mask = _pad([e.asm_ids for e in examples])
    pseudo_ids, pseudo_mask = _pad([e.pseudo_ids for e in examples])
    concat_ids = concat_mask = None
    if cfg.fusion_mode == "CONCAT_SINGLE_ENCODER":
        sep = cfg.asm_vocab_size + cfg.pseudo_vocab_size
        joined = [list(e.asm_ids) + [sep] + [p + cfg.asm_vocab_size for p in e.pseudo_ids] for e in examples]
        concat_ids, concat_mask = _pad([j[:cfg.max_asm_len + cfg.max_pseudo_len] for j in joined])
    b = len(examples)
    q = max([len(e.node_ids) for e in examples] + [1])
    t = max([len(n) for e in examples for n in e.node_ids] + [1])
    node_ids = np.full((b, q, t), PAD, dtype=np.int64)
    node_tok_mask = np.zeros((b, q, t), dtype=bool)
    node_mask = np.zeros((b, q), dtype=bool)
    adj = np.zeros((b, N_KINDS, q, q), dtype=bool)
    for i, e in enumerate(examples):
        node_mask[i, :len(e.node_ids)] = True
        for j, toks in enumerate(e.node_ids):
            node_ids[i, j, :len(toks)] = toks
            node_tok_mask[i, j, :len(toks)] = True
        for src, dst, kind in e.edges:
            adj[i, kind, dst, src] = True
    tgt_in, tgt_in_mask = _pad([e.summary_ids[:-1] for e in examples])
    tgt_out, _ = _pad([e.summary_ids[1:] for e in examples])
    return Batch([e.id for e in examples], asm_ids, asm_mask, pseudo_ids, pseudo_mask, concat_ids, concat_mask,
                 node_ids, node_tok_mask, node_mask, adj, tgt_in, tgt_in_mask, tgt_out)


def make_batches(examples, batch_size, rng=None, bucket=True):
    """Seeded shuffle, length-bucketed within pools of 50 batches, shuffled batch order."""
    order = np.arange(len(examples)) if rng is None else rng.permutation(len(examples))
    batches = []
    pool = batch_size * 50
    for start in range(0, len(order), pool):
        chunk = list(order[start:start + pool])
        if bucket:
            chunk.sort(key=lambda i: len(examples[i].asm_ids))
        batches.extend(chunk[k:k + batch_size] for k in range(0, len(chunk), batch_size))
    if rng is not None:
        perm = rng.permutation(len(batches))
        batches = [batches[i] for i in perm]
    return [[examples[i] for i in b] for b in batches]


def load_examples(data_dir, cfg: ModelConfig, vocabs: Vocabs = None, min_freq=2, refiner=None,
                  shared_pseudo_summary=False):
    """Read ``dataset.jsonl``; build vocabularies from TRAIN unless given. Returns (splits, vocabs)."""
    prepared = [prepare(r, refiner) for r in read_dataset(data_dir)]
    if vocabs is None:
        train = [p for p in prepared if p.split == "TRAIN"]
        if not train:
            raise ValueError("dataset has no TRAIN samples to build vocabularies from")
        vocabs = Vocabs.build(train, min_freq, shared_pseudo_summary)
    splits = {"TRAIN": [], "VALID": [], "TEST": []}
    for p in prepared:
        splits.setdefault(p.split, []).append(p)
    return splits, vocabs


def fit_config(cfg: ModelConfig, vocabs: Vocabs) -> ModelConfig:
    cfg.asm_vocab_size = len(vocabs.asm)
    cfg.pseudo_vocab_size = len(vocabs.pseudo)
    cfg.summary_vocab_size = len(vocabs.summary)
    cfg.validate()
    return cfg


__all__ = ["Prepared", "Example", "Vocabs", "Batch", "prepare", "to_example", "collate", "make_batches",
           "read_dataset", "load_examples", "fit_config", "BOS", "EOS", "PAD"]
