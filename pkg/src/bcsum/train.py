"""Training loop, checkpoints, greedy and beam decoding, evaluation."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import metrics
from . import tensor as T
from .data import Batch, Example, Vocabs, collate, make_batches
from .errors import ConfigError, ValidationError
from .model import ModelConfig, SummaryModel
from .optim import Adam
from .vocab import BOS, EOS

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "bcsum-checkpoint/1"


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-4
    max_epochs: int = 100
    patience: int = 10
    beam_width: int = 4
    seed: int = 0
    clip_norm: float = 5.0
    checkpoint_dir: Optional[str] = None
    alpha: float = 0.7
    stop_loss: Optional[float] = None  # stop once the epoch loss falls below this
    bucket: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ConfigError("patience must be in [1, max_epochs]")
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, checkpoint):
        super().__init__(f"non-finite loss in epoch {epoch}; last good checkpoint: {checkpoint or 'in memory'}")
        self.epoch = epoch
        self.checkpoint = checkpoint


class EarlyStopper:
    """Tracks the best score; signals a stop after ``patience`` epochs without strict improvement."""

    def __init__(self, patience):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, score) -> bool:
        self.epoch += 1
        if score > self.best:
            self.best, self.best_epoch = score, self.epoch
            return True
        return False

    @property
    def should_stop(self):
        return self.epoch - self.best_epoch >= self.patience


@dataclass
class TrainResult:
    model: SummaryModel
    history: list = field(default_factory=list)
    best_bleu: float = 0.0
    best_epoch: int = 0
    stop_reason: str = ""
    checkpoint: Optional[str] = None


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: SummaryModel, vocabs: Vocabs, directory, extra=None):
    os.makedirs(directory, exist_ok=True)
    tensors, offset = [], 0
    blob = bytearray()
    for name, t in model.params.items():
        raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blob += raw
        offset += len(raw)
    manifest = {"format": CHECKPOINT_FORMAT, "dtype": "<f4", "config": model.cfg.to_dict(), "tensors": tensors,
                "vocab_hashes": vocabs.digests(), "extra": extra or {}}
    with open(os.path.join(directory, "params.bin"), "wb") as fh:
        fh.write(bytes(blob))
    vocabs.save(directory)
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return directory


def load_checkpoint(directory, expect_vocab_hashes=None, expect_config=None):
    """Returns (model, vocabs, manifest); refuses on vocabulary or config mismatch."""
    try:
        with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        with open(os.path.join(directory, "params.bin"), "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read checkpoint {directory}: {e.strerror}") from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{directory}: unsupported checkpoint format {manifest.get('format')!r}")
    vocabs = Vocabs.load(directory)
    found = vocabs.digests()
    if found != manifest["vocab_hashes"]:
        raise ValidationError(f"{directory}: vocabulary files do not match the manifest hashes")
    if expect_vocab_hashes is not None and dict(expect_vocab_hashes) != found:
        bad = sorted(k for k in found if found[k] != expect_vocab_hashes.get(k))
        raise ValidationError(f"checkpoint vocabulary mismatch for {', '.join(bad)}")
    cfg = ModelConfig.from_dict(manifest["config"])
    if expect_config is not None and expect_config.to_dict() != cfg.to_dict():
        raise ValidationError("checkpoint config differs from the expected model config")
    model = SummaryModel(cfg)
    state = {}
    for entry in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype="<f4", count=int(np.prod(entry["shape"], dtype=np.int64)),
                            offset=entry["offset"])
        state[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    model.load_state_dict(state)
    return model.eval(), vocabs, manifest


# ------------------------------------------------------------------ decoding

def _repeat(memories, n):
    from .model import EncodedSequence
    return {k: EncodedSequence(T.Tensor(np.repeat(m.states.data, n, axis=0)), np.repeat(m.mask, n, axis=0))
            for k, m in memories.items()}


def _encode_one(model, example_or_batch, cfg):
    batch = example_or_batch if isinstance(example_or_batch, Batch) else collate([example_or_batch], cfg)
    with T.no_grad():
        return model.encode(batch)


def model_step_fn(model, example, cache_limit=None) -> Callable:
    """``prefixes -> (n, V) log-probabilities`` for one sample; encoder states computed once."""
    was_training = model.training
    model.eval()
    memories = _encode_one(model, example, model.cfg)
    model.train(was_training)
    cache = {}

    def step(prefixes):
        n = len(prefixes)
        if n not in cache:
            cache[n] = _repeat(memories, n)
        ids = np.asarray(prefixes, dtype=np.int64)
        return model.log_probs_step(cache[n], ids).astype(np.float64)

    return step


def greedy_search(step_fn, max_len, bos=BOS, eos=EOS):
    """Argmax decoding; ties go to the lowest id. Returns (ids without BOS/EOS, summed log-prob)."""
    prefix, score = [bos], 0.0
    for _ in range(max_len):
        lp = step_fn([prefix])[0]
        tok = int(np.argmax(lp))
        score += float(lp[tok])
        if tok == eos:
            return prefix[1:], score
        prefix.append(tok)
    return prefix[1:], score


def _norm(score, length, alpha):
    return score / (max(length, 1) ** alpha) if alpha else score


def beam_search(step_fn, width=4, max_len=32, alpha=0.7, bos=BOS, eos=EOS, include_greedy=True):
    """Shrinking beam over summed log-probabilities with length-normalized final ranking.

    Returns (ids without BOS/EOS, summed log-prob). The greedy hypothesis is
    added to the final pool so the result never scores below it.
    """
    alive = [([bos], 0.0)]
    finished = []  # (ids incl. EOS, raw score)
    for _ in range(max_len):
        slots = width - len(finished)
        if slots <= 0 or not alive:
            break
        lp = step_fn([p for p, _ in alive])
        v = lp.shape[1]
        flat = (np.array([s for _, s in alive])[:, None] + lp).ravel()
        # stable sort: equal scores keep (hypothesis, token id) order
        order = np.argsort(-flat, kind="stable")[:slots]
        nxt = []
        for o in order:
            hi, tok = divmod(int(o), v)
            seq = alive[hi][0] + [tok]
            if tok == eos:
                finished.append((seq, float(flat[o])))
            else:
                nxt.append((seq, float(flat[o])))
        alive = nxt
    pool = [(seq[1:-1], s, len(seq) - 1) for seq, s in finished]
    if not pool:
        pool = [(seq[1:], s, len(seq) - 1) for seq, s in alive]
    if include_greedy and width > 1:
        g, gs = greedy_search(step_fn, max_len, bos, eos)
        glen = len(g) + 1 if len(g) < max_len else len(g)
        pool.append((g, gs, glen))
    best = max(range(len(pool)), key=lambda i: (_norm(pool[i][1], pool[i][2], alpha), -i))
    return list(pool[best][0]), pool[best][1]


def greedy_decode(model, example, max_len=None):
    max_len = max_len or model.cfg.max_summary_len
    return greedy_search(model_step_fn(model, example), max_len)[0]


def beam_decode(model, example, width=4, max_len=None, alpha=0.7):
    max_len = max_len or model.cfg.max_summary_len
    return beam_search(model_step_fn(model, example), width, max_len, alpha)[0]


def greedy_decode_batch(model, examples, max_len=None, batch_size=64):
    """Batched greedy decoding used for validation; same results as per-sample greedy."""
    max_len = max_len or model.cfg.max_summary_len
    was_training = model.training
    model.eval()
    out = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        with T.no_grad():
            mem = model.encode(collate(chunk, model.cfg))
        n = len(chunk)
        prefix = np.full((n, 1), BOS, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        seqs = [[] for _ in range(n)]
        for _ in range(max_len):
            tok = np.argmax(model.log_probs_step(mem, prefix), axis=-1)
            for i in range(n):
                if not done[i]:
                    if tok[i] == EOS:
                        done[i] = True
                    else:
                        seqs[i].append(int(tok[i]))
            if done.all():
                break
            prefix = np.concatenate([prefix, tok[:, None]], axis=1)
        out.extend(seqs)
    model.train(was_training)
    return out


# ------------------------------------------------------------------ training

def _validate(model, examples, vocabs):
    preds = greedy_decode_batch(model, examples)
    cands = [vocabs.summary.decode(p) for p in preds]
    refs = [e.reference for e in examples]
    corpus = metrics.bleu(cands, refs)
    sent = float(np.mean([metrics.sentence_bleu(c, r) for c, r in zip(cands, refs)])) if refs else 0.0
    return corpus, sent, preds


def train(train_examples, valid_examples, model_cfg: ModelConfig, tcfg: TrainConfig, vocabs: Vocabs,
          log_fn=None, model=None) -> TrainResult:
    if not train_examples or not valid_examples:
        raise ValidationError("training needs non-empty TRAIN and VALID splits")
    model = model or SummaryModel(model_cfg)
    opt = Adam(model.params, lr=tcfg.lr, clip_norm=tcfg.clip_norm)
    rng = np.random.default_rng(tcfg.seed)
    stopper = EarlyStopper(tcfg.patience)
    result = TrainResult(model)
    best_state = model.state_dict()
    best_path = os.path.join(tcfg.checkpoint_dir, "best") if tcfg.checkpoint_dir else None
    emit = log_fn or (lambda rec: log.info("%s", rec))
    for epoch in range(1, tcfg.max_epochs + 1):
        t0 = time.time()
        model.train()
        total, tokens, skipped = 0.0, 0, 0
        for chunk in make_batches(train_examples, tcfg.batch_size, rng, tcfg.bucket):
            batch = collate(chunk, model.cfg)
            with T.Tape():
                loss = model.loss(batch)
                value = float(loss.item())
                if not math.isfinite(value):
                    model.load_state_dict(best_state)
                    result.stop_reason = "diverged"
                    raise TrainingDiverged(epoch, best_path if stopper.best_epoch else None)
                T.backward(loss)
            if not opt.step():
                skipped += 1
            opt.zero_grad()
            n = int((batch.tgt_out != 0).sum())
            total += value * n
            tokens += n
        epoch_loss = total / max(tokens, 1)
        corpus, sent, _ = _validate(model, valid_examples, vocabs)
        improved = stopper.update(corpus)
        if improved:
            best_state = model.state_dict()
            if best_path:
                save_checkpoint(model, vocabs, best_path, {"epoch": epoch, "valid_bleu": corpus})
        rec = {"epoch": epoch, "loss": epoch_loss, "valid_bleu": corpus, "valid_sentence_bleu": sent,
               "improved": improved, "skipped_steps": skipped, "seconds": round(time.time() - t0, 3)}
        result.history.append(rec)
        emit(rec)
        if tcfg.stop_loss is not None and epoch_loss < tcfg.stop_loss:
            result.stop_reason = "stop_loss"
            break
        if stopper.should_stop:
            result.stop_reason = "patience"
            break
    else:
        result.stop_reason = "max_epochs"
    model.load_state_dict(best_state)
    model.eval()
    result.best_bleu, result.best_epoch = stopper.best, stopper.best_epoch
    result.checkpoint = best_path
    if tcfg.checkpoint_dir:
        with open(os.path.join(tcfg.checkpoint_dir, "history.json"), "w", encoding="utf-8") as fh:
            json.dump({"history": result.history, "stop_reason": result.stop_reason,
                       "train_config": asdict(tcfg)}, fh, indent=1)
    return result


# ---------------------------------------------------------------- evaluation

def evaluate(model, examples, vocabs: Vocabs, beam_width=4, alpha=0.7, max_len=None) -> dict:
    if not examples:
        raise ValidationError("evaluation split is empty")
    model.eval()
    preds = [beam_decode(model, e, beam_width, max_len, alpha) if beam_width > 1 else greedy_decode(model, e, max_len)
             for e in examples]
    return build_report([vocabs.summary.decode(p) for p in preds], [e.reference for e in examples],
                        [e.id for e in examples])


def build_report(cands, refs, ids=None) -> dict:
    rep = metrics.report(cands, refs).to_dict()
    ids = ids or [str(i) for i in range(len(cands))]
    rep["note"] = metrics.METEOR_NOTE
    rep["per_sample"] = [{"id": i, "prediction": " ".join(c), "reference": " ".join(r),
                          "bleu": metrics.sentence_bleu(c, r), "rouge_l": 100 * metrics.rouge_l_pair(c, r),
                          "meteor": 100 * metrics.meteor_pair(c, r)} for i, c, r in zip(ids, cands, refs)]
    return rep
