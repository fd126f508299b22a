import itertools
import json
import math
import os

import numpy as np
import pytest

from bcsum.errors import ConfigError, ValidationError
from bcsum.model import ModelConfig, SummaryModel
from bcsum.synth import toy_examples, toy_vocabs
from bcsum.train import (EarlyStopper, TrainConfig, TrainingDiverged, beam_decode, beam_search, build_report,
                         evaluate, greedy_decode, greedy_decode_batch, greedy_search, load_checkpoint,
                         model_step_fn, save_checkpoint, train)

A, B, EOS, START = 0, 1, 2, 3
V = 3


def table_step(table, default=(0.25, 0.25, 0.5)):
    def step(prefixes):
        rows = [table.get(tuple(p[1:]), default) for p in prefixes]
        return np.log(np.asarray(rows, dtype=np.float64))
    return step


# greedy takes A (0.5) but the best complete sequence is B EOS (0.4 * 0.9)
TRAP = {(): (0.5, 0.4, 0.1), (A,): (0.34, 0.33, 0.33), (B,): (0.05, 0.05, 0.9)}


def brute_best(step, max_len):
    best, best_seq = -math.inf, None
    for n in range(max_len):
        for body in itertools.product((A, B), repeat=n):
            seq = list(body) + [EOS]
            score = sum(step([[START] + seq[:i]])[0][seq[i]] for i in range(len(seq)))
            if score > best:
                best, best_seq = score, list(body)
    return best_seq, best


def test_trap_beam_beats_greedy():
    step = table_step(TRAP)
    truth, truth_score = brute_best(step, 4)
    assert truth == [B]
    g, _ = greedy_search(step, 4, bos=START, eos=EOS)
    assert g != truth
    for include in (True, False):
        seq, score = beam_search(step, width=2, max_len=4, alpha=0.0, bos=START, eos=EOS, include_greedy=include)
        assert seq == truth
        assert score == pytest.approx(truth_score)


def test_random_tables_beam_dominates_greedy():
    rng = np.random.default_rng(0)
    for _ in range(100):
        table = {}
        for n in range(4):
            for pre in itertools.product((A, B), repeat=n):
                table[pre] = tuple(rng.dirichlet(np.ones(V)))
        step = table_step(table)
        _, gs = greedy_search(step, 4, bos=START, eos=EOS)
        _, bs = beam_search(step, width=3, max_len=4, alpha=0.0, bos=START, eos=EOS)
        assert bs >= gs - 1e-12


def test_forced_eos_gives_empty():
    step = table_step({}, default=(0.1, 0.1, 0.8))
    assert greedy_search(step, 5, bos=START, eos=EOS)[0] == []
    assert beam_search(step, width=4, max_len=5, bos=START, eos=EOS)[0] == []


def test_unfinished_returned_at_max_len():
    step = table_step({}, default=(0.6, 0.3, 0.1))
    seq, _ = beam_search(step, width=2, max_len=3, alpha=0.0, bos=START, eos=EOS, include_greedy=False)
    assert seq == [A, A, A]


@pytest.fixture(scope="module")
def toy():
    return toy_examples(50, seed=3), toy_vocabs()


@pytest.fixture(scope="module")
def micro_model():
    return SummaryModel(ModelConfig.micro(seed=11)).eval()


def test_width_one_equals_greedy(toy, micro_model):
    examples, _ = toy
    for e in examples:
        assert beam_decode(micro_model, e, width=1) == greedy_decode(micro_model, e)


def test_greedy_batch_matches_single(toy, micro_model):
    examples, _ = toy
    batch = greedy_decode_batch(micro_model, examples[:20], batch_size=7)
    assert batch == [greedy_decode(micro_model, e) for e in examples[:20]]


def test_model_beam_alpha0_dominates(toy, micro_model):
    examples, _ = toy
    for e in examples[:20]:
        step = model_step_fn(micro_model, e)
        _, gs = greedy_search(step, 10)
        _, bs = beam_search(step, 4, 10, alpha=0.0)
        assert bs >= gs - 1e-9


def test_greedy_deterministic(toy, micro_model):
    e = toy[0][0]
    assert greedy_decode(micro_model, e) == greedy_decode(micro_model, e)


def test_early_stopper_patience():
    s = EarlyStopper(10)
    scores = [10, 11] + [11] * 20
    stopped = None
    for epoch, sc in enumerate(scores, 1):
        s.update(sc)
        if s.should_stop:
            stopped = epoch
            break
    assert stopped == 12
    assert s.best == 11 and s.best_epoch == 2


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(patience=20, max_epochs=10)
    with pytest.raises(ConfigError):
        TrainConfig(beam_width=0)
    c = TrainConfig()
    assert (c.batch_size, c.lr, c.max_epochs, c.patience, c.beam_width, c.clip_norm) == (32, 1e-4, 100, 10, 4, 5.0)


def _quick(tmp=None, epochs=1, seed=0):
    ex = toy_examples(16, seed=1)
    return train(ex[:12], ex[12:], ModelConfig.micro(), TrainConfig(batch_size=4, lr=1e-3, max_epochs=epochs,
                                                                      patience=epochs, seed=seed,
                                                                      checkpoint_dir=tmp), toy_vocabs(),
                 log_fn=lambda r: None)


def test_seeded_epoch_loss_identical():
    a, b = _quick(), _quick()
    assert a.history[0]["loss"] == b.history[0]["loss"]


def test_best_checkpoint_not_worse(tmp_path):
    res = _quick(str(tmp_path), epochs=4)
    assert res.best_bleu == max(h["valid_bleu"] for h in res.history)
    model, vocabs, manifest = load_checkpoint(res.checkpoint)
    ex = toy_examples(16, seed=1)[12:]
    from bcsum.train import _validate
    assert _validate(model, ex, vocabs)[0] == pytest.approx(res.best_bleu)
    assert manifest["extra"]["epoch"] == res.best_epoch
    hist = json.loads((tmp_path / "history.json").read_text())
    assert len(hist["history"]) == len(res.history)


def test_train_requires_splits():
    with pytest.raises(ValidationError):
        train([], toy_examples(2), ModelConfig.micro(), TrainConfig(), toy_vocabs())


def test_divergence_keeps_last_good(tmp_path):
    ex = toy_examples(8, seed=2)
    model = SummaryModel(ModelConfig.micro())

    def poison(rec):
        if rec["epoch"] == 1:
            model.params["dec.emb"].data[:] = np.nan

    with pytest.raises(TrainingDiverged) as err:
        train(ex, ex, ModelConfig.micro(), TrainConfig(batch_size=4, max_epochs=3, patience=3,
                                                        checkpoint_dir=str(tmp_path)), toy_vocabs(),
              log_fn=poison, model=model)
    assert err.value.epoch == 2
    assert all(np.isfinite(t.data).all() for t in model.params.values())
    assert os.path.exists(os.path.join(err.value.checkpoint, "params.bin"))


def test_checkpoint_round_trip_bit_identical(tmp_path):
    m = SummaryModel(ModelConfig.micro(seed=4))
    v = toy_vocabs()
    save_checkpoint(m, v, tmp_path / "ck")
    m2, v2, manifest = load_checkpoint(tmp_path / "ck", expect_vocab_hashes=v.digests(), expect_config=m.cfg)
    for k, t in m.params.items():
        assert m2.params[k].data.tobytes() == t.data.tobytes()
    assert manifest["dtype"] == "<f4"
    offsets = [e["offset"] for e in manifest["tensors"]]
    assert offsets == sorted(offsets)
    assert os.path.getsize(tmp_path / "ck" / "params.bin") == sum(e["nbytes"] for e in manifest["tensors"])


def test_checkpoint_refusals(tmp_path):
    m = SummaryModel(ModelConfig.micro())
    v = toy_vocabs()
    save_checkpoint(m, v, tmp_path / "ck")
    other = toy_vocabs(21).digests()
    with pytest.raises(ValidationError, match="vocabulary"):
        load_checkpoint(tmp_path / "ck", expect_vocab_hashes=other)
    with pytest.raises(ValidationError, match="config"):
        load_checkpoint(tmp_path / "ck", expect_config=ModelConfig.micro(d_model=16))
    vf = tmp_path / "ck" / "vocab_summary.json"
    data = json.loads(vf.read_text())
    data["tokens"].append("extra")
    vf.write_text(json.dumps(data))
    with pytest.raises(ValidationError):
        load_checkpoint(tmp_path / "ck")
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "missing")


def test_report_identity():
    refs = [["returns", "the", "buffer", "size"], ["frees", "the", "context"]]
    rep = build_report(refs, refs)
    assert rep["bleu"] == pytest.approx(100.0)
    assert rep["rouge_l"] == pytest.approx(100.0)
    assert len(rep["per_sample"]) == 2


def test_evaluate_report_shape(toy, micro_model):
    examples, vocabs = toy
    rep = evaluate(micro_model, examples[:6], vocabs, beam_width=2)
    assert rep["n"] == 6 and len(rep["per_sample"]) == 6
    assert {"bleu", "rouge_l", "meteor", "note"} <= set(rep)
    assert [s["id"] for s in rep["per_sample"]] == [e.id for e in examples[:6]]
    with pytest.raises(ValidationError):
        evaluate(micro_model, [], vocabs)
