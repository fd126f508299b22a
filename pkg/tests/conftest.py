import os

import numpy as np
import pytest

from bcsum.listing import function_from_record

DATA = os.path.join(os.path.dirname(__file__), "data")
SAMPLE = os.path.join(DATA, "sample")


def make_function(lines, arch="x64", start=0x1000, step=4, name=None, end=None, strings=(), pseudo=None,
                  text_range=None):
    """Build a validated DisasmFunction from ``"mnemonic op, op"`` lines.

    ``@N`` in an operand is replaced by the label of instruction N.
    """
    addr = lambda i: start + step * i
    instrs = []
    for i, line in enumerate(lines):
        parts = line.split(None, 1)
        ops = [o.strip() for o in parts[1].split(",")] if len(parts) > 1 else []
        ops = [f"loc_{addr(int(o[1:])):X}" if o.startswith("@") else o for o in ops]
        instrs.append({"addr": hex(addr(i)), "mnemonic": parts[0], "operands": ops})
    rec = {"name": name or f"sub_{start:X}", "start_addr": hex(start),
           "end_addr": hex(end if end is not None else addr(len(lines))), "arch": arch,
           "instructions": instrs, "strings": list(strings)}
    if pseudo is not None:
        rec["pseudo"] = pseudo
    if text_range:
        rec["text_start"], rec["text_end"] = hex(text_range[0]), hex(text_range[1])
    return function_from_record(rec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def micro_batch(rng, b=2, la=6, lp=5, q=5, tn=3, vocab=20):
    """Random padded batch for ModelConfig.micro(); row 1 carries padding everywhere."""
    from types import SimpleNamespace
    from bcsum.model import N_KINDS
    ids = lambda shape: rng.integers(4, vocab, size=shape)
    am = np.ones((b, la), bool)
    am[1:, la - 2:] = False
    pm = np.ones((b, lp), bool)
    pm[1:, lp - 2:] = False
    ntm = np.ones((b, q, tn), bool)
    ntm[:, :, tn - 1] = False
    nm = np.ones((b, q), bool)
    nm[1:, q - 1] = False
    adj = rng.random((b, N_KINDS, q, q)) < 0.3
    adj[:, -1] = False
    for k in range(N_KINDS):
        adj[:, k, np.arange(q), np.arange(q)] = False
    adj[1:, :, q - 1, :] = False
    adj[1:, :, :, q - 1] = False
    tin = np.zeros((b, 6), dtype=np.int64)
    tout = np.zeros((b, 6), dtype=np.int64)
    tin[0] = [2, 5, 6, 7, 8, 9]
    tout[0] = [5, 6, 7, 8, 9, 3]
    tin[1:, :3] = [2, 5, 6]
    tout[1:, :3] = [5, 6, 3]
    return SimpleNamespace(asm_ids=ids((b, la)) * am, asm_mask=am, pseudo_ids=ids((b, lp)) * pm, pseudo_mask=pm,
                           node_ids=ids((b, q, tn)) * ntm, node_tok_mask=ntm, node_mask=nm, adj=adj,
                           tgt_in=tin, tgt_in_mask=tin != 0, tgt_out=tout, concat_ids=None, concat_mask=None)


ACCEPTANCE = {}


def record_criterion(number, ok, detail=""):
    """Remember one acceptance line; printed again in the terminal summary."""
    line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
