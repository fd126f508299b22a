"""Central finite differences against the tape (64-bit)."""
import numpy as np

from bcsum import tensor as T


def rel_err(a, n):
    den = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / den)


def numeric_grad(f, p, h=1e-5):
    num = np.zeros_like(p.data)
    it = np.nditer(p.data, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p.data[i]
        p.data[i] = old + h
        with T.no_grad():
            up = f().item()
        p.data[i] = old - h
        with T.no_grad():
            down = f().item()
        p.data[i] = old
        num[i] = (up - down) / (2 * h)
    return num


def check(f, params, h=1e-5):
    """Worst per-tensor relative error of ``f``'s tape gradient over ``params`` (dict or list)."""
    items = params.items() if isinstance(params, dict) else enumerate(params)
    items = list(items)
    for _, p in items:
        p.grad = None
    with T.Tape():
        T.backward(f())
    worst = {}
    for k, p in items:
        a = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst[k] = rel_err(a, numeric_grad(f, p, h))
    return worst
