"""Shared test utilities: a central-difference gradient checker."""
import numpy as np

from eegunet.nn import Tape


def rel_error(a, b, floor=1e-6):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


def numeric_grad(f, p, h=1e-5):
    g = np.zeros_like(p.data)
    flat, gflat = p.data.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = float(f().item())
        flat[i] = old - h
        down = float(f().item())
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def gradcheck(f, params, h=1e-5):
    """Max relative error between tape gradients and central differences over ``params``.

    ``f`` takes no arguments and rebuilds the scalar loss from the current
    parameter values; it must be deterministic (reseed any dropout inside).
    """
    for p in params:
        p.grad = np.zeros_like(p.data)
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    worst = 0.0
    for p in params:
        worst = max(worst, rel_error(p.grad, numeric_grad(f, p, h)))
    return worst


def probe(out, seed=99):
    """Scalar sum(out * R) with a fixed random R, so no output direction cancels."""
    from eegunet.nn import functional as F
    from eegunet.nn import NdArray
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return F.sum_all(F.mul(out, NdArray(r.astype(out.dtype))))
